// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/kb_store.hpp"
#include "kbvqa/vector_index.hpp"

namespace kbvqa {

inline constexpr std::size_t kDefaultQueryTokens = 32;

/// The N_q fused image+question token embeddings of one query. Rows are unit
/// length.
class QueryTokenSet {
public:
    QueryTokenSet(std::string query_id, std::size_t dim, std::vector<float> values);

    const std::string& query_id() const { return query_id_; }
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
    std::span<const float> token(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
    const std::vector<float>& values() const { return values_; }

private:
    std::string query_id_;
    std::size_t dim_;
    std::vector<float> values_;
};

/// Token row id convention inside EVEC files: "<query_id>/token_<i>".
std::string token_row_id(std::string_view query_id, std::size_t index);

/// Groups the rows of a token EVEC into per-query sets, in first-appearance
/// order. Token indices must be dense from 0. If `expected_tokens` is nonzero
/// every query must have exactly that many tokens.
std::vector<QueryTokenSet> query_token_sets(const EmbeddingMatrix& tokens,
                                            std::size_t expected_tokens = 0);

struct SectionEmbedding {
    std::string_view section_id;
    std::span<const float> vector;
};

struct RerankConfig {
    double alpha = 0.5;
    std::size_t scope = 20;

    void validate() const;
};

struct RankedSection {
    std::string section_id;
    std::string entry_url;
    double s_r = 0.0;
    double s_v = 0.0;
    double fused = 0.0;

    bool operator==(const RankedSection&) const = default;
};

struct RerankResult {
    std::vector<RankedSection> ranked;  // head is the answer context
    std::vector<std::string> missing_section_ids;
};

struct MaxSim {
    double score = 0.0;
    std::size_t token = 0;  // lowest index attaining the max
};

/// Highest token/section dot product.
MaxSim maxsim_argmax(const QueryTokenSet& q, std::span<const float> section);
double maxsim(const QueryTokenSet& q, std::span<const float> section);
inline double maxsim(const QueryTokenSet& q, const SectionEmbedding& s) { return maxsim(q, s.vector); }

/// alpha * s_v + (1 - alpha) * s_r.
inline double fuse(double alpha, double s_v, double s_r) { return alpha * s_v + (1.0 - alpha) * s_r; }

/// Best visual score per entry among the retrieved images.
std::map<std::string, double> propagate_visual(std::span<const RetrievalCandidate> candidates);

/// Scores every section of the entries behind the first cfg.scope candidates
/// and sorts by fused score (ties by ascending section id). Sections without
/// an embedding are skipped and listed in missing_section_ids; if none can be
/// scored, throws DataError.
RerankResult rerank(const QueryTokenSet& q, std::span<const RetrievalCandidate> candidates,
                    const EmbeddingMatrix& section_embeddings, const KnowledgeBase& kb,
                    const RerankConfig& cfg);

/// Distinct entry urls in order of their best-ranked section.
std::vector<std::string> entry_order(std::span<const RankedSection> ranked);
/// Distinct entry urls in candidate order.
std::vector<std::string> entry_order(std::span<const RetrievalCandidate> candidates);

}  // namespace kbvqa
