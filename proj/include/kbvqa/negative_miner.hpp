// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kbvqa/kb_store.hpp"
#include "kbvqa/reranker.hpp"
#include "kbvqa/vector_index.hpp"

namespace kbvqa {

inline constexpr std::size_t kDefaultNegatives = 24;
inline constexpr double kDefaultTemperature = 0.07;

enum class NegativeSource {
    kHardNegativeEntry,         // section of a retrieved entry that is not the gold one
    kPositiveEntryNonEvidence,  // other section of the gold entry
};

const char* to_string(NegativeSource source);

/// A labeled training query: the gold article and its evidence section.
struct MiningQuery {
    std::string query_id;
    std::string gold_url;
    std::string evidence_section_id;
};

struct TrainExample {
    std::string query_id;
    std::string positive_section_id;
    std::vector<std::string> negative_section_ids;
    std::vector<NegativeSource> provenance;  // parallel to negative_section_ids
    bool short_pool = false;                 // fewer negatives than requested

    bool operator==(const TrainExample&) const = default;
};

/// Samples up to `n` negatives uniformly without replacement from the
/// sections of retrieved non-gold entries plus the gold entry's non-evidence
/// sections. The random stream is derived from (seed, query_id), so a batch
/// mined query by query gives the same result in any order.
TrainExample mine_negatives(const MiningQuery& query, std::span<const RetrievalCandidate> candidates,
                            const KnowledgeBase& kb, std::size_t n = kDefaultNegatives,
                            std::uint64_t seed = 0);

void write_train_batch(std::span<const TrainExample> batch, const std::filesystem::path& path);
std::vector<TrainExample> read_train_batch(const std::filesystem::path& path);

struct LossConfig {
    double temperature = kDefaultTemperature;
    std::size_t query_tokens = 0;  // expected N_q; 0 accepts any

    void validate() const;
};

/// Loss value and gradients with respect to every input embedding, in the
/// unconstrained ambient space.
struct LossResult {
    double loss = 0.0;
    std::vector<double> grad_positive;                // dim
    std::vector<std::vector<double>> grad_negatives;  // one dim-vector per negative
    std::vector<double> grad_tokens;                  // N_q * dim, row-major
    std::vector<double> probabilities;                // softmax, positive first
};

/// InfoNCE over late-interaction scores:
///   L = -log softmax_j( max_i <token_i, section_j> / T )[positive]
/// with the positive included once in the denominator. Ties in the max route
/// the gradient to the lowest token index. Computed in double precision.
LossResult contrastive_loss(const QueryTokenSet& q, std::span<const float> positive,
                            std::span<const std::span<const float>> negatives, const LossConfig& cfg);

}  // namespace kbvqa
