// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/kb_store.hpp"

namespace kbvqa {

/// One stage-1 hit: an image and the article that owns it.
struct RetrievalCandidate {
    std::string image_id;
    std::string entry_url;
    float visual_score = 0.0f;  // cosine similarity
    std::size_t rank = 0;       // 1-based

    bool operator==(const RetrievalCandidate&) const = default;
};

struct ScoredRow {
    std::size_t row = 0;
    float score = 0.0f;
};

/// Nearest-neighbour backend over a normalized embedding matrix. The flat
/// backend is exact; approximate backends can plug in behind the same call.
class SearchBackend {
public:
    virtual ~SearchBackend() = default;
    /// Returns up to k rows ordered by score descending, ties by ascending id.
    /// `unit_query` must already be unit length.
    virtual std::vector<ScoredRow> search(std::span<const float> unit_query, std::size_t k) const = 0;
    virtual const EmbeddingMatrix& matrix() const = 0;
};

/// Exhaustive inner-product scan.
class FlatIndex final : public SearchBackend {
public:
    /// Takes ownership of a normalized matrix. Throws DataError otherwise.
    explicit FlatIndex(EmbeddingMatrix normalized);

    std::vector<ScoredRow> search(std::span<const float> unit_query, std::size_t k) const override;
    const EmbeddingMatrix& matrix() const override { return matrix_; }

private:
    EmbeddingMatrix matrix_;
};

/// Cosine top-k of `query` against the index, each hit resolved to its
/// owning KB entry. Entries are not deduplicated. Throws DataError on a dim
/// mismatch, zero query, unnormalized index, k == 0, or an image id the KB
/// does not know.
std::vector<RetrievalCandidate> search_topk(const SearchBackend& index, std::span<const float> query,
                                            std::size_t k, const KnowledgeBase& kb);
std::vector<RetrievalCandidate> search_topk(const EmbeddingMatrix& index, std::span<const float> query,
                                            std::size_t k, const KnowledgeBase& kb);

/// Runs search_topk for each row of `queries` on up to `threads` workers.
/// Output order follows query rows and does not depend on `threads`.
std::vector<std::vector<RetrievalCandidate>> search_batch(const SearchBackend& index,
                                                          const EmbeddingMatrix& queries,
                                                          std::size_t k, const KnowledgeBase& kb,
                                                          unsigned threads = 1);

}  // namespace kbvqa
