// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/vector_index.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "kbvqa/error.hpp"

namespace kbvqa {

namespace {

std::vector<ScoredRow> scan_topk(const EmbeddingMatrix& m, std::span<const float> unit_query,
                                 std::size_t k) {
    const std::size_t n = m.size();
    std::vector<ScoredRow> scored(n);
    for (std::size_t r = 0; r < n; ++r) scored[r] = {r, dot(unit_query, m.row(r))};

    const auto& ids = m.ids();
    const std::size_t keep = std::min(k, n);
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [&ids](const ScoredRow& a, const ScoredRow& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return ids[a.row] < ids[b.row];
                      });
    scored.resize(keep);
    return scored;
}

std::vector<float> checked_unit_query(const EmbeddingMatrix& m, std::span<const float> query,
                                      std::size_t k) {
    if (k == 0) throw DataError("k must be at least 1");
    if (!m.normalized()) throw DataError("index is not normalized");
    if (query.size() != m.dim()) {
        throw DataError("query dim " + std::to_string(query.size()) + " does not match index dim " +
                        std::to_string(m.dim()));
    }
    for (float x : query) {
        if (!std::isfinite(x)) throw DataError("query contains a non-finite value");
    }
    if (l2_norm(query) == 0.0f) throw DataError("query vector is zero");
    return normalized_copy(query);
}

std::vector<RetrievalCandidate> resolve(const EmbeddingMatrix& m, const std::vector<ScoredRow>& hits,
                                        const KnowledgeBase& kb) {
    std::vector<RetrievalCandidate> out;
    out.reserve(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        const auto& image_id = m.id(hits[i].row);
        const auto* url = kb.url_of_image(image_id);
        if (!url) throw DataError("indexed image " + image_id + " has no knowledge base entry");
        out.push_back({image_id, *url, hits[i].score, i + 1});
    }
    return out;
}

}  // namespace

FlatIndex::FlatIndex(EmbeddingMatrix normalized) : matrix_(std::move(normalized)) {
    if (!matrix_.normalized()) throw DataError("flat index requires a normalized embedding matrix");
}

std::vector<ScoredRow> FlatIndex::search(std::span<const float> unit_query, std::size_t k) const {
    return scan_topk(matrix_, unit_query, k);
}

std::vector<RetrievalCandidate> search_topk(const SearchBackend& index, std::span<const float> query,
                                            std::size_t k, const KnowledgeBase& kb) {
    const auto unit = checked_unit_query(index.matrix(), query, k);
    return resolve(index.matrix(), index.search(unit, k), kb);
}

std::vector<RetrievalCandidate> search_topk(const EmbeddingMatrix& index, std::span<const float> query,
                                            std::size_t k, const KnowledgeBase& kb) {
    const auto unit = checked_unit_query(index, query, k);
    return resolve(index, scan_topk(index, unit, k), kb);
}

std::vector<std::vector<RetrievalCandidate>> search_batch(const SearchBackend& index,
                                                          const EmbeddingMatrix& queries,
                                                          std::size_t k, const KnowledgeBase& kb,
                                                          unsigned threads) {
    std::vector<std::vector<RetrievalCandidate>> out(queries.size());
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(queries.size())));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (std::size_t q; !failed && (q = next.fetch_add(1)) < queries.size();) {
            try {
                out[q] = search_topk(index, queries.row(q), k, kb);
            } catch (...) {
                if (!failed.exchange(true)) failure = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace kbvqa
