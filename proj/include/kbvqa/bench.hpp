// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/io.hpp"
#include "kbvqa/kb_store.hpp"
#include "kbvqa/reranker.hpp"
#include "kbvqa/vector_index.hpp"

namespace kbvqa {

struct BenchConfig {
    std::vector<std::size_t> scopes = {10, 20, 50, 100, 500};
    std::size_t repetitions = 3;
    std::size_t warmup = 1;
    unsigned workers = 1;  // queries are still processed one at a time per worker
    double alpha = 0.5;
    void validate() const;
};

struct BenchRow {
    std::size_t scope = 0;
    double total_retrieval_time_s = 0.0;  // mean over repetitions
    double mean_latency_ms = 0.0;
    double qps = 0.0;
    std::vector<double> repetition_times_s;
};

struct BenchReport {
    std::vector<BenchRow> rows;  // ascending scope
    std::size_t queries = 0;
    std::size_t index_size = 0;
    std::string host;
    unsigned hardware_threads = 0;
    unsigned workers = 1;
};

/// Queries for a benchmark: one image embedding and one token set per query,
/// matched by position.
struct BenchInputs {
    const KnowledgeBase& kb;
    const SearchBackend& index;
    const EmbeddingMatrix& sections;
    const EmbeddingMatrix& queries;
    const std::vector<QueryTokenSet>& tokens;
};

/// Times stage-1 search plus rerank per query, with stage-1 k equal to the
/// scope. Repetitions cycle through all scopes so drift hits every scope alike.
BenchReport bench_throughput(const BenchInputs& in, const BenchConfig& cfg);

/// Random data shaped like a small encyclopedia: entries with several images
/// and sections each. All vectors are unit length.
struct SyntheticCorpus {
    KnowledgeBase kb;
    EmbeddingMatrix images;
    EmbeddingMatrix sections;
    EmbeddingMatrix queries;
    std::vector<QueryTokenSet> tokens;
};

struct SyntheticShape {
    std::size_t images = 100'000;
    std::size_t images_per_entry = 10;
    std::size_t sections_per_entry = 8;
    std::size_t image_dim = 64;
    std::size_t text_dim = 256;
    std::size_t queries = 200;
    std::size_t query_tokens = kDefaultQueryTokens;
    std::uint64_t seed = 7;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticShape& shape);

Json to_json(const BenchReport& report);
std::string to_text(const BenchReport& report);

}  // namespace kbvqa
