// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/evaluator.hpp"
#include "kbvqa/kb_store.hpp"
#include "kbvqa/negative_miner.hpp"
#include "kbvqa/rag_client.hpp"
#include "kbvqa/reranker.hpp"
#include "kbvqa/vector_index.hpp"

namespace kbvqa {

/// Everything a pipeline run needs. Every command reads the subset it uses.
struct PipelineConfig {
    std::filesystem::path kb_file;
    std::filesystem::path image_manifest;
    std::filesystem::path image_index;         // EVEC of KB image embeddings
    std::filesystem::path section_embeddings;  // EVEC keyed by section id
    std::filesystem::path query_tokens;        // EVEC keyed "<query_id>/token_<i>"

    std::size_t search_k = 20;
    RerankConfig rerank;
    std::size_t query_token_count = 0;  // expected N_q; 0 accepts any
    std::vector<std::size_t> eval_ks = {1, 5, 10, 20};
    std::string prompt_template = "evqa";
    EndpointConfig endpoint;
    std::filesystem::path stub_answers;  // when set, answers come from this table

    /// Checks numeric invariants and that every non-empty path exists.
    void validate() const;
};

// Line-delimited artifacts. One JSON object per line.

/// Query metadata: {"query_id", "question", "gold_url", "gold_answers",
/// "answer_kind", "evidence_section_id"}; only query_id is required.
struct QueryRecord {
    std::string query_id;
    std::string question;
    std::string gold_url;
    std::vector<std::string> gold_answers;
    AnswerKind answer_kind = AnswerKind::kString;
    std::string evidence_section_id;
};
std::vector<QueryRecord> read_queries(const std::filesystem::path& path);

/// Per-query results in first-appearance order of query ids.
template <typename T>
using PerQuery = std::vector<std::pair<std::string, std::vector<T>>>;

/// {"query_id", "rank", "image_id", "entry_url", "visual_score"} per row.
void write_candidates(const PerQuery<RetrievalCandidate>& results, std::ostream& out);
PerQuery<RetrievalCandidate> read_candidates(const std::filesystem::path& path);

/// {"query_id", "rank", "section_id", "entry_url", "s_r", "s_v", "fused"} per row.
void write_ranked(const PerQuery<RankedSection>& results, std::ostream& out);
PerQuery<RankedSection> read_ranked(const std::filesystem::path& path);

Json to_json(const RetrievalCandidate& c);
Json to_json(const RankedSection& r);
RetrievalCandidate candidate_from_json(const Json& j);

struct AnswerRow {
    std::string query_id;
    std::string answer;
    std::string section_id;
    std::string entry_url;
    double latency_ms = 0.0;
    int retries = 0;
};
std::vector<AnswerRow> read_answers(const std::filesystem::path& path);

/// Builds the transport a config asks for: the stub table if configured,
/// otherwise HTTP.
std::unique_ptr<ChatTransport> make_transport(const PipelineConfig& cfg);

// Commands. Each writes its output atomically: on error nothing is left at
// the output path.

struct IngestSummary {
    KbStats stats;
    IngestReport report;
};
IngestSummary cmd_ingest(const PipelineConfig& cfg, const std::filesystem::path& out_kb,
                         const std::filesystem::path& out_manifest, const std::filesystem::path& report_out,
                         bool strict);

/// Builds a normalized image index from an EVEC or a JSONL of
/// {"id", "vector"} rows. When cfg.kb_file is set every id must be a KB image.
EmbeddingMatrix cmd_index(const PipelineConfig& cfg, const std::filesystem::path& input,
                          const std::filesystem::path& out);

/// Stage 1 for every row of the query-embedding EVEC (ids are query ids).
PerQuery<RetrievalCandidate> cmd_search(const PipelineConfig& cfg, const std::filesystem::path& queries,
                                        const std::filesystem::path& out, unsigned threads = 1);

/// Stage 2 for every query in the candidates file.
PerQuery<RankedSection> cmd_rerank(const PipelineConfig& cfg, const std::filesystem::path& candidates,
                                   const std::filesystem::path& out);

std::vector<AnswerRow> cmd_answer(const PipelineConfig& cfg, ChatTransport& transport,
                                  const std::filesystem::path& ranked, const std::filesystem::path& queries,
                                  const std::filesystem::path& out,
                                  const std::filesystem::path& transcripts_out = {});

struct EvalInputs {
    std::filesystem::path records;     // ready-made EvalRecords, or ...
    std::filesystem::path queries;     // ... assembled from queries +
    std::filesystem::path ranked;      //     ranked sections or
    std::filesystem::path candidates;  //     stage-1 candidates
    std::filesystem::path answers;     //     + optional predictions
};
/// Returns the report; report.malformed_records counts bad input rows.
EvalReport cmd_eval(const PipelineConfig& cfg, const EvalInputs& inputs, const std::filesystem::path& report_out);

struct MineSummary {
    std::vector<TrainExample> examples;
    std::vector<std::string> skipped;  // queries whose gold entry is not in the KB
};
MineSummary cmd_mine(const PipelineConfig& cfg, const std::filesystem::path& candidates,
                     const std::filesystem::path& queries, std::size_t negatives, std::uint64_t seed,
                     const std::filesystem::path& out);

struct LossRow {
    std::string query_id;
    double loss = 0.0;
    std::size_t negatives = 0;
};
/// Evaluates the contrastive loss for every example of a training batch. If
/// grads_out is set, gradients are written as an EVEC with ids
/// "<query_id>/token_<i>", "<query_id>/positive" and "<query_id>/negative_<j>".
std::vector<LossRow> cmd_loss(const PipelineConfig& cfg, const std::filesystem::path& batch,
                              const LossConfig& loss_cfg, const std::filesystem::path& out,
                              const std::filesystem::path& grads_out = {});

/// Loaded, validated pipeline inputs shared by the service and benchmarks.
struct PipelineState {
    PipelineConfig config;
    KnowledgeBase kb;
    std::unique_ptr<SearchBackend> index;
    EmbeddingMatrix sections;

    static PipelineState load(const PipelineConfig& cfg);
};

}  // namespace kbvqa
