// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

// kbvqa: command-line front end for the retrieve / rerank / answer pipeline.

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "kbvqa/bench.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/pipeline.hpp"
#include "kbvqa/service.hpp"

namespace fs = std::filesystem;
using namespace kbvqa;

namespace {

// Fills global options that neither a flag nor the environment set from a
// flat JSON object whose keys are long option names without dashes.
void apply_config_file(CLI::App& app, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path.string());
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw UsageError(path.string() + ": expected a JSON object");
    for (const auto& [key, value] : doc.items()) {
        auto* opt = app.get_option_no_throw("--" + key);
        if (!opt || key == "config") throw UsageError(path.string() + ": unknown setting \"" + key + "\"");
        if (opt->count() > 0) continue;
        auto as_text = [&](const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
        try {
            if (value.is_array()) {
                for (const auto& v : value) opt->add_result(as_text(v));
            } else {
                opt->add_result(as_text(value));
            }
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw UsageError(path.string() + ": bad value for \"" + key + "\": " + e.what());
        }
    }
}

void print_ingest_issues(const IngestReport& report) {
    for (const auto& issue : report.issues) {
        std::cerr << "warning: " << issue.file << ":" << issue.line << ": " << issue.message << '\n';
    }
}

int serve(const PipelineConfig& cfg, const std::string& host, int port) {
    // Signals are taken by a dedicated thread so shutdown runs outside a handler.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    const auto state = PipelineState::load(cfg);
    auto transport = make_transport(cfg);
    Service service(state, *transport);
    const int bound = service.bind(host, port);
    std::cerr << "kbvqa serve: listening on " << host << ":" << bound << '\n';

    std::atomic<bool> done{false};
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        if (!done) std::cerr << "kbvqa serve: shutting down\n";
        service.stop();
    });
    service.run();
    done = true;
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-base visual question answering pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    PipelineConfig cfg;
    std::string config_file;
    app.add_option("--config", config_file, "Flat JSON settings file (flags > env > file)")->envname("KBVQA_CONFIG");
    app.add_option("--kb", cfg.kb_file, "Knowledge base JSONL")->envname("KBVQA_KB");
    app.add_option("--images", cfg.image_manifest, "Image manifest JSONL")->envname("KBVQA_IMAGES");
    app.add_option("--index", cfg.image_index, "Image embedding EVEC")->envname("KBVQA_INDEX");
    app.add_option("--sections", cfg.section_embeddings, "Section embedding EVEC")->envname("KBVQA_SECTIONS");
    app.add_option("--tokens", cfg.query_tokens, "Query token EVEC")->envname("KBVQA_TOKENS");
    app.add_option("--k", cfg.search_k, "Stage-1 images to retrieve")->envname("KBVQA_K");
    app.add_option("--alpha", cfg.rerank.alpha, "Visual score weight in fusion")->envname("KBVQA_ALPHA");
    app.add_option("--scope", cfg.rerank.scope, "Stage-1 candidates to rerank")->envname("KBVQA_SCOPE");
    app.add_option("--n-q", cfg.query_token_count, "Required tokens per query (0: any)")->envname("KBVQA_N_Q");
    app.add_option("--ks", cfg.eval_ks, "Recall cutoffs")->envname("KBVQA_KS")->delimiter(',');
    app.add_option("--template", cfg.prompt_template, "Prompt template: evqa or infoseek")->envname("KBVQA_TEMPLATE");
    app.add_option("--endpoint", cfg.endpoint.base_url, "Chat-completions base URL")->envname("KBVQA_ENDPOINT");
    app.add_option("--model", cfg.endpoint.model, "Model name sent to the endpoint")->envname("KBVQA_MODEL");
    app.add_option("--timeout-ms", cfg.endpoint.timeout_ms)->envname("KBVQA_TIMEOUT_MS");
    app.add_option("--max-retries", cfg.endpoint.max_retries)->envname("KBVQA_MAX_RETRIES");
    app.add_option("--max-tokens", cfg.endpoint.max_tokens)->envname("KBVQA_MAX_TOKENS");
    app.add_option("--rps", cfg.endpoint.max_requests_per_second, "Request rate cap (0: none)")
        ->envname("KBVQA_RPS");
    app.add_option("--stub-answers", cfg.stub_answers, "Answer from a question/answer JSONL instead of HTTP")
        ->envname("KBVQA_STUB_ANSWERS");

    fs::path out, report, queries, candidates, ranked, answers, records, input, batch, grads, transcripts;
    fs::path out_manifest;
    bool strict = false;
    unsigned threads = 1;
    std::size_t negatives = kDefaultNegatives;
    std::uint64_t seed = 0;
    LossConfig loss_cfg;
    BenchConfig bench_cfg;
    SyntheticShape synth;
    std::string host = "127.0.0.1";
    int port = 8080;

    auto* ingest_cmd = app.add_subcommand("ingest", "Validate a KB and write a canonical copy and report");
    ingest_cmd->add_option("--out", out, "Canonical KB output");
    ingest_cmd->add_option("--out-images", out_manifest, "Canonical image manifest output");
    ingest_cmd->add_option("--report", report, "Ingest report JSON");
    ingest_cmd->add_flag("--strict", strict, "Fail on the first malformed record");

    auto* index_cmd = app.add_subcommand("index", "Normalize image embeddings into a search index");
    index_cmd->add_option("--input", input, "EVEC, or JSONL of {id, vector}")->required();
    index_cmd->add_option("--out", out)->required();

    auto* search_cmd = app.add_subcommand("search", "Stage-1 visual search");
    search_cmd->add_option("--queries", queries, "Query image EVEC")->required();
    search_cmd->add_option("--out", out, "Candidates JSONL")->required();
    search_cmd->add_option("--threads", threads)->check(CLI::PositiveNumber);

    auto* rerank_cmd = app.add_subcommand("rerank", "Stage-2 section reranking");
    rerank_cmd->add_option("--candidates", candidates)->required();
    rerank_cmd->add_option("--out", out, "Ranked sections JSONL")->required();

    auto* answer_cmd = app.add_subcommand("answer", "Answer each query from its top section");
    answer_cmd->add_option("--ranked", ranked)->required();
    answer_cmd->add_option("--queries", queries, "Query JSONL with questions")->required();
    answer_cmd->add_option("--out", out, "Answers JSONL")->required();
    answer_cmd->add_option("--transcripts", transcripts, "Request/response log JSONL");

    auto* eval_cmd = app.add_subcommand("eval", "Recall@K and answer accuracy");
    eval_cmd->add_option("--records", records, "Ready-made evaluation records JSONL");
    eval_cmd->add_option("--queries", queries, "Query JSONL with gold labels");
    eval_cmd->add_option("--ranked", ranked);
    eval_cmd->add_option("--candidates", candidates);
    eval_cmd->add_option("--answers", answers);
    eval_cmd->add_option("--report", report, "Report JSON");

    auto* mine_cmd = app.add_subcommand("mine", "Sample hard negatives for training");
    mine_cmd->add_option("--candidates", candidates)->required();
    mine_cmd->add_option("--queries", queries, "Query JSONL with gold_url and evidence_section_id")->required();
    mine_cmd->add_option("--negatives", negatives)->check(CLI::PositiveNumber);
    mine_cmd->add_option("--seed", seed);
    mine_cmd->add_option("--out", out, "Training batch JSONL")->required();

    auto* loss_cmd = app.add_subcommand("loss", "Contrastive loss of a training batch");
    loss_cmd->add_option("--batch", batch)->required();
    loss_cmd->add_option("--temperature", loss_cfg.temperature);
    loss_cmd->add_option("--out", out, "Loss JSONL")->required();
    loss_cmd->add_option("--grads", grads, "Gradient EVEC");

    auto* bench_cmd = app.add_subcommand("bench", "Throughput of search + rerank at batch size 1");
    bench_cmd->add_option("--scopes", bench_cfg.scopes)->delimiter(',');
    bench_cmd->add_option("--repetitions", bench_cfg.repetitions);
    bench_cmd->add_option("--warmup", bench_cfg.warmup);
    bench_cmd->add_option("--workers", bench_cfg.workers);
    bench_cmd->add_option("--queries", queries, "Query image EVEC; omit to use a synthetic corpus");
    bench_cmd->add_option("--synthetic-images", synth.images);
    bench_cmd->add_option("--synthetic-queries", synth.queries);
    bench_cmd->add_option("--seed", synth.seed);
    bench_cmd->add_option("--report", report, "Report JSON");

    auto* serve_cmd = app.add_subcommand("serve", "HTTP service");
    serve_cmd->add_option("--host", host);
    serve_cmd->add_option("--port", port);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
    }

    try {
        if (!config_file.empty()) apply_config_file(app, config_file);

        if (ingest_cmd->parsed()) {
            const auto summary = cmd_ingest(cfg, out, out_manifest, report, strict);
            print_ingest_issues(summary.report);
            std::cout << "entries " << summary.stats.entries << ", sections " << summary.stats.sections
                      << ", images " << summary.stats.images << ", skipped records "
                      << summary.report.records_skipped << '\n';
        } else if (index_cmd->parsed()) {
            const auto index = cmd_index(cfg, input, out);
            std::cout << "indexed " << index.size() << " vectors of dim " << index.dim() << '\n';
        } else if (search_cmd->parsed()) {
            const auto results = cmd_search(cfg, queries, out, threads);
            std::cout << "searched " << results.size() << " queries\n";
        } else if (rerank_cmd->parsed()) {
            const auto results = cmd_rerank(cfg, candidates, out);
            std::cout << "reranked " << results.size() << " queries\n";
        } else if (answer_cmd->parsed()) {
            auto transport = make_transport(cfg);
            const auto rows = cmd_answer(cfg, *transport, ranked, queries, out, transcripts);
            std::cout << "answered " << rows.size() << " queries\n";
        } else if (eval_cmd->parsed()) {
            const auto result = cmd_eval(cfg, {records, queries, ranked, candidates, answers}, report);
            std::cout << to_text(result);
            if (result.malformed_records > 0) {
                std::cerr << "error: " << result.malformed_records << " malformed record(s)\n";
                return static_cast<int>(ExitCode::kData);
            }
        } else if (mine_cmd->parsed()) {
            const auto summary = cmd_mine(cfg, candidates, queries, negatives, seed, out);
            std::size_t short_pools = 0;
            for (const auto& ex : summary.examples) short_pools += ex.short_pool;
            std::cout << "mined " << summary.examples.size() << " examples (" << short_pools
                      << " with short pools), skipped " << summary.skipped.size()
                      << " queries without a KB gold entry\n";
        } else if (loss_cmd->parsed()) {
            const auto rows = cmd_loss(cfg, batch, loss_cfg, out, grads);
            double total = 0.0;
            for (const auto& r : rows) total += r.loss;
            std::cout << "examples " << rows.size() << ", mean loss "
                      << (rows.empty() ? 0.0 : total / static_cast<double>(rows.size())) << '\n';
        } else if (bench_cmd->parsed()) {
            bench_cfg.alpha = cfg.rerank.alpha;
            bench_cfg.validate();
            BenchReport result;
            if (queries.empty()) {
                const auto corpus = make_synthetic_corpus(synth);
                const FlatIndex index(corpus.images);
                result = bench_throughput({corpus.kb, index, corpus.sections, corpus.queries, corpus.tokens},
                                          bench_cfg);
            } else {
                const auto state = PipelineState::load(cfg);
                if (cfg.query_tokens.empty()) throw UsageError("bench on real data needs --tokens");
                const auto query_vectors = load_embeddings(queries);
                const auto all_tokens =
                    query_token_sets(normalize(load_embeddings(cfg.query_tokens)), cfg.query_token_count);
                std::map<std::string, const QueryTokenSet*> by_id;
                for (const auto& t : all_tokens) by_id.emplace(t.query_id(), &t);
                std::vector<QueryTokenSet> tokens;
                for (const auto& id : query_vectors.ids()) {
                    auto it = by_id.find(id);
                    if (it == by_id.end()) throw DataError("no query tokens for query " + id);
                    tokens.push_back(*it->second);
                }
                result = bench_throughput({state.kb, *state.index, state.sections, query_vectors, tokens}, bench_cfg);
            }
            std::cout << to_text(result);
            if (!report.empty()) {
                std::ofstream(report) << to_json(result).dump(2) << '\n';
            }
        } else if (serve_cmd->parsed()) {
            return serve(cfg, host, port);
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::kData);
    }
}
