// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/bench.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>
#include <thread>

#include "kbvqa/error.hpp"

namespace kbvqa {

void BenchConfig::validate() const {
    if (scopes.empty()) throw UsageError("benchmark needs at least one scope");
    if (repetitions == 0) throw UsageError("benchmark repetitions must be at least 1");
    if (workers == 0) throw UsageError("benchmark workers must be at least 1");
    for (auto s : scopes) {
        if (s == 0) throw UsageError("benchmark scopes must be positive");
    }
    RerankConfig{alpha, 1}.validate();
}

namespace {

using Clock = std::chrono::steady_clock;

// Runs every query once at `scope` and returns wall seconds. The checksum
// keeps the work observable.
double run_once(const BenchInputs& in, std::size_t scope, double alpha, unsigned workers, double& checksum) {
    const RerankConfig rcfg{alpha, scope};
    std::atomic<std::size_t> next{0};
    std::vector<double> sums(workers, 0.0);
    auto worker = [&](unsigned w) {
        for (std::size_t q; (q = next.fetch_add(1)) < in.queries.size();) {
            const auto cands = search_topk(in.index, in.queries.row(q), scope, in.kb);
            const auto ranked = rerank(in.tokens[q], cands, in.sections, in.kb, rcfg);
            sums[w] += ranked.ranked.front().fused;
        }
    };
    const auto start = Clock::now();
    if (workers == 1) {
        worker(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker, w);
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    for (double s : sums) checksum += s;
    return secs;
}

std::string hostname() {
    char buf[256] = {};
    if (gethostname(buf, sizeof buf - 1) != 0) return "unknown";
    return buf;
}

void fill_unit(std::mt19937_64& rng, std::vector<float>& v) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (auto& x : v) x = g(rng);
    v = normalized_copy(v);
}

}  // namespace

BenchReport bench_throughput(const BenchInputs& in, const BenchConfig& cfg) {
    cfg.validate();
    if (in.queries.size() == 0) throw DataError("benchmark needs at least one query");
    if (in.tokens.size() != in.queries.size()) {
        throw DataError("benchmark has " + std::to_string(in.queries.size()) + " query embeddings but " +
                        std::to_string(in.tokens.size()) + " token sets");
    }

    auto scopes = cfg.scopes;
    std::sort(scopes.begin(), scopes.end());
    scopes.erase(std::unique(scopes.begin(), scopes.end()), scopes.end());

    double checksum = 0.0;
    for (std::size_t w = 0; w < cfg.warmup; ++w) {
        for (auto s : scopes) run_once(in, s, cfg.alpha, cfg.workers, checksum);
    }
    std::vector<std::vector<double>> times(scopes.size());
    for (std::size_t r = 0; r < cfg.repetitions; ++r) {
        for (std::size_t i = 0; i < scopes.size(); ++i) {
            times[i].push_back(run_once(in, scopes[i], cfg.alpha, cfg.workers, checksum));
        }
    }

    BenchReport report;
    report.queries = in.queries.size();
    report.index_size = in.index.matrix().size();
    report.host = hostname();
    report.hardware_threads = std::thread::hardware_concurrency();
    report.workers = cfg.workers;
    for (std::size_t i = 0; i < scopes.size(); ++i) {
        BenchRow row;
        row.scope = scopes[i];
        row.repetition_times_s = times[i];
        double total = 0.0;
        for (double t : times[i]) total += t;
        row.total_retrieval_time_s = total / static_cast<double>(times[i].size());
        row.qps = static_cast<double>(report.queries) / row.total_retrieval_time_s;
        row.mean_latency_ms = 1000.0 * row.total_retrieval_time_s / static_cast<double>(report.queries);
        report.rows.push_back(std::move(row));
    }
    if (checksum != checksum) throw DataError("benchmark produced a NaN score");
    return report;
}

SyntheticCorpus make_synthetic_corpus(const SyntheticShape& shape) {
    if (shape.images == 0 || shape.images_per_entry == 0 || shape.sections_per_entry == 0 || shape.image_dim == 0 ||
        shape.text_dim == 0 || shape.query_tokens == 0) {
        throw UsageError("synthetic corpus sizes must be positive");
    }
    std::mt19937_64 rng(shape.seed);
    const std::size_t entries = (shape.images + shape.images_per_entry - 1) / shape.images_per_entry;

    SyntheticCorpus c{KnowledgeBase{}, EmbeddingMatrix(shape.image_dim), EmbeddingMatrix(shape.text_dim),
                      EmbeddingMatrix(shape.image_dim), {}};
    c.images.reserve(shape.images);
    c.sections.reserve(entries * shape.sections_per_entry);
    std::vector<float> img(shape.image_dim), txt(shape.text_dim);

    std::size_t image = 0;
    for (std::size_t e = 0; e < entries; ++e) {
        ArticleEntry entry;
        entry.url = "https://example.org/wiki/Entry_" + std::to_string(e);
        entry.title = "Entry " + std::to_string(e);
        for (std::size_t s = 0; s < shape.sections_per_entry; ++s) {
            SectionRecord sec;
            sec.section_id = make_section_id(entry.url, s);
            sec.heading = "Part " + std::to_string(s);
            sec.body = "Synthetic text.";
            sec.prefixed_text = prefix_section(entry.title, sec.heading, sec.body);
            fill_unit(rng, txt);
            c.sections.add(sec.section_id, txt);
            entry.sections.push_back(std::move(sec));
        }
        c.kb.add(std::move(entry));
        for (std::size_t i = 0; i < shape.images_per_entry && image < shape.images; ++i, ++image) {
            const auto id = "img_" + std::to_string(image);
            fill_unit(rng, img);
            c.images.add(id, img);
            c.kb.attach_image(id, "https://example.org/wiki/Entry_" + std::to_string(e));
        }
    }
    c.images.mark_normalized();
    c.sections.mark_normalized();

    for (std::size_t q = 0; q < shape.queries; ++q) {
        const auto qid = "q" + std::to_string(q);
        fill_unit(rng, img);
        c.queries.add(qid, img);
        std::vector<float> tokens;
        tokens.reserve(shape.query_tokens * shape.text_dim);
        for (std::size_t t = 0; t < shape.query_tokens; ++t) {
            fill_unit(rng, txt);
            tokens.insert(tokens.end(), txt.begin(), txt.end());
        }
        c.tokens.emplace_back(qid, shape.text_dim, std::move(tokens));
    }
    c.queries.mark_normalized();
    return c;
}

Json to_json(const BenchReport& report) {
    Json rows = Json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"scope", r.scope},
                        {"total_retrieval_time_s", r.total_retrieval_time_s},
                        {"mean_latency_ms", r.mean_latency_ms},
                        {"qps", r.qps},
                        {"repetition_times_s", r.repetition_times_s}});
    }
    return {{"rows", std::move(rows)},
            {"queries", report.queries},
            {"index_size", report.index_size},
            {"fingerprint",
             {{"host", report.host}, {"hardware_threads", report.hardware_threads}, {"workers", report.workers}}}};
}

std::string to_text(const BenchReport& report) {
    std::ostringstream out;
    out << "index " << report.index_size << " vectors, " << report.queries << " queries, host " << report.host
        << ", " << report.hardware_threads << " hw threads, " << report.workers << " worker(s)\n";
    char line[128];
    std::snprintf(line, sizeof line, "%8s %14s %12s %10s\n", "scope", "total_time_s", "latency_ms", "qps");
    out << line;
    for (const auto& r : report.rows) {
        std::snprintf(line, sizeof line, "%8zu %14.4f %12.3f %10.2f\n", r.scope, r.total_retrieval_time_s,
                      r.mean_latency_ms, r.qps);
        out << line;
    }
    return out.str();
}

}  // namespace kbvqa
