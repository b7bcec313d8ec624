// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "../oracles.hpp"
#include "../test_util.hpp"
#include "kbvqa/bench.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/evaluator.hpp"
#include "kbvqa/negative_miner.hpp"
#include "kbvqa/pipeline.hpp"
#include "kbvqa/rag_client.hpp"
#include "kbvqa/reranker.hpp"
#include "kbvqa/vector_index.hpp"

namespace {

using namespace kbvqa;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

// Tolerances and budgets.
constexpr double kSearchBudgetS = 60.0;
constexpr double kEndToEndBudgetS = 30.0;
constexpr double kBenchBudgetS = 600.0;
constexpr double kLossExampleTol = 1e-5;
constexpr double kLossLn2Tol = 1e-9;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradRelFloor = 1e-6;  // FD roundoff dominates below this magnitude
constexpr double kFdStep = 1e-4;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) { return testing::random_unit(rng, dim); }

// A KB of `entries` articles, each with 1-3 sections and `images_per` images.
struct RandomWorld {
    KnowledgeBase kb;
    EmbeddingMatrix images;
    EmbeddingMatrix sections;
};

RandomWorld random_world(std::mt19937_64& rng, std::size_t entries, std::size_t images_per, std::size_t image_dim,
                         std::size_t text_dim) {
    RandomWorld w{KnowledgeBase{}, EmbeddingMatrix(image_dim), EmbeddingMatrix(text_dim)};
    for (std::size_t e = 0; e < entries; ++e) {
        ArticleEntry entry;
        entry.url = "https://kb.test/E" + std::to_string(e);
        entry.title = "E" + std::to_string(e);
        const std::size_t n_sec = 1 + rng() % 3;
        for (std::size_t s = 0; s < n_sec; ++s) {
            SectionRecord sec{make_section_id(entry.url, s), "h", "b", prefix_section(entry.title, "h", "b")};
            w.sections.add(sec.section_id, random_unit(rng, text_dim));
            entry.sections.push_back(std::move(sec));
        }
        const auto url = entry.url;
        w.kb.add(std::move(entry));
        for (std::size_t i = 0; i < images_per; ++i) {
            const auto id = "img" + std::to_string(e) + "_" + std::to_string(i);
            w.images.add(id, random_unit(rng, image_dim));
            w.kb.attach_image(id, url);
        }
    }
    w.images.mark_normalized();
    w.sections.mark_normalized();
    return w;
}

QueryTokenSet random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
    std::vector<float> v;
    for (std::size_t i = 0; i < n; ++i) {
        auto t = random_unit(rng, dim);
        v.insert(v.end(), t.begin(), t.end());
    }
    return QueryTokenSet("q", dim, std::move(v));
}

Outcome exhaustive_search_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::size_t comparisons = 0, mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 10'000;
        const std::size_t dim = 1 + rng() % 64;
        EmbeddingMatrix m(dim);
        std::vector<std::string> ids;
        std::vector<float> rows;
        for (std::size_t r = 0; r < n; ++r) {
            // Every tenth row duplicates an earlier one so equal scores occur.
            std::vector<float> v;
            if (r > 0 && r % 10 == 0) {
                const auto src = m.row(rng() % r);
                v.assign(src.begin(), src.end());
            } else {
                v = random_unit(rng, dim);
            }
            char id[16];
            std::snprintf(id, sizeof id, "r%06zu", (r * 7919) % 1'000'003);
            m.add(id, v);
            ids.emplace_back(id);
            rows.insert(rows.end(), v.begin(), v.end());
        }
        m.mark_normalized();
        const FlatIndex index(m);
        std::vector<float> query(dim);
        std::normal_distribution<float> g;
        for (auto& x : query) x = g(rng);
        const auto unit_query = oracle::unit(query);
        for (std::size_t k : {1u, 5u, 10u, 20u}) {
            const auto got = index.search(unit_query, k);
            const auto want = oracle::full_scan_topk(ids, rows, dim, query, k);
            ++comparisons;
            bool same = got.size() == want.size();
            for (std::size_t i = 0; same && i < got.size(); ++i) {
                same = index.matrix().id(got[i].row) == want[i].id && got[i].score == want[i].score;
            }
            mismatches += !same;
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << comparisons << " top-k comparisons, " << mismatches << " mismatches, " << secs << " s (budget "
      << kSearchBudgetS << " s)";
    return {mismatches == 0 && secs < kSearchBudgetS, d.str()};
}

EvalRecord record_for(const std::string& gold, std::vector<std::string> urls) {
    EvalRecord r;
    r.query_id = "q";
    r.gold_url = gold;
    r.ranked_urls = std::move(urls);
    r.gold_answers = {"x"};
    return r;
}

Outcome rerank_recall_invariance() {
    std::mt19937_64 rng(202);
    std::size_t violations = 0, monotone_violations = 0, queries = 0;
    for (int fixture = 0; fixture < 100; ++fixture) {
        const auto w = random_world(rng, 20 + rng() % 40, 1 + rng() % 3, 8, 12);
        const FlatIndex index(w.images);
        const std::size_t scope = std::vector<std::size_t>{1, 5, 10, 20}[rng() % 4];
        std::vector<EvalRecord> before, after;
        for (int qi = 0; qi < 5; ++qi, ++queries) {
            const auto q = random_unit(rng, 8);
            const auto tokens = random_tokens(rng, 4, 12);
            const auto cands = search_topk(index, q, scope, w.kb);
            const auto ranked = rerank(tokens, cands, w.sections, w.kb, {.alpha = 0.5, .scope = scope}).ranked;
            // Gold is either a retrieved entry or a random one.
            const auto gold = (rng() % 2) ? cands[rng() % cands.size()].entry_url
                                          : "https://kb.test/E" + std::to_string(rng() % 60);
            before.push_back(record_for(gold, entry_order(std::span<const RetrievalCandidate>(cands))));
            after.push_back(record_for(gold, entry_order(std::span<const RankedSection>(ranked))));
        }
        std::vector<std::size_t> ks(scope);
        for (std::size_t k = 0; k < scope; ++k) ks[k] = k + 1;
        const auto rb = recall_at_k(before, ks);
        const auto ra = recall_at_k(after, ks);
        violations += rb.at(scope) != ra.at(scope);
        for (std::size_t k = 1; k < scope; ++k) {
            monotone_violations += ra.at(k) > ra.at(k + 1);
            monotone_violations += rb.at(k) > rb.at(k + 1);
        }
    }
    std::ostringstream d;
    d << "100 fixtures, " << queries << " queries: " << violations << " recall@scope differences, "
      << monotone_violations << " non-monotone K steps";
    return {violations == 0 && monotone_violations == 0, d.str()};
}

Outcome alpha_one_degeneration() {
    std::mt19937_64 rng(303);
    std::size_t agree = 0;
    for (int fixture = 0; fixture < 100; ++fixture) {
        const auto w = random_world(rng, 30, 2, 8, 12);
        const FlatIndex index(w.images);
        const auto cands = search_topk(index, random_unit(rng, 8), 20, w.kb);
        const auto ranked = rerank(random_tokens(rng, 4, 12), cands, w.sections, w.kb, {.alpha = 1.0, .scope = 20});
        agree += ranked.ranked.front().entry_url == cands.front().entry_url;
    }
    return {agree == 100, std::to_string(agree) + "/100 fixtures keep the stage-1 top entry"};
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + KBVQA_CLI + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome oracle_end_to_end() {
    const auto t0 = Clock::now();
    testing::TempDir dir;
    std::mt19937_64 rng(404);
    constexpr std::size_t kEntries = 100, kImageDim = 32, kTextDim = 256, kNq = 32;

    // Each query image mixes its gold entry's image with a stronger pull
    // toward a confuser entry, so stage 1 usually ranks the confuser first.
    std::ostringstream kb, manifest, queries, stub;
    EmbeddingMatrix raw_images(kImageDim), sections(kTextDim), query_images(kImageDim), tokens(kTextDim);
    std::vector<std::vector<float>> first_image;
    std::vector<std::string> evidence;
    for (std::size_t e = 0; e < kEntries; ++e) {
        const auto url = "https://kb.test/wiki/Entry_" + std::to_string(e);
        const std::size_t n_sec = 2 + e % 3;
        Json secs = Json::array();
        for (std::size_t s = 0; s < n_sec; ++s) {
            secs.push_back({{"heading", "Part " + std::to_string(s)}, {"body", "Fact " + std::to_string(e * 10 + s) + "."}});
            sections.add(make_section_id(url, s), random_unit(rng, kTextDim));
        }
        evidence.push_back(make_section_id(url, e % n_sec));
        kb << Json{{"url", url}, {"title", "Entry " + std::to_string(e)}, {"sections", secs}}.dump() << '\n';
        for (int i = 0; i < 2; ++i) {
            const auto id = "img_" + std::to_string(e) + "_" + std::to_string(i);
            auto v = random_unit(rng, kImageDim);
            if (i == 0) first_image.push_back(v);
            for (auto& x : v) x *= 3.0f;  // the index command normalizes
            raw_images.add(id, v);
            manifest << Json{{"image_id", id}, {"url", url}}.dump() << '\n';
        }
    }
    sections.mark_normalized();
    for (std::size_t q = 0; q < kEntries; ++q) {
        const auto qid = "q" + std::to_string(q);
        const auto& gold = first_image[q];
        const auto& confuser = first_image[(q + 1) % kEntries];
        // Confuser component orthogonal to the gold image: cos(query, gold) = 0.6.
        double along = 0.0;
        for (std::size_t d = 0; d < kImageDim; ++d) along += double(gold[d]) * confuser[d];
        std::vector<float> perp(kImageDim);
        for (std::size_t d = 0; d < kImageDim; ++d) perp[d] = static_cast<float>(confuser[d] - along * gold[d]);
        perp = normalized_copy(perp);
        std::vector<float> v(kImageDim);
        for (std::size_t d = 0; d < kImageDim; ++d) v[d] = 0.6f * gold[d] + 0.8f * perp[d];
        query_images.add(qid, v);
        // Token 0 is the gold evidence section; the rest are random.
        const auto ev = sections.at(evidence[q]);
        tokens.add(token_row_id(qid, 0), ev);
        for (std::size_t t = 1; t < kNq; ++t) tokens.add(token_row_id(qid, t), random_unit(rng, kTextDim));
        const auto question = "What is fact number " + std::to_string(q) + "?";
        const auto answer = "Answer " + std::to_string(q);
        queries << Json{{"query_id", qid},
                        {"question", question},
                        {"gold_url", "https://kb.test/wiki/Entry_" + std::to_string(q)},
                        {"gold_answers", {answer}},
                        {"evidence_section_id", evidence[q]}}
                       .dump()
                << '\n';
        stub << Json{{"question", question}, {"answer", answer}}.dump() << '\n';
    }
    testing::write_file(dir / "kb.jsonl", kb.str());
    testing::write_file(dir / "images.jsonl", manifest.str());
    testing::write_file(dir / "queries.jsonl", queries.str());
    testing::write_file(dir / "stub.jsonl", stub.str());
    save_embeddings(raw_images, dir / "raw_images.evec");
    save_embeddings(sections, dir / "sections.evec");
    save_embeddings(query_images, dir / "query_images.evec");
    save_embeddings(tokens, dir / "tokens.evec");

    const auto p = [&](const char* name) { return "\"" + (dir / name).string() + "\""; };
    const std::string global = "--kb " + p("kb.jsonl") + " --images " + p("images.jsonl") + " --index " +
                               p("index.evec") + " --sections " + p("sections.evec") + " --tokens " +
                               p("tokens.evec") + " --stub-answers " + p("stub.jsonl") +
                               " --alpha 0.5 --scope 20 --k 20 --n-q 32";
    const auto log = dir / "cli.log";
    const std::vector<std::string> steps = {
        "index --input " + p("raw_images.evec") + " --out " + p("index.evec") + " " + global,
        "search " + global + " --queries " + p("query_images.evec") + " --out " + p("candidates.jsonl"),
        "rerank " + global + " --candidates " + p("candidates.jsonl") + " --out " + p("ranked.jsonl"),
        "answer " + global + " --ranked " + p("ranked.jsonl") + " --queries " + p("queries.jsonl") + " --out " +
            p("answers.jsonl"),
        "eval " + global + " --queries " + p("queries.jsonl") + " --candidates " + p("candidates.jsonl") +
            " --report " + p("stage1.json"),
        "eval " + global + " --queries " + p("queries.jsonl") + " --ranked " + p("ranked.jsonl") + " --answers " +
            p("answers.jsonl") + " --report " + p("report.json"),
    };
    for (const auto& step : steps) {
        if (const int rc = run_cli(step, log); rc != 0) {
            return {false, "CLI step failed (exit " + std::to_string(rc) + "): " + step.substr(0, step.find(' ')) +
                               "\n" + testing::read_file(log)};
        }
    }
    const auto report = Json::parse(testing::read_file(dir / "report.json"));
    const auto stage1 = Json::parse(testing::read_file(dir / "stage1.json"));
    const double r1 = report["recall_at"]["1"].get<double>();
    const double acc = report["vqa_accuracy"].get<double>();
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "recall@1 " << r1 << " (stage 1 alone " << stage1["recall_at"]["1"].get<double>() << "), vqa_accuracy "
      << acc << ", " << secs << " s (budget " << kEndToEndBudgetS << " s)";
    return {r1 == 1.0 && acc == 1.0 && secs < kEndToEndBudgetS, d.str()};
}

double relative_error(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), kGradRelFloor});
}

Outcome loss_correctness() {
    const std::vector<float> one = {1.0f, 0.0f}, zero = {0.0f, 1.0f};
    const QueryTokenSet q1("q", 2, {1.0f, 0.0f});
    const std::vector<std::span<const float>> negs0 = {zero};
    const double example = contrastive_loss(q1, one, negs0, {.temperature = 1.0}).loss;
    const std::vector<std::span<const float>> negs_eq = {one};
    const double symmetric = contrastive_loss(q1, one, negs_eq, {.temperature = 1.0}).loss;

    std::mt19937_64 rng(505);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t nq = 1 + rng() % 4, dim = 2 + rng() % 10, n_neg = 1 + rng() % 6;
        const double temperature = (trial % 2) ? kDefaultTemperature : 0.5;
        std::vector<float> tok, pos;
        std::vector<std::vector<float>> neg;
        // Resample until every section's best token leads the runner-up, so
        // the max is differentiable at the sample.
        for (;;) {
            tok.clear();
            neg.clear();
            for (std::size_t i = 0; i < nq; ++i) {
                auto t = random_unit(rng, dim);
                tok.insert(tok.end(), t.begin(), t.end());
            }
            pos = random_unit(rng, dim);
            for (std::size_t j = 0; j < n_neg; ++j) neg.push_back(random_unit(rng, dim));
            bool ok = true;
            auto gap = [&](const std::vector<float>& s) {
                std::vector<double> sims;
                for (std::size_t i = 0; i < nq; ++i) {
                    double acc = 0;
                    for (std::size_t d = 0; d < dim; ++d) acc += double(tok[i * dim + d]) * s[d];
                    sims.push_back(acc);
                }
                std::sort(sims.rbegin(), sims.rend());
                if (nq > 1 && sims[0] - sims[1] < 1e-2) ok = false;
            };
            gap(pos);
            for (const auto& n : neg) gap(n);
            if (ok) break;
        }
        const QueryTokenSet q("q", dim, tok);
        std::vector<std::span<const float>> spans(neg.begin(), neg.end());
        const auto r = contrastive_loss(q, pos, spans, {.temperature = temperature});
        std::vector<double> params(tok.begin(), tok.end());
        params.insert(params.end(), pos.begin(), pos.end());
        for (const auto& n : neg) params.insert(params.end(), n.begin(), n.end());
        std::vector<double> analytic(r.grad_tokens);
        analytic.insert(analytic.end(), r.grad_positive.begin(), r.grad_positive.end());
        for (const auto& g : r.grad_negatives) analytic.insert(analytic.end(), g.begin(), g.end());
        for (std::size_t p = 0; p < params.size(); ++p, ++checked) {
            auto plus = params, minus = params;
            plus[p] += kFdStep;
            minus[p] -= kFdStep;
            const double fd = (oracle::contrastive_loss(plus, nq, dim, n_neg + 1, temperature) -
                               oracle::contrastive_loss(minus, nq, dim, n_neg + 1, temperature)) /
                              (2 * kFdStep);
            worst = std::max(worst, relative_error(analytic[p], fd));
        }
    }
    const bool pass = std::fabs(example - 0.31326) <= kLossExampleTol && std::fabs(symmetric - std::log(2.0)) <= kLossLn2Tol &&
                      worst < kGradRelTol;
    char d[256];
    std::snprintf(d, sizeof d,
                  "loss %.8f (want 0.31326 +- %.0e), equal sims %.12f (want ln 2 +- %.0e), 200 instances / %zu "
                  "gradient entries, worst relative error %.2e (< %.0e)",
                  example, kLossExampleTol, symmetric, kLossLn2Tol, checked, worst, kGradRelTol);
    return {pass, d};
}

Outcome prompt_golden_files() {
    const auto golden = [](const char* name) {
        return testing::read_file(fs::path(KBVQA_TEST_DATA) / "golden" / name);
    };
    const bool evqa = render_listing(evqa_template(), kContextSlot, kQuestionSlot) == golden("evqa_prompt.txt");
    const auto infoseek_text = golden("infoseek_prompt.txt");
    const bool infoseek = render_listing(infoseek_template(), kContextSlot, kQuestionSlot) == infoseek_text;
    const auto evqa_msgs = render_prompt(evqa_template(), "C", "Q");
    const bool slots = evqa_msgs.size() == 1 && evqa_msgs[0].content == "Context: C \nQuestion: Q\nThe answer is:";
    const bool exemplar = infoseek_text.find("Short answer is: Lake Como") != std::string::npos;
    std::ostringstream d;
    d << "E-VQA listing " << (evqa ? "identical" : "DIFFERS") << ", InfoSeek listing "
      << (infoseek ? "identical" : "DIFFERS") << ", slot rendering " << (slots ? "exact" : "WRONG")
      << ", one-shot exemplar " << (exemplar ? "present" : "MISSING");
    return {evqa && infoseek && slots && exemplar, d.str()};
}

Outcome evec_round_trip() {
    testing::TempDir dir;
    std::mt19937_64 rng(606);
    std::size_t identical = 0;
    const std::vector<std::pair<std::size_t, std::size_t>> shapes = {{1, 5}, {3, 0}, {1, 0}, {7, 1}};
    for (int trial = 0; trial < 20; ++trial) {
        const auto [dim, count] = trial < 4 ? shapes[trial] : std::pair<std::size_t, std::size_t>{1 + rng() % 33, rng() % 200};
        EmbeddingMatrix m(dim);
        std::vector<float> row(dim);
        for (std::size_t r = 0; r < count; ++r) {
            for (auto& x : row) {
                // Arbitrary finite bit patterns, including subnormals and -0.
                std::uint32_t bits;
                do {
                    bits = static_cast<std::uint32_t>(rng());
                } while ((bits & 0x7f800000u) == 0x7f800000u);
                std::memcpy(&x, &bits, sizeof x);
            }
            m.add("row/" + std::to_string(r) + (r % 3 ? "" : "/ünï"), row);
        }
        const auto path = dir / ("m" + std::to_string(trial) + ".evec");
        save_embeddings(m, path);
        const auto back = load_embeddings(path);
        const auto again = dir / ("again" + std::to_string(trial) + ".evec");
        save_embeddings(back, again);
        identical += back == m && back.ids() == m.ids() && testing::read_file(path) == testing::read_file(again);
    }
    return {identical == 20, std::to_string(identical) + "/20 matrices bit-identical (dims incl. 1, counts incl. 0)"};
}

Outcome throughput_shape() {
    const auto t0 = Clock::now();
    SyntheticShape shape;  // 100k images
    const auto corpus = make_synthetic_corpus(shape);
    const FlatIndex index(corpus.images);
    BenchConfig cfg;
    cfg.scopes = {10, 20, 50, 100, 500};
    const auto report = bench_throughput({corpus.kb, index, corpus.sections, corpus.queries, corpus.tokens}, cfg);
    bool decreasing = true;
    for (std::size_t i = 1; i < report.rows.size(); ++i) decreasing &= report.rows[i].qps < report.rows[i - 1].qps;
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d.precision(1);
    d << std::fixed << report.index_size << " vectors, qps";
    for (const auto& r : report.rows) d << " " << r.scope << ":" << r.qps;
    d << ", " << secs << " s (budget " << kBenchBudgetS << " s)";
    return {decreasing && secs < kBenchBudgetS, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"exhaustive-search-oracle", exhaustive_search_oracle},
        {"rerank-recall-invariance", rerank_recall_invariance},
        {"alpha-one-degeneration", alpha_one_degeneration},
        {"oracle-end-to-end", oracle_end_to_end},
        {"loss-correctness", loss_correctness},
        {"prompt-golden-files", prompt_golden_files},
        {"evec-round-trip", evec_round_trip},
        {"throughput-shape", throughput_shape},
    };
    const std::string only = argc > 1 ? argv[1] : "";
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && name != only) continue;
        Outcome out;
        try {
            out = run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        failed += !out.pass;
        std::cout << (out.pass ? "PASS " : "FAIL ") << name << ": " << out.detail << std::endl;
    }
    return failed;
}
