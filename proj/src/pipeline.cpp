// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/pipeline.hpp"

#include <fstream>
#include <unordered_map>

#include "kbvqa/error.hpp"
#include "kbvqa/io.hpp"

namespace kbvqa {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
    rerank.validate();
    if (search_k == 0) throw UsageError("search k must be at least 1");
    if (eval_ks.empty()) throw UsageError("at least one K is required for evaluation");
    for (auto k : eval_ks) {
        if (k == 0) throw UsageError("evaluation K must be positive");
    }
    (void)kbvqa::prompt_template(prompt_template);
    for (const auto* p : {&kb_file, &image_manifest, &image_index, &section_embeddings, &query_tokens, &stub_answers}) {
        if (!p->empty() && !fs::exists(*p)) throw UsageError("file not found: " + p->string());
    }
}

namespace {

void require(const fs::path& p, const char* what) {
    if (p.empty()) throw UsageError(std::string("missing required input: ") + what);
}

KnowledgeBase load_kb(const PipelineConfig& cfg) {
    require(cfg.kb_file, "knowledge base file");
    return ingest(cfg.kb_file, cfg.image_manifest).kb;
}

EmbeddingMatrix load_normalized(const fs::path& path, const char* what) {
    require(path, what);
    return normalize(load_embeddings(path));
}

// Prefixes data errors raised while processing `path` with its name.
template <typename Fn>
auto with_context(const fs::path& path, Fn fn) {
    try {
        return fn();
    } catch (const DataError& e) {
        const std::string what = e.what();
        if (what.rfind(path.string(), 0) == 0) throw;
        throw DataError(path.string() + ": " + what);
    }
}

std::string where(const fs::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

std::string string_field(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw DataError(std::string("missing string field \"") + key + "\"");
    return it->get<std::string>();
}

template <typename T, typename Parse>
PerQuery<T> read_grouped(const fs::path& path, Parse parse) {
    PerQuery<T> out;
    std::unordered_map<std::string, std::size_t> slot;
    for_each_json_line(path, [&](std::size_t line, const Json& j) {
        try {
            auto query_id = string_field(j, "query_id");
            auto [it, inserted] = slot.emplace(query_id, out.size());
            if (inserted) out.emplace_back(std::move(query_id), std::vector<T>{});
            auto& rows = out[it->second].second;
            const auto rank = j.at("rank").get<std::size_t>();
            if (rank != rows.size() + 1) throw DataError("ranks must be consecutive from 1");
            rows.push_back(parse(j));
        } catch (const Json::exception& e) {
            throw DataError(where(path, line) + e.what());
        } catch (const DataError& e) {
            throw DataError(where(path, line) + e.what());
        }
    });
    return out;
}

template <typename T>
void write_grouped(const PerQuery<T>& results, std::ostream& out) {
    for (const auto& [query_id, rows] : results) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            Json j = {{"query_id", query_id}, {"rank", i + 1}};
            j.update(to_json(rows[i]));
            out << j.dump() << '\n';
        }
    }
}

}  // namespace

std::vector<QueryRecord> read_queries(const fs::path& path) {
    std::vector<QueryRecord> out;
    for_each_json_line(path, [&](std::size_t line, const Json& j) {
        try {
            QueryRecord q;
            q.query_id = string_field(j, "query_id");
            q.question = j.value("question", "");
            q.gold_url = nfc(j.value("gold_url", ""));
            q.evidence_section_id = nfc(j.value("evidence_section_id", ""));
            if (auto it = j.find("gold_answers"); it != j.end()) {
                for (const auto& g : *it) q.gold_answers.push_back(g.is_string() ? g.get<std::string>() : g.dump());
            }
            const auto kind = j.value("answer_kind", "string");
            if (kind == "numeric") {
                q.answer_kind = AnswerKind::kNumeric;
            } else if (kind != "string") {
                throw DataError("answer_kind must be \"string\" or \"numeric\"");
            }
            out.push_back(std::move(q));
        } catch (const Json::exception& e) {
            throw DataError(where(path, line) + e.what());
        } catch (const DataError& e) {
            throw DataError(where(path, line) + e.what());
        }
    });
    return out;
}

Json to_json(const RetrievalCandidate& c) {
    return {{"image_id", c.image_id}, {"entry_url", c.entry_url}, {"visual_score", c.visual_score}};
}

Json to_json(const RankedSection& r) {
    return {{"section_id", r.section_id}, {"entry_url", r.entry_url}, {"s_r", r.s_r}, {"s_v", r.s_v}, {"fused", r.fused}};
}

RetrievalCandidate candidate_from_json(const Json& j) {
    RetrievalCandidate c;
    c.image_id = string_field(j, "image_id");
    c.entry_url = string_field(j, "entry_url");
    c.visual_score = j.at("visual_score").get<float>();
    c.rank = j.value("rank", std::size_t{0});
    return c;
}

void write_candidates(const PerQuery<RetrievalCandidate>& results, std::ostream& out) {
    write_grouped(results, out);
}

PerQuery<RetrievalCandidate> read_candidates(const fs::path& path) {
    return read_grouped<RetrievalCandidate>(path, [](const Json& j) { return candidate_from_json(j); });
}

void write_ranked(const PerQuery<RankedSection>& results, std::ostream& out) { write_grouped(results, out); }

PerQuery<RankedSection> read_ranked(const fs::path& path) {
    return read_grouped<RankedSection>(path, [](const Json& j) {
        return RankedSection{string_field(j, "section_id"), string_field(j, "entry_url"), j.at("s_r").get<double>(),
                             j.at("s_v").get<double>(), j.at("fused").get<double>()};
    });
}

std::vector<AnswerRow> read_answers(const fs::path& path) {
    std::vector<AnswerRow> out;
    for_each_json_line(path, [&](std::size_t line, const Json& j) {
        try {
            out.push_back({string_field(j, "query_id"), string_field(j, "answer"), j.value("section_id", ""),
                           j.value("entry_url", ""), j.value("latency_ms", 0.0), j.value("retries", 0)});
        } catch (const Json::exception& e) {
            throw DataError(where(path, line) + e.what());
        } catch (const DataError& e) {
            throw DataError(where(path, line) + e.what());
        }
    });
    return out;
}

std::unique_ptr<ChatTransport> make_transport(const PipelineConfig& cfg) {
    if (!cfg.stub_answers.empty()) {
        return std::make_unique<StubChatTransport>(StubChatTransport::from_file(cfg.stub_answers));
    }
    return std::make_unique<HttpChatTransport>();
}

IngestSummary cmd_ingest(const PipelineConfig& cfg, const fs::path& out_kb, const fs::path& out_manifest,
                         const fs::path& report_out, bool strict) {
    require(cfg.kb_file, "knowledge base file");
    auto result = ingest(cfg.kb_file, cfg.image_manifest, {.strict = strict});
    if (!out_kb.empty()) {
        require(out_manifest, "output image manifest");
        export_kb(result.kb, out_kb, out_manifest);
    }
    if (!report_out.empty()) {
        Json issues = Json::array();
        for (const auto& i : result.report.issues) {
            issues.push_back({{"file", i.file}, {"line", i.line}, {"message", i.message}});
        }
        const auto stats = result.kb.stats();
        AtomicFileWriter out(report_out);
        out.stream() << Json{{"stats", {{"entries", stats.entries}, {"sections", stats.sections}, {"images", stats.images}}},
                             {"records_read", result.report.records_read},
                             {"records_skipped", result.report.records_skipped},
                             {"sectionless_urls", result.report.sectionless_urls},
                             {"issues", std::move(issues)}}
                            .dump(2)
                     << '\n';
        out.commit();
    }
    return {result.kb.stats(), std::move(result.report)};
}

EmbeddingMatrix cmd_index(const PipelineConfig& cfg, const fs::path& input, const fs::path& out) {
    EmbeddingMatrix raw;
    if (input.extension() == ".jsonl") {
        std::optional<EmbeddingMatrix> m;
        for_each_json_line(input, [&](std::size_t line, const Json& j) {
            try {
                const auto v = j.at("vector").get<std::vector<float>>();
                if (!m) m.emplace(v.size());
                m->add(string_field(j, "id"), v);
            } catch (const Json::exception& e) {
                throw DataError(where(input, line) + e.what());
            } catch (const DataError& e) {
                throw DataError(where(input, line) + e.what());
            }
        });
        if (!m) throw DataError(input.string() + ": no vectors");
        raw = std::move(*m);
    } else {
        raw = load_embeddings(input);
    }
    auto index = normalize(raw);
    if (!cfg.kb_file.empty()) {
        const auto kb = load_kb(cfg);
        for (const auto& id : index.ids()) {
            if (!kb.url_of_image(id)) throw DataError("image " + id + " is not in the knowledge base");
        }
    }
    save_embeddings(index, out);
    return index;
}

PerQuery<RetrievalCandidate> cmd_search(const PipelineConfig& cfg, const fs::path& queries, const fs::path& out,
                                        unsigned threads) {
    cfg.validate();
    const auto kb = load_kb(cfg);
    const FlatIndex index(load_normalized(cfg.image_index, "image index"));
    const auto query_vectors = load_embeddings(queries);
    const auto hits =
        with_context(queries, [&] { return search_batch(index, query_vectors, cfg.search_k, kb, threads); });

    PerQuery<RetrievalCandidate> results;
    for (std::size_t q = 0; q < query_vectors.size(); ++q) results.emplace_back(query_vectors.id(q), hits[q]);
    AtomicFileWriter writer(out);
    write_candidates(results, writer.stream());
    writer.commit();
    return results;
}

PerQuery<RankedSection> cmd_rerank(const PipelineConfig& cfg, const fs::path& candidates, const fs::path& out) {
    cfg.validate();
    const auto kb = load_kb(cfg);
    const auto sections = load_normalized(cfg.section_embeddings, "section embeddings");
    const auto token_sets = query_token_sets(load_normalized(cfg.query_tokens, "query tokens"), cfg.query_token_count);
    std::unordered_map<std::string, const QueryTokenSet*> tokens_by_query;
    for (const auto& t : token_sets) tokens_by_query.emplace(t.query_id(), &t);

    PerQuery<RankedSection> results;
    with_context(candidates, [&] {
        for (const auto& [query_id, cands] : read_candidates(candidates)) {
            auto it = tokens_by_query.find(query_id);
            if (it == tokens_by_query.end()) throw DataError("no query tokens for query " + query_id);
            results.emplace_back(query_id, rerank(*it->second, cands, sections, kb, cfg.rerank).ranked);
        }
    });
    AtomicFileWriter writer(out);
    write_ranked(results, writer.stream());
    writer.commit();
    return results;
}

std::vector<AnswerRow> cmd_answer(const PipelineConfig& cfg, ChatTransport& transport, const fs::path& ranked,
                                  const fs::path& queries, const fs::path& out, const fs::path& transcripts_out) {
    cfg.validate();
    const auto kb = load_kb(cfg);
    std::unordered_map<std::string, std::string> questions;
    for (const auto& q : read_queries(queries)) questions[q.query_id] = q.question;

    AtomicFileWriter writer(out);
    std::optional<AtomicFileWriter> transcripts;
    if (!transcripts_out.empty()) transcripts.emplace(transcripts_out);

    std::vector<AnswerRow> rows;
    with_context(ranked, [&] {
        for (const auto& [query_id, sections] : read_ranked(ranked)) {
            if (sections.empty()) continue;
            auto q = questions.find(query_id);
            if (q == questions.end() || q->second.empty()) throw DataError("no question for query " + query_id);
            const auto& head = sections.front();
            const auto* section = kb.find_section(head.section_id);
            if (!section) throw DataError("ranked section " + head.section_id + " is not in the knowledge base");

            AnswerRequest request{cfg.prompt_template, section->prefixed_text, q->second, cfg.endpoint};
            const auto result = generate_answer(request, transport);
            AnswerRow row{query_id, result.answer, head.section_id, head.entry_url, result.latency_ms, result.raw.retries};
            writer.write_json_line({{"query_id", row.query_id},
                                    {"answer", row.answer},
                                    {"section_id", row.section_id},
                                    {"entry_url", row.entry_url},
                                    {"latency_ms", row.latency_ms},
                                    {"retries", row.retries}});
            if (transcripts) {
                Json t = to_json(result.raw);
                t["query_id"] = query_id;
                transcripts->write_json_line(t);
            }
            rows.push_back(std::move(row));
        }
    });
    writer.commit();
    if (transcripts) transcripts->commit();
    return rows;
}

EvalReport cmd_eval(const PipelineConfig& cfg, const EvalInputs& inputs, const fs::path& report_out) {
    cfg.validate();
    std::vector<EvalRecord> records;
    std::size_t malformed = 0;

    if (!inputs.records.empty()) {
        auto loaded = load_eval_records(inputs.records);
        records = std::move(loaded.records);
        malformed = loaded.errors.size();
    } else {
        require(inputs.queries, "queries file");
        if (inputs.ranked.empty() == inputs.candidates.empty()) {
            throw UsageError("give exactly one of a ranked-sections file or a candidates file");
        }
        std::unordered_map<std::string, std::vector<std::string>> ranked_urls;
        if (!inputs.ranked.empty()) {
            for (const auto& [id, rows] : read_ranked(inputs.ranked)) ranked_urls[id] = entry_order(rows);
        } else {
            for (const auto& [id, rows] : read_candidates(inputs.candidates)) ranked_urls[id] = entry_order(rows);
        }
        std::unordered_map<std::string, std::string> answers;
        if (!inputs.answers.empty()) {
            for (const auto& a : read_answers(inputs.answers)) answers[a.query_id] = a.answer;
        }
        for (const auto& q : read_queries(inputs.queries)) {
            if (q.gold_url.empty() || q.gold_answers.empty()) {
                ++malformed;
                continue;
            }
            EvalRecord r;
            r.query_id = q.query_id;
            r.gold_url = q.gold_url;
            r.ranked_urls = ranked_urls[q.query_id];
            if (auto it = answers.find(q.query_id); it != answers.end()) r.predicted_answer = it->second;
            r.gold_answers = q.gold_answers;
            r.answer_kind = q.answer_kind;
            records.push_back(std::move(r));
        }
    }

    std::size_t filtered = 0;
    if (!cfg.kb_file.empty()) {
        const auto kb = load_kb(cfg);
        std::erase_if(records, [&](const EvalRecord& r) {
            const bool drop = !kb.contains(r.gold_url);
            filtered += drop;
            return drop;
        });
    }

    auto report = evaluate(records, cfg.eval_ks);
    report.malformed_records = malformed;
    report.filtered_records = filtered;
    if (!report_out.empty()) {
        AtomicFileWriter out(report_out);
        out.stream() << to_json(report).dump(2) << '\n';
        out.commit();
    }
    return report;
}

MineSummary cmd_mine(const PipelineConfig& cfg, const fs::path& candidates, const fs::path& queries,
                     std::size_t negatives, std::uint64_t seed, const fs::path& out) {
    cfg.validate();
    const auto kb = load_kb(cfg);
    std::unordered_map<std::string, std::vector<RetrievalCandidate>> by_query;
    for (auto& [id, rows] : read_candidates(candidates)) by_query[id] = std::move(rows);

    MineSummary summary;
    with_context(queries, [&] {
        for (const auto& q : read_queries(queries)) {
            if (q.gold_url.empty() || q.evidence_section_id.empty()) {
                throw DataError("query " + q.query_id + " needs gold_url and evidence_section_id for mining");
            }
            if (!kb.contains(q.gold_url)) {
                summary.skipped.push_back(q.query_id);
                continue;
            }
            auto it = by_query.find(q.query_id);
            if (it == by_query.end()) throw DataError("no stage-1 candidates for query " + q.query_id);
            summary.examples.push_back(
                mine_negatives({q.query_id, q.gold_url, q.evidence_section_id}, it->second, kb, negatives, seed));
        }
    });
    write_train_batch(summary.examples, out);
    return summary;
}

std::vector<LossRow> cmd_loss(const PipelineConfig& cfg, const fs::path& batch, const LossConfig& loss_cfg,
                              const fs::path& out, const fs::path& grads_out) {
    cfg.validate();
    loss_cfg.validate();
    const auto sections = load_normalized(cfg.section_embeddings, "section embeddings");
    const auto token_sets = query_token_sets(load_normalized(cfg.query_tokens, "query tokens"), cfg.query_token_count);
    std::unordered_map<std::string, const QueryTokenSet*> tokens_by_query;
    for (const auto& t : token_sets) tokens_by_query.emplace(t.query_id(), &t);

    std::optional<EmbeddingMatrix> grads;
    if (!grads_out.empty()) grads.emplace(sections.dim());
    auto add_grad = [&](std::string id, const double* g, std::size_t n) {
        std::vector<float> v(g, g + n);
        grads->add(std::move(id), v);
    };

    AtomicFileWriter writer(out);
    std::vector<LossRow> rows;
    with_context(batch, [&] {
        for (const auto& ex : read_train_batch(batch)) {
            auto it = tokens_by_query.find(ex.query_id);
            if (it == tokens_by_query.end()) throw DataError("no query tokens for query " + ex.query_id);
            std::vector<std::span<const float>> negs;
            for (const auto& id : ex.negative_section_ids) negs.push_back(sections.at(id));
            const auto result = contrastive_loss(*it->second, sections.at(ex.positive_section_id), negs, loss_cfg);

            LossRow row{ex.query_id, result.loss, negs.size()};
            writer.write_json_line({{"query_id", row.query_id}, {"loss", row.loss}, {"n_negatives", row.negatives}});
            rows.push_back(row);

            if (grads) {
                const auto dim = sections.dim();
                for (std::size_t i = 0; i < it->second->size(); ++i) {
                    add_grad(token_row_id(ex.query_id, i), result.grad_tokens.data() + i * dim, dim);
                }
                add_grad(ex.query_id + "/positive", result.grad_positive.data(), dim);
                for (std::size_t j = 0; j < result.grad_negatives.size(); ++j) {
                    add_grad(ex.query_id + "/negative_" + std::to_string(j), result.grad_negatives[j].data(), dim);
                }
            }
        }
    });
    if (grads) save_embeddings(*grads, grads_out);
    writer.commit();
    return rows;
}

PipelineState PipelineState::load(const PipelineConfig& cfg) {
    cfg.validate();
    PipelineState state;
    state.config = cfg;
    state.kb = load_kb(cfg);
    state.index = std::make_unique<FlatIndex>(load_normalized(cfg.image_index, "image index"));
    for (const auto& id : state.index->matrix().ids()) {
        if (!state.kb.url_of_image(id)) throw DataError("indexed image " + id + " is not in the knowledge base");
    }
    state.sections = load_normalized(cfg.section_embeddings, "section embeddings");
    return state;
}

}  // namespace kbvqa
