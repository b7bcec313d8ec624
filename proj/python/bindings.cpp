// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kbvqa/embedding.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/evaluator.hpp"
#include "kbvqa/kb_store.hpp"
#include "kbvqa/negative_miner.hpp"
#include "kbvqa/rag_client.hpp"
#include "kbvqa/reranker.hpp"
#include "kbvqa/vector_index.hpp"

namespace py = pybind11;
using namespace kbvqa;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::span<const float> vector_of(const FloatArray& a, const char* what) {
    if (a.ndim() != 1) throw UsageError(std::string(what) + " must be a 1-d array");
    return {a.data(), static_cast<std::size_t>(a.shape(0))};
}

py::array_t<float> to_array(std::span<const float> v) {
    py::array_t<float> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<double> to_array(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    py::array_t<double> out({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

QueryTokenSet tokens_of(const FloatArray& a, const std::string& query_id) {
    if (a.ndim() != 2) throw UsageError("tokens must be a 2-d array (n_tokens, dim)");
    return QueryTokenSet(query_id, static_cast<std::size_t>(a.shape(1)),
                         std::vector<float>(a.data(), a.data() + a.size()));
}

py::dict candidate_dict(const RetrievalCandidate& c) {
    py::dict d;
    d["image_id"] = c.image_id;
    d["entry_url"] = c.entry_url;
    d["visual_score"] = c.visual_score;
    d["rank"] = c.rank;
    return d;
}

std::vector<RetrievalCandidate> candidates_of(const py::list& items) {
    std::vector<RetrievalCandidate> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto d = items[i].cast<py::dict>();
        out.push_back({d["image_id"].cast<std::string>(), d["entry_url"].cast<std::string>(),
                       d["visual_score"].cast<float>(), i + 1});
    }
    return out;
}

EmbeddingMatrix matrix_from_numpy(const std::vector<std::string>& ids, const FloatArray& a, bool normalized) {
    if (a.ndim() != 2) throw UsageError("embeddings must be a 2-d array (count, dim)");
    if (static_cast<std::size_t>(a.shape(0)) != ids.size()) throw UsageError("ids and rows differ in count");
    const auto dim = static_cast<std::size_t>(a.shape(1));
    EmbeddingMatrix m(dim);
    m.reserve(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) m.add(ids[r], {a.data() + r * dim, dim});
    if (normalized) m.mark_normalized();
    return m;
}

}  // namespace

PYBIND11_MODULE(_kbvqa, m) {
    m.doc() = "Two-stage retrieval, reranking and answer evaluation for knowledge-based VQA";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<TransportError>(m, "TransportError", PyExc_RuntimeError);

    py::class_<EmbeddingMatrix>(m, "Embeddings")
        .def_static("load", &load_embeddings, py::arg("path"), "Reads an EVEC file.")
        .def_static("from_numpy", &matrix_from_numpy, py::arg("ids"), py::arg("array"),
                    py::arg("normalized") = false)
        .def("save", [](const EmbeddingMatrix& self, const std::filesystem::path& p) { save_embeddings(self, p); },
             py::arg("path"))
        .def("normalize", [](const EmbeddingMatrix& self) { return normalize(self); })
        .def_property_readonly("dim", &EmbeddingMatrix::dim)
        .def_property_readonly("normalized", &EmbeddingMatrix::normalized)
        .def_property_readonly("ids", &EmbeddingMatrix::ids)
        .def("__len__", &EmbeddingMatrix::size)
        .def("row", [](const EmbeddingMatrix& self, const std::string& id) { return to_array(self.at(id)); })
        .def("to_numpy", [](const EmbeddingMatrix& self) {
            py::array_t<float> out({static_cast<py::ssize_t>(self.size()), static_cast<py::ssize_t>(self.dim())});
            std::copy(self.values().begin(), self.values().end(), out.mutable_data());
            return out;
        })
        .def("__eq__", [](const EmbeddingMatrix& a, const EmbeddingMatrix& b) { return a == b; });

    py::class_<KnowledgeBase>(m, "KnowledgeBase")
        .def_static(
            "load",
            [](const std::filesystem::path& kb, const std::filesystem::path& images, bool strict) {
                return ingest(kb, images, {.strict = strict}).kb;
            },
            py::arg("kb_path"), py::arg("image_manifest") = std::filesystem::path(), py::arg("strict") = false)
        .def("stats",
             [](const KnowledgeBase& self) {
                 const auto s = self.stats();
                 py::dict d;
                 d["entries"] = s.entries;
                 d["sections"] = s.sections;
                 d["images"] = s.images;
                 return d;
             })
        .def("__contains__", &KnowledgeBase::contains)
        .def("url_of_image",
             [](const KnowledgeBase& self, const std::string& id) -> std::optional<std::string> {
                 if (auto u = self.url_of_image(id)) return std::string(*u);
                 return std::nullopt;
             })
        .def("sections", [](const KnowledgeBase& self, const std::string& url) {
            std::vector<std::pair<std::string, std::string>> out;
            const auto* e = self.find(url);
            if (!e) throw DataError("unknown entry " + url);
            for (const auto& s : e->sections) out.emplace_back(s.section_id, s.prefixed_text);
            return out;
        });

    py::class_<FlatIndex>(m, "FlatIndex")
        .def(py::init<EmbeddingMatrix>(), py::arg("normalized_embeddings"))
        .def(
            "search",
            [](const FlatIndex& self, const FloatArray& query, std::size_t k, const KnowledgeBase& kb) {
                py::list out;
                for (const auto& c : search_topk(self, vector_of(query, "query"), k, kb)) out.append(candidate_dict(c));
                return out;
            },
            py::arg("query"), py::arg("k"), py::arg("kb"), "Exact cosine top-k resolved to KB entries.");

    m.def(
        "rerank",
        [](const FloatArray& tokens, const py::list& candidates, const EmbeddingMatrix& sections,
           const KnowledgeBase& kb, double alpha, std::size_t scope) {
            const auto result =
                rerank(tokens_of(tokens, "q"), candidates_of(candidates), sections, kb, {alpha, scope});
            py::list out;
            for (const auto& r : result.ranked) {
                py::dict d;
                d["section_id"] = r.section_id;
                d["entry_url"] = r.entry_url;
                d["s_r"] = r.s_r;
                d["s_v"] = r.s_v;
                d["fused"] = r.fused;
                out.append(d);
            }
            return out;
        },
        py::arg("tokens"), py::arg("candidates"), py::arg("sections"), py::arg("kb"), py::arg("alpha") = 0.5,
        py::arg("scope") = 20, "Scores the sections of the first `scope` candidates' entries.");

    m.def(
        "mine_negatives",
        [](const std::string& query_id, const std::string& gold_url, const std::string& evidence_section_id,
           const py::list& candidates, const KnowledgeBase& kb, std::size_t n, std::uint64_t seed) {
            const auto ex =
                mine_negatives({query_id, gold_url, evidence_section_id}, candidates_of(candidates), kb, n, seed);
            py::dict d;
            d["query_id"] = ex.query_id;
            d["positive_section_id"] = ex.positive_section_id;
            d["negative_section_ids"] = ex.negative_section_ids;
            std::vector<std::string> prov;
            for (auto p : ex.provenance) prov.emplace_back(to_string(p));
            d["negative_provenance"] = prov;
            d["short"] = ex.short_pool;
            return d;
        },
        py::arg("query_id"), py::arg("gold_url"), py::arg("evidence_section_id"), py::arg("candidates"),
        py::arg("kb"), py::arg("n") = kDefaultNegatives, py::arg("seed") = 0);

    m.def(
        "contrastive_loss",
        [](const FloatArray& tokens, const FloatArray& positive, const FloatArray& negatives, double temperature) {
            const auto q = tokens_of(tokens, "q");
            if (negatives.ndim() != 2) throw UsageError("negatives must be a 2-d array (n, dim)");
            const auto dim = static_cast<std::size_t>(negatives.shape(1));
            std::vector<std::span<const float>> negs;
            for (py::ssize_t j = 0; j < negatives.shape(0); ++j) negs.emplace_back(negatives.data() + j * dim, dim);
            const auto r = contrastive_loss(q, vector_of(positive, "positive"), negs, {.temperature = temperature});
            std::vector<double> flat_negs;
            for (const auto& g : r.grad_negatives) flat_negs.insert(flat_negs.end(), g.begin(), g.end());
            py::dict d;
            d["loss"] = r.loss;
            d["grad_tokens"] = to_array(r.grad_tokens, q.size(), q.dim());
            d["grad_positive"] = to_array(r.grad_positive, 1, q.dim()).attr("reshape")(q.dim());
            d["grad_negatives"] = to_array(flat_negs, negs.size(), q.dim());
            d["probabilities"] = r.probabilities;
            return d;
        },
        py::arg("tokens"), py::arg("positive"), py::arg("negatives"), py::arg("temperature") = kDefaultTemperature);

    m.def(
        "recall_at_k",
        [](const std::vector<std::pair<std::string, std::vector<std::string>>>& gold_and_ranked,
           const std::vector<std::size_t>& ks) {
            std::vector<EvalRecord> records;
            for (const auto& [gold, ranked] : gold_and_ranked) {
                EvalRecord r;
                r.gold_url = gold;
                r.ranked_urls = ranked;
                records.push_back(std::move(r));
            }
            return recall_at_k(records, ks);
        },
        py::arg("gold_and_ranked"), py::arg("ks"), "Recall@K over (gold_url, ranked_urls) pairs.");
    m.def("normalize_answer", &normalize_answer, py::arg("answer"));
    m.def(
        "exact_match",
        [](const std::string& predicted, const std::vector<std::string>& gold) { return exact_match(predicted, gold); },
        py::arg("predicted"), py::arg("gold"));
    m.def(
        "render_prompt",
        [](const std::string& template_name, const std::string& context, const std::string& question) {
            std::vector<std::pair<std::string, std::string>> out;
            for (const auto& msg : render_prompt(prompt_template(template_name), context, question)) {
                out.emplace_back(msg.role, msg.content);
            }
            return out;
        },
        py::arg("template"), py::arg("context"), py::arg("question"), "Returns (role, content) chat messages.");
}
