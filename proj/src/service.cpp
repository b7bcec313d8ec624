// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/service.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "httplib.h"
#include "kbvqa/error.hpp"

namespace kbvqa {

namespace {

struct BadRequest : std::runtime_error {
    BadRequest(std::string field, const std::string& what) : std::runtime_error(what), field(std::move(field)) {}
    std::string field;
};

const Json& member(const Json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw BadRequest(key, "missing field");
    return *it;
}

std::vector<float> vector_field(const Json& v, const std::string& path, std::size_t dim) {
    if (!v.is_array()) throw BadRequest(path, "expected an array of numbers");
    if (v.size() != dim) {
        throw BadRequest(path, "expected " + std::to_string(dim) + " values, got " + std::to_string(v.size()));
    }
    std::vector<float> out;
    out.reserve(dim);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw BadRequest(path + "[" + std::to_string(i) + "]", "expected a number");
        const auto x = v[i].get<float>();
        if (!std::isfinite(x)) throw BadRequest(path + "[" + std::to_string(i) + "]", "not finite");
        out.push_back(x);
    }
    if (l2_norm(out) == 0.0f) throw BadRequest(path, "zero vector");
    return out;
}

std::size_t size_field(const Json& req, const char* key, std::size_t fallback) {
    auto it = req.find(key);
    if (it == req.end()) return fallback;
    if (!it->is_number_unsigned() || it->get<std::size_t>() == 0) throw BadRequest(key, "expected a positive integer");
    return it->get<std::size_t>();
}

RerankConfig rerank_config(const Json& req, const RerankConfig& base) {
    RerankConfig cfg = base;
    if (auto it = req.find("alpha"); it != req.end()) {
        if (!it->is_number()) throw BadRequest("alpha", "expected a number");
        cfg.alpha = it->get<double>();
    }
    cfg.scope = size_field(req, "scope", cfg.scope);
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw BadRequest("alpha", e.what());
    }
    return cfg;
}

QueryTokenSet token_field(const Json& req, std::size_t dim, std::size_t expected) {
    const auto& tokens = member(req, "tokens");
    if (!tokens.is_array() || tokens.empty()) throw BadRequest("tokens", "expected a nonempty array of vectors");
    if (expected != 0 && tokens.size() != expected) {
        throw BadRequest("tokens", "expected " + std::to_string(expected) + " tokens, got " +
                                       std::to_string(tokens.size()));
    }
    std::vector<float> values;
    values.reserve(tokens.size() * dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto t = normalized_copy(vector_field(tokens[i], "tokens[" + std::to_string(i) + "]", dim));
        values.insert(values.end(), t.begin(), t.end());
    }
    return QueryTokenSet(req.value("query_id", "request"), dim, std::move(values));
}

std::vector<RetrievalCandidate> candidate_field(const Json& req, const KnowledgeBase& kb) {
    const auto& cands = member(req, "candidates");
    if (!cands.is_array() || cands.empty()) throw BadRequest("candidates", "expected a nonempty array");
    std::vector<RetrievalCandidate> out;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const auto path = "candidates[" + std::to_string(i) + "]";
        try {
            auto c = candidate_from_json(cands[i]);
            c.rank = i + 1;
            if (!kb.contains(c.entry_url)) throw BadRequest(path + ".entry_url", "unknown entry " + c.entry_url);
            out.push_back(std::move(c));
        } catch (const Json::exception& e) {
            throw BadRequest(path, e.what());
        } catch (const DataError& e) {
            throw BadRequest(path, e.what());
        }
    }
    return out;
}

Json candidates_json(const std::vector<RetrievalCandidate>& cands) {
    Json out = Json::array();
    for (const auto& c : cands) {
        Json j = to_json(c);
        j["rank"] = c.rank;
        out.push_back(std::move(j));
    }
    return out;
}

Json ranked_json(const std::vector<RankedSection>& ranked) {
    Json out = Json::array();
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        Json j = to_json(ranked[i]);
        j["rank"] = i + 1;
        out.push_back(std::move(j));
    }
    return out;
}

}  // namespace

Service::Service(const PipelineState& state, ChatTransport& transport) : state_(state), transport_(transport) {}

Service::~Service() = default;

ServiceResponse Service::internal_error(int status, const std::string& what) const {
    std::mt19937_64 rng(std::random_device{}() ^ error_seq_.fetch_add(1));
    char id[17];
    std::snprintf(id, sizeof id, "%016llx", static_cast<unsigned long long>(rng()));
    std::fprintf(stderr, "kbvqa serve: error %s: %s\n", id, what.c_str());
    return {status, {{"error", status == 502 ? "upstream failure" : "internal error"}, {"error_id", id}}};
}

ServiceResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) const {
    if (path == "/healthz") {
        if (method != "GET") return {405, {{"error", "method not allowed"}}};
        return {200, {{"status", "ok"}}};
    }
    if (path != "/search" && path != "/rerank" && path != "/answer") return {404, {{"error", "not found"}}};
    if (method != "POST") return {405, {{"error", "method not allowed"}}};
    try {
        Json req;
        try {
            req = Json::parse(body);
        } catch (const Json::parse_error& e) {
            throw BadRequest("$", std::string("invalid JSON: ") + e.what());
        }
        if (!req.is_object()) throw BadRequest("$", "expected a JSON object");
        if (path == "/search") return search(req);
        if (path == "/rerank") return rerank_request(req);
        return answer(req);
    } catch (const BadRequest& e) {
        return {400, {{"error", e.what()}, {"field", e.field}}};
    } catch (const TransportError& e) {
        return internal_error(502, e.what());
    } catch (const std::exception& e) {
        return internal_error(500, e.what());
    }
}

ServiceResponse Service::search(const Json& req) const {
    const auto query = vector_field(member(req, "vector"), "vector", state_.index->matrix().dim());
    const auto k = size_field(req, "k", state_.config.search_k);
    return {200, {{"candidates", candidates_json(search_topk(*state_.index, query, k, state_.kb))}}};
}

ServiceResponse Service::rerank_request(const Json& req) const {
    const auto cfg = rerank_config(req, state_.config.rerank);
    const auto tokens = token_field(req, state_.sections.dim(), state_.config.query_token_count);
    const auto cands = candidate_field(req, state_.kb);
    const auto result = rerank(tokens, cands, state_.sections, state_.kb, cfg);
    return {200, {{"ranked", ranked_json(result.ranked)}, {"missing_section_ids", result.missing_section_ids}}};
}

ServiceResponse Service::answer(const Json& req) const {
    const auto& q = member(req, "question");
    if (!q.is_string() || trim(q.get<std::string>()).empty()) throw BadRequest("question", "expected a nonempty string");
    std::string template_name = state_.config.prompt_template;
    if (auto it = req.find("template"); it != req.end()) {
        if (!it->is_string()) throw BadRequest("template", "expected a string");
        template_name = it->get<std::string>();
        try {
            (void)prompt_template(template_name);
        } catch (const Error& e) {
            throw BadRequest("template", e.what());
        }
    }
    const auto query = vector_field(member(req, "vector"), "vector", state_.index->matrix().dim());
    const auto cfg = rerank_config(req, state_.config.rerank);
    const auto k = size_field(req, "k", std::max(state_.config.search_k, cfg.scope));
    const auto tokens = token_field(req, state_.sections.dim(), state_.config.query_token_count);

    const auto cands = search_topk(*state_.index, query, k, state_.kb);
    const auto ranked = rerank(tokens, cands, state_.sections, state_.kb, cfg);
    const auto& head = ranked.ranked.front();
    const auto* section = state_.kb.find_section(head.section_id);
    const auto result = generate_answer(
        {template_name, section->prefixed_text, q.get<std::string>(), state_.config.endpoint}, transport_);
    return {200,
            {{"answer", result.answer},
             {"section_id", head.section_id},
             {"entry_url", head.entry_url},
             {"fused", head.fused},
             {"retries", result.raw.retries}}};
}

int Service::bind(const std::string& host, int port) {
    server_ = std::make_unique<httplib::Server>();
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        const auto out = handle(req.method, req.path, req.body);
        res.status = out.status;
        res.set_content(out.body.dump(), "application/json");
    };
    server_->Get("/healthz", route);
    server_->Post("/search", route);
    server_->Post("/rerank", route);
    server_->Post("/answer", route);
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw UsageError("cannot listen on " + host + ":" + std::to_string(port));
    return bound;
}

void Service::run() {
    if (!server_) throw UsageError("service is not bound");
    server_->listen_after_bind();
}

void Service::wait_until_ready() const {
    if (server_) server_->wait_until_ready();
}

void Service::stop() {
    if (server_) server_->stop();
}

}  // namespace kbvqa
