// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/reranker.hpp"

#include <algorithm>
#include <charconv>
#include <unordered_map>
#include <unordered_set>

#include "kbvqa/error.hpp"

namespace kbvqa {

QueryTokenSet::QueryTokenSet(std::string query_id, std::size_t dim, std::vector<float> values)
    : query_id_(std::move(query_id)), dim_(dim), values_(std::move(values)) {
    if (dim_ == 0 || values_.empty() || values_.size() % dim_ != 0) {
        throw DataError("query " + query_id_ + ": token matrix is empty or ragged");
    }
    for (std::size_t i = 0; i < size(); ++i) {
        if (!is_unit(token(i))) {
            throw DataError("query " + query_id_ + ": token " + std::to_string(i) + " is not unit length");
        }
    }
}

std::string token_row_id(std::string_view query_id, std::size_t index) {
    std::string id(query_id);
    id += "/token_";
    id += std::to_string(index);
    return id;
}

std::vector<QueryTokenSet> query_token_sets(const EmbeddingMatrix& tokens, std::size_t expected_tokens) {
    struct Pending {
        std::string query_id;
        std::vector<std::pair<std::size_t, std::size_t>> rows;  // (token index, matrix row)
    };
    std::vector<Pending> pending;
    std::unordered_map<std::string, std::size_t> slot;

    for (std::size_t r = 0; r < tokens.size(); ++r) {
        const auto& id = tokens.id(r);
        constexpr std::string_view kMarker = "/token_";
        const auto sep = id.rfind(kMarker);
        std::size_t index = 0;
        bool ok = sep != std::string::npos && sep != 0 && sep + kMarker.size() < id.size();
        if (ok) {
            const char* digits = id.data() + sep + kMarker.size();
            const char* end = id.data() + id.size();
            auto [ptr, ec] = std::from_chars(digits, end, index);
            ok = ec == std::errc() && ptr == end;
        }
        if (!ok) throw DataError("token row id " + id + " is not of the form <query_id>/token_<i>");
        auto query_id = id.substr(0, sep);
        auto [it, inserted] = slot.emplace(query_id, pending.size());
        if (inserted) pending.push_back({std::move(query_id), {}});
        pending[it->second].rows.emplace_back(index, r);
    }

    std::vector<QueryTokenSet> out;
    out.reserve(pending.size());
    for (auto& p : pending) {
        std::sort(p.rows.begin(), p.rows.end());
        for (std::size_t i = 0; i < p.rows.size(); ++i) {
            if (p.rows[i].first != i) {
                throw DataError("query " + p.query_id + ": token indices are not dense from 0");
            }
        }
        if (expected_tokens != 0 && p.rows.size() != expected_tokens) {
            throw DataError("query " + p.query_id + " has " + std::to_string(p.rows.size()) +
                            " tokens, expected " + std::to_string(expected_tokens));
        }
        std::vector<float> values;
        values.reserve(p.rows.size() * tokens.dim());
        for (const auto& [index, row] : p.rows) {
            auto v = tokens.row(row);
            values.insert(values.end(), v.begin(), v.end());
        }
        out.emplace_back(p.query_id, tokens.dim(), std::move(values));
    }
    return out;
}

void RerankConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
    if (scope == 0) throw UsageError("rerank scope must be at least 1");
}

MaxSim maxsim_argmax(const QueryTokenSet& q, std::span<const float> section) {
    if (section.size() != q.dim()) {
        throw DataError("section dim " + std::to_string(section.size()) + " does not match token dim " +
                        std::to_string(q.dim()));
    }
    MaxSim best{dot(q.token(0), section), 0};
    for (std::size_t i = 1; i < q.size(); ++i) {
        const double s = dot(q.token(i), section);
        if (s > best.score) best = {s, i};
    }
    return best;
}

double maxsim(const QueryTokenSet& q, std::span<const float> section) {
    return maxsim_argmax(q, section).score;
}

std::map<std::string, double> propagate_visual(std::span<const RetrievalCandidate> candidates) {
    std::map<std::string, double> best;
    for (const auto& c : candidates) {
        auto [it, inserted] = best.emplace(c.entry_url, c.visual_score);
        if (!inserted) it->second = std::max(it->second, static_cast<double>(c.visual_score));
    }
    return best;
}

RerankResult rerank(const QueryTokenSet& q, std::span<const RetrievalCandidate> candidates,
                    const EmbeddingMatrix& section_embeddings, const KnowledgeBase& kb,
                    const RerankConfig& cfg) {
    cfg.validate();
    if (candidates.empty()) throw DataError("rerank needs at least one candidate");
    if (!section_embeddings.normalized()) throw DataError("section embeddings are not normalized");
    if (section_embeddings.dim() != q.dim()) {
        throw DataError("section embedding dim " + std::to_string(section_embeddings.dim()) +
                        " does not match query token dim " + std::to_string(q.dim()));
    }

    const auto scoped = candidates.first(std::min(cfg.scope, candidates.size()));
    const auto visual = propagate_visual(scoped);

    RerankResult result;
    for (const auto& url : entry_order(scoped)) {
        const auto& entry = kb.entry(url);
        const double s_v = visual.at(url);
        for (const auto& section : entry.sections) {
            auto row = section_embeddings.find(section.section_id);
            if (!row) {
                result.missing_section_ids.push_back(section.section_id);
                continue;
            }
            const double s_r = maxsim(q, section_embeddings.row(*row));
            result.ranked.push_back({section.section_id, url, s_r, s_v, fuse(cfg.alpha, s_v, s_r)});
        }
    }

    if (result.ranked.empty()) {
        std::string msg = "no section embeddings available for query " + q.query_id();
        if (!result.missing_section_ids.empty()) {
            msg += "; missing:";
            for (const auto& id : result.missing_section_ids) msg += " " + id;
        }
        throw DataError(msg);
    }

    std::sort(result.ranked.begin(), result.ranked.end(),
              [](const RankedSection& a, const RankedSection& b) {
                  if (a.fused != b.fused) return a.fused > b.fused;
                  return a.section_id < b.section_id;
              });
    return result;
}

std::vector<std::string> entry_order(std::span<const RankedSection> ranked) {
    std::vector<std::string> out;
    std::unordered_set<std::string_view> seen;
    for (const auto& r : ranked) {
        if (seen.insert(r.entry_url).second) out.push_back(r.entry_url);
    }
    return out;
}

std::vector<std::string> entry_order(std::span<const RetrievalCandidate> candidates) {
    std::vector<std::string> out;
    std::unordered_set<std::string_view> seen;
    for (const auto& c : candidates) {
        if (seen.insert(c.entry_url).second) out.push_back(c.entry_url);
    }
    return out;
}

}  // namespace kbvqa
