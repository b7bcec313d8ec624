// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/negative_miner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_set>

#include "kbvqa/error.hpp"
#include "kbvqa/io.hpp"

namespace kbvqa {

const char* to_string(NegativeSource source) {
    switch (source) {
        case NegativeSource::kHardNegativeEntry:
            return "hard_negative_entry";
        case NegativeSource::kPositiveEntryNonEvidence:
            return "positive_entry_nonevidence";
    }
    return "unknown";
}

namespace {

NegativeSource source_from_string(const std::string& s) {
    if (s == "hard_negative_entry") return NegativeSource::kHardNegativeEntry;
    if (s == "positive_entry_nonevidence") return NegativeSource::kPositiveEntryNonEvidence;
    throw DataError("unknown negative provenance: " + s);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Unbiased draw in [0, bound) by rejection; std::uniform_int_distribution is
// not specified bit-for-bit across standard libraries.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

}  // namespace

TrainExample mine_negatives(const MiningQuery& query, std::span<const RetrievalCandidate> candidates,
                            const KnowledgeBase& kb, std::size_t n, std::uint64_t seed) {
    const auto* gold = kb.find(query.gold_url);
    if (!gold) throw DataError("query " + query.query_id + ": gold entry " + query.gold_url + " is not in the knowledge base");
    const bool has_evidence = std::any_of(gold->sections.begin(), gold->sections.end(), [&](const auto& s) {
        return s.section_id == query.evidence_section_id;
    });
    if (!has_evidence) {
        throw DataError("query " + query.query_id + ": evidence section " + query.evidence_section_id +
                        " does not belong to " + query.gold_url);
    }
    if (candidates.empty()) throw DataError("query " + query.query_id + ": no stage-1 candidates");

    struct PoolItem {
        const std::string* section_id;
        NegativeSource source;
    };
    std::vector<PoolItem> pool;
    for (const auto& url : entry_order(candidates)) {
        if (url == query.gold_url) continue;
        for (const auto& s : kb.entry(url).sections) {
            pool.push_back({&s.section_id, NegativeSource::kHardNegativeEntry});
        }
    }
    for (const auto& s : gold->sections) {
        if (s.section_id != query.evidence_section_id) {
            pool.push_back({&s.section_id, NegativeSource::kPositiveEntryNonEvidence});
        }
    }
    if (pool.empty()) throw DataError("query " + query.query_id + ": negative pool is empty");

    const std::size_t take = std::min(n, pool.size());
    if (take < pool.size()) {
        std::mt19937_64 rng(seed ^ fnv1a(query.query_id));
        for (std::size_t i = 0; i < take; ++i) {
            const auto j = i + static_cast<std::size_t>(bounded(rng, pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
    }

    TrainExample ex;
    ex.query_id = query.query_id;
    ex.positive_section_id = query.evidence_section_id;
    ex.short_pool = pool.size() < n;
    for (std::size_t i = 0; i < take; ++i) {
        ex.negative_section_ids.push_back(*pool[i].section_id);
        ex.provenance.push_back(pool[i].source);
    }
    return ex;
}

void write_train_batch(std::span<const TrainExample> batch, const std::filesystem::path& path) {
    AtomicFileWriter out(path);
    for (const auto& ex : batch) {
        Json provenance = Json::array();
        for (auto p : ex.provenance) provenance.push_back(to_string(p));
        out.write_json_line({{"query_id", ex.query_id},
                             {"positive_section_id", ex.positive_section_id},
                             {"negative_section_ids", ex.negative_section_ids},
                             {"negative_provenance", std::move(provenance)},
                             {"short", ex.short_pool}});
    }
    out.commit();
}

std::vector<TrainExample> read_train_batch(const std::filesystem::path& path) {
    std::vector<TrainExample> out;
    for_each_json_line(path, [&](std::size_t line, const Json& j) {
        try {
            TrainExample ex;
            ex.query_id = j.at("query_id").get<std::string>();
            ex.positive_section_id = j.at("positive_section_id").get<std::string>();
            ex.negative_section_ids = j.at("negative_section_ids").get<std::vector<std::string>>();
            if (auto it = j.find("negative_provenance"); it != j.end()) {
                for (const auto& p : *it) ex.provenance.push_back(source_from_string(p.get<std::string>()));
                if (ex.provenance.size() != ex.negative_section_ids.size()) {
                    throw DataError("negative_provenance length differs from negative_section_ids");
                }
            }
            ex.short_pool = j.value("short", false);
            out.push_back(std::move(ex));
        } catch (const Json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return out;
}

void LossConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw UsageError("temperature must be positive");
    }
}

namespace {

struct SectionScore {
    double score;
    std::size_t token;
};

SectionScore max_token_score(const QueryTokenSet& q, std::span<const float> section) {
    SectionScore best{0.0, 0};
    for (std::size_t i = 0; i < q.size(); ++i) {
        auto t = q.token(i);
        double s = 0.0;
        for (std::size_t d = 0; d < section.size(); ++d) s += static_cast<double>(t[d]) * section[d];
        if (i == 0 || s > best.score) best = {s, i};
    }
    return best;
}

}  // namespace

LossResult contrastive_loss(const QueryTokenSet& q, std::span<const float> positive,
                            std::span<const std::span<const float>> negatives, const LossConfig& cfg) {
    cfg.validate();
    if (cfg.query_tokens != 0 && q.size() != cfg.query_tokens) {
        throw DataError("query " + q.query_id() + " has " + std::to_string(q.size()) + " tokens, expected " +
                        std::to_string(cfg.query_tokens));
    }
    if (negatives.empty()) throw DataError("contrastive loss needs at least one negative");
    const std::size_t dim = q.dim();
    if (positive.size() != dim) throw DataError("positive embedding dim does not match query tokens");
    for (const auto& neg : negatives) {
        if (neg.size() != dim) throw DataError("negative embedding dim does not match query tokens");
    }

    // Index 0 is the positive.
    const std::size_t count = negatives.size() + 1;
    auto section = [&](std::size_t j) { return j == 0 ? positive : negatives[j - 1]; };

    std::vector<SectionScore> scores(count);
    std::vector<double> logits(count);
    for (std::size_t j = 0; j < count; ++j) {
        scores[j] = max_token_score(q, section(j));
        logits[j] = scores[j].score / cfg.temperature;
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double l : logits) denom += std::exp(l - top);
    const double log_z = top + std::log(denom);

    LossResult result;
    result.loss = log_z - logits[0];
    result.probabilities.resize(count);
    for (std::size_t j = 0; j < count; ++j) result.probabilities[j] = std::exp(logits[j] - log_z);

    result.grad_tokens.assign(q.size() * dim, 0.0);
    result.grad_negatives.assign(negatives.size(), std::vector<double>(dim, 0.0));
    result.grad_positive.assign(dim, 0.0);
    for (std::size_t j = 0; j < count; ++j) {
        // dL/ds_j = (p_j - [j is positive]) / T
        const double g = (result.probabilities[j] - (j == 0 ? 1.0 : 0.0)) / cfg.temperature;
        const auto token = q.token(scores[j].token);
        const auto sec = section(j);
        auto& grad_section = j == 0 ? result.grad_positive : result.grad_negatives[j - 1];
        double* grad_token = result.grad_tokens.data() + scores[j].token * dim;
        for (std::size_t d = 0; d < dim; ++d) {
            grad_section[d] = g * token[d];
            grad_token[d] += g * sec[d];
        }
    }
    // Mathematically >= 0; rounding can land a hair below.
    result.loss = std::max(result.loss, 0.0);
    return result;
}

}  // namespace kbvqa
