// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "kbvqa/error.hpp"

namespace kbvqa {

std::map<std::size_t, double> recall_at_k(std::span<const EvalRecord> records,
                                          std::span<const std::size_t> ks) {
    if (records.empty()) throw DataError("recall@K needs at least one record");
    std::map<std::size_t, double> out;
    for (std::size_t k : ks) {
        if (k == 0) throw UsageError("K must be positive");
        std::size_t hits = 0;
        for (const auto& r : records) {
            const auto n = std::min(k, r.ranked_urls.size());
            if (std::find(r.ranked_urls.begin(), r.ranked_urls.begin() + static_cast<std::ptrdiff_t>(n),
                          r.gold_url) != r.ranked_urls.begin() + static_cast<std::ptrdiff_t>(n)) {
                ++hits;
            }
        }
        out[k] = static_cast<double>(hits) / static_cast<double>(records.size());
    }
    return out;
}

std::string normalize_answer(std::string_view answer) {
    std::string cleaned;
    cleaned.reserve(answer.size());
    for (unsigned char c : answer) {
        if (c == '\'') continue;
        if (c < 0x80 && std::ispunct(c)) {
            cleaned += ' ';
        } else if (c < 0x80) {
            cleaned += static_cast<char>(std::tolower(c));
        } else {
            cleaned += static_cast<char>(c);
        }
    }

    std::vector<std::string> words;
    std::istringstream in(cleaned);
    for (std::string w; in >> w;) words.push_back(std::move(w));
    if (words.size() > 1 && (words[0] == "a" || words[0] == "an" || words[0] == "the")) {
        words.erase(words.begin());
    }

    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

bool exact_match(std::string_view predicted, std::span<const std::string> gold) {
    const auto p = normalize_answer(predicted);
    return std::any_of(gold.begin(), gold.end(), [&](const std::string& g) { return normalize_answer(g) == p; });
}

std::optional<double> parse_number(std::string_view text) {
    std::string digits;
    for (char c : trim(text)) {
        if (c != ',') digits += c;
    }
    if (digits.empty()) return std::nullopt;
    if (digits.front() == '+') digits.erase(0, 1);
    double value = 0.0;
    const char* end = digits.data() + digits.size();
    auto [ptr, ec] = std::from_chars(digits.data(), end, value);
    // Accept a trailing sentence period ("1786.").
    if (ec == std::errc() && ptr != end && ptr + 1 == end && *ptr == '.') ptr = end;
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
    return value;
}

bool within_tolerance(double predicted, double gold, double tolerance) {
    if (gold == 0.0) return predicted == 0.0;
    return std::fabs(predicted - gold) <= tolerance * std::fabs(gold);
}

double vqa_accuracy(std::span<const EvalRecord> records) {
    if (records.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& r : records) {
        if (r.predicted_answer && exact_match(*r.predicted_answer, r.gold_answers)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

RelaxedOutcome relaxed_accuracy(std::span<const EvalRecord> records, double tolerance) {
    RelaxedOutcome out;
    if (records.empty()) return out;
    std::size_t correct = 0;
    for (const auto& r : records) {
        if (!r.predicted_answer) continue;
        if (r.answer_kind == AnswerKind::kString) {
            if (exact_match(*r.predicted_answer, r.gold_answers)) ++correct;
            continue;
        }
        const auto predicted = parse_number(*r.predicted_answer);
        if (!predicted) {
            out.unparseable.push_back(r.query_id);
            continue;
        }
        const bool ok = std::any_of(r.gold_answers.begin(), r.gold_answers.end(), [&](const std::string& g) {
            const auto gold = parse_number(g);
            return gold && within_tolerance(*predicted, *gold, tolerance);
        });
        if (ok) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
    return out;
}

EvalReport evaluate(std::span<const EvalRecord> records, std::span<const std::size_t> ks, double tolerance) {
    EvalReport report;
    report.n_queries = records.size();
    report.recall_at = recall_at_k(records, ks);
    bool any_prediction = false;
    for (const auto& r : records) {
        if (r.predicted_answer) {
            any_prediction = true;
        } else {
            ++report.missing_predictions;
        }
    }
    if (any_prediction) {
        report.vqa_accuracy = vqa_accuracy(records);
        auto relaxed = relaxed_accuracy(records, tolerance);
        report.relaxed_accuracy = relaxed.accuracy;
        report.unparseable_numeric = std::move(relaxed.unparseable);
    }
    return report;
}

Json to_json(const EvalReport& report) {
    Json recall = Json::object();
    for (const auto& [k, v] : report.recall_at) recall[std::to_string(k)] = v;
    Json j = {{"n_queries", report.n_queries},
              {"recall_at", std::move(recall)},
              {"missing_predictions", report.missing_predictions},
              {"unparseable_numeric", report.unparseable_numeric},
              {"malformed_records", report.malformed_records},
              {"filtered_records", report.filtered_records}};
    j["vqa_accuracy"] = report.vqa_accuracy ? Json(*report.vqa_accuracy) : Json(nullptr);
    j["relaxed_accuracy"] = report.relaxed_accuracy ? Json(*report.relaxed_accuracy) : Json(nullptr);
    j["vqa_accuracy_label"] = "exact-match (BEM proxy)";
    return j;
}

std::string to_text(const EvalReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "queries: " << report.n_queries << '\n';
    for (const auto& [k, v] : report.recall_at) out << "recall@" << k << ": " << v << '\n';
    if (report.vqa_accuracy) {
        out << "exact-match (BEM proxy): " << *report.vqa_accuracy << '\n';
        out << "relaxed accuracy: " << *report.relaxed_accuracy << '\n';
    }
    if (report.missing_predictions) out << "missing predictions: " << report.missing_predictions << '\n';
    if (!report.unparseable_numeric.empty()) {
        out << "unparseable numeric predictions: " << report.unparseable_numeric.size() << '\n';
    }
    if (report.filtered_records) out << "filtered (gold entry not in KB): " << report.filtered_records << '\n';
    if (report.malformed_records) out << "malformed records: " << report.malformed_records << '\n';
    return out.str();
}

namespace {

std::string answer_string(const Json& value) {
    if (value.is_string()) return value.get<std::string>();
    if (value.is_number()) return value.dump();
    throw DataError("gold answers must be strings or numbers");
}

}  // namespace

EvalRecord parse_eval_record(const Json& j) {
    if (!j.is_object()) throw DataError("record is not an object");
    EvalRecord r;
    try {
        r.query_id = j.at("query_id").get<std::string>();
        r.gold_url = nfc(j.at("gold_url").get<std::string>());
        std::unordered_set<std::string> seen;
        for (const auto& u : j.at("ranked_urls")) {
            auto url = nfc(u.get<std::string>());
            if (seen.insert(url).second) r.ranked_urls.push_back(std::move(url));
        }
        if (auto it = j.find("predicted_answer"); it != j.end() && !it->is_null()) {
            r.predicted_answer = answer_string(*it);
        }
        if (auto it = j.find("gold_answers"); it != j.end()) {
            for (const auto& g : *it) r.gold_answers.push_back(answer_string(g));
        }
        const auto kind = j.value("answer_kind", std::string("string"));
        if (kind == "numeric") {
            r.answer_kind = AnswerKind::kNumeric;
        } else if (kind != "string") {
            throw DataError("answer_kind must be \"string\" or \"numeric\"");
        }
    } catch (const Json::exception& e) {
        throw DataError(e.what());
    }
    if (r.gold_answers.empty()) throw DataError("gold_answers is empty");
    if (r.answer_kind == AnswerKind::kNumeric) {
        for (const auto& g : r.gold_answers) {
            if (!parse_number(g)) throw DataError("numeric record has non-numeric gold answer \"" + g + "\"");
        }
    }
    return r;
}

Json to_json(const EvalRecord& r) {
    Json j = {{"query_id", r.query_id},
              {"gold_url", r.gold_url},
              {"ranked_urls", r.ranked_urls},
              {"gold_answers", r.gold_answers},
              {"answer_kind", r.answer_kind == AnswerKind::kNumeric ? "numeric" : "string"}};
    j["predicted_answer"] = r.predicted_answer ? Json(*r.predicted_answer) : Json(nullptr);
    return j;
}

LoadedRecords load_eval_records(const std::filesystem::path& path) {
    LoadedRecords out;
    auto error_at = [&](std::size_t line, const std::string& msg) {
        out.errors.push_back(path.string() + ":" + std::to_string(line) + ": " + msg);
    };
    for_each_json_line(
        path,
        [&](std::size_t line, const Json& j) {
            try {
                out.records.push_back(parse_eval_record(j));
            } catch (const DataError& e) {
                error_at(line, e.what());
            }
        },
        [&](std::size_t, const std::string& msg) { out.errors.push_back(msg); });
    return out;
}

}  // namespace kbvqa
