// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbvqa/io.hpp"

namespace kbvqa {

enum class AnswerKind { kString, kNumeric };

struct EvalRecord {
    std::string query_id;
    std::string gold_url;
    std::vector<std::string> ranked_urls;  // duplicate-free, best first
    std::optional<std::string> predicted_answer;
    std::vector<std::string> gold_answers;
    AnswerKind answer_kind = AnswerKind::kString;
};

/// Relative tolerance for numeric answers under relaxed accuracy.
inline constexpr double kDefaultRelaxedTolerance = 0.05;

/// Fraction of records whose gold url is within the first K ranked urls.
/// Throws DataError on empty input or K == 0.
std::map<std::size_t, double> recall_at_k(std::span<const EvalRecord> records,
                                          std::span<const std::size_t> ks);

/// Lowercase, drop punctuation, drop one leading article, collapse spaces.
std::string normalize_answer(std::string_view answer);
bool exact_match(std::string_view predicted, std::span<const std::string> gold);

/// Parses a numeric answer ("1,786", " 3.5 "). Returns nullopt if the whole
/// string is not a finite number.
std::optional<double> parse_number(std::string_view text);
bool within_tolerance(double predicted, double gold, double tolerance);

/// Exact-match accuracy; a missing prediction counts as wrong. 0 for no records.
double vqa_accuracy(std::span<const EvalRecord> records);

struct RelaxedOutcome {
    double accuracy = 0.0;
    std::vector<std::string> unparseable;  // query ids with non-numeric predictions
};
/// Numeric records pass within `tolerance` relative error (exact when the
/// gold is 0); string records use the exact-match rule.
RelaxedOutcome relaxed_accuracy(std::span<const EvalRecord> records,
                                double tolerance = kDefaultRelaxedTolerance);

struct EvalReport {
    std::size_t n_queries = 0;
    std::map<std::size_t, double> recall_at;
    std::optional<double> vqa_accuracy;  // set when any record carries a prediction
    std::optional<double> relaxed_accuracy;
    std::size_t missing_predictions = 0;
    std::vector<std::string> unparseable_numeric;
    std::size_t malformed_records = 0;
    std::size_t filtered_records = 0;  // gold entity absent from the KB
};

EvalReport evaluate(std::span<const EvalRecord> records, std::span<const std::size_t> ks,
                    double tolerance = kDefaultRelaxedTolerance);

Json to_json(const EvalReport& report);
std::string to_text(const EvalReport& report);

/// Parses one record, deduplicating ranked_urls by first occurrence.
EvalRecord parse_eval_record(const Json& j);
Json to_json(const EvalRecord& record);

struct LoadedRecords {
    std::vector<EvalRecord> records;
    std::vector<std::string> errors;  // "<file>:<line>: <message>"
};
LoadedRecords load_eval_records(const std::filesystem::path& path);

}  // namespace kbvqa
