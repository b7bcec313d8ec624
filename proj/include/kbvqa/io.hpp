// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace kbvqa {

using Json = nlohmann::json;

/// Returns `text` converted to Unicode NFC. Throws DataError on invalid UTF-8.
std::string nfc(std::string_view text);

std::string_view trim(std::string_view text);

/// Calls `fn(line_number, parsed)` for every non-blank line of a
/// line-delimited JSON file. Line numbers are 1-based. Parse failures are
/// reported through `on_error(line_number, message)`; if `on_error` is empty
/// they throw DataError.
void for_each_json_line(
    const std::filesystem::path& path,
    const std::function<void(std::size_t, const Json&)>& fn,
    const std::function<void(std::size_t, const std::string&)>& on_error = {});

/// Writes to a temporary sibling file and renames it over `path` on commit().
/// If the writer is destroyed without commit() the temporary is removed, so
/// failed commands never leave partial output behind.
class AtomicFileWriter {
public:
    explicit AtomicFileWriter(std::filesystem::path path, bool binary = false);
    ~AtomicFileWriter();
    AtomicFileWriter(const AtomicFileWriter&) = delete;
    AtomicFileWriter& operator=(const AtomicFileWriter&) = delete;

    std::ofstream& stream() { return out_; }
    void write_json_line(const Json& value);
    void commit();

private:
    std::filesystem::path path_;
    std::filesystem::path tmp_;
    std::ofstream out_;
    bool committed_ = false;
};

}  // namespace kbvqa
