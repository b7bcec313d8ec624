// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/io.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <atomic>
#include <sstream>

#include "kbvqa/error.hpp"

namespace kbvqa {

std::string nfc(std::string_view text) {
    // Pure ASCII is already in NFC.
    bool ascii = true;
    for (unsigned char c : text) {
        if (c >= 0x80) {
            ascii = false;
            break;
        }
    }
    if (ascii) return std::string(text);

    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw DataError("ICU NFC normalizer unavailable");
    icu::UnicodeString source = icu::UnicodeString::fromUTF8(
        icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    if (source.isBogus()) throw DataError("invalid UTF-8 text");
    icu::UnicodeString normalized = normalizer->normalize(source, status);
    if (U_FAILURE(status)) throw DataError("NFC normalization failed");
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

std::string_view trim(std::string_view text) {
    constexpr std::string_view kSpace = " \t\r\n\f\v";
    const auto begin = text.find_first_not_of(kSpace);
    if (begin == std::string_view::npos) return {};
    const auto end = text.find_last_not_of(kSpace);
    return text.substr(begin, end - begin + 1);
}

void for_each_json_line(
    const std::filesystem::path& path,
    const std::function<void(std::size_t, const Json&)>& fn,
    const std::function<void(std::size_t, const std::string&)>& on_error) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        Json parsed;
        try {
            parsed = Json::parse(line);
        } catch (const Json::parse_error& e) {
            std::ostringstream msg;
            msg << path.string() << ":" << line_no << ": invalid JSON: " << e.what();
            if (!on_error) throw DataError(msg.str());
            on_error(line_no, msg.str());
            continue;
        }
        fn(line_no, parsed);
    }
}

namespace {
std::atomic<unsigned> g_tmp_counter{0};
}

AtomicFileWriter::AtomicFileWriter(std::filesystem::path path, bool binary)
    : path_(std::move(path)) {
    tmp_ = path_;
    tmp_ += ".tmp" + std::to_string(g_tmp_counter.fetch_add(1));
    out_.open(tmp_, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out_) throw DataError("cannot open " + tmp_.string() + " for writing");
}

AtomicFileWriter::~AtomicFileWriter() {
    if (!committed_) {
        out_.close();
        std::error_code ec;
        std::filesystem::remove(tmp_, ec);
    }
}

void AtomicFileWriter::write_json_line(const Json& value) { out_ << value.dump() << '\n'; }

void AtomicFileWriter::commit() {
    out_.flush();
    if (!out_) throw DataError("write failed for " + path_.string());
    out_.close();
    std::filesystem::rename(tmp_, path_);
    committed_ = true;
}

}  // namespace kbvqa
