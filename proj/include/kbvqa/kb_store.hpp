// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kbvqa {

/// Separator placed between an article title, a section heading and the
/// section body when building the text that gets embedded and reranked.
inline constexpr std::string_view kSectionSeparator = " ## ";

struct SectionRecord {
    std::string section_id;  // "<url>#<ordinal>"
    std::string heading;
    std::string body;
    std::string prefixed_text;

    bool operator==(const SectionRecord&) const = default;
};

struct ArticleEntry {
    std::string url;
    std::string title;
    std::vector<SectionRecord> sections;
    std::vector<std::string> image_ids;

    /// Entries without sections are kept but can never be reranked.
    bool has_sections() const { return !sections.empty(); }
    bool operator==(const ArticleEntry&) const = default;
};

/// Builds "<title> ## <heading> ## <body>".
std::string prefix_section(std::string_view title, std::string_view heading,
                           std::string_view body);
std::string make_section_id(std::string_view url, std::size_t ordinal);

struct KbStats {
    std::size_t entries = 0;
    std::size_t sections = 0;
    std::size_t images = 0;
    bool operator==(const KbStats&) const = default;
};

struct IngestIssue {
    std::size_t line = 0;  // 1-based line in the file it came from
    std::string file;
    std::string message;
};

struct IngestReport {
    std::vector<IngestIssue> issues;
    std::size_t records_read = 0;
    std::size_t records_skipped = 0;
    std::vector<std::string> sectionless_urls;
};

struct IngestOptions {
    /// Abort on the first malformed record instead of skipping it.
    bool strict = false;
};

/// Immutable, URL-addressable article store. Entries keep ingest order.
class KnowledgeBase {
public:
    KnowledgeBase() = default;

    /// Adds a fully formed entry. Throws DataError on duplicate urls or on an
    /// image id that already belongs to another entry.
    void add(ArticleEntry entry);
    /// Associates an image with an existing entry.
    void attach_image(const std::string& image_id, const std::string& url);

    const ArticleEntry& entry(std::string_view url) const;
    const ArticleEntry* find(std::string_view url) const;
    bool contains(std::string_view url) const { return find(url) != nullptr; }

    const ArticleEntry& entry_of_image(std::string_view image_id) const;
    const std::string* url_of_image(std::string_view image_id) const;

    /// Sections of each url, concatenated in argument order. No dedup.
    std::vector<SectionRecord> sections_of(std::span<const std::string> urls) const;

    /// Looks up a section by "<url>#<ordinal>" id; nullptr if absent.
    const SectionRecord* find_section(std::string_view section_id) const;

    const std::vector<ArticleEntry>& entries() const { return entries_; }
    KbStats stats() const { return stats_; }
    KbStats recount() const;

    bool operator==(const KnowledgeBase& other) const { return entries_ == other.entries_; }

private:
    std::vector<ArticleEntry> entries_;
    std::unordered_map<std::string, std::size_t> by_url_;
    std::unordered_map<std::string, std::string> image_index_;
    KbStats stats_;
};

struct IngestResult {
    KnowledgeBase kb;
    IngestReport report;
};

/// Loads a line-delimited article file plus an optional image manifest
/// (empty path skips it). Malformed records are skipped and reported unless
/// options.strict; duplicate urls and dangling image ids always throw.
IngestResult ingest(const std::filesystem::path& kb_file,
                    const std::filesystem::path& image_manifest = {},
                    IngestOptions options = {});
IngestResult ingest(std::istream& kb_stream, std::istream* manifest_stream,
                    IngestOptions options = {});

/// Writes the KB back out in the ingest format. Re-ingesting the output
/// yields an equal KnowledgeBase.
void export_kb(const KnowledgeBase& kb, std::ostream& kb_out, std::ostream& manifest_out);
void export_kb(const KnowledgeBase& kb, const std::filesystem::path& kb_file,
               const std::filesystem::path& image_manifest);

}  // namespace kbvqa
