// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/kb_store.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "../test_util.hpp"
#include "kbvqa/error.hpp"

namespace kbvqa {
namespace {

const char* kTwoArticles =
    R"({"url": "https://en.wikipedia.org/wiki/Mont_Blanc", "title": "Mont Blanc", "sections": [{"heading": "Ascent", "body": "First climbed 1786."}, {"heading": "Geology", "body": "Granite massif."}], "image_ids": ["img_001"]})"
    "\n"
    R"({"url": "https://en.wikipedia.org/wiki/Lake_Como", "title": "Lake Como", "sections": [{"heading": "", "body": "A lake in Lombardy."}], "image_ids": []})"
    "\n";

const char* kManifest = R"({"image_id": "img_002", "url": "https://en.wikipedia.org/wiki/Lake_Como"})"
                        "\n";

IngestResult ingest_strings(const std::string& kb, const std::string& manifest, IngestOptions opts = {}) {
    std::istringstream kb_in(kb);
    std::istringstream manifest_in(manifest);
    return ingest(kb_in, &manifest_in, opts);
}

TEST(KbStoreTest, CountsFollowInput) {
    auto result = ingest_strings(kTwoArticles, kManifest);
    EXPECT_EQ(result.kb.stats(), (KbStats{2, 3, 2}));
    EXPECT_EQ(result.kb.stats(), result.kb.recount());
    EXPECT_TRUE(result.report.issues.empty());
}

TEST(KbStoreTest, PrefixedTextJoinsTitleHeadingBody) {
    auto kb = testing::kb_from_lines(kTwoArticles);
    const auto& e = kb.entry("https://en.wikipedia.org/wiki/Mont_Blanc");
    EXPECT_EQ(e.sections[0].prefixed_text, "Mont Blanc ## Ascent ## First climbed 1786.");
    EXPECT_EQ(e.sections[0].section_id, "https://en.wikipedia.org/wiki/Mont_Blanc#0");
    EXPECT_EQ(e.sections[1].section_id, "https://en.wikipedia.org/wiki/Mont_Blanc#1");
    // Empty heading keeps both separators.
    EXPECT_EQ(kb.entry("https://en.wikipedia.org/wiki/Lake_Como").sections[0].prefixed_text,
              "Lake Como ##  ## A lake in Lombardy.");
}

TEST(KbStoreTest, DuplicateUrlNamesBothLines) {
    const std::string dup = std::string(kTwoArticles) +
                            R"({"url": "https://en.wikipedia.org/wiki/Lake_Como", "title": "Again", "sections": []})";
    try {
        ingest_strings(dup, "");
        FAIL() << "expected duplicate url error";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("duplicate url"), std::string::npos);
        EXPECT_NE(msg.find("lines 2 and 3"), std::string::npos) << msg;
    }
}

TEST(KbStoreTest, MalformedRecordIsReportedAndSkipped) {
    const std::string kb = std::string("{not json}\n") + kTwoArticles +
                           R"({"url": "u3", "title": "", "sections": []})" "\n";
    auto result = ingest_strings(kb, "");
    EXPECT_EQ(result.kb.stats().entries, 2u);
    ASSERT_EQ(result.report.issues.size(), 2u);
    EXPECT_EQ(result.report.issues[0].line, 1u);
    EXPECT_EQ(result.report.issues[1].line, 4u);
    EXPECT_NE(result.report.issues[1].message.find("title"), std::string::npos);
    EXPECT_EQ(result.report.records_skipped, 2u);
}

TEST(KbStoreTest, StrictModeAbortsOnMalformedRecord) {
    const std::string kb = std::string(kTwoArticles) + "{not json}\n";
    EXPECT_THROW(ingest_strings(kb, "", {.strict = true}), DataError);
}

TEST(KbStoreTest, DanglingManifestImageNamesId) {
    try {
        ingest_strings(kTwoArticles, R"({"image_id": "img_404", "url": "https://nowhere"})");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("img_404"), std::string::npos);
    }
}

TEST(KbStoreTest, ImageOwnedByTwoEntriesIsRejected) {
    EXPECT_THROW(ingest_strings(kTwoArticles,
                                R"({"image_id": "img_001", "url": "https://en.wikipedia.org/wiki/Lake_Como"})"),
                 DataError);
}

TEST(KbStoreTest, SectionlessEntriesAreFlagged) {
    auto result = ingest_strings(R"({"url": "u", "title": "T", "sections": []})", "");
    EXPECT_EQ(result.kb.stats().entries, 1u);
    ASSERT_EQ(result.report.sectionless_urls.size(), 1u);
    EXPECT_FALSE(result.kb.entry("u").has_sections());
}

TEST(KbStoreTest, SectionsOfPreservesOrder) {
    auto kb = testing::kb_from_lines(kTwoArticles);
    const std::vector<std::string> a = {"https://en.wikipedia.org/wiki/Mont_Blanc"};
    EXPECT_EQ(kb.sections_of(a).size(), 2u);

    const std::vector<std::string> ba = {"https://en.wikipedia.org/wiki/Lake_Como",
                                         "https://en.wikipedia.org/wiki/Mont_Blanc"};
    auto sections = kb.sections_of(ba);
    ASSERT_EQ(sections.size(), 3u);
    EXPECT_EQ(sections[0].section_id, "https://en.wikipedia.org/wiki/Lake_Como#0");
    EXPECT_EQ(sections[1].section_id, "https://en.wikipedia.org/wiki/Mont_Blanc#0");
    EXPECT_EQ(sections[2].section_id, "https://en.wikipedia.org/wiki/Mont_Blanc#1");

    EXPECT_TRUE(kb.sections_of(std::vector<std::string>{}).empty());
    // No dedup.
    EXPECT_EQ(kb.sections_of(std::vector<std::string>{a[0], a[0]}).size(), 4u);
    EXPECT_THROW(kb.sections_of(std::vector<std::string>{"nope"}), DataError);
}

TEST(KbStoreTest, EntryOfImage) {
    auto result = ingest_strings(kTwoArticles, kManifest);
    const auto& kb = result.kb;
    EXPECT_EQ(kb.entry_of_image("img_001").url, "https://en.wikipedia.org/wiki/Mont_Blanc");
    EXPECT_EQ(kb.entry_of_image("img_002").url, "https://en.wikipedia.org/wiki/Lake_Como");
    EXPECT_THROW(kb.entry_of_image("zzz"), DataError);

    // entry_of_image inverts image_ids for every entry.
    for (const auto& e : kb.entries()) {
        for (const auto& id : e.image_ids) EXPECT_EQ(&kb.entry_of_image(id), &e);
    }
}

TEST(KbStoreTest, ManyImagesMapToOneEntry) {
    auto kb = testing::kb_from_lines(R"({"url": "A", "title": "A", "sections": [{"body": "x"}], "image_ids": ["i1", "i2"]})");
    EXPECT_EQ(&kb.entry_of_image("i1"), &kb.entry_of_image("i2"));
}

TEST(KbStoreTest, FindSectionById) {
    auto kb = testing::kb_from_lines(kTwoArticles);
    const auto* s = kb.find_section("https://en.wikipedia.org/wiki/Mont_Blanc#1");
    ASSERT_NE(s, nullptr);
    EXPECT_EQ(s->heading, "Geology");
    EXPECT_EQ(kb.find_section("https://en.wikipedia.org/wiki/Mont_Blanc#2"), nullptr);
    EXPECT_EQ(kb.find_section("https://en.wikipedia.org/wiki/Mont_Blanc#x"), nullptr);
    EXPECT_EQ(kb.find_section("nohash"), nullptr);
}

TEST(KbStoreTest, TextIsNfcNormalized) {
    // "e" + combining acute accent composes to U+00E9.
    auto kb = testing::kb_from_lines("{\"url\": \"Caf\x65\xcc\x81\", \"title\": \"Caf\x65\xcc\x81\", \"sections\": [{\"body\": \"b\"}]}");
    EXPECT_TRUE(kb.contains("Caf\xc3\xa9"));
    EXPECT_FALSE(kb.contains("Caf\x65\xcc\x81"));
}

TEST(KbStoreTest, ExportRoundTrip) {
    auto original = ingest_strings(kTwoArticles, kManifest).kb;
    std::ostringstream kb_out, manifest_out;
    export_kb(original, kb_out, manifest_out);
    auto again = ingest_strings(kb_out.str(), manifest_out.str()).kb;
    EXPECT_EQ(again, original);
    EXPECT_EQ(again.stats(), original.stats());
    for (const auto& e : original.entries()) {
        for (const auto& s : e.sections) EXPECT_EQ(s.prefixed_text.rfind(e.title, 0), 0u);
    }
}

TEST(KbStoreTest, FileIngestAndExport) {
    testing::TempDir dir;
    testing::write_file(dir / "kb.jsonl", kTwoArticles);
    testing::write_file(dir / "images.jsonl", kManifest);
    auto result = ingest(dir / "kb.jsonl", dir / "images.jsonl");
    export_kb(result.kb, dir / "kb2.jsonl", dir / "images2.jsonl");
    EXPECT_EQ(ingest(dir / "kb2.jsonl", dir / "images2.jsonl").kb, result.kb);
    EXPECT_THROW(ingest(dir / "missing.jsonl"), DataError);
}

}  // namespace
}  // namespace kbvqa
