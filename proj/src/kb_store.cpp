// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/kb_store.hpp"

#include <fstream>
#include <sstream>

#include "kbvqa/error.hpp"
#include "kbvqa/io.hpp"

namespace kbvqa {

std::string prefix_section(std::string_view title, std::string_view heading,
                           std::string_view body) {
    std::string out;
    out.reserve(title.size() + heading.size() + body.size() + 2 * kSectionSeparator.size());
    out.append(title).append(kSectionSeparator).append(heading).append(kSectionSeparator).append(body);
    return out;
}

std::string make_section_id(std::string_view url, std::size_t ordinal) {
    std::string id(url);
    id += '#';
    id += std::to_string(ordinal);
    return id;
}

void KnowledgeBase::add(ArticleEntry entry) {
    if (by_url_.count(entry.url)) throw DataError("duplicate url: " + entry.url);
    for (const auto& id : entry.image_ids) {
        if (auto it = image_index_.find(id); it != image_index_.end()) {
            throw DataError("image id " + id + " belongs to both " + it->second + " and " +
                            entry.url);
        }
    }
    for (std::size_t i = 0; i + 1 < entry.image_ids.size(); ++i) {
        for (std::size_t j = i + 1; j < entry.image_ids.size(); ++j) {
            if (entry.image_ids[i] == entry.image_ids[j]) {
                throw DataError("image id " + entry.image_ids[i] + " listed twice in " + entry.url);
            }
        }
    }
    for (const auto& id : entry.image_ids) image_index_.emplace(id, entry.url);
    stats_.entries += 1;
    stats_.sections += entry.sections.size();
    stats_.images += entry.image_ids.size();
    by_url_.emplace(entry.url, entries_.size());
    entries_.push_back(std::move(entry));
}

void KnowledgeBase::attach_image(const std::string& image_id, const std::string& url) {
    auto it = by_url_.find(url);
    if (it == by_url_.end()) {
        throw DataError("dangling image id " + image_id + ": unknown url " + url);
    }
    if (auto owner = image_index_.find(image_id); owner != image_index_.end()) {
        if (owner->second == url) return;
        throw DataError("image id " + image_id + " belongs to both " + owner->second + " and " + url);
    }
    image_index_.emplace(image_id, url);
    entries_[it->second].image_ids.push_back(image_id);
    stats_.images += 1;
}

const ArticleEntry* KnowledgeBase::find(std::string_view url) const {
    auto it = by_url_.find(std::string(url));
    return it == by_url_.end() ? nullptr : &entries_[it->second];
}

const ArticleEntry& KnowledgeBase::entry(std::string_view url) const {
    if (const auto* e = find(url)) return *e;
    throw DataError("unknown url: " + std::string(url));
}

const std::string* KnowledgeBase::url_of_image(std::string_view image_id) const {
    auto it = image_index_.find(std::string(image_id));
    return it == image_index_.end() ? nullptr : &it->second;
}

const ArticleEntry& KnowledgeBase::entry_of_image(std::string_view image_id) const {
    if (const auto* url = url_of_image(image_id)) return entry(*url);
    throw DataError("unknown image id: " + std::string(image_id));
}

std::vector<SectionRecord> KnowledgeBase::sections_of(std::span<const std::string> urls) const {
    std::vector<SectionRecord> out;
    for (const auto& url : urls) {
        const auto& e = entry(url);
        out.insert(out.end(), e.sections.begin(), e.sections.end());
    }
    return out;
}

const SectionRecord* KnowledgeBase::find_section(std::string_view section_id) const {
    const auto hash = section_id.rfind('#');
    if (hash == std::string_view::npos) return nullptr;
    const auto* e = find(section_id.substr(0, hash));
    if (!e) return nullptr;
    std::size_t ordinal = 0;
    const auto digits = section_id.substr(hash + 1);
    if (digits.empty()) return nullptr;
    for (char c : digits) {
        if (c < '0' || c > '9') return nullptr;
        ordinal = ordinal * 10 + static_cast<std::size_t>(c - '0');
    }
    if (ordinal >= e->sections.size()) return nullptr;
    return &e->sections[ordinal];
}

KbStats KnowledgeBase::recount() const {
    KbStats s;
    for (const auto& e : entries_) {
        s.entries += 1;
        s.sections += e.sections.size();
        s.images += e.image_ids.size();
    }
    return s;
}

namespace {

std::string required_string(const Json& obj, const char* key, bool allow_empty) {
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(std::string("missing field \"") + key + "\"");
    if (!it->is_string()) throw DataError(std::string("field \"") + key + "\" must be a string");
    auto value = nfc(it->get<std::string>());
    if (!allow_empty && value.empty()) throw DataError(std::string("field \"") + key + "\" is empty");
    return value;
}

ArticleEntry parse_article(const Json& record) {
    if (!record.is_object()) throw DataError("record is not an object");
    ArticleEntry entry;
    entry.url = required_string(record, "url", false);
    entry.title = required_string(record, "title", false);

    auto sections = record.find("sections");
    if (sections == record.end() || !sections->is_array()) {
        throw DataError("field \"sections\" must be an array");
    }
    for (std::size_t i = 0; i < sections->size(); ++i) {
        const auto& s = (*sections)[i];
        if (!s.is_object()) throw DataError("sections[" + std::to_string(i) + "] is not an object");
        SectionRecord sec;
        sec.section_id = make_section_id(entry.url, i);
        sec.heading = s.contains("heading") ? required_string(s, "heading", true) : std::string();
        sec.body = required_string(s, "body", false);
        sec.prefixed_text = prefix_section(entry.title, sec.heading, sec.body);
        entry.sections.push_back(std::move(sec));
    }

    if (auto images = record.find("image_ids"); images != record.end()) {
        if (!images->is_array()) throw DataError("field \"image_ids\" must be an array");
        for (const auto& id : *images) {
            if (!id.is_string() || id.get<std::string>().empty()) {
                throw DataError("image_ids must contain nonempty strings");
            }
            entry.image_ids.push_back(nfc(id.get<std::string>()));
        }
    }
    return entry;
}

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        fn(line_no, line);
    }
}

}  // namespace

IngestResult ingest(std::istream& kb_stream, std::istream* manifest_stream,
                    IngestOptions options) {
    IngestResult result;
    auto& report = result.report;
    std::unordered_map<std::string, std::size_t> url_lines;

    auto fail_record = [&](const std::string& file, std::size_t line_no, const std::string& msg) {
        if (options.strict) {
            throw DataError(file + ":" + std::to_string(line_no) + ": " + msg);
        }
        report.issues.push_back({line_no, file, msg});
        report.records_skipped += 1;
    };

    for_each_line(kb_stream, [&](std::size_t line_no, const std::string& line) {
        report.records_read += 1;
        ArticleEntry entry;
        try {
            entry = parse_article(Json::parse(line));
        } catch (const Json::parse_error& e) {
            fail_record("kb", line_no, std::string("invalid JSON: ") + e.what());
            return;
        } catch (const DataError& e) {
            fail_record("kb", line_no, e.what());
            return;
        }
        if (auto prev = url_lines.find(entry.url); prev != url_lines.end()) {
            throw DataError("duplicate url " + entry.url + " at kb lines " +
                            std::to_string(prev->second) + " and " + std::to_string(line_no));
        }
        url_lines.emplace(entry.url, line_no);
        try {
            result.kb.add(std::move(entry));
        } catch (const DataError& e) {
            throw DataError("kb:" + std::to_string(line_no) + ": " + e.what());
        }
    });

    if (manifest_stream) {
        for_each_line(*manifest_stream, [&](std::size_t line_no, const std::string& line) {
            std::string image_id;
            std::string url;
            try {
                const auto record = Json::parse(line);
                if (!record.is_object()) throw DataError("record is not an object");
                image_id = required_string(record, "image_id", false);
                url = required_string(record, "url", false);
            } catch (const Json::parse_error& e) {
                fail_record("manifest", line_no, std::string("invalid JSON: ") + e.what());
                return;
            } catch (const DataError& e) {
                fail_record("manifest", line_no, e.what());
                return;
            }
            try {
                result.kb.attach_image(image_id, url);
            } catch (const DataError& e) {
                throw DataError("manifest:" + std::to_string(line_no) + ": " + e.what());
            }
        });
    }

    for (const auto& e : result.kb.entries()) {
        if (!e.has_sections()) report.sectionless_urls.push_back(e.url);
    }
    return result;
}

IngestResult ingest(const std::filesystem::path& kb_file,
                    const std::filesystem::path& image_manifest, IngestOptions options) {
    std::ifstream kb_in(kb_file);
    if (!kb_in) throw DataError("cannot open " + kb_file.string());
    if (image_manifest.empty()) return ingest(kb_in, nullptr, options);
    std::ifstream manifest_in(image_manifest);
    if (!manifest_in) throw DataError("cannot open " + image_manifest.string());
    return ingest(kb_in, &manifest_in, options);
}

void export_kb(const KnowledgeBase& kb, std::ostream& kb_out, std::ostream& manifest_out) {
    for (const auto& e : kb.entries()) {
        Json sections = Json::array();
        for (const auto& s : e.sections) {
            sections.push_back({{"heading", s.heading}, {"body", s.body}});
        }
        Json record = {{"url", e.url},
                       {"title", e.title},
                       {"sections", std::move(sections)},
                       {"image_ids", e.image_ids}};
        kb_out << record.dump() << '\n';
        for (const auto& id : e.image_ids) {
            manifest_out << Json{{"image_id", id}, {"url", e.url}}.dump() << '\n';
        }
    }
}

void export_kb(const KnowledgeBase& kb, const std::filesystem::path& kb_file,
               const std::filesystem::path& image_manifest) {
    AtomicFileWriter kb_out(kb_file);
    AtomicFileWriter manifest_out(image_manifest);
    export_kb(kb, kb_out.stream(), manifest_out.stream());
    kb_out.commit();
    manifest_out.commit();
}

}  // namespace kbvqa
