// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/rag_client.hpp"

#include <cstdlib>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "kbvqa/error.hpp"

namespace kbvqa {

const PromptTemplate& evqa_template() {
    static const PromptTemplate t = [] {
        PromptTemplate p;
        p.name = "evqa";
        p.user_pattern = "Context: <CONTEXT> \nQuestion: <QUESTION>\nThe answer is:";
        p.user_label = "USER: ";
        return p;
    }();
    return t;
}

const PromptTemplate& infoseek_template() {
    static const PromptTemplate t = [] {
        PromptTemplate p;
        p.name = "infoseek";
        p.system = "You always answer the question the user asks. Do not answer anything else.";
        // The exemplar is reproduced byte for byte, spelling included.
        p.one_shot =
            "Context: The sounthern side of the Alps is next to Lake Como.\n"
            "Question: Which body of water is this mountain located in or next to?\n"
            "Just answer the questions, no explanations needed. \n"
            "Short answer is: Lake Como\n"
            "\n";
        p.user_pattern =
            "Context: <CONTEXT> \n"
            "Question: <QUESTION>\n"
            "Just answer the questions, no explanations needed. \n"
            "Short answer is:";
        p.user_label = "USER:";
        return p;
    }();
    return t;
}

const PromptTemplate& prompt_template(std::string_view name) {
    if (name == "evqa") return evqa_template();
    if (name == "infoseek") return infoseek_template();
    throw UsageError("unknown prompt template: " + std::string(name));
}

namespace {

std::string substitute(std::string_view pattern, std::string_view context, std::string_view question) {
    std::string out;
    out.reserve(pattern.size() + context.size() + question.size());
    std::size_t i = 0;
    while (i < pattern.size()) {
        if (pattern.substr(i, kContextSlot.size()) == kContextSlot) {
            out.append(context);
            i += kContextSlot.size();
        } else if (pattern.substr(i, kQuestionSlot.size()) == kQuestionSlot) {
            out.append(question);
            i += kQuestionSlot.size();
        } else {
            out += pattern[i++];
        }
    }
    return out;
}

}  // namespace

std::vector<ChatMessage> render_prompt(const PromptTemplate& t, std::string_view context,
                                       std::string_view question) {
    if (context.empty()) throw DataError("prompt context is empty");
    if (question.empty()) throw DataError("prompt question is empty");
    if (t.user_pattern.find(kContextSlot) == std::string::npos ||
        t.user_pattern.find(kQuestionSlot) == std::string::npos) {
        throw UsageError("template " + t.name + " is missing a slot");
    }
    std::vector<ChatMessage> messages;
    if (t.system) messages.push_back({"system", *t.system});
    messages.push_back({"user", t.one_shot.value_or("") + substitute(t.user_pattern, context, question)});
    return messages;
}

std::string render_listing(const PromptTemplate& t, std::string_view context, std::string_view question) {
    std::string out;
    for (const auto& m : render_prompt(t, context, question)) {
        if (m.role == "system") {
            out += t.system_label + m.content + "\n\n";
        } else {
            out += t.user_label + m.content;
        }
    }
    return out;
}

namespace {

struct BaseUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // no trailing slash
};

BaseUrl split_base_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw UsageError("endpoint base URL needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    BaseUrl out;
    out.origin = url.substr(0, path_start);
    out.path = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    return out;
}

class RateLimiter {
public:
    void wait(double per_second) {
        if (per_second <= 0.0) return;
        const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(1.0 / per_second));
        std::chrono::steady_clock::time_point slot;
        {
            std::lock_guard lock(mu_);
            const auto now = std::chrono::steady_clock::now();
            slot = std::max(now, next_);
            next_ = slot + interval;
        }
        std::this_thread::sleep_until(slot);
    }

private:
    std::mutex mu_;
    std::chrono::steady_clock::time_point next_{};
};

RateLimiter& global_limiter() {
    static RateLimiter limiter;
    return limiter;
}

std::string excerpt(std::string_view body) {
    constexpr std::size_t kMax = 200;
    return body.size() <= kMax ? std::string(body) : std::string(body.substr(0, kMax)) + "...";
}

}  // namespace

HttpResponse HttpChatTransport::post_chat(const Json& request, const EndpointConfig& endpoint) {
    const auto base = split_base_url(endpoint.base_url);
    httplib::Client client(base.origin);
    const auto seconds = endpoint.timeout_ms / 1000;
    const auto micros = (endpoint.timeout_ms % 1000) * 1000;
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);

    httplib::Headers headers;
    if (!endpoint.api_key_env.empty()) {
        if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }
    auto res = client.Post(base.path + "/chat/completions", headers, request.dump(), "application/json");
    if (!res) {
        throw TransportError("request to " + endpoint.base_url + " failed: " + httplib::to_string(res.error()));
    }
    return {res->status, res->body};
}

std::string question_of(std::string_view user_message) {
    constexpr std::string_view kMarker = "Question: ";
    const auto at = user_message.rfind(kMarker);
    if (at == std::string_view::npos) return {};
    auto rest = user_message.substr(at + kMarker.size());
    return std::string(rest.substr(0, rest.find('\n')));
}

StubChatTransport::StubChatTransport(std::map<std::string, std::string> answers)
    : answers_(std::move(answers)) {}

StubChatTransport StubChatTransport::from_file(const std::filesystem::path& path) {
    std::map<std::string, std::string> answers;
    for_each_json_line(path, [&](std::size_t line, const Json& j) {
        if (!j.is_object() || !j.contains("question") || !j.contains("answer") || !j["question"].is_string() ||
            !j["answer"].is_string()) {
            throw DataError(path.string() + ":" + std::to_string(line) +
                            ": stub records need string \"question\" and \"answer\"");
        }
        answers[j["question"].get<std::string>()] = j["answer"].get<std::string>();
    });
    return StubChatTransport(std::move(answers));
}

Json StubChatTransport::completion_body(std::string_view content) {
    return {{"object", "chat.completion"},
            {"choices", Json::array({{{"index", 0},
                                      {"message", {{"role", "assistant"}, {"content", content}}},
                                      {"finish_reason", "stop"}}})}};
}

HttpResponse StubChatTransport::post_chat(const Json& request, const EndpointConfig&) {
    std::string user;
    for (const auto& m : request.at("messages")) {
        if (m.at("role") == "user") user = m.at("content").get<std::string>();
    }
    const auto question = question_of(user);
    auto it = answers_.find(question);
    if (it == answers_.end()) {
        return {404, Json{{"error", "no stub answer for question: " + question}}.dump()};
    }
    return {200, completion_body(it->second + "\n").dump()};
}

std::string extract_answer(std::string_view completion) {
    auto text = trim(completion);
    std::string out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        if (trim(line).empty()) break;
        if (!out.empty()) out += '\n';
        out += line;
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return std::string(trim(out));
}

Json chat_request(const std::vector<ChatMessage>& messages, const EndpointConfig& endpoint) {
    Json msgs = Json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"model", endpoint.model},
            {"messages", std::move(msgs)},
            {"temperature", endpoint.temperature},
            {"max_tokens", endpoint.max_tokens}};
}

AnswerResult generate_answer(const AnswerRequest& request, ChatTransport& transport) {
    const auto start = std::chrono::steady_clock::now();
    AnswerResult result;
    auto& t = result.raw;
    t.prompt = render_prompt(prompt_template(request.template_name), request.context, request.question);
    t.request = chat_request(t.prompt, request.endpoint);

    const int max_retries = std::max(0, request.endpoint.max_retries);
    int backoff = std::max(0, request.endpoint.backoff_ms);
    for (int attempt = 0;; ++attempt) {
        global_limiter().wait(request.endpoint.max_requests_per_second);
        bool transient = false;
        std::string failure;
        int status = 0;
        try {
            const auto res = transport.post_chat(t.request, request.endpoint);
            status = res.status;
            t.attempts.push_back({res.status, excerpt(res.body)});
            if (res.status >= 200 && res.status < 300) {
                Json body;
                try {
                    body = Json::parse(res.body);
                    t.completion = body.at("choices").at(0).at("message").at("content").get<std::string>();
                } catch (const Json::exception& e) {
                    throw TransportError(std::string("malformed completion response: ") + e.what(), res.status);
                }
                break;
            }
            transient = res.status == 429 || res.status >= 500;
            failure = "endpoint returned HTTP " + std::to_string(res.status) + ": " + excerpt(res.body);
        } catch (const TransportError& e) {
            if (e.status() != 0) throw;
            t.attempts.push_back({0, e.what()});
            transient = true;
            failure = e.what();
        }
        if (!transient || attempt >= max_retries) {
            if (attempt > 0) failure += " (after " + std::to_string(attempt) + " retries)";
            throw TransportError(failure, status);
        }
        ++t.retries;
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
        backoff *= 2;
    }

    result.answer = extract_answer(t.completion);
    if (result.answer.empty()) throw TransportError("endpoint returned an empty completion", 200);
    result.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return result;
}

Json to_json(const Transcript& t) {
    Json prompt = Json::array();
    for (const auto& m : t.prompt) prompt.push_back({{"role", m.role}, {"content", m.content}});
    Json attempts = Json::array();
    for (const auto& a : t.attempts) attempts.push_back({{"status", a.status}, {"detail", a.detail}});
    return {{"prompt", std::move(prompt)},
            {"request", t.request},
            {"attempts", std::move(attempts)},
            {"retries", t.retries},
            {"completion", t.completion}};
}

}  // namespace kbvqa
