// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kbvqa/io.hpp"

namespace kbvqa {

inline constexpr std::string_view kContextSlot = "<CONTEXT>";
inline constexpr std::string_view kQuestionSlot = "<QUESTION>";

struct ChatMessage {
    std::string role;  // "system" | "user"
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct PromptTemplate {
    std::string name;
    std::optional<std::string> system;
    std::string user_pattern;           // contains both slots
    std::optional<std::string> one_shot;  // exemplar placed before the user pattern
    // Labels used when printing the prompt as a plain listing.
    std::string system_label = "SYSTEM: ";
    std::string user_label = "USER: ";
};

/// Single user turn ending in "The answer is:".
const PromptTemplate& evqa_template();
/// System turn plus a one-shot exemplar, ending in "Short answer is:".
const PromptTemplate& infoseek_template();
/// Looks a template up by name ("evqa" | "infoseek"). Throws UsageError.
const PromptTemplate& prompt_template(std::string_view name);

/// Substitutes the slots in one pass; slot text inside the arguments is not
/// re-expanded. Throws DataError on empty context or question.
std::vector<ChatMessage> render_prompt(const PromptTemplate& t, std::string_view context,
                                       std::string_view question);
/// Plain-text listing of the rendered prompt ("SYSTEM: ...\n\nUSER: ...").
std::string render_listing(const PromptTemplate& t, std::string_view context, std::string_view question);

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model = "mistral-7b-instruct";
    int timeout_ms = 30000;
    int max_tokens = 64;
    double temperature = 0.0;
    std::string api_key_env = "KBVQA_API_KEY";
    int max_retries = 3;
    int backoff_ms = 200;  // doubled after every retry
    double max_requests_per_second = 0.0;  // 0 = unlimited
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Sends one chat-completions request. Implementations throw TransportError
/// when no HTTP response was obtained.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual HttpResponse post_chat(const Json& request, const EndpointConfig& endpoint) = 0;
};

/// POSTs to <base_url>/chat/completions.
class HttpChatTransport final : public ChatTransport {
public:
    HttpResponse post_chat(const Json& request, const EndpointConfig& endpoint) override;
};

/// Offline endpoint answering from a question -> answer table. The question is
/// read from the last "Question: " line of the final user message.
class StubChatTransport final : public ChatTransport {
public:
    explicit StubChatTransport(std::map<std::string, std::string> answers);
    static StubChatTransport from_file(const std::filesystem::path& path);

    HttpResponse post_chat(const Json& request, const EndpointConfig& endpoint) override;
    static Json completion_body(std::string_view content);

private:
    std::map<std::string, std::string> answers_;
};

/// Extracts the question from a rendered user message; empty if absent.
std::string question_of(std::string_view user_message);

struct AnswerRequest {
    std::string template_name = "evqa";
    std::string context;
    std::string question;
    EndpointConfig endpoint;
};

struct Attempt {
    int status = 0;  // 0 when the transport failed before a response
    std::string detail;
};

struct Transcript {
    std::vector<ChatMessage> prompt;
    Json request;
    std::vector<Attempt> attempts;
    int retries = 0;
    std::string completion;
};

struct AnswerResult {
    std::string answer;
    Transcript raw;
    double latency_ms = 0.0;
};

/// Trims the completion and keeps the text before the first blank line.
std::string extract_answer(std::string_view completion);

Json chat_request(const std::vector<ChatMessage>& messages, const EndpointConfig& endpoint);

/// Renders the prompt, queries the endpoint with retries on transport errors,
/// 429 and 5xx, and extracts the answer. Other statuses and empty completions
/// throw TransportError.
AnswerResult generate_answer(const AnswerRequest& request, ChatTransport& transport);

Json to_json(const Transcript& t);

}  // namespace kbvqa
