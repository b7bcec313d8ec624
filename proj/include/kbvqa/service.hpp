// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <memory>
#include <string>

#include "kbvqa/pipeline.hpp"

namespace httplib {
class Server;
}

namespace kbvqa {

struct ServiceResponse {
    int status = 200;
    Json body;
};

/// JSON-over-HTTP front end for a loaded pipeline. The state is read-only
/// after construction, so handlers run concurrently without locking.
///
///   GET  /healthz  -> {"status": "ok"}
///   POST /search   {"vector": [..], "k"?}                      -> {"candidates": [..]}
///   POST /rerank   {"tokens": [[..]..], "candidates": [..],
///                   "alpha"?, "scope"?}                         -> {"ranked": [..], "missing_section_ids": [..]}
///   POST /answer   {"vector", "tokens", "question",
///                   "template"?, "k"?, "alpha"?, "scope"?}      -> {"answer", "section_id", "entry_url", ...}
///
/// Bad requests get 400 {"error", "field"}; failures of the answer endpoint's
/// LLM get 502 and anything else 500, both with an opaque {"error_id"} that is
/// also logged to stderr.
class Service {
public:
    Service(const PipelineState& state, ChatTransport& transport);
    ~Service();

    /// Dispatches one request without any networking.
    ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

    /// Binds host:port (port 0 picks a free one) and returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); in-flight requests finish before it returns.
    void run();
    /// Blocks until run() is accepting connections.
    void wait_until_ready() const;
    void stop();

private:
    ServiceResponse search(const Json& req) const;
    ServiceResponse rerank_request(const Json& req) const;
    ServiceResponse answer(const Json& req) const;
    ServiceResponse internal_error(int status, const std::string& what) const;

    const PipelineState& state_;
    ChatTransport& transport_;
    std::unique_ptr<httplib::Server> server_;
    mutable std::atomic<std::uint64_t> error_seq_{0};
};

}  // namespace kbvqa
