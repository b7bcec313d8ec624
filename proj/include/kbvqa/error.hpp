// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kbvqa {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kData = 2,
    kTransport = 3,
};

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::kData; }
};

/// Invalid or inconsistent input data (files, records, embeddings).
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid arguments or configuration.
class UsageError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kUsage; }
};

/// Failure talking to an external endpoint (timeouts, refused connections,
/// non-success HTTP status).
class TransportError : public Error {
public:
    explicit TransportError(const std::string& what, int status = 0)
        : Error(what), status_(status) {}
    ExitCode exit_code() const noexcept override { return ExitCode::kTransport; }
    /// HTTP status, or 0 when no response was received.
    int status() const noexcept { return status_; }

private:
    int status_;
};

}  // namespace kbvqa
