// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

namespace trap {

/// Connection settings shared by every remote adapter. An empty host means
/// "not configured"; adapters must fail with BackendUnavailableError.
struct HttpOptions {
    std::string host;
    int port = 0;
    int timeout_ms = 30000;
    int retries = 2;             // additional attempts after the first
    std::string bearer_token;    // optional Authorization header

    bool configured() const { return !host.empty() && port > 0; }
};

/// Parse "host:port" or "http://host:port" into options (port required).
HttpOptions parse_endpoint(const std::string& endpoint);

/// POST a JSON body, retrying transport failures up to options.retries.
/// Returns the response body; throws AdapterError after the final attempt
/// or on a non-2xx status.
std::string http_post_json(const HttpOptions& options, const std::string& path, const std::string& body);

}  // namespace trap
