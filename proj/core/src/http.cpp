// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/http.hpp"

#include <httplib.h>

#include "trap/error.hpp"

namespace trap {

HttpOptions parse_endpoint(const std::string& endpoint) {
    HttpOptions opt;
    std::string rest = endpoint;
    const std::string prefix = "http://";
    if (rest.rfind(prefix, 0) == 0) rest = rest.substr(prefix.size());
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw Error("parse_endpoint: expected host:port, got '" + endpoint + "'");
    opt.host = rest.substr(0, colon);
    opt.port = std::stoi(rest.substr(colon + 1));
    return opt;
}

std::string http_post_json(const HttpOptions& options, const std::string& path, const std::string& body) {
    if (!options.configured()) throw BackendUnavailableError("http: no endpoint configured");
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= options.retries; ++attempt) {
        httplib::Client client(options.host, options.port);
        client.set_connection_timeout(0, options.timeout_ms * 1000);
        client.set_read_timeout(options.timeout_ms / 1000, (options.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!options.bearer_token.empty()) headers.emplace("Authorization", "Bearer " + options.bearer_token);
        auto res = client.Post(path, headers, body, "application/json");
        if (res && res->status >= 200 && res->status < 300) return res->body;
        last_error = res ? "status " + std::to_string(res->status) : "transport error " + httplib::to_string(res.error());
    }
    throw AdapterError("http: POST " + options.host + ":" + std::to_string(options.port) + path + " failed after " +
                       std::to_string(options.retries + 1) + " attempts (" + last_error + ")");
}

}  // namespace trap
