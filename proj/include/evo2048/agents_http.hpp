#pragma once

// Chat-completion transport over HTTPS. Needs cpp-httplib built with
// CPPHTTPLIB_OPENSSL_SUPPORT and OpenSSL at link time.

#include <cstdlib>
#include <string>

#include "agents.hpp"
#include "httplib.h"
#include "json.hpp"

namespace evo2048 {

namespace http_detail {

struct Url {
    std::string scheme_host;  // "https://api.example.com"
    std::string path_prefix;  // "/v1"
};

inline Url split_url(const std::string& base) {
    const auto scheme = base.find("://");
    if (scheme == std::string::npos) throw ConfigError("base_url needs a scheme: " + base);
    const auto slash = base.find('/', scheme + 3);
    if (slash == std::string::npos) return {base, ""};
    std::string prefix = base.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base.substr(0, slash), prefix};
}

}  // namespace http_detail

/// Request path and JSON body for one prompt. Pure, so provider adapters can be
/// checked without a network.
inline std::pair<std::string, nlohmann::json> chat_request(const AgentEndpoint& e, const PromptBundle& b) {
    if (e.provider == "anthropic") {
        return {"/messages",
                {{"model", e.model},
                 {"max_tokens", e.token_budget},
                 {"messages", {{{"role", "user"}, {"content", b.text}}}}}};
    }
    if (e.provider == "openai") {
        return {"/chat/completions",
                {{"model", e.model},
                 {"max_tokens", e.token_budget},
                 {"messages", {{{"role", "user"}, {"content", b.text}}}}}};
    }
    throw ConfigError("unknown provider " + e.provider);
}

/// Completion text from a provider response body.
inline std::string chat_reply_text(const AgentEndpoint& e, const nlohmann::json& body) {
    try {
        if (e.provider == "anthropic") {
            std::string out;
            for (const auto& part : body.at("content"))
                if (part.value("type", "") == "text") out += part.at("text").get<std::string>();
            return out;
        }
        return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
        throw NetworkError(std::string("unexpected provider response: ") + ex.what());
    }
}

class HttpTransport : public Transport {
public:
    std::string complete(const AgentEndpoint& e, const PromptBundle& bundle) override {
        if (e.base_url.empty()) throw ConfigError("agent endpoint has no base_url");
        const char* key = e.credential_env.empty() ? nullptr : std::getenv(e.credential_env.c_str());
        if (!key || !*key) throw ConfigError("credential variable " + e.credential_env + " is not set");

        const auto url = http_detail::split_url(e.base_url);
        auto [path, body] = chat_request(e, bundle);
        httplib::Client cli(url.scheme_host);
        const auto secs = e.timeout_ms / 1000, usecs = (e.timeout_ms % 1000) * 1000;
        cli.set_connection_timeout(secs, usecs);
        cli.set_read_timeout(secs, usecs);
        cli.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        if (e.provider == "anthropic") {
            headers.emplace("x-api-key", key);
            headers.emplace("anthropic-version", "2023-06-01");
        } else {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        auto res = cli.Post(url.path_prefix + path, headers, body.dump(), "application/json");
        if (!res) {
            if (res.error() == httplib::Error::Read || res.error() == httplib::Error::Write ||
                res.error() == httplib::Error::ConnectionTimeout)
                throw RequestTimeout("provider request timed out: " + httplib::to_string(res.error()));
            throw NetworkError("provider request failed: " + httplib::to_string(res.error()));
        }
        if (res->status == 429) {
            int retry_after = 0;
            if (res->has_header("retry-after")) retry_after = std::atoi(res->get_header_value("retry-after").c_str()) * 1000;
            throw RateLimitError("provider rate limit", retry_after);
        }
        if (res->status == 408 || res->status == 504) throw RequestTimeout("provider timeout, status " + std::to_string(res->status));
        if (res->status >= 500) throw NetworkError("provider error status " + std::to_string(res->status));
        if (res->status != 200) throw AgentError("provider rejected request, status " + std::to_string(res->status));
        try {
            return chat_reply_text(e, nlohmann::json::parse(res->body));
        } catch (const nlohmann::json::parse_error& ex) {
            throw NetworkError(std::string("provider returned invalid JSON: ") + ex.what());
        }
    }
};

}  // namespace evo2048
