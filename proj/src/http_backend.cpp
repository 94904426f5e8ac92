#include <httplib.h>

#include "ltc/gateway.hpp"

#include <cctype>
#include <cstdlib>

namespace ltc {

HttpBackend::HttpBackend(std::string url, std::string api_key, std::string model)
    : api_key_(std::move(api_key)), model_(std::move(model)) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("backend URL lacks a scheme: " + url);
    auto slash = url.find('/', scheme + 3);
    scheme_host_port_ = url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url.substr(slash);
}

std::string HttpBackend::env_prefix(const std::string& id) {
    std::string prefix = "LTC_BACKEND_";
    for (char c : id) prefix.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(c)) : '_');
    return prefix;
}

std::shared_ptr<HttpBackend> HttpBackend::from_env(const std::string& id) {
    auto prefix = env_prefix(id);
    const char* url = std::getenv((prefix + "_URL").c_str());
    if (!url || !*url) return nullptr;
    const char* key = std::getenv((prefix + "_KEY").c_str());
    const char* model = std::getenv((prefix + "_MODEL").c_str());
    return std::make_shared<HttpBackend>(url, key ? key : "", model ? model : id);
}

std::string HttpBackend::chat(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    json body = {{"model", model_},
                 {"messages", messages},
                 {"temperature", request.params.temperature},
                 {"max_tokens", request.params.max_output_tokens}};

    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(30);
    client.set_read_timeout(600);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw BackendError("HTTP request failed: " + httplib::to_string(res.error()));
    if (res->status >= 500 || res->status == 429) {
        throw BackendError("backend returned HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
        throw Error("backend rejected request with HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
        auto reply = json::parse(res->body);
        if (reply.contains("choices")) return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        if (reply.contains("content") && reply.at("content").is_array())
            return reply.at("content").at(0).at("text").get<std::string>();
        return reply.at("reply").get<std::string>();
    } catch (const json::exception& e) {
        throw BackendError(std::string("unreadable backend response: ") + e.what());
    }
}

}  // namespace ltc
