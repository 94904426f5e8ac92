#include "ltc/gateway.hpp"

#include "ltc/util.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

namespace ltc {

json canonical_request(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    return {{"backend", request.backend_id},
            {"messages", messages},
            {"params",
             {{"temperature", request.params.temperature}, {"max_output_tokens", request.params.max_output_tokens}}}};
}

std::string request_digest(const ChatRequest& request) {
    // nlohmann::json objects are key-sorted, so dump() is canonical.
    return sha256_hex(canonical_request(request).dump());
}

namespace {

bool needs_oracle_audit(const ChatRequest& r) {
    return r.audit_tags.count(tags::learn_attempt) || r.audit_tags.count(tags::solve);
}

}  // namespace

void audit_request(const ChatRequest& request) {
    if (request.audit_tags.empty()) throw AuditViolation("request carries no audit tag");
    for (const auto& fragment : request.audit.forbidden_fragments) {
        if (fragment.empty()) continue;
        bool authored_by_model = std::any_of(request.messages.begin(), request.messages.end(), [&](const Message& m) {
            return m.role == "assistant" && m.content.find(fragment) != std::string::npos;
        });
        if (authored_by_model) continue;
        for (std::size_t i = 0; i < request.messages.size(); ++i) {
            const auto& m = request.messages[i];
            if (m.role != "assistant" && m.content.find(fragment) != std::string::npos) {
                throw AuditViolation("oracle line leaked into " + m.role + " message " + std::to_string(i) + ": \"" +
                                     fragment + "\"");
            }
        }
    }
    if (request.audit.require_empty_memory) {
        bool found = false;
        for (const auto& m : request.messages) {
            auto open = m.content.find(kMemoryOpen);
            if (open == std::string::npos) continue;
            auto close = m.content.find(kMemoryClose, open);
            if (close == std::string::npos) throw AuditViolation("unterminated memory section in baseline prompt");
            auto inner = std::string_view(m.content).substr(open + kMemoryOpen.size(), close - open - kMemoryOpen.size());
            if (!inner.empty()) throw AuditViolation("baseline prompt carries a non-empty memory section");
            found = true;
        }
        if (!found) throw AuditViolation("baseline prompt has no memory section");
    }
}

// --- ScriptedBackend -------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries, Exhaustion on_exhausted)
    : entries_(std::move(entries)), cursors_(entries_.size(), 0), on_exhausted_(on_exhausted) {
    if (entries_.empty()) throw ConfigError("scripted backend needs at least one entry");
    for (const auto& e : entries_) {
        if (e.replies.empty()) throw ConfigError("scripted backend entry without replies");
    }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const json& script) {
    try {
        std::vector<Entry> entries;
        for (const auto& e : script.at("entries")) {
            Entry entry;
            for (const auto& t : e.value("tags", json::array())) entry.match.tags.insert(t.get<std::string>());
            for (const auto& c : e.value("contains", json::array())) entry.match.contains.push_back(c.get<std::string>());
            for (const auto& c : e.value("excludes", json::array())) entry.match.excludes.push_back(c.get<std::string>());
            if (e.contains("turn")) entry.match.turn = e.at("turn").get<int>();
            if (e.contains("reply")) entry.replies.push_back(e.at("reply").get<std::string>());
            for (const auto& r : e.value("replies", json::array())) entry.replies.push_back(r.get<std::string>());
            entries.push_back(std::move(entry));
        }
        std::string policy = script.value("on_exhausted", "repeat_last");
        if (policy != "repeat_last" && policy != "error") throw ConfigError("unknown on_exhausted policy: " + policy);
        return std::make_shared<ScriptedBackend>(std::move(entries),
                                                 policy == "error" ? Exhaustion::error : Exhaustion::repeat_last);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid backend script: ") + e.what());
    }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
    json script;
    try {
        script = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse backend script " + path.string() + ": " + e.what());
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return from_json(script);
}

bool ScriptedBackend::matches(const Matcher& m, const ChatRequest& request) const {
    for (const auto& t : m.tags)
        if (!request.audit_tags.count(t)) return false;
    auto in_any = [&](const std::string& needle) {
        return std::any_of(request.messages.begin(), request.messages.end(),
                           [&](const Message& msg) { return msg.content.find(needle) != std::string::npos; });
    };
    for (const auto& c : m.contains)
        if (!in_any(c)) return false;
    for (const auto& c : m.excludes)
        if (in_any(c)) return false;
    if (m.turn) {
        auto turn = std::count_if(request.messages.begin(), request.messages.end(),
                                  [](const Message& msg) { return msg.role == "assistant"; });
        if (turn != *m.turn) return false;
    }
    return true;
}

std::string ScriptedBackend::chat(const ChatRequest& request) {
    std::lock_guard lock(mutex_);
    ++calls_;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!matches(entries_[i].match, request)) continue;
        auto& cursor = cursors_[i];
        const auto& replies = entries_[i].replies;
        if (cursor < replies.size()) return replies[cursor++];
        if (on_exhausted_ == Exhaustion::repeat_last) return replies.back();
        throw ScriptError("script entry " + std::to_string(i) + " exhausted for request " + request_digest(request));
    }
    throw ScriptError("no script entry matches request " + request_digest(request));
}

// --- Gateway ---------------------------------------------------------------

Gateway::Gateway(Options options) : options_(std::move(options)) {}

void Gateway::register_backend(const std::string& id, std::shared_ptr<Backend> backend) {
    std::lock_guard lock(mutex_);
    backends_[id] = std::move(backend);
}

bool Gateway::has_backend(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return backends_.count(id) > 0;
}

void Gateway::set_transcript_path(std::filesystem::path path) {
    std::lock_guard lock(mutex_);
    options_.transcript_path = std::move(path);
}

Gateway::Stats Gateway::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

std::optional<std::string> Gateway::cache_lookup(const std::string& digest) const {
    if (options_.cache_dir.empty()) return std::nullopt;
    auto path = options_.cache_dir / digest.substr(0, 2) / (digest + ".json");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
        return json::parse(read_file(path)).at("reply").get<std::string>();
    } catch (const std::exception&) {
        return std::nullopt;  // torn or foreign file: treat as a miss
    }
}

void Gateway::cache_store(const std::string& digest, const ChatRequest& request, const std::string& reply) const {
    if (options_.cache_dir.empty()) return;
    json entry = {{"digest", digest}, {"request", canonical_request(request)}, {"reply", reply}};
    write_file_atomic(options_.cache_dir / digest.substr(0, 2) / (digest + ".json"), entry.dump(2));
}

std::string Gateway::call_backend(const ChatRequest& request) {
    std::shared_ptr<Backend> backend;
    {
        std::lock_guard lock(mutex_);
        auto it = backends_.find(request.backend_id);
        if (it == backends_.end()) throw ConfigError("no backend registered as '" + request.backend_id + "'");
        backend = it->second;
        ++stats_.backend_calls;
    }
    for (int attempt = 1;; ++attempt) {
        try {
            return backend->chat(request);
        } catch (const BackendError&) {
            if (attempt >= options_.max_attempts) throw;
        }
    }
}

void Gateway::record(const std::string& digest, const ChatRequest& request, const std::string& reply, bool hit) {
    std::lock_guard lock(mutex_);
    ++stats_.requests;
    if (hit) ++stats_.cache_hits;
    if (options_.transcript_path.empty()) return;
    json line = {{"digest", digest},
                 {"tags", request.audit_tags},
                 {"request", canonical_request(request)},
                 {"reply", reply},
                 {"cache_hit", hit},
                 {"timestamp", format_utc(now_unix())}};
    append_line(options_.transcript_path, line.dump());
}

std::string Gateway::complete(const ChatRequest& request) {
    if (request.messages.empty()) throw ConfigError("chat request without messages");
    if (request.audit_tags.empty()) throw AuditViolation("request carries no audit tag");
    if (needs_oracle_audit(request) || request.audit.require_empty_memory || !request.audit.forbidden_fragments.empty()) {
        {
            std::lock_guard lock(mutex_);
            if (needs_oracle_audit(request)) ++stats_.audit_required;
        }
        audit_request(request);
        std::lock_guard lock(mutex_);
        if (needs_oracle_audit(request)) ++stats_.audited;
    }

    const std::string digest = request_digest(request);
    std::shared_future<std::string> shared;
    std::promise<std::string> promise;
    bool leader = false;
    {
        std::lock_guard lock(mutex_);
        if (auto it = inflight_.find(digest); it != inflight_.end()) {
            shared = it->second;
        } else {
            shared = promise.get_future().share();
            inflight_.emplace(digest, shared);
            leader = true;
        }
    }
    if (!leader) {
        std::string reply = shared.get();
        record(digest, request, reply, true);
        return reply;
    }

    std::string reply;
    bool hit = false;
    try {
        if (auto cached = cache_lookup(digest)) {
            reply = *cached;
            hit = true;
        } else {
            reply = call_backend(request);
            cache_store(digest, request, reply);
        }
        promise.set_value(reply);
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(mutex_);
        inflight_.erase(digest);
        throw;
    }
    {
        std::lock_guard lock(mutex_);
        inflight_.erase(digest);
    }
    record(digest, request, reply, hit);
    return reply;
}

// --- JSON extraction -------------------------------------------------------

namespace {

std::optional<json> try_parse(std::string_view text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

std::size_t balanced_end(const std::string& s, std::size_t start) {
    const char open = s[start];
    const char close = open == '{' ? '}' : ']';
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == open) ++depth;
        else if (c == close && --depth == 0) return i + 1;
    }
    return std::string::npos;
}

}  // namespace

std::optional<json> extract_json(const std::string& reply) {
    // Fenced blocks first, preferring ones tagged json.
    for (int pass = 0; pass < 2; ++pass) {
        std::size_t pos = 0;
        while ((pos = reply.find("```", pos)) != std::string::npos) {
            auto eol = reply.find('\n', pos);
            if (eol == std::string::npos) break;
            std::string lang(trim(std::string_view(reply).substr(pos + 3, eol - pos - 3)));
            auto end = reply.find("```", eol + 1);
            if (end == std::string::npos) break;
            if (pass == 1 || lang == "json") {
                if (auto j = try_parse(std::string_view(reply).substr(eol + 1, end - eol - 1))) return j;
            }
            pos = end + 3;
        }
    }
    for (std::size_t i = 0; i < reply.size(); ++i) {
        if (reply[i] != '{' && reply[i] != '[') continue;
        auto end = balanced_end(reply, i);
        if (end == std::string::npos) continue;
        if (auto j = try_parse(std::string_view(reply).substr(i, end - i))) return j;
    }
    return std::nullopt;
}

}  // namespace ltc
