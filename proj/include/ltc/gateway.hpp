#pragma once

#include "ltc/error.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <future>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ltc {

using json = nlohmann::json;

/// Audit tags naming the pipeline stage that issued a request.
namespace tags {
inline constexpr const char* learn_attempt = "learn_attempt";
inline constexpr const char* solve = "solve";
inline constexpr const char* reflect = "reflect";
inline constexpr const char* merge = "merge";
inline constexpr const char* judge = "judge";
inline constexpr const char* assess = "assess";
inline constexpr const char* taxonomy = "taxonomy";
inline constexpr const char* tag = "tag";
inline constexpr const char* query = "query";
}  // namespace tags

/// Delimiters around the rendered skill memory inside agent system prompts.
inline constexpr std::string_view kMemoryOpen = "<skills>";
inline constexpr std::string_view kMemoryClose = "</skills>";

struct Message {
    std::string role;  // system | user | assistant
    std::string content;

    friend bool operator==(const Message&, const Message&) = default;
};

struct ChatParams {
    double temperature = 0.0;
    int max_output_tokens = 4096;
};

/// What the prompt auditor must verify for one request.
struct AuditSpec {
    /// Oracle lines that must not reach the model unless the model itself
    /// produced them earlier in the conversation.
    std::vector<std::string> forbidden_fragments;
    /// Baseline runs: the memory section must be present and byte-empty.
    bool require_empty_memory = false;
};

struct ChatRequest {
    std::string backend_id;
    std::vector<Message> messages;
    ChatParams params;
    std::set<std::string> audit_tags;
    AuditSpec audit;
};

/// Canonical JSON of the cache-relevant request content
/// (backend id, messages, params).
json canonical_request(const ChatRequest& request);
/// SHA-256 over the canonical request.
std::string request_digest(const ChatRequest& request);

/// Throws AuditViolation when the request breaks its AuditSpec. Requests
/// tagged learn_attempt or solve are always audited by Gateway::complete.
void audit_request(const ChatRequest& request);

class Backend {
public:
    virtual ~Backend() = default;
    /// Throws BackendError on transport failures (retried by the gateway).
    virtual std::string chat(const ChatRequest& request) = 0;
};

/// Script lookup failed; never retried.
class ScriptError : public Error {
public:
    using Error::Error;
};

/// Deterministic backend answering from an ordered list of (matcher, replies)
/// entries. The first entry whose matcher accepts the request answers with its
/// next queued reply.
class ScriptedBackend final : public Backend {
public:
    struct Matcher {
        /// All of these tags must be on the request.
        std::set<std::string> tags;
        /// Each substring must occur in some message.
        std::vector<std::string> contains;
        /// Each substring must be absent from every message.
        std::vector<std::string> excludes;
        /// Number of assistant messages already in the conversation.
        std::optional<int> turn;
    };
    struct Entry {
        Matcher match;
        std::vector<std::string> replies;
    };
    enum class Exhaustion { error, repeat_last };

    explicit ScriptedBackend(std::vector<Entry> entries, Exhaustion on_exhausted = Exhaustion::repeat_last);

    /// {"on_exhausted": "repeat_last"|"error", "entries": [{"tags": [...],
    /// "contains": [...], "excludes": [...], "turn": n, "replies": [...]}]};
    /// "reply": "x" is shorthand for a one-element reply list.
    static std::shared_ptr<ScriptedBackend> from_json(const json& script);
    static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

    std::string chat(const ChatRequest& request) override;
    std::size_t calls() const { return calls_.load(); }

private:
    bool matches(const Matcher& m, const ChatRequest& request) const;

    std::vector<Entry> entries_;
    std::vector<std::size_t> cursors_;
    Exhaustion on_exhausted_;
    std::mutex mutex_;
    std::atomic<std::size_t> calls_{0};
};

/// Minimal chat-completion HTTP backend: POSTs {model, messages,
/// temperature, max_tokens} and reads choices[0].message.content.
class HttpBackend final : public Backend {
public:
    HttpBackend(std::string url, std::string api_key, std::string model);
    /// Reads LTC_BACKEND_<ID>_URL, LTC_BACKEND_<ID>_KEY and optionally
    /// LTC_BACKEND_<ID>_MODEL; nullptr when the URL variable is unset.
    static std::shared_ptr<HttpBackend> from_env(const std::string& id);
    static std::string env_prefix(const std::string& id);

    std::string chat(const ChatRequest& request) override;

private:
    std::string scheme_host_port_;
    std::string path_;
    std::string api_key_;
    std::string model_;
};

/// Always fails; wired in by commands that must stay offline.
class OfflineBackend final : public Backend {
public:
    std::string chat(const ChatRequest&) override {
        throw ScriptError("offline command attempted a model call");
    }
};

/// Single chokepoint for model calls: audit, cache, backend dispatch,
/// transcript persistence. Safe for concurrent callers.
class Gateway {
public:
    struct Options {
        /// Empty disables caching.
        std::filesystem::path cache_dir;
        /// Empty disables transcript persistence.
        std::filesystem::path transcript_path;
        int max_attempts = 3;
    };
    struct Stats {
        std::size_t requests = 0;
        std::size_t cache_hits = 0;
        std::size_t backend_calls = 0;
        std::size_t audit_required = 0;
        std::size_t audited = 0;
    };

    explicit Gateway(Options options);

    void register_backend(const std::string& id, std::shared_ptr<Backend> backend);
    bool has_backend(const std::string& id) const;
    void set_transcript_path(std::filesystem::path path);

    std::string complete(const ChatRequest& request);

    Stats stats() const;

private:
    std::optional<std::string> cache_lookup(const std::string& digest) const;
    void cache_store(const std::string& digest, const ChatRequest& request, const std::string& reply) const;
    std::string call_backend(const ChatRequest& request);
    void record(const std::string& digest, const ChatRequest& request, const std::string& reply, bool hit);

    Options options_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_future<std::string>> inflight_;
    std::map<std::string, std::shared_ptr<Backend>> backends_;
    Stats stats_;
};

/// Extracts the first JSON value from a model reply: a fenced ```json block,
/// any fenced block, or the first balanced {...} / [...] span.
std::optional<json> extract_json(const std::string& reply);

}  // namespace ltc
