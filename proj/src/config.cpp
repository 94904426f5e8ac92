#include "ltc/config.hpp"

#include "ltc/util.hpp"

#include <set>

namespace ltc {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kKeys{"repository",   "range",         "min_modified_lines", "token_limit",
                                  "token_divisor", "version_manifest_globs", "version_bump_max_lines",
                                  "k_target",     "rationale_sample", "learn_quota", "test_quota",
                                  "cutoff",       "seed",          "max_steps",          "reflection_retry",
                                  "parallelism",  "render_budget", "cache_dir",          "max_attempts",
                                  "miner_backend", "agent_backend", "reflector_backend", "judges",
                                  "backends"};

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type (got " + j.at(key).dump() + ")");
    }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute()) return p;
    return base / p;
}

}  // namespace

Config Config::from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (!kKeys.count(k)) throw ConfigError("unknown config key '" + k + "'");
    Config c;
    std::string repo, cache;
    take(j, "repository", repo);
    c.repository = resolve(base_dir, repo);
    take(j, "range", c.range);
    take(j, "min_modified_lines", c.prefilter.min_modified_lines);
    take(j, "token_limit", c.prefilter.token_limit);
    take(j, "token_divisor", c.prefilter.token_divisor);
    take(j, "version_manifest_globs", c.prefilter.version_manifest_globs);
    take(j, "version_bump_max_lines", c.prefilter.version_bump_max_lines);
    take(j, "k_target", c.k_target);
    take(j, "rationale_sample", c.rationale_sample);
    take(j, "learn_quota", c.learn_quota);
    take(j, "test_quota", c.test_quota);
    if (j.contains("cutoff")) {
        // Accept numbers as well as strings: 0.8, 1700000000.
        c.cutoff = j["cutoff"].is_string() ? j["cutoff"].get<std::string>() : j["cutoff"].dump();
    }
    take(j, "seed", c.seed);
    take(j, "max_steps", c.max_steps);
    take(j, "reflection_retry", c.reflection_retry);
    take(j, "parallelism", c.parallelism);
    take(j, "render_budget", c.render_budget);
    take(j, "cache_dir", cache);
    c.cache_dir = resolve(base_dir, cache.empty() ? std::string("cache") : cache);
    take(j, "max_attempts", c.max_attempts);
    take(j, "miner_backend", c.miner_backend);
    take(j, "agent_backend", c.agent_backend);
    take(j, "reflector_backend", c.reflector_backend);
    take(j, "judges", c.judges);

    if (c.prefilter.token_divisor == 0) throw ConfigError("token_divisor must be positive");
    if (c.max_steps == 0) throw ConfigError("max_steps must be positive");
    if (c.k_target == 0) throw ConfigError("k_target must be positive");
    if (c.reflection_retry < 0) throw ConfigError("reflection_retry must be >= 0");
    if (c.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    try {
        Cutoff::parse(c.cutoff);
    } catch (const Error& e) {
        throw ConfigError(std::string("bad cutoff: ") + e.what());
    }

    if (j.contains("backends")) {
        if (!j["backends"].is_object()) throw ConfigError("'backends' must map backend ids to objects");
        for (const auto& [id, spec] : j["backends"].items()) {
            if (!spec.is_object()) throw ConfigError("backend '" + id + "' must be an object");
            BackendSpec b;
            take(spec, "type", b.type);
            std::string script;
            take(spec, "script", script);
            b.script = resolve(base_dir, script);
            take(spec, "url", b.url);
            take(spec, "key_env", b.key_env);
            take(spec, "model", b.model);
            if (b.type == "scripted") {
                if (b.script.empty()) throw ConfigError("scripted backend '" + id + "' needs a 'script' path");
            } else if (b.type == "http") {
                if (b.url.empty()) throw ConfigError("http backend '" + id + "' needs a 'url'");
            } else {
                throw ConfigError("backend '" + id + "' has unknown type '" + b.type + "' (scripted or http)");
            }
            c.backends[id] = b;
        }
    }
    return c;
}

Config Config::load(const fs::path& path) { return load_config(path, json::object()); }

Config load_config(const fs::path& path, const json& overrides) {
    json j = json::object();
    fs::path base = fs::current_path();
    if (!path.empty()) {
        if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
        try {
            j = json::parse(read_file(path));
        } catch (const json::exception& e) {
            throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
        }
        base = fs::absolute(path).parent_path();
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    // Flag values are relative to the working directory, not the config file.
    json ov = overrides;
    for (const char* key : {"repository", "cache_dir"})
        if (ov.contains(key)) ov[key] = fs::absolute(ov[key].get<std::string>()).string();
    j.update(ov);
    return Config::from_json(j, base);
}

json Config::to_json() const {
    json backs = json::object();
    for (const auto& [id, b] : backends) {
        json o = {{"type", b.type}};
        if (!b.script.empty()) o["script"] = b.script.string();
        if (!b.url.empty()) o["url"] = b.url;
        if (!b.key_env.empty()) o["key_env"] = b.key_env;
        if (!b.model.empty()) o["model"] = b.model;
        backs[id] = o;
    }
    return {{"repository", repository.string()},
            {"range", range},
            {"min_modified_lines", prefilter.min_modified_lines},
            {"token_limit", prefilter.token_limit},
            {"token_divisor", prefilter.token_divisor},
            {"version_manifest_globs", prefilter.version_manifest_globs},
            {"version_bump_max_lines", prefilter.version_bump_max_lines},
            {"k_target", k_target},
            {"rationale_sample", rationale_sample},
            {"learn_quota", learn_quota},
            {"test_quota", test_quota},
            {"cutoff", cutoff},
            {"seed", seed},
            {"max_steps", max_steps},
            {"reflection_retry", reflection_retry},
            {"parallelism", parallelism},
            {"render_budget", render_budget},
            {"cache_dir", cache_dir.string()},
            {"max_attempts", max_attempts},
            {"miner_backend", miner_backend},
            {"agent_backend", agent_backend},
            {"reflector_backend", reflector_backend},
            {"judges", judges},
            {"backends", backs}};
}

MineOptions Config::mine_options() const {
    MineOptions o;
    o.repository = repository;
    o.range = range;
    o.prefilter = prefilter;
    o.k_target = k_target;
    o.rationale_sample = rationale_sample;
    o.quotas = {learn_quota, test_quota};
    o.cutoff = Cutoff::parse(cutoff);
    o.seed = seed;
    o.backend_id = miner_backend;
    return o;
}

std::unique_ptr<Gateway> build_gateway(const Config& config, const std::vector<std::string>& required,
                                       Gateway::Options options) {
    options.max_attempts = config.max_attempts;
    auto gw = std::make_unique<Gateway>(std::move(options));
    for (const auto& [id, b] : config.backends) {
        if (b.type == "scripted") {
            if (!fs::exists(b.script)) throw ConfigError("script for backend '" + id + "' not found: " + b.script.string());
            try {
                gw->register_backend(id, ScriptedBackend::from_file(b.script));
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw ConfigError("script for backend '" + id + "' is invalid: " + e.what());
            }
        } else {
            std::string key;
            if (!b.key_env.empty()) {
                const char* v = std::getenv(b.key_env.c_str());
                if (!v) throw ConfigError("backend '" + id + "' expects its key in $" + b.key_env + ", which is unset");
                key = v;
            } else if (const char* v = std::getenv((HttpBackend::env_prefix(id) + "_KEY").c_str())) {
                key = v;
            }
            gw->register_backend(id, std::make_shared<HttpBackend>(b.url, key, b.model.empty() ? id : b.model));
        }
    }
    for (const auto& id : required) {
        if (gw->has_backend(id)) continue;
        if (auto http = HttpBackend::from_env(id)) {
            gw->register_backend(id, http);
            continue;
        }
        throw ConfigError("no backend for '" + id + "': add it under 'backends' in the config or set " +
                          HttpBackend::env_prefix(id) + "_URL");
    }
    return gw;
}

std::string dataset_digest(const fs::path& dataset_dir) {
    std::string acc = sha256_hex(read_file(dataset_dir / "manifest.json"));
    std::vector<fs::path> files;
    if (fs::is_directory(dataset_dir / "tasks"))
        for (const auto& e : fs::directory_iterator(dataset_dir / "tasks")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) acc += "\n" + f.filename().string() + " " + sha256_hex(read_file(f));
    return sha256_hex(acc);
}

}  // namespace ltc
