#pragma once

#include "ltc/gateway.hpp"
#include "ltc/miner.hpp"
#include "ltc/skill_memory.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace ltc {

struct BackendSpec {
    std::string type;  // scripted | http
    std::filesystem::path script;
    std::string url;
    /// Name of the environment variable holding the credential.
    std::string key_env;
    std::string model;
};

/// Every key a config file may carry. Unknown keys are rejected so typos
/// surface instead of silently falling back to defaults.
struct Config {
    std::filesystem::path repository;
    std::string range = "HEAD";
    PrefilterConfig prefilter;
    std::size_t k_target = 7;
    std::size_t rationale_sample = 200;
    std::size_t learn_quota = 24;
    std::size_t test_quota = 7;
    std::string cutoff = "0.8";
    std::uint64_t seed = 0;

    std::size_t max_steps = 80;
    int reflection_retry = 1;
    std::size_t parallelism = 1;
    std::size_t render_budget = kDefaultRenderBudget;

    /// Defaults to cache/ next to the config file (or the working directory).
    std::filesystem::path cache_dir;
    int max_attempts = 3;

    std::string miner_backend = "miner";
    std::string agent_backend = "agent";
    std::string reflector_backend = "reflector";
    std::vector<std::string> judges;
    std::map<std::string, BackendSpec> backends;

    /// Relative paths resolve against `base_dir` (the config file's directory).
    static Config from_json(const json& j, const std::filesystem::path& base_dir);
    static Config load(const std::filesystem::path& path);
    json to_json() const;

    MineOptions mine_options() const;
};

/// Overlays `overrides` onto the file's JSON before validation.
Config load_config(const std::filesystem::path& path, const json& overrides);

/// Registers the configured backends, plus LTC_BACKEND_<ID>_URL fallbacks for
/// every id in `required`; ConfigError when one of them stays unresolved.
std::unique_ptr<Gateway> build_gateway(const Config& config, const std::vector<std::string>& required,
                                       Gateway::Options options);

/// Stable digest over a dataset's manifest and task files.
std::string dataset_digest(const std::filesystem::path& dataset_dir);

}  // namespace ltc
