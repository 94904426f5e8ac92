#pragma once

#include "ltc/diff.hpp"
#include "ltc/gateway.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ltc {

struct Quality {
    enum class Kind { unassessed, rejected_prefilter, rejected_llm, accepted };
    Kind kind = Kind::unassessed;
    /// Prefilter rule name, or the model's rationale.
    std::string detail;
};

std::string_view to_string(Quality::Kind kind);

struct CommitRecord {
    std::string commit_id;
    std::string parent_id;
    std::int64_t author_time = 0;
    std::string message;
    Patch patch;
    std::size_t diff_token_estimate = 0;
    Quality quality;
    std::optional<std::string> category;

    std::string title() const;
};

/// Non-merge commits reachable from `range` (default HEAD) in ascending
/// author_time order. A root commit's parent is the empty tree.
std::vector<CommitRecord> scan_history(const std::filesystem::path& repo, const std::string& range = "HEAD",
                                       std::size_t token_divisor = 4);

struct PrefilterConfig {
    std::size_t min_modified_lines = 10;
    std::size_t token_limit = 180000;
    std::size_t token_divisor = 4;
    std::vector<std::string> version_manifest_globs = {
        "package.json", "package-lock.json", "Cargo.toml", "Cargo.lock", "pyproject.toml", "setup.py", "setup.cfg",
        "VERSION", "version.txt", "*.gemspec", "pom.xml", "build.gradle", "go.mod", "go.sum", "CHANGELOG*",
        "*.csproj", "composer.json", "version.py", "_version.py", "__version__.py"};
    std::size_t version_bump_max_lines = 20;
};

/// fnmatch on the basename, or on the whole path when the glob has a '/'.
bool matches_manifest_glob(const std::string& path, const std::vector<std::string>& globs);

/// Rules in order: min_lines, version_bump, token_limit.
CommitRecord prefilter(CommitRecord record, const PrefilterConfig& rules);

/// Model verdict on substance. One structured retry, then rejected_llm("unparseable").
CommitRecord assess_quality(CommitRecord record, Gateway& gateway, const std::string& backend_id);

struct TaxonomyCategory {
    std::string label;
    std::string description;
    std::vector<std::string> exemplar_rationales;
};

struct CategoryTaxonomy {
    std::vector<TaxonomyCategory> categories;
    bool contains(const std::string& label) const;
    std::vector<std::string> labels() const;
};

inline constexpr const char* kOtherCategory = "other";

json to_json(const CategoryTaxonomy& taxonomy);
CategoryTaxonomy taxonomy_from_json(const json& j);

/// Single-call model clustering of the rationale sample.
CategoryTaxonomy build_taxonomy(const std::vector<std::string>& rationales, Gateway& gateway,
                                const std::string& backend_id, std::size_t k_target);

CommitRecord tag_category(CommitRecord record, const CategoryTaxonomy& taxonomy, Gateway& gateway,
                          const std::string& backend_id, std::vector<std::string>* warnings = nullptr);

/// One category's population for proportional allocation. The most recent
/// record breaks remainder ties: later time first, then smaller commit id.
struct Stratum {
    std::string label;
    std::size_t population = 0;
    std::int64_t most_recent_time = 0;
    std::string most_recent_commit;
};

/// Hamilton apportionment of `quota` over the strata; the result sums to
/// min(quota, total population).
std::map<std::string, std::size_t> largest_remainder(const std::vector<Stratum>& strata, std::size_t quota);

/// A timestamp, or a fraction of the chronological order.
struct Cutoff {
    std::optional<std::int64_t> timestamp;
    std::optional<double> fraction;

    /// Unix seconds, RFC 3339 UTC, or a fraction in (0, 1).
    static Cutoff parse(const std::string& text);
    std::string str() const;
};

/// Boundary T*: learn records have time <= T*, test records time > T*.
std::int64_t resolve_cutoff(const std::vector<CommitRecord>& records, const Cutoff& cutoff);

enum class Pool { learn, test };

struct TaskSpec {
    std::string task_id;
    std::string commit_id;
    Pool pool = Pool::learn;
    std::string category;
    std::string query;
    std::string snapshot_ref;
    Patch oracle_patch;
    std::int64_t author_time = 0;
};

json to_json(const TaskSpec& task);
TaskSpec task_from_json(const json& j);

/// Pool-typed wrappers: learning code takes LearnTask, solving code TestTask,
/// so a test task cannot reach the learning phase by accident.
class LearnTask {
public:
    explicit LearnTask(TaskSpec spec);
    const TaskSpec& spec() const { return spec_; }
    const TaskSpec* operator->() const { return &spec_; }

private:
    TaskSpec spec_;
};

class TestTask {
public:
    explicit TestTask(TaskSpec spec);
    const TaskSpec& spec() const { return spec_; }
    const TaskSpec* operator->() const { return &spec_; }

private:
    TaskSpec spec_;
};

struct SamplingConfig {
    std::size_t learn_quota = 24;
    std::size_t test_quota = 7;
};

struct SplitResult {
    std::vector<TaskSpec> learn;  // stubs: query empty
    std::vector<TaskSpec> test;
    std::int64_t cutoff_time = 0;
    std::map<std::string, std::size_t> learn_allocation;
    std::map<std::string, std::size_t> test_allocation;
    std::vector<std::string> warnings;
};

SplitResult split_and_sample(const std::vector<CommitRecord>& records, const Cutoff& cutoff,
                             const SamplingConfig& quotas, std::uint64_t seed);

/// Throws StageError unless every learn task strictly precedes every test task.
void verify_temporal_split(const std::vector<TaskSpec>& learn, const std::vector<TaskSpec>& test);

/// Names a query must not mention: identifiers from hunk-header context and
/// names defined on added lines (length >= 4).
std::set<std::string> oracle_identifiers(const Patch& patch);

/// Paths, basenames and identifiers of `patch` found verbatim in `query`.
std::vector<std::string> leakage_violations(const std::string& query, const Patch& patch);

struct QueryOutcome {
    std::optional<std::string> query;
    std::vector<std::string> violations;  // from the last attempt when query is empty
};

/// Issue-style description of the commit. Regenerates once when the leakage
/// scan fails; a second failure leaves query empty.
QueryOutcome synthesize_query(const CommitRecord& record, Gateway& gateway, const std::string& backend_id);

struct Dataset {
    json manifest;
    std::vector<LearnTask> learn;
    std::vector<TestTask> test;
    std::filesystem::path repository;
};

/// Reads dataset/manifest.json and dataset/tasks/*.json, validating the
/// temporal split.
Dataset load_dataset(const std::filesystem::path& dir);

struct MineOptions {
    std::filesystem::path repository;
    std::string range = "HEAD";
    PrefilterConfig prefilter;
    std::size_t k_target = 7;
    std::size_t rationale_sample = 200;
    SamplingConfig quotas;
    Cutoff cutoff;
    std::uint64_t seed = 0;
    std::string backend_id = "miner";
};

struct MineReport {
    std::map<std::string, std::size_t> counts;
    std::vector<std::string> warnings;
};

/// All five dataset stages; writes manifest.json, tasks/ and rejections.jsonl.
MineReport mine_repository(const MineOptions& options, Gateway& gateway, const std::filesystem::path& dataset_dir,
                           const json& config_echo);

}  // namespace ltc
