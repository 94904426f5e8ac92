#pragma once

#include "ltc/agent.hpp"
#include "ltc/miner.hpp"
#include "ltc/skill_memory.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ltc {

enum class LearnMode { sequential, parallel };
enum class Assignment { by_category, all };

struct Condition {
    LearnMode mode = LearnMode::sequential;
    Assignment assignment = Assignment::all;

    /// seq-all | seq-bycat | par-all | par-bycat
    static Condition parse(const std::string& name);
    std::string name() const;
};

struct LearningConfig {
    Condition condition;
    AgentConfig agent;  // max_steps is the attempt step budget
    std::string reflect_backend = "reflector";
    std::string merge_backend = "reflector";
    int reflection_retry = 1;
    std::size_t render_budget = kDefaultRenderBudget;
    std::size_t parallelism = 1;
};

struct ReflectionRecord {
    std::string task_id;
    std::string commit_id;
    Patch attempt_patch;
    Patch oracle_patch;
    std::string gap_summary;
    std::vector<UpdateOp> ops_applied;
    std::size_t attempt_steps = 0;
    bool attempt_truncated = false;
    int version_before = 0;
    int version_after = 0;
    std::vector<std::string> flags;

    json to_json() const;
};

struct LearnContext {
    Gateway& gateway;
    std::filesystem::path repository;
    /// runs/<run_id>; per-task files go to learn/<task_id>/ beneath it.
    std::filesystem::path run_dir;
    LearningConfig config;
};

/// Blind attempt on a fresh worktree of the task snapshot. The prompt audit
/// forbids every oracle line the snapshot does not already contain.
Trajectory blind_attempt(const LearnTask& task, const SkillDocument& doc, LearnContext& ctx);

/// Contrastive reflection over (query, attempt, oracle, current memory). An
/// unusable reply after the configured retries advances the version with no
/// ops and flags the record.
std::pair<SkillDocument, ReflectionRecord> reflect_and_update(const LearnTask& task, const Trajectory& trajectory,
                                                              const SkillDocument& doc, LearnContext& ctx);

struct LearnOutcome {
    SkillDocument doc;
    std::vector<ReflectionRecord> records;
    std::vector<std::string> warnings;
    bool merge_fallback = false;
};

/// Folds attempt + reflection over tasks in time order. When `memory_dir` is
/// set, every version is written there as it is produced.
LearnOutcome run_sequential(const std::vector<LearnTask>& tasks, LearnContext& ctx,
                            const std::filesystem::path& memory_dir = {});

/// One shard per task, each from the empty document, merged pairwise.
LearnOutcome run_parallel(const std::vector<LearnTask>& tasks, LearnContext& ctx,
                          const std::filesystem::path& memory_dir = {});

/// test task id -> learn task ids it may draw on.
std::map<std::string, std::vector<std::string>> assign_curriculum(const std::vector<LearnTask>& learn,
                                                                  const std::vector<TestTask>& test,
                                                                  Assignment assignment,
                                                                  std::vector<std::string>* warnings = nullptr);

/// Directory name for a category label.
std::string category_dir(const std::string& label);

/// Runs the whole learning phase for a condition, writing
/// memory_dir/memory.json plus one document (all) or one per category
/// (by_category, under by_category/<label>/).
json run_learning(const Dataset& dataset, LearnContext& ctx, const std::filesystem::path& memory_dir);

}  // namespace ltc
