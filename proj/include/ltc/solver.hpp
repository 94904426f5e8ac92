#pragma once

#include "ltc/agent.hpp"
#include "ltc/miner.hpp"
#include "ltc/skill_memory.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ltc {

enum class SolveCondition { skill, baseline };
std::string to_string(SolveCondition c);
SolveCondition parse_solve_condition(const std::string& s);

struct SolveContext {
    Gateway& gateway;
    std::filesystem::path repository;
    /// runs/<run_id>; results go to solve/<condition>/<task_id>/.
    std::filesystem::path run_dir;
    AgentConfig agent;
    std::size_t render_budget = kDefaultRenderBudget;
};

/// Memory a test task may consult.
struct TaskMemory {
    SkillDocument doc;
    /// Where the document came from, relative to the memory directory.
    std::string source;
};

/// Runs the agent on a fresh worktree of the snapshot. A document means the
/// skill condition; none means baseline, whose prompts must carry an empty
/// memory section.
Trajectory solve(const TestTask& task, const TaskMemory* memory, SolveContext& ctx);

struct SolveRecord {
    std::string task_id;
    SolveCondition condition = SolveCondition::baseline;
    std::optional<Trajectory> trajectory;
    std::string error;
    std::optional<int> memory_version;
    std::string memory_source;

    json meta() const;
};

/// Reads memory.json under `memory_dir` and resolves each test task to the
/// document it is allowed to see. Test tasks missing from the curriculum get
/// an empty document.
std::map<std::string, TaskMemory> load_memory_map(const std::filesystem::path& memory_dir,
                                                  const std::vector<TestTask>& tasks);

/// Solves every task independently and persists trajectory.jsonl, final.patch
/// and meta.json. Per-task failures are recorded and skipped; prompt audit
/// violations abort.
std::vector<SolveRecord> run_condition(const std::vector<TestTask>& tasks, SolveCondition condition,
                                       const std::map<std::string, TaskMemory>* memory, SolveContext& ctx);

/// What the evaluator needs from a persisted solve.
struct SolvedTask {
    std::string task_id;
    Patch final_patch;
    std::size_t steps = 0;
    bool truncated = false;
    std::string error;
};

/// Loads runs/<run_id>/solve/<condition>/*; the condition directory is the
/// only one present when `condition` is empty.
std::map<std::string, SolvedTask> load_solve_run(const std::filesystem::path& run_dir, const std::string& condition = {});

}  // namespace ltc
