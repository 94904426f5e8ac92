#pragma once

#include "ltc/diff.hpp"
#include "ltc/gateway.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ltc {

struct ToolCall {
    std::string tool;  // read_file | search | list_dir | edit_file | finish | invalid
    json args = json::object();
    std::string args_digest;
    std::string result_digest;
    bool error = false;
};

struct Trajectory {
    std::string task_id;
    std::string condition;  // learn | skill | baseline
    std::vector<ToolCall> tool_calls;
    std::size_t steps = 0;
    Patch final_patch;
    double wall_time = 0;
    bool truncated = false;

    /// One JSON object per tool call, then a summary line.
    std::string to_jsonl() const;
};

/// Resolves agent-supplied paths inside one worktree. Anything that would
/// leave it (absolute paths, "..", symlinks pointing out, .git) throws
/// SandboxViolation.
class Sandbox {
public:
    explicit Sandbox(std::filesystem::path root);
    std::filesystem::path resolve(const std::string& relative) const;
    /// Repo-relative form of a resolved path.
    std::string relative(const std::filesystem::path& resolved) const;
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

/// The five-tool surface. Records original contents of every edited file so
/// the final patch is the worktree's diff against the snapshot.
class ToolBox {
public:
    struct Limits {
        std::size_t read_max_lines = 200;
        std::size_t search_max_results = 50;
    };

    explicit ToolBox(std::filesystem::path root) : ToolBox(std::move(root), Limits{}) {}
    ToolBox(std::filesystem::path root, Limits limits);

    /// Throws ToolError for misuse the agent can recover from and
    /// SandboxViolation for path escapes.
    std::string execute(const std::string& tool, const json& args);

    std::string read_file(const std::string& path, std::size_t start_line, std::size_t max_lines) const;
    std::string search(const std::string& query, bool regex, const std::string& path) const;
    std::string list_dir(const std::string& path) const;
    std::string edit_file(const std::string& path, const std::string& old_text, const std::string& new_text);

    Patch diff() const;

private:
    Sandbox sandbox_;
    Limits limits_;
    std::map<std::string, std::optional<std::string>> originals_;
};

struct AgentConfig {
    std::string backend_id = "agent";
    std::size_t max_steps = 80;
    ToolBox::Limits limits;
};

struct AgentTask {
    std::string task_id;
    std::string condition;
    std::string query;
    /// Rendered skill memory; empty renders an empty memory section.
    std::string memory;
    std::string audit_tag;
    AuditSpec audit;
};

/// Drives the tool loop until finish or the step budget. Every reply counts
/// as a step, including malformed ones and the final finish call.
Trajectory run_agent(Gateway& gateway, const AgentConfig& config, const AgentTask& task,
                     const std::filesystem::path& worktree);

/// Added oracle lines (trimmed, longer than 12 characters) that do not already
/// occur in the snapshot; these are what the prompt audit must never see.
std::vector<std::string> oracle_fragments(const Patch& oracle, const std::filesystem::path& snapshot);

std::string agent_system_prompt(const std::string& memory);

}  // namespace ltc
