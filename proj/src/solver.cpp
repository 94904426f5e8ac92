#include "ltc/solver.hpp"

#include "ltc/git.hpp"
#include "ltc/onboarding.hpp"
#include "ltc/util.hpp"

namespace ltc {

namespace fs = std::filesystem;

std::string to_string(SolveCondition c) { return c == SolveCondition::skill ? "skill" : "baseline"; }

SolveCondition parse_solve_condition(const std::string& s) {
    if (s == "skill") return SolveCondition::skill;
    if (s == "baseline") return SolveCondition::baseline;
    throw ConfigError("unknown solve condition '" + s + "' (expected skill or baseline)");
}

Trajectory solve(const TestTask& task, const TaskMemory* memory, SolveContext& ctx) {
    auto cond = memory ? SolveCondition::skill : SolveCondition::baseline;
    auto worktree = ctx.run_dir / "work" / to_string(cond) / task->task_id;
    fs::remove_all(worktree);
    materialize_tree(ctx.repository, task->snapshot_ref, worktree);
    struct Cleanup {
        fs::path p;
        ~Cleanup() {
            std::error_code ec;
            fs::remove_all(p, ec);
        }
    } cleanup{worktree};

    AgentTask agent_task;
    agent_task.task_id = task->task_id;
    agent_task.condition = to_string(cond);
    agent_task.query = task->query;
    agent_task.audit_tag = tags::solve;
    agent_task.audit.forbidden_fragments = oracle_fragments(task->oracle_patch, worktree);
    if (memory) {
        agent_task.memory = render_for_prompt(memory->doc, std::nullopt, ctx.render_budget);
    } else {
        agent_task.audit.require_empty_memory = true;
    }
    return run_agent(ctx.gateway, ctx.agent, agent_task, worktree);
}

json SolveRecord::meta() const {
    json j = {{"task_id", task_id}, {"condition", to_string(condition)}};
    if (trajectory) {
        j["steps"] = trajectory->steps;
        j["truncated"] = trajectory->truncated;
        j["wall_time"] = trajectory->wall_time;
        j["files"] = file_set(trajectory->final_patch);
    }
    if (memory_version) {
        j["memory_version"] = *memory_version;
        j["memory_source"] = memory_source;
    }
    if (!error.empty()) j["error"] = error;
    return j;
}

std::map<std::string, TaskMemory> load_memory_map(const fs::path& memory_dir, const std::vector<TestTask>& tasks) {
    auto index_path = memory_dir / "memory.json";
    if (!fs::exists(index_path)) throw StageError("no memory.json under " + memory_dir.string() + "; run learn first");
    json index;
    try {
        index = json::parse(ltc::read_file(index_path));
    } catch (const json::exception& e) {
        throw StageError("memory.json is not valid JSON: " + std::string(e.what()));
    }
    const bool all = index.value("layout", "all") == "all";
    std::map<std::string, SkillDocument> docs;
    auto load = [&](const std::string& rel) -> const SkillDocument& {
        auto it = docs.find(rel);
        if (it == docs.end()) it = docs.emplace(rel, load_latest(memory_dir / rel)).first;
        return it->second;
    };
    std::map<std::string, TaskMemory> out;
    for (const auto& t : tasks) {
        std::string rel;
        if (all) {
            rel = ".";
        } else if (index["documents"].contains(t->category)) {
            rel = index["documents"][t->category].value("path", "");
        }
        if (rel.empty()) {
            out[t->task_id] = {empty_document(), "(none)"};
        } else {
            out[t->task_id] = {load(rel), rel};
        }
    }
    return out;
}

std::vector<SolveRecord> run_condition(const std::vector<TestTask>& tasks, SolveCondition condition,
                                       const std::map<std::string, TaskMemory>* memory, SolveContext& ctx) {
    if (condition == SolveCondition::skill && !memory) throw StageError("skill condition requires a memory map");
    std::vector<SolveRecord> out;
    for (const auto& task : tasks) {
        SolveRecord rec;
        rec.task_id = task->task_id;
        rec.condition = condition;
        const TaskMemory* mem = nullptr;
        if (condition == SolveCondition::skill) {
            auto it = memory->find(task->task_id);
            static const TaskMemory kEmpty{empty_document(), "(none)"};
            mem = it == memory->end() ? &kEmpty : &it->second;
            rec.memory_version = mem->doc.version;
            rec.memory_source = mem->source;
        }
        try {
            rec.trajectory = solve(task, mem, ctx);
        } catch (const AuditViolation&) {
            throw;
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
        auto dir = ctx.run_dir / "solve" / to_string(condition) / task->task_id;
        fs::create_directories(dir);
        write_file_atomic(dir / "trajectory.jsonl", rec.trajectory ? rec.trajectory->to_jsonl() : std::string());
        write_file_atomic(dir / "final.patch", rec.trajectory ? serialize_patch(rec.trajectory->final_patch) : "");
        write_file_atomic(dir / "meta.json", rec.meta().dump(2) + "\n");
        out.push_back(std::move(rec));
    }
    return out;
}

std::map<std::string, SolvedTask> load_solve_run(const fs::path& run_dir, const std::string& condition) {
    auto base = run_dir / "solve";
    if (!fs::is_directory(base)) throw StageError("no solve results under " + run_dir.string());
    fs::path cond_dir;
    if (!condition.empty()) {
        cond_dir = base / condition;
    } else {
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(base))
            if (e.is_directory()) found.push_back(e.path());
        if (found.size() != 1)
            throw StageError(run_dir.string() + " holds " + std::to_string(found.size()) +
                             " solve conditions; name one explicitly");
        cond_dir = found.front();
    }
    if (!fs::is_directory(cond_dir)) throw StageError("no solve results at " + cond_dir.string());
    std::map<std::string, SolvedTask> out;
    for (const auto& e : fs::directory_iterator(cond_dir)) {
        if (!e.is_directory() || !fs::exists(e.path() / "meta.json")) continue;
        auto meta = json::parse(ltc::read_file(e.path() / "meta.json"));
        SolvedTask t;
        t.task_id = meta.at("task_id").get<std::string>();
        t.error = meta.value("error", "");
        t.steps = meta.value("steps", std::size_t{0});
        t.truncated = meta.value("truncated", false);
        try {
            t.final_patch = parse_patch(ltc::read_file(e.path() / "final.patch"));
        } catch (const DiffParseError& err) {
            throw StageError(t.task_id + ": unreadable final.patch: " + err.what());
        }
        out[t.task_id] = std::move(t);
    }
    return out;
}

}  // namespace ltc
