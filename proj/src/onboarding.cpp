#include "ltc/onboarding.hpp"

#include "ltc/git.hpp"
#include "ltc/util.hpp"

#include <algorithm>
#include <future>

namespace ltc {

namespace fs = std::filesystem;

Condition Condition::parse(const std::string& name) {
    if (name == "seq-all") return {LearnMode::sequential, Assignment::all};
    if (name == "seq-bycat") return {LearnMode::sequential, Assignment::by_category};
    if (name == "par-all") return {LearnMode::parallel, Assignment::all};
    if (name == "par-bycat") return {LearnMode::parallel, Assignment::by_category};
    throw ConfigError("unknown condition '" + name + "' (expected seq-all, seq-bycat, par-all or par-bycat)");
}

std::string Condition::name() const {
    return std::string(mode == LearnMode::sequential ? "seq" : "par") +
           (assignment == Assignment::all ? "-all" : "-bycat");
}

json ReflectionRecord::to_json() const {
    json ops = json::array();
    for (const auto& op : ops_applied) ops.push_back(ltc::to_json(op));
    return {{"task_id", task_id},
            {"commit_id", commit_id},
            {"gap_summary", gap_summary},
            {"ops_applied", ops},
            {"attempt_steps", attempt_steps},
            {"attempt_truncated", attempt_truncated},
            {"attempt_files", file_set(attempt_patch)},
            {"oracle_files", file_set(oracle_patch)},
            {"version_before", version_before},
            {"version_after", version_after},
            {"flags", flags}};
}

Trajectory blind_attempt(const LearnTask& task, const SkillDocument& doc, LearnContext& ctx) {
    auto worktree = ctx.run_dir / "work" / task->task_id;
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
    agent_task.condition = "learn";
    agent_task.query = task->query;
    agent_task.memory = render_for_prompt(doc, std::nullopt, ctx.config.render_budget);
    agent_task.audit_tag = tags::learn_attempt;
    agent_task.audit.forbidden_fragments = oracle_fragments(task->oracle_patch, worktree);
    return run_agent(ctx.gateway, ctx.config.agent, agent_task, worktree);
}

namespace {

std::string reflection_system_prompt() {
    return "You maintain a skill document for one code repository: reusable conventions, internal APIs, "
           "architectural constraints and maintainer preferences that a new contributor needs. You are shown a task, "
           "the contributor's blind attempt, and the change the maintainers actually accepted. Identify the gaps in "
           "file localisation, implementation logic, API usage and coding style, then update the document.\n"
           "Reply with a short gap summary, followed by one fenced ```json block holding a list of operations:\n"
           "{\"op\": \"create\", \"skill_id\": \"<new id>\", \"title\": \"...\", \"body\": \"...\", \"kind\": "
           "\"style|internal_api|architecture|maintainer_preference|other\", \"category\": \"...\"}\n"
           "{\"op\": \"revise\", \"skill_id\": \"<existing id>\", \"title\"?, \"body\"?, \"kind\"?, \"category\"?}\n"
           "{\"op\": \"deprecate\", \"skill_id\": \"<existing id>\", \"reason\"?}\n"
           "Use an empty list when nothing should change.";
}

std::string fenced_diff(const Patch& p) {
    auto text = serialize_patch(p);
    if (text.empty()) return "(no changes)\n";
    return "```diff\n" + text + (text.back() == '\n' ? "" : "\n") + "```\n";
}

void persist_learn_task(const fs::path& run_dir, const Trajectory* traj, const ReflectionRecord& record) {
    auto dir = run_dir / "learn" / record.task_id;
    fs::create_directories(dir);
    write_file_atomic(dir / "trajectory.jsonl", traj ? traj->to_jsonl() : std::string());
    write_file_atomic(dir / "attempt.patch", serialize_patch(record.attempt_patch));
    write_file_atomic(dir / "reflection.json", record.to_json().dump(2) + "\n");
}

/// Attempt, reflect, persist. Failures other than audit violations flag the
/// record and advance the document with no ops.
SkillDocument learn_one(const LearnTask& task, const SkillDocument& doc, LearnContext& ctx, ReflectionRecord& record) {
    std::optional<Trajectory> traj;
    try {
        traj = blind_attempt(task, doc, ctx);
    } catch (const AuditViolation&) {
        throw;
    } catch (const std::exception& e) {
        record = {};
        record.task_id = task->task_id;
        record.commit_id = task->commit_id;
        record.oracle_patch = task->oracle_patch;
        record.version_before = doc.version;
        record.flags.push_back(std::string("attempt_failed: ") + e.what());
        auto next = apply_update(doc, {}, task->commit_id);
        record.version_after = next.version;
        persist_learn_task(ctx.run_dir, nullptr, record);
        return next;
    }
    auto [next, rec] = reflect_and_update(task, *traj, doc, ctx);
    record = std::move(rec);
    persist_learn_task(ctx.run_dir, &*traj, record);
    return next;
}

}  // namespace

std::pair<SkillDocument, ReflectionRecord> reflect_and_update(const LearnTask& task, const Trajectory& trajectory,
                                                              const SkillDocument& doc, LearnContext& ctx) {
    ReflectionRecord record;
    record.task_id = task->task_id;
    record.commit_id = task->commit_id;
    record.attempt_patch = trajectory.final_patch;
    record.oracle_patch = task->oracle_patch;
    record.attempt_steps = trajectory.steps;
    record.attempt_truncated = trajectory.truncated;
    record.version_before = doc.version;
    if (trajectory.truncated) record.flags.push_back("truncated_attempt");

    ChatRequest req;
    req.backend_id = ctx.config.reflect_backend;
    req.audit_tags = {tags::reflect};
    auto rendered = render_for_prompt(doc, std::nullopt, ctx.config.render_budget);
    req.messages = {{"system", reflection_system_prompt()},
                    {"user", "Task " + task->task_id + " (category " + task->category + "):\n" + task->query +
                                 "\n\nBlind attempt:\n" + fenced_diff(trajectory.final_patch) +
                                 "\nAccepted change:\n" + fenced_diff(task->oracle_patch) + "\nCurrent skill document:\n" +
                                 std::string(kMemoryOpen) + (rendered.empty() ? "" : "\n" + rendered) +
                                 std::string(kMemoryClose) + "\n"}};

    std::optional<SkillDocument> next;
    std::string problem;
    for (int attempt = 0; attempt <= ctx.config.reflection_retry && !next; ++attempt) {
        std::string reply;
        try {
            reply = ctx.gateway.complete(req);
        } catch (const BackendError& e) {
            problem = std::string("gateway failure: ") + e.what();
            break;
        } catch (const ScriptError& e) {
            problem = std::string("gateway failure: ") + e.what();
            break;
        }
        try {
            auto parsed = parse_reflection(reply);
            for (auto& op : parsed.ops) {
                if (op.op == OpKind::create && !op.payload.contains("category")) op.payload["category"] = task->category;
            }
            next = apply_update(doc, parsed.ops, task->commit_id);
            record.gap_summary = parsed.gap_summary;
            record.flags.insert(record.flags.end(), parsed.warnings.begin(), parsed.warnings.end());
        } catch (const ReplyParseError& e) {
            problem = e.what();
        } catch (const UpdateRejected& e) {
            problem = e.what();
        }
        if (!next) {
            req.messages.push_back({"assistant", reply});
            req.messages.push_back({"user", "The reply could not be applied: " + problem +
                                                ". Answer again with a gap summary and one fenced ```json op list."});
        }
    }
    if (!next) {
        record.flags.push_back("reflection_failed: " + problem);
        next = apply_update(doc, {}, task->commit_id);
    }
    for (const auto& op : next->update_log)
        if (op.step == next->version && op.op != OpKind::noop) record.ops_applied.push_back(op);
    record.version_after = next->version;
    return {std::move(*next), std::move(record)};
}

LearnOutcome run_sequential(const std::vector<LearnTask>& tasks, LearnContext& ctx, const fs::path& memory_dir) {
    auto ordered = tasks;
    std::stable_sort(ordered.begin(), ordered.end(), [](const LearnTask& a, const LearnTask& b) {
        return a->author_time < b->author_time;
    });
    LearnOutcome out;
    out.doc = empty_document();
    if (!memory_dir.empty()) save_version(memory_dir, out.doc);
    for (const auto& task : ordered) {
        ReflectionRecord record;
        out.doc = learn_one(task, out.doc, ctx, record);
        for (const auto& f : record.flags)
            if (f.rfind("attempt_failed", 0) == 0 || f.rfind("reflection_failed", 0) == 0)
                out.warnings.push_back(task->task_id + ": " + f);
        out.records.push_back(std::move(record));
        if (!memory_dir.empty()) save_version(memory_dir, out.doc);
    }
    return out;
}

LearnOutcome run_parallel(const std::vector<LearnTask>& tasks, LearnContext& ctx, const fs::path& memory_dir) {
    std::vector<SkillDocument> shards(tasks.size());
    std::vector<ReflectionRecord> records(tasks.size());
    auto run_shard = [&](std::size_t i) {
        shards[i] = learn_one(tasks[i], empty_document(), ctx, records[i]);
        // A failed attempt contributes the empty document, not its noop batch.
        for (const auto& f : records[i].flags)
            if (f.rfind("attempt_failed", 0) == 0) shards[i] = empty_document();
    };
    const std::size_t width = std::max<std::size_t>(1, ctx.config.parallelism);
    for (std::size_t start = 0; start < tasks.size(); start += width) {
        std::vector<std::future<void>> batch;
        for (std::size_t i = start; i < std::min(tasks.size(), start + width); ++i)
            batch.push_back(std::async(width == 1 ? std::launch::deferred : std::launch::async, run_shard, i));
        std::exception_ptr failure;
        for (auto& f : batch) {
            try {
                f.get();
            } catch (...) {
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
    }

    LearnOutcome out;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        for (const auto& f : records[i].flags)
            if (f.rfind("attempt_failed", 0) == 0 || f.rfind("reflection_failed", 0) == 0)
                out.warnings.push_back(tasks[i]->task_id + ": " + f);
    }
    out.records = std::move(records);
    auto merged = merge_all(shards, ctx.gateway, ctx.config.merge_backend);
    out.doc = std::move(merged.doc);
    out.merge_fallback = merged.fallback;
    if (merged.fallback) out.warnings.push_back("skill merge fell back to concatenation");
    if (!memory_dir.empty()) save_version(memory_dir, out.doc);
    return out;
}

std::map<std::string, std::vector<std::string>> assign_curriculum(const std::vector<LearnTask>& learn,
                                                                  const std::vector<TestTask>& test,
                                                                  Assignment assignment,
                                                                  std::vector<std::string>* warnings) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& t : test) {
        auto& ids = out[t->task_id];
        for (const auto& l : learn)
            if (assignment == Assignment::all || l->category == t->category) ids.push_back(l->task_id);
        if (ids.empty() && warnings)
            warnings->push_back("test task " + t->task_id + " has no learn tasks in category '" + t->category + "'");
    }
    return out;
}

std::string category_dir(const std::string& label) {
    std::string out;
    for (char c : label)
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_');
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    return out;
}

json run_learning(const Dataset& dataset, LearnContext& ctx, const fs::path& memory_dir) {
    const auto& cond = ctx.config.condition;
    auto learn_fn = cond.mode == LearnMode::sequential ? run_sequential : run_parallel;
    std::vector<std::string> warnings;
    auto curriculum = assign_curriculum(dataset.learn, dataset.test, cond.assignment, &warnings);

    std::map<std::string, std::vector<LearnTask>> groups;
    if (cond.assignment == Assignment::all) {
        groups["*"] = dataset.learn;
    } else {
        for (const auto& t : dataset.learn) groups[t->category].push_back(t);
    }

    json documents = json::object();
    bool fallback = false;
    for (const auto& [label, tasks] : groups) {
        auto dir = label == "*" ? memory_dir : memory_dir / "by_category" / category_dir(label);
        auto outcome = learn_fn(tasks, ctx, dir);
        fallback = fallback || outcome.merge_fallback;
        warnings.insert(warnings.end(), outcome.warnings.begin(), outcome.warnings.end());
        json ids = json::array();
        for (const auto& r : outcome.records) ids.push_back(r.task_id);
        documents[label] = {{"path", fs::relative(dir, memory_dir).generic_string()},
                            {"version", outcome.doc.version},
                            {"entries", outcome.doc.entries.size()},
                            {"active_entries", outcome.doc.active_count()},
                            {"learn_tasks", ids}};
    }
    json index = {{"condition", cond.name()},
                  {"layout", cond.assignment == Assignment::all ? "all" : "by_category"},
                  {"documents", documents},
                  {"curriculum", curriculum},
                  {"merge_fallback", fallback},
                  {"warnings", warnings}};
    fs::create_directories(memory_dir);
    write_file_atomic(memory_dir / "memory.json", index.dump(2) + "\n");
    return index;
}

}  // namespace ltc
