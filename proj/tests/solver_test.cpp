#include "ltc/onboarding.hpp"
#include "ltc/solver.hpp"

#include "test_support.hpp"

using namespace ltc;
using ltc::testing::GitFixture;
using ltc::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct TestGateway : Gateway {
    explicit TestGateway(std::shared_ptr<Backend> agent) : Gateway({}) { register_backend("agent", std::move(agent)); }
};

std::string tool(const std::string& name, json args = json::object()) {
    return json{{"tool", name}, {"args", args}}.dump();
}

std::shared_ptr<ScriptedBackend> agent_script(std::vector<std::string> turns) {
    json entries = json::array();
    for (std::size_t i = 0; i + 1 < turns.size(); ++i) entries.push_back({{"turn", i}, {"reply", turns[i]}});
    entries.push_back({{"reply", turns.back()}});
    return ScriptedBackend::from_json({{"entries", entries}});
}

struct Fixture {
    TempDir dir;
    GitFixture repo{dir / "repo"};
    std::vector<TestTask> tasks;

    Fixture() {
        repo.write("svc/api.py", "def serve():\n    return 0\n");
        auto base = repo.commit("base", 100);
        for (int i = 0; i < 2; ++i) {
            repo.write("svc/api.py", "def serve():\n    return dispatch_request_now(" + std::to_string(i) + ")\n");
            auto c = repo.commit("change", 200 + i);
            TaskSpec s;
            s.task_id = "test-00" + std::to_string(i + 1);
            s.commit_id = c;
            s.pool = Pool::test;
            s.category = i == 0 ? "feature" : "docs";
            s.query = "Make serve dispatch";
            s.snapshot_ref = base;
            s.oracle_patch = parse_patch(repo.git({"diff", base, c}));
            s.author_time = 200 + i;
            tasks.emplace_back(s);
        }
    }
};

SkillDocument doc_with(const std::string& body, const std::string& category = "feature") {
    return apply_update(empty_document(),
                        {{OpKind::create, "s1", {{"title", "Serve"}, {"body", body}, {"category", category}}, "", 0}},
                        "c0");
}

}  // namespace

TEST(Solver, SkillConditionCountsStepsAndPersists) {
    Fixture f;
    auto agent = agent_script({tool("list_dir", {{"path", "."}}), tool("read_file", {{"path", "svc/api.py"}}),
                               tool("edit_file", {{"path", "svc/api.py"}, {"old", "return 0"}, {"new", "return 1"}}),
                               tool("search", {{"query", "serve"}}), tool("finish")});
    TestGateway gw(agent);
    SolveContext ctx{gw, f.repo.root(), f.dir / "run", {}};
    std::map<std::string, TaskMemory> mem{{"test-001", {doc_with("Call the dispatcher."), "."}}};
    auto recs = run_condition({f.tasks[0]}, SolveCondition::skill, &mem, ctx);
    ASSERT_EQ(recs.size(), 1u);
    ASSERT_TRUE(recs[0].trajectory);
    EXPECT_EQ(recs[0].trajectory->steps, 5u);
    EXPECT_EQ(recs[0].trajectory->condition, "skill");
    EXPECT_EQ(file_set(recs[0].trajectory->final_patch), (std::set<std::string>{"svc/api.py"}));
    auto loaded = load_solve_run(f.dir / "run");
    ASSERT_EQ(loaded.size(), 1u);
    EXPECT_EQ(loaded["test-001"].steps, 5u);
    EXPECT_EQ(serialize_patch(loaded["test-001"].final_patch), serialize_patch(recs[0].trajectory->final_patch));
    auto meta = json::parse(read_file(f.dir / "run/solve/skill/test-001/meta.json"));
    EXPECT_EQ(meta["memory_version"], 1);
}

TEST(Solver, DeterministicUnderCache) {
    Fixture f;
    std::vector<std::string> dumps;
    for (int i = 0; i < 2; ++i) {
        Gateway gw({f.dir / "cache", {}, 3});
        gw.register_backend("agent", agent_script({tool("read_file", {{"path", "svc/api.py"}}), tool("finish")}));
        SolveContext ctx{gw, f.repo.root(), f.dir / ("run" + std::to_string(i)), {}};
        auto t = solve(f.tasks[0], nullptr, ctx);
        auto lines = t.to_jsonl();
        dumps.push_back(lines);
    }
    EXPECT_EQ(dumps[0], dumps[1]);
}

TEST(Solver, BaselineMemoryMustBeEmpty) {
    Fixture f;
    TestGateway gw(agent_script({tool("finish")}));
    SolveContext ctx{gw, f.repo.root(), f.dir / "run", {}};
    auto recs = run_condition(f.tasks, SolveCondition::baseline, nullptr, ctx);
    ASSERT_EQ(recs.size(), 2u);
    for (const auto& r : recs) {
        ASSERT_TRUE(r.trajectory);
        EXPECT_EQ(r.trajectory->condition, "baseline");
        EXPECT_FALSE(r.memory_version);
    }
    // An empty document in the skill slot still renders an empty section, but
    // a buggy harness that puts skill text into a baseline prompt is caught.
    AgentTask bad{"test-001", "baseline", "q", "## Serve\nCall the dispatcher.\n", tags::solve, {}};
    bad.audit.require_empty_memory = true;
    fs::create_directories(f.dir / "wt");
    EXPECT_THROW(run_agent(gw, {}, bad, f.dir / "wt"), AuditViolation);
}

TEST(Solver, OracleLineInMemoryAborts) {
    Fixture f;
    TestGateway gw(agent_script({tool("finish")}));
    SolveContext ctx{gw, f.repo.root(), f.dir / "run", {}};
    std::map<std::string, TaskMemory> mem{{"test-001", {doc_with("    return dispatch_request_now(0)"), "."}}};
    EXPECT_THROW(run_condition({f.tasks[0]}, SolveCondition::skill, &mem, ctx), AuditViolation);
}

TEST(Solver, FailuresAreIsolated) {
    Fixture f;
    TestGateway gw(agent_script({tool("finish")}));
    SolveContext ctx{gw, f.repo.root(), f.dir / "run", {}};
    auto spec = f.tasks[0].spec();
    spec.snapshot_ref = "0000000000000000000000000000000000000bad";
    std::vector<TestTask> tasks{TestTask(spec), f.tasks[1]};
    auto recs = run_condition(tasks, SolveCondition::baseline, nullptr, ctx);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_FALSE(recs[0].trajectory);
    EXPECT_FALSE(recs[0].error.empty());
    EXPECT_TRUE(recs[1].trajectory);
    auto loaded = load_solve_run(f.dir / "run", "baseline");
    EXPECT_FALSE(loaded["test-001"].error.empty());
}

TEST(Solver, MemoryMapFollowsLayout) {
    Fixture f;
    auto root = f.dir / "mem";
    save_version(root / "by_category/feature", doc_with("Feature skill."));
    write_file_atomic(root / "memory.json",
                      json{{"layout", "by_category"},
                           {"documents", {{"feature", {{"path", "by_category/feature"}}}}}}.dump());
    auto map = load_memory_map(root, f.tasks);
    EXPECT_EQ(map["test-001"].doc.entries.size(), 1u);
    EXPECT_EQ(map["test-001"].source, "by_category/feature");
    EXPECT_TRUE(map["test-002"].doc.entries.empty());
    EXPECT_THROW(load_memory_map(f.dir / "nowhere", f.tasks), StageError);
    EXPECT_THROW(parse_solve_condition("skills"), ConfigError);
}
