#include "ltc/cli.hpp"
#include "ltc/config.hpp"
#include "ltc/skill_memory.hpp"

#include "test_support.hpp"

#include <sstream>

using namespace ltc;
using ltc::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result ltc_cmd(std::vector<std::string> args) {
    std::ostringstream out, err;
    int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

/// Synthetic repo plus a mined dataset, shared by the tests below.
class Workspace : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir;
        ltc::testing::make_synthetic_repo(repo());
        auto r = ltc_cmd({"mine", "--config", ltc::testing::e2e_config().string(), "--repo", repo().string(), "--out",
                          dataset().string(), "--cache-dir", cache().string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path root() { return dir_->path(); }
    static fs::path repo() { return root() / "repo"; }
    static fs::path dataset() { return root() / "dataset"; }
    static fs::path cache() { return root() / "cache"; }

    static std::vector<std::string> with_config(std::vector<std::string> args) {
        args.insert(args.end(), {"--config", ltc::testing::e2e_config().string(), "--cache-dir", cache().string()});
        return args;
    }

    static TempDir* dir_;
};
TempDir* Workspace::dir_ = nullptr;

}  // namespace

TEST_F(Workspace, MineWritesManifestWithRunRecord) {
    auto m = json::parse(read_file(dataset() / "manifest.json"));
    EXPECT_EQ(m["run"]["stage"], "mine");
    EXPECT_EQ(m["head"].get<std::string>().size(), 40u);
    EXPECT_EQ(m["learn_tasks"].size(), 6u);
    EXPECT_EQ(m["test_tasks"].size(), 3u);
    EXPECT_TRUE(fs::exists(dataset() / "rejections.jsonl"));
    EXPECT_TRUE(fs::exists(dataset() / "transcripts.jsonl"));
}

TEST_F(Workspace, ConfigErrorsExitTwo) {
    TempDir d;
    ltc::testing::write(d / "bad.json", R"({"learn_quota": 3, "lern_quota": 4})");
    auto r = ltc_cmd({"mine", "--config", (d / "bad.json").string(), "--out", (d / "ds").string()});
    EXPECT_EQ(r.code, cli::kConfigError);
    EXPECT_NE(r.err.find("lern_quota"), std::string::npos);
    EXPECT_EQ(ltc_cmd({"mine"}).code, cli::kConfigError);
    EXPECT_EQ(ltc_cmd({"frobnicate"}).code, cli::kConfigError);
    EXPECT_EQ(ltc_cmd(with_config({"learn", "--dataset", dataset().string(), "--condition", "seq-some", "--out",
                                   d.path().string()}))
                  .code,
              cli::kConfigError);
    EXPECT_EQ(ltc_cmd(with_config({"learn", "--dataset", (d / "nope").string(), "--condition", "seq-all"})).code,
              cli::kConfigError);
    EXPECT_EQ(ltc_cmd(with_config({"solve", "--dataset", dataset().string(), "--condition", "baseline", "--memory",
                                   (d / "m").string(), "--out", d.path().string()}))
                  .code,
              cli::kConfigError);
    ltc::testing::write(d / "cut.json", R"({"cutoff": "yesterday"})");
    EXPECT_EQ(ltc_cmd({"mine", "--config", (d / "cut.json").string(), "--out", (d / "ds").string()}).code,
              cli::kConfigError);
    EXPECT_EQ(ltc_cmd({"--help"}).code, 0);
}

TEST_F(Workspace, MissingBackendIsAConfigError) {
    TempDir d;
    ltc::testing::write(d / "c.json", "{}");
    auto r = ltc_cmd({"learn", "--config", (d / "c.json").string(), "--dataset", dataset().string(), "--condition",
                      "seq-all", "--out", d.path().string()});
    EXPECT_EQ(r.code, cli::kConfigError);
    EXPECT_NE(r.err.find("LTC_BACKEND_AGENT_URL"), std::string::npos) << r.err;
}

TEST_F(Workspace, StageOrderViolationsExitThree) {
    TempDir d;
    auto r = ltc_cmd(with_config({"solve", "--dataset", dataset().string(), "--condition", "skill", "--memory",
                                  (d / "memory/none").string(), "--out", d.path().string()}));
    EXPECT_EQ(r.code, cli::kStageError);
    EXPECT_NE(r.err.find("ltc learn"), std::string::npos);
    ASSERT_EQ(ltc_cmd(with_config({"solve", "--dataset", dataset().string(), "--condition", "baseline", "--out",
                                   d.path().string(), "--run-id", "b"}))
                  .code,
              0);
    r = ltc_cmd(with_config({"evaluate", "--skill-run", (d / "runs/b").string(), "--baseline-run",
                             (d / "runs/missing").string(), "--out", d.path().string()}));
    EXPECT_EQ(r.code, cli::kStageError);
    // Reusing a run id is refused rather than mixing two runs.
    EXPECT_EQ(ltc_cmd(with_config({"solve", "--dataset", dataset().string(), "--condition", "baseline", "--out",
                                   d.path().string(), "--run-id", "b"}))
                  .code,
              cli::kConfigError);
}

TEST_F(Workspace, LearnSolveEvaluateAndOfflineCommands) {
    TempDir d;
    auto w = d.path().string();
    ASSERT_EQ(ltc_cmd(with_config({"learn", "--dataset", dataset().string(), "--condition", "seq-bycat", "--out", w,
                                   "--run-id", "l"}))
                  .code,
              0);
    auto index = json::parse(read_file(d / "memory/l/memory.json"));
    EXPECT_EQ(index["layout"], "by_category");
    std::size_t total = 0;
    for (const auto& [_, doc] : index["documents"].items()) total += doc["version"].get<std::size_t>();
    EXPECT_EQ(total, 6u);
    EXPECT_TRUE(fs::exists(d / "runs/l/manifest.json"));
    EXPECT_TRUE(fs::exists(d / "runs/l/transcripts.jsonl"));
    EXPECT_FALSE(fs::exists(d / "runs/l/work"));

    ASSERT_EQ(ltc_cmd(with_config({"solve", "--dataset", dataset().string(), "--condition", "skill", "--memory",
                                   (d / "memory/l").string(), "--out", w, "--run-id", "s"}))
                  .code,
              0);
    ASSERT_EQ(ltc_cmd(with_config({"solve", "--dataset", dataset().string(), "--condition", "baseline", "--out", w,
                                   "--run-id", "b"}))
                  .code,
              0);
    auto meta = json::parse(read_file(d / "runs/s/manifest.json"));
    EXPECT_EQ(meta["setting"], "seq-bycat");
    EXPECT_EQ(meta["dataset_digest"], dataset_digest(dataset()));
    auto r = ltc_cmd(with_config({"evaluate", "--skill-run", (d / "runs/s").string(), "--baseline-run",
                                  (d / "runs/b").string(), "--judges", "judge-a", "--out", w}));
    ASSERT_EQ(r.code, 0) << r.err;
    auto report = d / "reports/s__b";
    EXPECT_TRUE(fs::exists(report / "manifest.json"));
    auto summary = read_file(report / "summary.md");

    // report and replay run with no backends configured at all.
    fs::remove(report / "summary.md");
    r = ltc_cmd({"report", report.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_file(report / "summary.md"), summary);
    r = ltc_cmd({"replay", "--memory", (d / "memory/l").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("matches stored document"), std::string::npos);

    // A stored version that disagrees with the log is reported.
    auto feature = d / "memory/l/by_category/feature";
    auto latest = load_latest(feature);
    auto path = feature / ("doc_v" + std::to_string(latest.version) + ".json");
    write_file_atomic(path, read_file(path) + " ");
    EXPECT_EQ(ltc_cmd({"replay", "--memory", (d / "memory/l").string()}).code, cli::kStageError);
}

TEST_F(Workspace, OracleLineInQueryExitsFour) {
    TempDir d;
    fs::copy(dataset(), d / "ds", fs::copy_options::recursive);
    auto m = json::parse(read_file(d / "ds/manifest.json"));
    auto id = m["learn_tasks"][0].get<std::string>();
    auto task_path = d / "ds/tasks" / (id + ".json");
    auto task = json::parse(read_file(task_path));
    auto fragments = ltc::testing::guarded_fragments(repo(), task_from_json(task), d / "snap");
    ASSERT_FALSE(fragments.empty());
    auto line = fragments.front();
    ASSERT_FALSE(line.empty());
    task["query"] = task["query"].get<std::string>() + "\n" + line;
    write_file_atomic(task_path, task.dump());
    auto r = ltc_cmd(with_config({"learn", "--dataset", (d / "ds").string(), "--condition", "seq-all", "--out",
                                  d.path().string()}));
    EXPECT_EQ(r.code, cli::kAuditViolation) << r.err;
}

TEST(Config, OverridesAndSnapshot) {
    TempDir d;
    ltc::testing::write(d / "c.json", R"({"learn_quota": 3, "cutoff": 0.5, "repository": "repo",
        "backends": {"x": {"type": "scripted", "script": "s.json"}}})");
    auto c = load_config(d / "c.json", {{"learn_quota", 5}});
    EXPECT_EQ(c.learn_quota, 5u);
    EXPECT_EQ(c.cutoff, "0.5");
    EXPECT_EQ(c.repository, d / "repo");
    EXPECT_EQ(c.backends["x"].script, d / "s.json");
    EXPECT_EQ(c.cache_dir, d / "cache");
    // The snapshot reloads to the same config.
    auto again = Config::from_json(c.to_json(), d.path());
    EXPECT_EQ(again.to_json(), c.to_json());
    ltc::testing::write(d / "t.json", R"({"backends": {"x": {"type": "grpc"}}})");
    EXPECT_THROW(load_config(d / "t.json", json::object()), ConfigError);
    ltc::testing::write(d / "u.json", R"({"seed": "seven"})");
    EXPECT_THROW(load_config(d / "u.json", json::object()), ConfigError);
}
