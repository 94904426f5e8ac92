#include "ltc/evaluator.hpp"

#include "test_support.hpp"

#include <chrono>

using namespace ltc;
using ltc::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct TestGateway : Gateway {
    TestGateway() : Gateway({}) {}
};

std::shared_ptr<ScriptedBackend> constant(const std::string& reply) {
    return ScriptedBackend::from_json({{"entries", json::array({{{"reply", reply}}})}});
}

Patch patch_of(const std::string& path, int added) {
    std::string t = "diff --git a/" + path + " b/" + path + "\n--- a/" + path + "\n+++ b/" + path + "\n@@ -1,1 +1," +
                    std::to_string(added + 1) + " @@\n keep\n";
    for (int i = 0; i < added; ++i) t += "+line " + std::to_string(i) + "\n";
    return parse_patch(t);
}

TaskSpec spec(const std::string& id) {
    TaskSpec s;
    s.task_id = id;
    s.commit_id = "c";
    s.pool = Pool::test;
    s.category = "feature";
    s.query = "Do the thing";
    s.snapshot_ref = "p";
    s.oracle_patch = patch_of("a.py", 4);
    s.author_time = 10;
    return s;
}

}  // namespace

TEST(Metrics, Examples) {
    auto ab = parse_patch(serialize_patch(patch_of("a", 1)) + serialize_patch(patch_of("b", 1)));
    auto bc = parse_patch(serialize_patch(patch_of("b", 1)) + serialize_patch(patch_of("c", 1)));
    EXPECT_EQ(file_iou(ab, bc), Rational(1, 3));
    EXPECT_EQ(file_iou(ab, ab), Rational(1));
    EXPECT_EQ(file_iou(Patch{}, Patch{}), Rational(1));
    EXPECT_EQ(file_iou(Patch{}, ab), Rational(0));
    EXPECT_EQ(line_deviation(patch_of("a", 100), patch_of("a", 100)), Rational(0));
    EXPECT_EQ(line_deviation(patch_of("a", 200), patch_of("a", 100)), Rational(1));
    EXPECT_EQ(line_deviation(Patch{}, patch_of("a", 3)), Rational(-1));
    EXPECT_THROW(line_deviation(patch_of("a", 1), Patch{}), StageError);
    Trajectory t;
    EXPECT_EQ(steps_metric(t), 0u);
    t.steps = 5;
    EXPECT_EQ(steps_metric(t), 5u);
}

TEST(Metrics, MatchBruteForceOnRandomPatches) {
    StableRng rng(11);
    auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 1500; ++i) {
        auto a = ltc::testing::random_patch(rng);
        auto o = ltc::testing::random_patch(rng, 6, true);
        auto pa = parse_patch(a.text), po = parse_patch(o.text);
        std::size_t inter = 0;
        for (const auto& f : a.files) inter += o.files.count(f);
        std::size_t uni = a.files.size() + o.files.size() - inter;
        Rational iou = uni == 0 ? Rational(1) : Rational(static_cast<std::int64_t>(inter), static_cast<std::int64_t>(uni));
        ASSERT_EQ(file_iou(pa, po), iou) << a.text << "\n" << o.text;
        ASSERT_EQ(file_iou(po, pa), iou);
        ASSERT_GE(iou, Rational(0));
        ASSERT_LE(iou, Rational(1));
        ASSERT_EQ(iou == Rational(1), a.files == o.files);
        auto dev = Rational(static_cast<std::int64_t>(a.changed_lines) - static_cast<std::int64_t>(o.changed_lines),
                            static_cast<std::int64_t>(o.changed_lines));
        ASSERT_EQ(line_deviation(pa, po), dev) << a.text << "\n" << o.text;
        ASSERT_GE(dev, Rational(-1));
    }
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 10.0);
}

TEST(Judge, DeanonymizationRoundTrip) {
    for (auto order : {Order::skill_first, Order::baseline_first}) {
        for (char l : {'A', 'B'}) {
            auto w = deanonymize(l, order);
            // The letter the condition was shown under, recovered from the permutation.
            char shown = (w == Winner::skill) == (order == Order::skill_first) ? 'A' : 'B';
            EXPECT_EQ(shown, l);
        }
    }
    EXPECT_EQ(deanonymize('A', Order::skill_first), Winner::skill);
    EXPECT_EQ(deanonymize('A', Order::baseline_first), Winner::baseline);
}

TEST(Judge, AlwaysAExposesPositionBias) {
    TestGateway gw;
    gw.register_backend("j", constant("A"));
    auto vs = judge_pair(spec("test-001"), patch_of("a.py", 4), patch_of("b.py", 1), gw, "j");
    ASSERT_EQ(vs.size(), 10u);
    for (const auto& v : vs) {
        ASSERT_TRUE(v.winner);
        EXPECT_EQ(*v.winner, v.order == Order::skill_first ? Winner::skill : Winner::baseline);
    }
}

TEST(Judge, JsonTieUnparseableAndMissing) {
    TestGateway gw;
    gw.register_backend("tie", constant(R"({"winner": "tie", "rationale": "same"})"));
    gw.register_backend("junk", constant("I cannot decide"));
    auto offline = std::make_shared<OfflineBackend>();
    gw.register_backend("down", offline);
    auto t = judge_pair(spec("t"), Patch{}, Patch{}, gw, "tie");
    EXPECT_EQ(*t[0].winner, Winner::tie);
    EXPECT_EQ(t[0].rationale, "same");
    auto j = judge_pair(spec("t"), Patch{}, Patch{}, gw, "junk");
    EXPECT_EQ(*j[0].winner, Winner::tie);
    EXPECT_EQ(j[0].flags, std::vector<std::string>{"unparseable_reply"});
    auto d = judge_pair(spec("t"), Patch{}, Patch{}, gw, "down");
    EXPECT_FALSE(d[0].winner);
    auto rt = JudgeVerdict::from_json(d[0].to_json());
    EXPECT_FALSE(rt.winner);
    EXPECT_EQ(rt.order, d[0].order);
}

TEST(Aggregate, HandCountedRatesAndAccounting) {
    std::vector<TaskPair> pairs;
    std::vector<JudgeVerdict> vs;
    const std::vector<Winner> pattern{Winner::skill, Winner::skill, Winner::skill, Winner::skill, Winner::skill,
                                      Winner::baseline, Winner::baseline, Winner::tie, Winner::tie, Winner::tie};
    for (int i = 0; i < 5; ++i) {
        auto id = "t" + std::to_string(i);
        pairs.push_back({{id, 1, 1, 0, {}}, {id, 0, 1, 0, {}}});
        for (int o = 0; o < 2; ++o)
            vs.push_back({id, "j", Dimension::q2, o ? Order::baseline_first : Order::skill_first,
                          pattern[static_cast<std::size_t>(2 * i + o)], "", {}});
    }
    vs.push_back({"t0", "j", Dimension::q1, Order::skill_first, std::nullopt, "", {}});
    auto r = aggregate("x", pairs, vs);
    const auto& q2 = r.per_judge["j"][Dimension::q2];
    EXPECT_EQ(q2.skill, Rational(1, 2));
    EXPECT_EQ(q2.baseline, Rational(1, 5));
    EXPECT_EQ(q2.tie, Rational(3, 10));
    EXPECT_EQ(q2.counted + q2.missing, 10u);
    EXPECT_EQ(r.per_judge["j"][Dimension::q1].missing, 1u);
    EXPECT_EQ(r.per_judge["j"][Dimension::q1].counted, 0u);
    EXPECT_EQ(q2.skill + q2.baseline + q2.tie, Rational(1));

    // Order-invariant.
    std::reverse(pairs.begin(), pairs.end());
    std::reverse(vs.begin(), vs.end());
    EXPECT_EQ(aggregate("x", pairs, vs).to_json(), r.to_json());
    EXPECT_THROW(aggregate("x", {}, vs), StageError);
}

TEST(Aggregate, IdenticalJudgesAgreeFully) {
    TestGateway gw;
    gw.register_backend("j1", constant("A"));
    gw.register_backend("j2", constant("A"));
    std::vector<TaskPair> pairs;
    std::vector<JudgeVerdict> vs;
    for (int i = 0; i < 4; ++i) {
        auto s = spec("t" + std::to_string(i));
        pairs.push_back({{s.task_id, 1, 1, 0, {}}, {s.task_id, 1, 1, 0, {}}});
        for (const auto* j : {"j1", "j2"}) {
            auto v = judge_pair(s, patch_of("a.py", 1), patch_of("a.py", 2), gw, j);
            vs.insert(vs.end(), v.begin(), v.end());
        }
    }
    auto r = aggregate("x", pairs, vs);
    ASSERT_TRUE(r.agreement);
    EXPECT_EQ(*r.agreement, Rational(1));
    for (auto d : kDimensions) {
        EXPECT_EQ(r.per_judge["j1"][d].skill, Rational(1, 2));
        EXPECT_EQ(r.per_judge["j1"][d].baseline, Rational(1, 2));
        EXPECT_EQ(r.per_judge["j1"][d].tie, Rational(0));
    }
}

TEST(Report, FixtureReproducesPinnedRows) {
    auto start = std::chrono::steady_clock::now();
    auto r = load_report(fs::path(LTC_FIXTURES_DIR) / "report_seq_all");
    auto md = render_summary({r});
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1.0);
    EXPECT_NE(md.find("| `seq-all` | **80%** / 61% | **56.8** / 71.9 | **0.69** / 1.59 |"), std::string::npos) << md;
    EXPECT_NE(md.find("| Q2: Logic Similarity | **50%** | 25% | 25% |"), std::string::npos) << md;
    EXPECT_NE(md.find("| `seq-all` | **55%** | **60%** |"), std::string::npos) << md;
    EXPECT_NE(md.find("| Setting | claude Judge | gemini Judge |"), std::string::npos);
}

TEST(Report, BoldFollowsDisplayedValues) {
    AggregateReport r;
    r.setting = "s";
    r.iou_skill = Rational(7101, 10000);  // 71% either way
    r.iou_baseline = Rational(7099, 10000);
    r.steps_skill = 75;
    r.steps_baseline = Rational(764, 10);
    r.deviation_skill = Rational(122, 100);
    r.deviation_baseline = Rational(-113, 100);
    auto md = render_summary({r});
    EXPECT_NE(md.find("| `s` | 71% / 71% | **75.0** / 76.4 | 1.22 / **-1.13** |"), std::string::npos) << md;
}

TEST(Evaluate, EndToEndFromRunDirectories) {
    TempDir dir;
    auto task = spec("test-001");
    auto write_run = [&](const fs::path& run, const std::string& cond, const Patch& p, int steps) {
        auto d = run / "solve" / cond / "test-001";
        ltc::testing::write(d / "final.patch", serialize_patch(p));
        ltc::testing::write(d / "meta.json", json{{"task_id", "test-001"}, {"steps", steps}}.dump());
        ltc::testing::write(d / "trajectory.jsonl", "");
    };
    write_run(dir / "skill", "skill", patch_of("a.py", 4), 3);
    write_run(dir / "base", "baseline", patch_of("b.py", 8), 9);
    TestGateway gw;
    gw.register_backend("j", constant("A"));
    EvaluateOptions opt{dir / "skill", dir / "base", {"j"}, "seq-all", dir / "report"};
    auto r = evaluate_runs({TestTask(task)}, gw, opt);
    EXPECT_EQ(r.iou_skill, Rational(1));
    EXPECT_EQ(r.iou_baseline, Rational(0));
    EXPECT_EQ(r.deviation_baseline, Rational(1));
    EXPECT_EQ(r.steps_skill, Rational(3));
    auto md = read_file(dir / "report/summary.md");
    std::size_t tables = 0;
    for (const auto& line : split_lines(md)) tables += line.rfind("|---", 0) == 0;
    EXPECT_EQ(tables, 3u);
    EXPECT_EQ(split_lines(read_file(dir / "report/judge.jsonl")).size(), 10u);
    auto metrics = json::parse(read_file(dir / "report/metrics.json"));
    EXPECT_EQ(metrics["tasks"][0]["baseline"]["line_deviation"], "1");
    EXPECT_EQ(load_report(dir / "report").to_json(), r.to_json());
}
