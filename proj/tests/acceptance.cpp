// Acceptance checks, one line per criterion. Exit status is the number of
// failed criteria.

#include "ltc/apply.hpp"
#include "ltc/cli.hpp"
#include "ltc/evaluator.hpp"
#include "ltc/skill_memory.hpp"

#include "test_support.hpp"

#include <chrono>
#include <functional>
#include <iostream>
#include <sstream>

using namespace ltc;
using ltc::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void fail(const std::string& why) {
        if (ok) detail = why;
        ok = false;
    }
    void expect(bool cond, const std::string& why) {
        if (!cond) fail(why);
    }
};

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt_seconds(double s) {
    std::ostringstream o;
    o.precision(3);
    o << std::fixed << s << "s";
    return o.str();
}

int ltc_cmd(const std::vector<std::string>& args, std::string* err_out = nullptr) {
    std::ostringstream out, err;
    int code = cli::run(args, out, err);
    if (err_out) *err_out = err.str();
    return code;
}

/// One synthetic repository and mined dataset shared by criteria 4 to 8.
struct Workspace {
    TempDir dir;
    fs::path repo = dir / "repo";
    fs::path cache = dir / "cache";

    Workspace() { ltc::testing::make_synthetic_repo(repo); }

    std::vector<std::string> common(std::vector<std::string> args) const {
        args.insert(args.end(), {"--config", ltc::testing::e2e_config().string(), "--cache-dir", cache.string()});
        return args;
    }

    fs::path mine(const std::string& name, std::vector<std::string> extra = {}) const {
        auto out = dir / name;
        std::vector<std::string> args{"mine", "--repo", repo.string(), "--out", out.string()};
        args.insert(args.end(), extra.begin(), extra.end());
        std::string err;
        if (ltc_cmd(common(args), &err) != 0) throw std::runtime_error("mine failed: " + err);
        return out;
    }
};

// --- 1 --------------------------------------------------------------------

Check metrics_match_brute_force() {
    Check c;
    Clock clock;
    StableRng rng(20261019);
    int n = 0;
    for (; n < 1200 && c.ok; ++n) {
        auto a = ltc::testing::random_patch(rng);
        auto o = ltc::testing::random_patch(rng, 6, true);
        auto pa = parse_patch(a.text), po = parse_patch(o.text);
        std::size_t inter = 0;
        for (const auto& f : a.files) inter += o.files.count(f);
        std::size_t uni = a.files.size() + o.files.size() - inter;
        Rational iou = uni == 0 ? Rational(1) : Rational(static_cast<std::int64_t>(inter), static_cast<std::int64_t>(uni));
        Rational dev(static_cast<std::int64_t>(a.changed_lines) - static_cast<std::int64_t>(o.changed_lines),
                     static_cast<std::int64_t>(o.changed_lines));
        c.expect(file_iou(pa, po) == iou, "file_iou mismatch on pair " + std::to_string(n));
        c.expect(line_deviation(pa, po) == dev, "line_deviation mismatch on pair " + std::to_string(n));
    }
    double t = clock.seconds();
    c.expect(t < 10.0, "took " + fmt_seconds(t));
    if (c.ok) c.detail = std::to_string(n) + " pairs in " + fmt_seconds(t);
    return c;
}

// --- 2 --------------------------------------------------------------------

Check pinned_rows_reproduce() {
    Check c;
    TempDir d;
    Clock clock;
    auto out = d / "summary.md";
    std::string err;
    int code = ltc_cmd({"report", (fs::path(LTC_FIXTURES_DIR) / "report_seq_all").string(), "--out", out.string()}, &err);
    double t = clock.seconds();
    if (code != 0) {
        c.fail("report exited " + std::to_string(code) + ": " + err);
        return c;
    }
    auto md = read_file(out);
    c.expect(md.find("| `seq-all` | **80%** / 61% | **56.8** / 71.9 | **0.69** / 1.59 |") != std::string::npos,
             "metrics row differs");
    c.expect(md.find("| Q2: Logic Similarity | **50%** | 25% | 25% |") != std::string::npos, "Q2 row differs");
    c.expect(t < 1.0, "took " + fmt_seconds(t));
    if (c.ok) c.detail = "both rows in " + fmt_seconds(t);
    return c;
}

// --- 3 --------------------------------------------------------------------

Check temporal_split_is_sound() {
    Check c;
    StableRng rng(3);
    int split = 0, rejected = 0;
    for (int h = 0; h < 100 && c.ok; ++h) {
        std::vector<CommitRecord> recs;
        auto n = 4 + rng.below(60);
        for (std::uint64_t i = 0; i < n; ++i) {
            CommitRecord r;
            r.commit_id = "c" + std::to_string(rng.below(1u << 30));
            r.parent_id = "p";
            r.author_time = static_cast<std::int64_t>(rng.below(20));
            r.quality = {Quality::Kind::accepted, "why"};
            r.category = std::string(1, static_cast<char>('a' + rng.below(4)));
            recs.push_back(std::move(r));
        }
        Cutoff cut;
        if (rng.below(2)) cut.fraction = 0.05 + 0.9 * static_cast<double>(rng.below(1000)) / 1000.0;
        else cut.timestamp = static_cast<std::int64_t>(rng.below(22)) - 1;
        try {
            auto s = split_and_sample(recs, cut, {1 + rng.below(30), 1 + rng.below(10)}, static_cast<std::uint64_t>(h));
            std::int64_t max_learn = INT64_MIN, min_test = INT64_MAX;
            for (const auto& t : s.learn) max_learn = std::max(max_learn, t.author_time);
            for (const auto& t : s.test) min_test = std::min(min_test, t.author_time);
            c.expect(max_learn < min_test, "history " + std::to_string(h) + " overlaps");
            ++split;
        } catch (const StageError&) {
            ++rejected;  // degenerate cutoff
        }
    }
    TaskSpec l{"learn-001", "a", Pool::learn, "x", "q", "p", {}, 200};
    TaskSpec t{"test-001", "b", Pool::test, "x", "q", "p", {}, 200};
    auto throws = [](const std::function<void()>& f) {
        try {
            f();
        } catch (const StageError&) {
            return true;
        }
        return false;
    };
    c.expect(throws([&] { verify_temporal_split({l}, {t}); }), "equal timestamps accepted");
    TaskSpec later = t;
    later.author_time = 150;
    c.expect(throws([&] { verify_temporal_split({l}, {later}); }), "inverted split accepted");
    c.expect(throws([&] { LearnTask{t}; }), "test task accepted as learn task");
    c.expect(throws([&] { TestTask{l}; }), "learn task accepted as test task");
    if (c.ok)
        c.detail = std::to_string(split) + " histories split, " + std::to_string(rejected) +
                   " degenerate cutoffs rejected, 4 counterexamples rejected";
    return c;
}

// --- 4 --------------------------------------------------------------------

Check injections_abort(const Workspace& ws, const fs::path& dataset) {
    Check c;
    auto ds = load_dataset(dataset);
    TempDir d;
    int variant = 0, copies = 0;

    auto fresh_copy = [&] {
        auto copy = d / ("v" + std::to_string(copies++));
        fs::create_directories(copy);
        fs::copy(dataset, copy / "ds", fs::copy_options::recursive);
        return copy;
    };
    auto inject_query = [&](const fs::path& ds_dir, const std::string& task_id, const std::string& fragment) {
        auto path = ds_dir / "tasks" / (task_id + ".json");
        auto j = json::parse(read_file(path));
        j["query"] = j["query"].get<std::string>() + "\n\n" + fragment;
        write_file_atomic(path, j.dump(2));
    };
    auto run_expect_4 = [&](std::vector<std::string> args, const std::string& what) {
        std::string err;
        int code = ltc_cmd(ws.common(std::move(args)), &err);
        c.expect(code == cli::kAuditViolation, what + " exited " + std::to_string(code) + ": " + err);
        ++variant;
    };

    std::vector<std::pair<TaskSpec, std::string>> learn_cases, test_cases;
    for (const auto& t : ds.learn)
        for (const auto& f : ltc::testing::guarded_fragments(ws.repo, t.spec(), d / "snap"))
            learn_cases.emplace_back(t.spec(), f);
    for (const auto& t : ds.test)
        for (const auto& f : ltc::testing::guarded_fragments(ws.repo, t.spec(), d / "snap"))
            test_cases.emplace_back(t.spec(), f);
    if (learn_cases.empty() || test_cases.empty()) {
        c.fail("no guarded oracle lines in the dataset");
        return c;
    }

    const std::vector<std::string> conditions{"seq-all", "seq-bycat", "par-all", "par-bycat"};
    // Learning: oracle line planted in a learn task's query.
    for (std::size_t i = 0; i < 18; ++i) {
        const auto& [task, frag] = learn_cases[i % learn_cases.size()];
        auto w = fresh_copy();
        inject_query(w / "ds", task.task_id, frag);
        run_expect_4({"learn", "--dataset", (w / "ds").string(), "--condition", conditions[i % 4], "--out", w.string()},
                     "learn variant " + std::to_string(variant));
    }
    // Solving, both conditions: oracle line planted in a test task's query.
    auto base = fresh_copy();
    std::string err;
    if (ltc_cmd(ws.common({"learn", "--dataset", dataset.string(), "--condition", "seq-all", "--out", base.string(),
                           "--run-id", "mem"}),
                &err) != 0) {
        c.fail("clean learn failed: " + err);
        return c;
    }
    auto memory = base / "memory/mem";
    for (std::size_t i = 0; i < 16; ++i) {
        const auto& [task, frag] = test_cases[i % test_cases.size()];
        auto w = fresh_copy();
        inject_query(w / "ds", task.task_id, frag);
        std::vector<std::string> args{"solve", "--dataset", (w / "ds").string(), "--out", w.string()};
        if (i % 2) {
            args.insert(args.end(), {"--condition", "skill", "--memory", memory.string()});
        } else {
            args.insert(args.end(), {"--condition", "baseline"});
        }
        run_expect_4(args, "solve variant " + std::to_string(variant));
    }
    // Solving: oracle line planted in the skill memory itself.
    for (std::size_t i = 0; i < 16; ++i) {
        const auto& [task, frag] = test_cases[i % test_cases.size()];
        auto w = fresh_copy();
        fs::copy(memory, w / "mem", fs::copy_options::recursive);
        auto doc = load_latest(w / "mem");
        UpdateOp op;
        op.op = OpKind::create;
        op.skill_id = "planted-" + std::to_string(i);
        op.payload = {{"title", "Planted"}, {"body", "Write exactly:\n" + frag}, {"kind", "other"}, {"category", task.category}};
        save_version(w / "mem", apply_update(doc, {op}, "planted"));
        run_expect_4({"solve", "--dataset", (w / "ds").string(), "--condition", "skill", "--memory",
                      (w / "mem").string(), "--out", w.string()},
                     "memory variant " + std::to_string(variant));
    }
    if (c.ok) c.detail = std::to_string(variant) + " variants exited 4";
    else c.detail += " (" + std::to_string(variant) + " variants)";
    c.expect(variant >= 50, "only " + std::to_string(variant) + " variants");
    return c;
}

// --- 5 --------------------------------------------------------------------

Check replay_is_byte_exact(const Workspace& ws, const std::vector<fs::path>& datasets) {
    Check c;
    TempDir d;
    int runs = 0, docs = 0;
    for (std::size_t k = 0; k < datasets.size(); ++k) {
        for (const auto* cond : {"seq-all", "seq-bycat", "par-all", "par-bycat"}) {
            auto id = std::string(cond) + "-" + std::to_string(k);
            std::string err;
            if (ltc_cmd(ws.common({"learn", "--dataset", datasets[k].string(), "--condition", cond, "--out",
                                   d.path().string(), "--run-id", id}),
                        &err) != 0) {
                c.fail("learn " + id + " failed: " + err);
                continue;
            }
            ++runs;
            auto mem = d / "memory" / id;
            c.expect(ltc_cmd({"replay", "--memory", mem.string()}, &err) == 0, "replay " + id + ": " + err);
            auto index = json::parse(read_file(mem / "memory.json"));
            for (const auto& [_, entry] : index["documents"].items()) {
                auto dir = mem / entry["path"].get<std::string>();
                auto log = load_log(dir);
                auto rebuilt = replay(log);
                auto stored = read_file(dir / ("doc_v" + std::to_string(rebuilt.version) + ".json"));
                c.expect(serialize_document(rebuilt) == stored, "document differs in " + dir.string());
                ++docs;
            }
        }
    }
    c.expect(runs >= 10, "only " + std::to_string(runs) + " learn runs");
    if (c.ok) c.detail = std::to_string(runs) + " learn runs, " + std::to_string(docs) + " documents identical";
    return c;
}

// --- 6 --------------------------------------------------------------------

std::size_t count_tables(const std::string& md) {
    std::size_t n = 0;
    for (const auto& line : split_lines(md))
        if (line.rfind("|---", 0) == 0) ++n;
    return n;
}

Check end_to_end(const Workspace& ws) {
    Check c;
    TempDir d;
    Clock clock;
    auto w = d.path().string();
    auto step = [&](std::vector<std::string> args) {
        std::string err;
        int code = ltc_cmd(ws.common(args), &err);
        if (code != 0) c.fail(args[0] + " exited " + std::to_string(code) + ": " + err);
        return code == 0;
    };
    auto dataset = d / "dataset";
    if (!step({"mine", "--repo", ws.repo.string(), "--out", dataset.string()})) return c;
    auto ds = load_dataset(dataset);

    const std::vector<std::string> conditions{"seq-all", "seq-bycat", "par-all", "par-bycat"};
    for (const auto& cond : conditions)
        if (!step({"learn", "--dataset", dataset.string(), "--condition", cond, "--out", w, "--run-id", "learn-" + cond}))
            return c;
    if (!step({"solve", "--dataset", dataset.string(), "--condition", "baseline", "--out", w, "--run-id", "base"}))
        return c;
    std::vector<std::string> reports;
    for (const auto& cond : conditions) {
        if (!step({"solve", "--dataset", dataset.string(), "--condition", "skill", "--memory",
                   (d / "memory" / ("learn-" + cond)).string(), "--out", w, "--run-id", "skill-" + cond}))
            return c;
        if (!step({"evaluate", "--skill-run", (d / "runs" / ("skill-" + cond)).string(), "--baseline-run",
                   (d / "runs/base").string(), "--out", w}))
            return c;
        reports.push_back((d / "reports" / ("skill-" + cond + "__base")).string());
    }
    std::vector<std::string> report_args{"report"};
    report_args.insert(report_args.end(), reports.begin(), reports.end());
    report_args.insert(report_args.end(), {"--out", (d / "summary.md").string()});
    if (ltc_cmd(report_args) != 0) c.fail("combined report failed");
    double t = clock.seconds();

    c.expect(fs::exists(dataset / "manifest.json"), "dataset manifest missing");
    for (const auto& cond : conditions) {
        for (const auto& run : {"learn-" + cond, "skill-" + cond})
            c.expect(fs::exists(d / "runs" / run / "manifest.json"), run + " manifest missing");
    }
    c.expect(fs::exists(d / "runs/base/manifest.json"), "baseline manifest missing");
    for (const auto& r : reports) {
        c.expect(fs::exists(fs::path(r) / "manifest.json"), r + " manifest missing");
        auto md = read_file(fs::path(r) / "summary.md");
        c.expect(count_tables(md) == 3, r + " summary has " + std::to_string(count_tables(md)) + " tables");
    }

    // Sequential runs: one version per consumed learn commit.
    auto seq_all = json::parse(read_file(d / "memory/learn-seq-all/memory.json"));
    c.expect(seq_all["documents"]["*"]["version"].get<std::size_t>() == ds.learn.size(), "seq-all version mismatch");
    std::map<std::string, std::size_t> per_cat;
    for (const auto& t : ds.learn) ++per_cat[t->category];
    auto bycat = json::parse(read_file(d / "memory/learn-seq-bycat/memory.json"));
    for (const auto& [cat, n] : per_cat) {
        auto& doc = bycat["documents"][cat];
        c.expect(doc.is_object() && doc["version"].get<std::size_t>() == n, "seq-bycat version mismatch for " + cat);
    }
    c.expect(t < 60.0, "took " + fmt_seconds(t));
    if (c.ok)
        c.detail = "mine, 4 learn, 5 solve, 4 evaluate in " + fmt_seconds(t) + "; seq-all v" +
                   std::to_string(ds.learn.size());
    return c;
}

// --- 7 --------------------------------------------------------------------

Check allocation_fixtures() {
    Check c;
    auto fixtures = json::parse(read_file(fs::path(LTC_FIXTURES_DIR) / "allocations.json"));
    for (const auto& f : fixtures) {
        std::vector<Stratum> strata;
        for (const auto& s : f["strata"]) strata.push_back({s["label"], s["population"], s["most_recent_time"], s["commit"]});
        auto got = largest_remainder(strata, f["quota"]);
        c.expect(json(got) == f["expected"], "fixture " + f["name"].get<std::string>() + " gave " + json(got).dump());
    }
    c.expect(fixtures.size() >= 20, "only " + std::to_string(fixtures.size()) + " fixtures");
    std::vector<Stratum> ab{{"A", 6, 10, "a"}, {"B", 2, 5, "b"}};
    auto got = largest_remainder(ab, 4);
    c.expect(got == std::map<std::string, std::size_t>{{"A", 3}, {"B", 1}}, "{A:6,B:2} quota 4 gave " + json(got).dump());
    if (c.ok) c.detail = std::to_string(fixtures.size()) + " fixtures";
    return c;
}

// --- 8 --------------------------------------------------------------------

Check diff_round_trip_and_apply(const Workspace& ws) {
    Check c;
    auto files = ltc::testing::fixture_diffs();
    for (const auto& p : files) {
        auto text = read_file(p);
        try {
            auto patch = parse_patch(text);
            c.expect(serialize_patch(patch) == text, p.filename().string() + " does not round trip");
            c.expect(parse_patch(serialize_patch(patch)) == patch, p.filename().string() + " reparses differently");
        } catch (const std::exception& e) {
            c.fail(p.filename().string() + ": " + e.what());
        }
    }
    c.expect(files.size() >= 40, "only " + std::to_string(files.size()) + " fixtures");

    TempDir d;
    auto commits = split_lines(git(ws.repo, {"rev-list", "HEAD"}));
    std::size_t applied = 0;
    for (const auto& commit : commits) {
        if (trim(commit).empty()) continue;
        auto parents = split(std::string(trim(git(ws.repo, {"rev-list", "--parents", "-n", "1", commit}))), ' ');
        std::string parent = parents.size() > 1 ? parents[1] : kEmptyTree;
        auto text = git(ws.repo, {"diff", "--no-color", "--no-ext-diff", "--no-textconv", "-M", "--src-prefix=a/",
                                  "--dst-prefix=b/", parent, commit, "--"});
        auto tree = d / commit;
        materialize_tree(ws.repo, parent, tree);
        auto result = apply_patch(tree, parse_patch(text));
        if (!result.ok()) {
            c.fail("apply conflict on " + commit + ": " + result.conflicts.front().reason);
            continue;
        }
        auto expected = std::string(trim(git(ws.repo, {"rev-parse", commit + "^{tree}"})));
        c.expect(git_tree_hash(tree) == expected, "tree hash differs for " + commit);
        fs::remove_all(tree);
        ++applied;
    }
    if (c.ok)
        c.detail = std::to_string(files.size()) + " fixtures round trip; " + std::to_string(applied) +
                   " commits reproduce their tree";
    return c;
}

// --- 9 --------------------------------------------------------------------

Check judge_symmetry() {
    Check c;
    Gateway gw(Gateway::Options{});
    auto always_a = ScriptedBackend::from_json({{"entries", json::array({{{"reply", "A"}}})}});
    gw.register_backend("a1", always_a);
    gw.register_backend("a2", ScriptedBackend::from_json({{"entries", json::array({{{"reply", "A"}}})}}));

    auto patch_of = [](const std::string& path, int added) {
        std::string t = "diff --git a/" + path + " b/" + path + "\n--- a/" + path + "\n+++ b/" + path +
                        "\n@@ -1,1 +1," + std::to_string(added + 1) + " @@\n keep\n";
        for (int i = 0; i < added; ++i) t += "+line " + std::to_string(i) + "\n";
        return parse_patch(t);
    };
    std::vector<TaskPair> pairs;
    std::vector<JudgeVerdict> verdicts;
    for (int i = 0; i < 6; ++i) {
        TaskSpec s{"test-00" + std::to_string(i), "c", Pool::test, "feature", "Do the thing", "p", patch_of("a.py", 3), 10};
        pairs.push_back({{s.task_id, 1, 1, 0, {}}, {s.task_id, 1, 1, 0, {}}});
        for (const auto* j : {"a1", "a2"}) {
            auto v = judge_pair(s, patch_of("a.py", 2), patch_of("b.py", 4), gw, j);
            verdicts.insert(verdicts.end(), v.begin(), v.end());
        }
    }
    auto r = aggregate("always-a", pairs, verdicts);
    for (const auto& j : {"a1", "a2"}) {
        for (auto dim : kDimensions) {
            const auto& rates = r.per_judge[j][dim];
            c.expect(rates.skill == Rational(1, 2) && rates.baseline == Rational(1, 2) && rates.tie == Rational(0),
                     std::string(j) + " " + std::string(to_string(dim)) + " is not 50/50");
        }
    }
    c.expect(r.agreement && *r.agreement == Rational(1), "identical judges disagree");
    if (c.ok) c.detail = "50/50 on all 5 dimensions; agreement 100%";
    return c;
}

}  // namespace

int main() {
    int failed = 0;
    auto report = [&](int n, const std::function<Check()>& f) {
        Check c;
        try {
            c = f();
        } catch (const std::exception& e) {
            c.fail(std::string("exception: ") + e.what());
        }
        std::cout << "criterion " << n << ": " << (c.ok ? "PASS" : "FAIL") << " (" << c.detail << ")" << std::endl;
        if (!c.ok) ++failed;
    };

    report(1, metrics_match_brute_force);
    report(2, pinned_rows_reproduce);
    report(3, temporal_split_is_sound);

    std::unique_ptr<Workspace> ws;
    fs::path main_ds;
    std::vector<fs::path> datasets;
    try {
        ws = std::make_unique<Workspace>();
        main_ds = ws->mine("dataset");
        datasets = {main_ds, ws->mine("dataset-b", {"--seed", "8", "--learn-quota", "5"}),
                    ws->mine("dataset-c", {"--seed", "9", "--learn-quota", "4", "--test-quota", "2"})};
    } catch (const std::exception& e) {
        std::cout << "workspace setup failed: " << e.what() << std::endl;
    }
    auto needs_ws = [&](const std::function<Check()>& f) {
        return [&, f] {
            if (!ws || datasets.empty()) {
                Check c;
                c.fail("no synthetic workspace");
                return c;
            }
            return f();
        };
    };
    report(4, needs_ws([&] { return injections_abort(*ws, main_ds); }));
    report(5, needs_ws([&] { return replay_is_byte_exact(*ws, datasets); }));
    report(6, needs_ws([&] { return end_to_end(*ws); }));
    report(7, allocation_fixtures);
    report(8, needs_ws([&] { return diff_round_trip_and_apply(*ws); }));
    report(9, judge_symmetry);
    return failed;
}
