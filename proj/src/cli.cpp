#include "ltc/cli.hpp"

#include "ltc/config.hpp"
#include "ltc/evaluator.hpp"
#include "ltc/git.hpp"
#include "ltc/onboarding.hpp"
#include "ltc/solver.hpp"
#include "ltc/util.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace ltc::cli {

namespace fs = std::filesystem;

namespace {

/// Flags shared by every stage that reads the config file.
struct Common {
    std::string config;
    std::string out;
    std::string run_id;
    json overrides = json::object();
};

template <typename T>
void override_flag(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<T>(flag, [&c, key](const T& v) { c.overrides[key] = v; }, help);
}

void add_config_flags(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON config file");
    override_flag<std::uint64_t>(app, c, "--seed", "seed", "Sampling seed");
    override_flag<std::string>(app, c, "--cache-dir", "cache_dir", "Model reply cache (default: cache/ beside the config)");
}

json run_manifest(const std::string& run_id, const std::string& stage, const Config& cfg, std::int64_t started) {
    return {{"run_id", run_id}, {"stage", stage}, {"config", cfg.to_json()}, {"started", format_utc(started)}};
}

void finish_manifest(json& manifest, const fs::path& dir, const json& outcome) {
    manifest["finished"] = format_utc(now_unix());
    manifest["outcome"] = outcome;
    fs::create_directories(dir);
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

json gateway_stats(const Gateway& gw) {
    auto s = gw.stats();
    return {{"requests", s.requests},
            {"cache_hits", s.cache_hits},
            {"backend_calls", s.backend_calls},
            {"audit_required", s.audit_required},
            {"audited", s.audited}};
}

void assert_audit_coverage(const Gateway& gw) {
    auto s = gw.stats();
    if (s.audited != s.audit_required)
        throw AuditViolation("prompt audit ran on " + std::to_string(s.audited) + " of " +
                             std::to_string(s.audit_required) + " requests that required it");
}

std::string repo_head(const fs::path& repo) {
    try {
        return std::string(trim(git(repo, {"rev-parse", "HEAD"})));
    } catch (const Error&) {
        return "";
    }
}

std::string run_id_or_new(const std::string& id) {
    if (id.empty()) return make_run_id();
    if (id.find('/') != std::string::npos || id == "." || id == "..") throw ConfigError("invalid run id '" + id + "'");
    return id;
}

Gateway::Options gateway_options(const Config& cfg, fs::path transcript) {
    Gateway::Options o;
    o.cache_dir = cfg.cache_dir;
    o.transcript_path = std::move(transcript);
    return o;
}

int cmd_mine(Common& c, std::ostream& out) {
    if (c.out.empty()) throw ConfigError("mine needs --out <dataset dir>");
    auto cfg = load_config(c.config, c.overrides);
    if (cfg.repository.empty()) throw ConfigError("no repository: set 'repository' in the config or pass --repo");
    if (!is_git_repository(cfg.repository)) throw ConfigError(cfg.repository.string() + " is not a git repository");
    auto started = now_unix();
    fs::path dataset = c.out;
    fs::create_directories(dataset);
    auto gw = build_gateway(cfg, {cfg.miner_backend}, gateway_options(cfg, dataset / "transcripts.jsonl"));
    auto report = mine_repository(cfg.mine_options(), *gw, dataset, cfg.to_json());

    // The dataset manifest doubles as the mine run manifest.
    auto manifest = json::parse(read_file(dataset / "manifest.json"));
    auto run = run_manifest(run_id_or_new(c.run_id), "mine", cfg, started);
    run["head"] = repo_head(cfg.repository);
    run["finished"] = format_utc(now_unix());
    run["outcome"] = {{"counts", report.counts}, {"warnings", report.warnings}, {"gateway", gateway_stats(*gw)}};
    manifest["run"] = run;
    write_file_atomic(dataset / "manifest.json", manifest.dump(2) + "\n");
    out << "dataset: " << dataset.string() << "\n";
    for (const auto& [k, v] : report.counts) out << "  " << k << ": " << v << "\n";
    for (const auto& w : report.warnings) out << "warning: " << w << "\n";
    return kOk;
}

int cmd_learn(Common& c, const std::string& dataset_dir, const std::string& condition, std::ostream& out) {
    auto cond = Condition::parse(condition);
    auto cfg = load_config(c.config, c.overrides);
    auto dataset = load_dataset(dataset_dir);
    auto started = now_unix();
    auto run_id = run_id_or_new(c.run_id);
    fs::path root = fs::absolute(c.out.empty() ? fs::current_path() : fs::path(c.out)).lexically_normal();
    auto run_dir = root / "runs" / run_id;
    auto memory_dir = root / "memory" / run_id;
    if (fs::exists(run_dir / "manifest.json")) throw ConfigError("run " + run_id + " already exists under " + root.string());
    fs::create_directories(run_dir);

    auto gw = build_gateway(cfg, {cfg.agent_backend, cfg.reflector_backend},
                            gateway_options(cfg, run_dir / "transcripts.jsonl"));
    LearningConfig lc;
    lc.condition = cond;
    lc.agent.backend_id = cfg.agent_backend;
    lc.agent.max_steps = cfg.max_steps;
    lc.reflect_backend = cfg.reflector_backend;
    lc.merge_backend = cfg.reflector_backend;
    lc.reflection_retry = cfg.reflection_retry;
    lc.render_budget = cfg.render_budget;
    lc.parallelism = cfg.parallelism;
    LearnContext ctx{*gw, dataset.repository, run_dir, lc};

    auto manifest = run_manifest(run_id, "learn", cfg, started);
    manifest["condition"] = cond.name();
    manifest["dataset"] = fs::absolute(dataset_dir).string();
    manifest["dataset_digest"] = dataset_digest(dataset_dir);
    manifest["head"] = repo_head(dataset.repository);
    manifest["memory"] = fs::absolute(memory_dir).string();

    auto index = run_learning(dataset, ctx, memory_dir);
    assert_audit_coverage(*gw);
    fs::remove_all(run_dir / "work");
    finish_manifest(manifest, run_dir, {{"memory_index", index}, {"gateway", gateway_stats(*gw)}});
    out << "run: " << run_id << "\nmemory: " << memory_dir.string() << "\n";
    for (const auto& [label, d] : index["documents"].items())
        out << "  " << label << ": version " << d["version"] << ", " << d["active_entries"] << " active skills\n";
    for (const auto& w : index["warnings"]) out << "warning: " << w.get<std::string>() << "\n";
    return kOk;
}

int cmd_solve(Common& c, const std::string& dataset_dir, const std::string& condition, const std::string& memory,
              std::ostream& out) {
    auto cond = parse_solve_condition(condition);
    if (cond == SolveCondition::baseline && !memory.empty())
        throw ConfigError("the baseline condition runs without memory; drop --memory");
    if (cond == SolveCondition::skill && memory.empty()) throw ConfigError("the skill condition needs --memory <dir>");
    if (cond == SolveCondition::skill && !fs::exists(fs::path(memory) / "memory.json"))
        throw StageError("no learned memory at " + memory + " (memory.json missing); run `ltc learn` first");
    auto cfg = load_config(c.config, c.overrides);
    auto dataset = load_dataset(dataset_dir);
    auto started = now_unix();
    auto run_id = run_id_or_new(c.run_id);
    fs::path root = fs::absolute(c.out.empty() ? fs::current_path() : fs::path(c.out)).lexically_normal();
    auto run_dir = root / "runs" / run_id;
    if (fs::exists(run_dir / "manifest.json")) throw ConfigError("run " + run_id + " already exists under " + root.string());
    fs::create_directories(run_dir);

    std::optional<std::map<std::string, TaskMemory>> mem;
    std::string setting = "baseline";
    if (cond == SolveCondition::skill) {
        mem = load_memory_map(memory, dataset.test);
        setting = json::parse(read_file(fs::path(memory) / "memory.json")).value("condition", "skill");
    }
    auto gw = build_gateway(cfg, {cfg.agent_backend}, gateway_options(cfg, run_dir / "transcripts.jsonl"));
    AgentConfig agent;
    agent.backend_id = cfg.agent_backend;
    agent.max_steps = cfg.max_steps;
    SolveContext ctx{*gw, dataset.repository, run_dir, agent, cfg.render_budget};

    auto manifest = run_manifest(run_id, "solve", cfg, started);
    manifest["condition"] = to_string(cond);
    manifest["setting"] = setting;
    manifest["dataset"] = fs::absolute(dataset_dir).string();
    manifest["dataset_digest"] = dataset_digest(dataset_dir);
    manifest["head"] = repo_head(dataset.repository);
    if (!memory.empty()) manifest["memory"] = fs::absolute(memory).string();

    auto records = run_condition(dataset.test, cond, mem ? &*mem : nullptr, ctx);
    assert_audit_coverage(*gw);
    fs::remove_all(run_dir / "work");
    json tasks = json::array();
    std::size_t failed = 0;
    for (const auto& r : records) {
        tasks.push_back(r.meta());
        failed += !r.error.empty();
    }
    finish_manifest(manifest, run_dir, {{"tasks", tasks}, {"failed", failed}, {"gateway", gateway_stats(*gw)}});
    out << "run: " << run_id << "\n  " << records.size() - failed << " solved, " << failed << " failed\n";
    for (const auto& r : records)
        if (!r.error.empty()) out << "warning: " << r.task_id << ": " << r.error << "\n";
    return kOk;
}

json read_run_manifest(const fs::path& run, const std::string& what) {
    if (!fs::is_directory(run)) throw StageError(what + " run directory " + run.string() + " does not exist; run `ltc solve` first");
    if (!fs::exists(run / "manifest.json"))
        throw StageError(what + " run " + run.string() + " has no manifest.json (incomplete or not a solve run)");
    auto m = json::parse(read_file(run / "manifest.json"));
    if (m.value("stage", "") != "solve") throw StageError(run.string() + " is not a solve run");
    return m;
}

int cmd_evaluate(Common& c, const std::string& skill_run, const std::string& baseline_run,
                 std::vector<std::string> judges, std::string dataset_dir, std::ostream& out) {
    auto skill_m = read_run_manifest(skill_run, "skill");
    auto base_m = read_run_manifest(baseline_run, "baseline");
    if (skill_m.value("condition", "") != "skill") throw StageError(skill_run + " is not a skill-condition solve run");
    if (base_m.value("condition", "") != "baseline")
        throw StageError(baseline_run + " is not a baseline-condition solve run");
    if (skill_m.value("dataset_digest", "") != base_m.value("dataset_digest", ""))
        throw StageError("the two runs were solved on different datasets");
    auto cfg = load_config(c.config, c.overrides);
    if (judges.empty()) judges = cfg.judges;
    if (judges.empty()) throw ConfigError("no judges: pass --judges or set 'judges' in the config");
    if (dataset_dir.empty()) dataset_dir = skill_m.value("dataset", "");
    auto dataset = load_dataset(dataset_dir);
    if (dataset_digest(dataset_dir) != skill_m.value("dataset_digest", ""))
        throw StageError("dataset at " + dataset_dir + " changed since the runs were solved");

    auto started = now_unix();
    auto pair_id = c.run_id.empty() ? skill_m.value("run_id", "skill") + "__" + base_m.value("run_id", "baseline")
                                    : run_id_or_new(c.run_id);
    fs::path root = fs::absolute(c.out.empty() ? fs::current_path() : fs::path(c.out)).lexically_normal();
    auto report_dir = root / "reports" / pair_id;
    fs::create_directories(report_dir);
    auto gw = build_gateway(cfg, judges, gateway_options(cfg, report_dir / "transcripts.jsonl"));

    auto manifest = run_manifest(pair_id, "evaluate", cfg, started);
    manifest["skill_run"] = fs::absolute(skill_run).string();
    manifest["baseline_run"] = fs::absolute(baseline_run).string();
    manifest["judges"] = judges;
    manifest["dataset"] = fs::absolute(dataset_dir).string();
    manifest["dataset_digest"] = skill_m.value("dataset_digest", "");
    manifest["head"] = repo_head(dataset.repository);

    EvaluateOptions opt{skill_run, baseline_run, judges, skill_m.value("setting", "skill"), report_dir};
    auto report = evaluate_runs(dataset.test, *gw, opt);
    finish_manifest(manifest, report_dir, {{"aggregate", report.to_json()}, {"gateway", gateway_stats(*gw)}});
    out << "report: " << report_dir.string() << "\n" << read_file(report_dir / "summary.md");
    return kOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_path, std::ostream& out) {
    std::vector<AggregateReport> reports;
    for (const auto& d : dirs) reports.push_back(load_report(d));
    auto md = render_summary(reports);
    fs::path target = !out_path.empty() ? fs::path(out_path)
                      : dirs.size() == 1 ? fs::path(dirs.front()) / "summary.md"
                                         : fs::current_path() / "summary.md";
    if (fs::is_directory(target)) target /= "summary.md";
    write_file_atomic(target, md);
    out << md;
    return kOk;
}

/// Directories holding a log.jsonl under `memory`: itself, or each category.
std::vector<fs::path> document_dirs(const fs::path& memory) {
    std::vector<fs::path> dirs;
    if (fs::exists(memory / "log.jsonl")) dirs.push_back(memory);
    if (fs::is_directory(memory / "by_category"))
        for (const auto& e : fs::directory_iterator(memory / "by_category"))
            if (fs::exists(e.path() / "log.jsonl")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

int cmd_replay(const std::string& memory, const std::string& out_path, std::ostream& out) {
    auto dirs = document_dirs(memory);
    if (dirs.empty()) throw StageError("no update log under " + memory);
    if (!out_path.empty() && dirs.size() != 1)
        throw ConfigError("--out needs a single document; " + memory + " holds " + std::to_string(dirs.size()));
    bool all_match = true;
    for (const auto& d : dirs) {
        auto doc = replay(load_log(d));
        auto text = serialize_document(doc);
        auto stored_path = d / ("doc_v" + std::to_string(doc.version) + ".json");
        bool match = fs::exists(stored_path) && read_file(stored_path) == text;
        // A later stored version than the log reaches also counts as a mismatch.
        if (fs::exists(d / ("doc_v" + std::to_string(doc.version + 1) + ".json"))) match = false;
        all_match = all_match && match;
        out << fs::relative(d, memory).generic_string() << ": version " << doc.version << ", "
            << doc.active_count() << " active, sha256 " << sha256_hex(text).substr(0, 16) << " "
            << (match ? "matches stored document" : "DIFFERS from stored document") << "\n";
        if (!out_path.empty()) write_file_atomic(out_path, text);
    }
    if (!all_match) throw StageError("replayed document differs from the stored final version");
    return kOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Learn repository conventions from commit history and measure their effect on a coding agent", "ltc"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    Common common;
    std::string dataset, condition, memory, skill_run, baseline_run, out_path;
    std::vector<std::string> judges, report_dirs;

    auto* mine = app.add_subcommand("mine", "Build a dataset of learn/test tasks from a repository's history");
    add_config_flags(mine, common);
    mine->add_option("--out", common.out, "Dataset directory")->required();
    override_flag<std::string>(mine, common, "--repo", "repository", "Repository to mine");
    override_flag<std::string>(mine, common, "--range", "range", "Revision range (default HEAD)");
    override_flag<std::string>(mine, common, "--cutoff", "cutoff", "Unix time, RFC 3339 UTC, or fraction in (0,1)");
    override_flag<std::size_t>(mine, common, "--learn-quota", "learn_quota", "Learn tasks to sample");
    override_flag<std::size_t>(mine, common, "--test-quota", "test_quota", "Test tasks to sample");
    override_flag<std::size_t>(mine, common, "--k-target", "k_target", "Taxonomy size");
    override_flag<std::size_t>(mine, common, "--min-modified-lines", "min_modified_lines", "Prefilter threshold");
    override_flag<std::size_t>(mine, common, "--token-limit", "token_limit", "Prefilter diff token ceiling");
    override_flag<std::size_t>(mine, common, "--token-divisor", "token_divisor", "Bytes per estimated token");

    auto* learn = app.add_subcommand("learn", "Attempt each learn task blind, reflect against the oracle, update memory");
    add_config_flags(learn, common);
    learn->add_option("--dataset", dataset, "Dataset directory from `ltc mine`")->required();
    learn->add_option("--condition", condition, "seq-all | seq-bycat | par-all | par-bycat")->required();
    learn->add_option("--out", common.out, "Workspace root for memory/ and runs/ (default: cwd)");
    learn->add_option("--run-id", common.run_id, "Run id (default: timestamp plus random suffix)");
    override_flag<std::size_t>(learn, common, "--max-steps", "max_steps", "Agent step budget");
    override_flag<std::size_t>(learn, common, "--parallelism", "parallelism", "Concurrent shards in parallel mode");

    auto* solve = app.add_subcommand("solve", "Solve the held-out test tasks with or without learned memory");
    add_config_flags(solve, common);
    solve->add_option("--dataset", dataset, "Dataset directory from `ltc mine`")->required();
    solve->add_option("--condition", condition, "skill | baseline")->required();
    solve->add_option("--memory", memory, "memory/<run_id> directory from `ltc learn` (skill only)");
    solve->add_option("--out", common.out, "Workspace root for runs/ (default: cwd)");
    solve->add_option("--run-id", common.run_id, "Run id (default: timestamp plus random suffix)");
    override_flag<std::size_t>(solve, common, "--max-steps", "max_steps", "Agent step budget");

    auto* evaluate = app.add_subcommand("evaluate", "Score a skill run against a baseline run");
    add_config_flags(evaluate, common);
    evaluate->add_option("--skill-run", skill_run, "runs/<run_id> of a skill solve")->required();
    evaluate->add_option("--baseline-run", baseline_run, "runs/<run_id> of a baseline solve")->required();
    evaluate->add_option("--judges", judges, "Judge backend ids")->delimiter(',');
    evaluate->add_option("--dataset", dataset, "Dataset directory (default: the one the runs used)");
    evaluate->add_option("--out", common.out, "Workspace root for reports/ (default: cwd)");
    evaluate->add_option("--run-id", common.run_id, "Report directory name (default: <skill>__<baseline>)");

    auto* report = app.add_subcommand("report", "Re-render summary.md from persisted report directories");
    report->add_option("reports,--reports", report_dirs, "reports/<run_pair> directories")->required();
    report->add_option("--out", out_path, "Output file (default: <report>/summary.md)");
    report->add_option("--config", common.config, "Ignored; accepted for uniformity");

    auto* replay_cmd = app.add_subcommand("replay", "Rebuild a skill document from its update log and verify it");
    replay_cmd->add_option("--memory", memory, "memory/<run_id> directory")->required();
    replay_cmd->add_option("--out", out_path, "Write the replayed document here");
    replay_cmd->add_option("--config", common.config, "Ignored; accepted for uniformity");

    std::vector<std::string> argv_store{"ltc"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kConfigError;
    }

    if (mine->parsed()) return cmd_mine(common, out);
    if (learn->parsed()) return cmd_learn(common, dataset, condition, out);
    if (solve->parsed()) return cmd_solve(common, dataset, condition, memory, out);
    if (evaluate->parsed()) return cmd_evaluate(common, skill_run, baseline_run, judges, dataset, out);
    if (report->parsed()) return cmd_report(report_dirs, out_path, out);
    return cmd_replay(memory, out_path, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const AuditViolation& e) {
        err << "audit violation: " << e.what() << "\n";
        return kAuditViolation;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kStageError;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace ltc::cli
