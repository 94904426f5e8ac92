#include "ltc/evaluator.hpp"

#include "ltc/util.hpp"

#include <algorithm>
#include <sstream>

namespace ltc {

namespace fs = std::filesystem;

Rational file_iou(const Patch& agent, const Patch& oracle) {
    auto a = file_set(agent);
    auto b = file_set(oracle);
    if (a.empty() && b.empty()) return 1;
    std::size_t inter = 0;
    for (const auto& p : a) inter += b.count(p);
    auto uni = a.size() + b.size() - inter;
    return {static_cast<std::int64_t>(inter), static_cast<std::int64_t>(uni)};
}

Rational line_deviation(const Patch& agent, const Patch& oracle) {
    auto o = static_cast<std::int64_t>(patch_size(oracle));
    if (o == 0) throw StageError("line deviation is undefined for an empty oracle patch");
    auto a = static_cast<std::int64_t>(patch_size(agent));
    return {a - o, o};
}

std::size_t steps_metric(const Trajectory& trajectory) { return trajectory.steps; }

TaskMetrics compute_metrics(const std::string& task_id, const SolvedTask& solved, const Patch& oracle) {
    TaskMetrics m;
    m.task_id = task_id;
    m.file_iou = file_iou(solved.final_patch, oracle);
    m.line_deviation = line_deviation(solved.final_patch, oracle);
    m.steps = solved.steps;
    if (solved.final_patch.has_binary() || oracle.has_binary()) m.flags.insert("binary_files_present");
    if (solved.truncated) m.flags.insert("truncated_trajectory");
    return m;
}

std::string to_string(Dimension d) {
    switch (d) {
        case Dimension::q1: return "Q1";
        case Dimension::q2: return "Q2";
        case Dimension::q3: return "Q3";
        case Dimension::q4: return "Q4";
        case Dimension::overall: return "overall";
    }
    return "?";
}

Dimension parse_dimension(const std::string& s) {
    for (auto d : kDimensions)
        if (to_string(d) == s) return d;
    throw StageError("unknown judge dimension '" + s + "'");
}

std::string dimension_label(Dimension d) {
    switch (d) {
        case Dimension::q1: return "Q1: Scope Alignment";
        case Dimension::q2: return "Q2: Logic Similarity";
        case Dimension::q3: return "Q3: Redundancy & Halluc.";
        case Dimension::q4: return "Q4: Code Style";
        case Dimension::overall: return "Overall";
    }
    return "?";
}

std::string to_string(Winner w) {
    switch (w) {
        case Winner::skill: return "skill";
        case Winner::baseline: return "baseline";
        case Winner::tie: return "tie";
    }
    return "?";
}

std::string to_string(Order o) { return o == Order::skill_first ? "skill_first" : "baseline_first"; }

namespace {

Winner parse_winner(const std::string& s) {
    if (s == "skill") return Winner::skill;
    if (s == "baseline") return Winner::baseline;
    if (s == "tie") return Winner::tie;
    throw StageError("unknown verdict winner '" + s + "'");
}

Order parse_order(const std::string& s) {
    if (s == "skill_first") return Order::skill_first;
    if (s == "baseline_first") return Order::baseline_first;
    throw StageError("unknown presentation order '" + s + "'");
}

}  // namespace

json JudgeVerdict::to_json() const {
    return {{"task_id", task_id},
            {"judge_id", judge_id},
            {"dimension", to_string(dimension)},
            {"presentation_order", to_string(order)},
            {"winner", winner ? json(to_string(*winner)) : json(nullptr)},
            {"rationale", rationale},
            {"flags", flags}};
}

JudgeVerdict JudgeVerdict::from_json(const json& j) {
    JudgeVerdict v;
    v.task_id = j.at("task_id").get<std::string>();
    v.judge_id = j.at("judge_id").get<std::string>();
    v.dimension = parse_dimension(j.at("dimension").get<std::string>());
    v.order = parse_order(j.at("presentation_order").get<std::string>());
    if (!j.at("winner").is_null()) v.winner = parse_winner(j["winner"].get<std::string>());
    v.rationale = j.value("rationale", "");
    v.flags = j.value("flags", std::vector<std::string>{});
    return v;
}

Winner deanonymize(char letter, Order order) {
    bool a = letter == 'A';
    return (a == (order == Order::skill_first)) ? Winner::skill : Winner::baseline;
}

namespace {

std::string dimension_question(Dimension d) {
    switch (d) {
        case Dimension::q1:
            return "Scope alignment: which patch modifies files and functions closest to those the accepted change "
                   "modifies?";
        case Dimension::q2:
            return "Logic similarity: which patch's core implementation logic is closer to the accepted change?";
        case Dimension::q3:
            return "Redundancy and hallucination: which patch is more concise, without over-engineering or invented "
                   "APIs?";
        case Dimension::q4:
            return "Code style: which patch better follows the repository's native conventions, as seen in the "
                   "accepted change?";
        case Dimension::overall:
            return "Overall: which patch would a maintainer of this repository rather merge?";
    }
    return "";
}

std::string fenced(const Patch& p) {
    auto text = serialize_patch(p);
    if (text.empty()) return "(empty patch)\n";
    return "```diff\n" + text + (text.back() == '\n' ? "" : "\n") + "```\n";
}

/// 'A', 'B', 'T' (tie) or 0.
char parse_judge_reply(const std::string& reply, std::string& rationale) {
    auto bare = to_lower(trim(reply));
    while (!bare.empty() && (bare.back() == '.' || bare.back() == '!')) bare.pop_back();
    if (bare == "a") return 'A';
    if (bare == "b") return 'B';
    if (bare == "tie") return 'T';
    auto j = extract_json(reply);
    if (!j || !j->is_object() || !j->contains("winner") || !(*j)["winner"].is_string()) return 0;
    rationale = j->value("rationale", "");
    auto w = to_lower(trim((*j)["winner"].get<std::string>()));
    if (w == "a") return 'A';
    if (w == "b") return 'B';
    if (w == "tie") return 'T';
    return 0;
}

}  // namespace

std::vector<JudgeVerdict> judge_pair(const TaskSpec& task, const Patch& skill_patch, const Patch& baseline_patch,
                                     Gateway& gateway, const std::string& judge_id) {
    std::vector<JudgeVerdict> out;
    for (auto order : {Order::skill_first, Order::baseline_first}) {
        const Patch& a = order == Order::skill_first ? skill_patch : baseline_patch;
        const Patch& b = order == Order::skill_first ? baseline_patch : skill_patch;
        for (auto dim : kDimensions) {
            JudgeVerdict v;
            v.task_id = task.task_id;
            v.judge_id = judge_id;
            v.dimension = dim;
            v.order = order;

            ChatRequest req;
            req.backend_id = judge_id;
            req.audit_tags = {tags::judge};
            req.messages = {
                {"system",
                 "You compare two candidate patches written for the same task in one repository, against the change "
                 "the maintainers accepted.\nQuestion: " +
                     dimension_question(dim) +
                     "\nReply with JSON {\"winner\": \"A\" | \"B\" | \"tie\", \"rationale\": \"<one sentence>\"}."},
                {"user", "Task:\n" + task.query + "\n\nAccepted change:\n" + fenced(task.oracle_patch) +
                             "\nPatch A:\n" + fenced(a) + "\nPatch B:\n" + fenced(b)}};
            char verdict = 0;
            try {
                for (int attempt = 0; attempt < 2 && !verdict; ++attempt) {
                    auto reply = gateway.complete(req);
                    verdict = parse_judge_reply(reply, v.rationale);
                    if (!verdict) {
                        req.messages.push_back({"assistant", reply});
                        req.messages.push_back(
                            {"user", "Answer only with JSON {\"winner\": \"A\" | \"B\" | \"tie\", \"rationale\": \"...\"}."});
                    }
                }
                if (!verdict) {
                    v.winner = Winner::tie;
                    v.flags.push_back("unparseable_reply");
                } else {
                    v.winner = verdict == 'T' ? Winner::tie : deanonymize(verdict, order);
                }
            } catch (const AuditViolation&) {
                throw;
            } catch (const Error& e) {
                v.flags.push_back(std::string("missing: ") + e.what());
            }
            out.push_back(std::move(v));
        }
    }
    return out;
}

namespace {

Rational mean(const std::vector<Rational>& xs) {
    Rational sum;
    for (const auto& x : xs) sum += x;
    return sum / Rational(static_cast<std::int64_t>(xs.size()));
}

std::string rational_str(const Rational& r) { return r.str(); }

json rates_json(const DimensionRates& r) {
    return {{"skill", rational_str(r.skill)},
            {"baseline", rational_str(r.baseline)},
            {"tie", rational_str(r.tie)},
            {"counted", r.counted},
            {"missing", r.missing}};
}

}  // namespace

json AggregateReport::to_json() const {
    json pj = json::object();
    for (const auto& [judge, dims] : per_judge)
        for (const auto& [d, r] : dims) pj[judge][to_string(d)] = rates_json(r);
    json av = json::object();
    for (const auto& [d, r] : averaged) av[to_string(d)] = rates_json(r);
    return {{"setting", setting},
            {"tasks", tasks},
            {"file_iou", {{"skill", iou_skill.str()}, {"baseline", iou_baseline.str()}}},
            {"steps", {{"skill", steps_skill.str()}, {"baseline", steps_baseline.str()}}},
            {"line_deviation", {{"skill", deviation_skill.str()}, {"baseline", deviation_baseline.str()}}},
            {"judges", judges},
            {"per_judge", pj},
            {"averaged", av},
            {"agreement", agreement ? json(agreement->str()) : json(nullptr)}};
}

AggregateReport aggregate(const std::string& setting, const std::vector<TaskPair>& pairs,
                          const std::vector<JudgeVerdict>& verdicts) {
    if (pairs.empty()) throw StageError("nothing to aggregate: no task pairs");
    AggregateReport r;
    r.setting = setting;
    r.tasks = pairs.size();
    std::vector<Rational> iou_s, iou_b, st_s, st_b, dev_s, dev_b;
    std::set<std::string> task_ids;
    for (const auto& p : pairs) {
        task_ids.insert(p.skill.task_id);
        iou_s.push_back(p.skill.file_iou);
        iou_b.push_back(p.baseline.file_iou);
        st_s.push_back(static_cast<std::int64_t>(p.skill.steps));
        st_b.push_back(static_cast<std::int64_t>(p.baseline.steps));
        dev_s.push_back(p.skill.line_deviation);
        dev_b.push_back(p.baseline.line_deviation);
    }
    r.iou_skill = mean(iou_s);
    r.iou_baseline = mean(iou_b);
    r.steps_skill = mean(st_s);
    r.steps_baseline = mean(st_b);
    r.deviation_skill = mean(dev_s);
    r.deviation_baseline = mean(dev_b);

    // judge -> dimension -> task -> winners by order
    std::map<std::string, std::map<Dimension, std::map<std::string, std::vector<std::optional<Winner>>>>> cells;
    for (const auto& v : verdicts) {
        if (!task_ids.count(v.task_id)) continue;
        cells[v.judge_id][v.dimension][v.task_id].push_back(v.winner);
    }
    for (const auto& [judge, dims] : cells) {
        r.judges.push_back(judge);
        for (auto d : kDimensions) {
            DimensionRates rates;
            std::int64_t s = 0, b = 0, t = 0;
            auto it = dims.find(d);
            if (it != dims.end()) {
                for (const auto& [task, ws] : it->second) {
                    for (const auto& w : ws) {
                        if (!w) {
                            ++rates.missing;
                            continue;
                        }
                        ++rates.counted;
                        (*w == Winner::skill ? s : *w == Winner::baseline ? b : t)++;
                    }
                }
            }
            if (rates.counted) {
                auto n = static_cast<std::int64_t>(rates.counted);
                rates.skill = Rational(s, n);
                rates.baseline = Rational(b, n);
                rates.tie = Rational(t, n);
            }
            r.per_judge[judge][d] = rates;
        }
    }
    if (!r.judges.empty()) {
        for (auto d : kDimensions) {
            std::vector<Rational> s, b, t;
            DimensionRates avg;
            for (const auto& j : r.judges) {
                const auto& x = r.per_judge[j][d];
                s.push_back(x.skill);
                b.push_back(x.baseline);
                t.push_back(x.tie);
                avg.counted += x.counted;
                avg.missing += x.missing;
            }
            avg.skill = mean(s);
            avg.baseline = mean(b);
            avg.tie = mean(t);
            r.averaged[d] = avg;
        }
    }

    // Per judge, the two orders collapse to one call per (task, dimension):
    // agreeing orders keep their winner, disagreeing ones count as a tie.
    auto combined = [&](const std::string& judge, Dimension d, const std::string& task) -> std::optional<Winner> {
        const auto& ws = cells[judge][d][task];
        std::optional<Winner> out;
        for (const auto& w : ws) {
            if (!w) continue;
            if (!out) out = w;
            else if (*out != *w) out = Winner::tie;
        }
        return out;
    };
    if (r.judges.size() >= 2) {
        std::vector<Rational> pairwise;
        for (std::size_t i = 0; i < r.judges.size(); ++i) {
            for (std::size_t j = i + 1; j < r.judges.size(); ++j) {
                std::int64_t same = 0, total = 0;
                for (auto d : kDimensions) {
                    for (const auto& task : task_ids) {
                        auto a = combined(r.judges[i], d, task);
                        auto b = combined(r.judges[j], d, task);
                        if (!a || !b) continue;
                        ++total;
                        same += *a == *b;
                    }
                }
                if (total) pairwise.emplace_back(same, total);
            }
        }
        if (!pairwise.empty()) r.agreement = mean(pairwise);
    }
    return r;
}

namespace {

std::string pct(const Rational& r) { return (r * 100).to_fixed(0) + "%"; }

std::string bold(const std::string& s, bool on) { return on ? "**" + s + "**" : s; }

/// "skill / base" with the better displayed value in bold; equal displays stay plain.
std::string pair_cell(const std::string& s, const std::string& b, std::int64_t score_s, std::int64_t score_b,
                      bool higher_better) {
    bool skill_better = higher_better ? score_s > score_b : score_s < score_b;
    bool base_better = higher_better ? score_b > score_s : score_b < score_s;
    return bold(s, skill_better) + " / " + bold(b, base_better);
}

std::string judge_list(const std::vector<std::string>& judges) {
    if (judges.size() == 1) return judges[0];
    std::string out;
    for (std::size_t i = 0; i < judges.size(); ++i) {
        if (i) out += i + 1 == judges.size() ? " and " : ", ";
        out += judges[i];
    }
    return out;
}

}  // namespace

std::string render_summary(const std::vector<AggregateReport>& reports) {
    std::ostringstream md;
    md << "## Deterministic code metrics\n\n"
       << "File IoU (higher is better), Steps (lower is better), Line Dev. (closer to 0 is better). "
          "Bold marks the better value in each pair.\n\n"
       << "| Setting | File IoU (Skill / Base) | Steps (Skill / Base) | Line Dev. (Skill / Base) |\n"
       << "|---|---|---|---|\n";
    for (const auto& r : reports) {
        auto iou_s = (r.iou_skill * 100).round_scaled(0), iou_b = (r.iou_baseline * 100).round_scaled(0);
        auto st_s = r.steps_skill.round_scaled(1), st_b = r.steps_baseline.round_scaled(1);
        auto dv_s = std::abs(r.deviation_skill.round_scaled(2)), dv_b = std::abs(r.deviation_baseline.round_scaled(2));
        md << "| `" << r.setting << "` | " << pair_cell(pct(r.iou_skill), pct(r.iou_baseline), iou_s, iou_b, true)
           << " | " << pair_cell(r.steps_skill.to_fixed(1), r.steps_baseline.to_fixed(1), st_s, st_b, false) << " | "
           << pair_cell(r.deviation_skill.to_fixed(2), r.deviation_baseline.to_fixed(2), dv_s, dv_b, false) << " |\n";
    }

    std::vector<std::string> judges;
    for (const auto& r : reports)
        for (const auto& j : r.judges)
            if (std::find(judges.begin(), judges.end(), j) == judges.end()) judges.push_back(j);
    md << "\n## Overall pairwise win rates\n\n"
       << "Share of overall verdicts won by the skill-conditioned agent, both presentation orders pooled. "
          "Bold marks rates above 50%.\n\n"
       << "| Setting |";
    for (const auto& j : judges) md << " " << j << " Judge |";
    md << "\n|---|";
    for (std::size_t i = 0; i < judges.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& r : reports) {
        md << "| `" << r.setting << "` |";
        for (const auto& j : judges) {
            auto it = r.per_judge.find(j);
            if (it == r.per_judge.end() || !it->second.at(Dimension::overall).counted) {
                md << " n/a |";
                continue;
            }
            const auto& rate = it->second.at(Dimension::overall).skill;
            md << " " << bold(pct(rate), rate > Rational(1, 2)) << " |";
        }
        md << "\n";
    }

    for (const auto& r : reports) {
        md << "\n## Dimension-level breakdown for `" << r.setting << "`";
        if (!r.judges.empty()) md << " (averaged over " << judge_list(r.judges) << " judges)";
        md << "\n\n| Dimension | Skill Win | Base Win | Tie |\n|---|---|---|---|\n";
        for (auto d : {Dimension::q1, Dimension::q2, Dimension::q3, Dimension::q4}) {
            auto it = r.averaged.find(d);
            if (it == r.averaged.end() || !it->second.counted) {
                md << "| " << dimension_label(d) << " | n/a | n/a | n/a |\n";
                continue;
            }
            const auto& x = it->second;
            bool win = (x.skill * 100).round_scaled(0) > (x.baseline * 100).round_scaled(0);
            md << "| " << dimension_label(d) << " | " << bold(pct(x.skill), win) << " | " << pct(x.baseline) << " | "
               << pct(x.tie) << " |\n";
        }
        std::size_t missing = 0, counted = 0;
        for (const auto& [d, x] : r.averaged) {
            missing += x.missing;
            counted += x.counted;
        }
        md << "\nTasks: " << r.tasks << ". Judge cells: " << counted << " answered, " << missing << " missing.";
        if (r.agreement) md << " Inter-judge agreement: " << pct(*r.agreement) << ".";
        md << "\n";
    }
    return md.str();
}

namespace {

json metrics_json(const TaskMetrics& m) {
    return {{"file_iou", m.file_iou.str()},
            {"steps", m.steps},
            {"line_deviation", m.line_deviation.str()},
            {"flags", m.flags}};
}

TaskMetrics metrics_from_json(const std::string& id, const json& j) {
    TaskMetrics m;
    m.task_id = id;
    m.file_iou = Rational::parse(j.at("file_iou").get<std::string>());
    m.steps = j.at("steps").get<std::size_t>();
    m.line_deviation = Rational::parse(j.at("line_deviation").get<std::string>());
    m.flags = j.value("flags", std::set<std::string>{});
    return m;
}

}  // namespace

AggregateReport evaluate_runs(const std::vector<TestTask>& tasks, Gateway& gateway, const EvaluateOptions& options) {
    if (options.judges.empty()) throw ConfigError("evaluate needs at least one judge");
    auto skill = load_solve_run(options.skill_run, "skill");
    auto base = load_solve_run(options.baseline_run, "baseline");

    std::vector<TaskPair> pairs;
    std::vector<JudgeVerdict> verdicts;
    json task_rows = json::array();
    json excluded = json::array();
    std::set<std::string> known;
    for (const auto& task : tasks) {
        const auto& id = task->task_id;
        known.insert(id);
        auto s = skill.find(id);
        auto b = base.find(id);
        std::string reason;
        if (s == skill.end()) reason = "missing from skill run";
        else if (b == base.end()) reason = "missing from baseline run";
        else if (!s->second.error.empty()) reason = "skill solve failed: " + s->second.error;
        else if (!b->second.error.empty()) reason = "baseline solve failed: " + b->second.error;
        if (!reason.empty()) {
            excluded.push_back({{"task_id", id}, {"reason", reason}});
            continue;
        }
        TaskPair pair{compute_metrics(id, s->second, task->oracle_patch),
                      compute_metrics(id, b->second, task->oracle_patch)};
        task_rows.push_back({{"task_id", id}, {"skill", metrics_json(pair.skill)}, {"baseline", metrics_json(pair.baseline)}});
        pairs.push_back(std::move(pair));
        for (const auto& judge : options.judges) {
            auto vs = judge_pair(task.spec(), s->second.final_patch, b->second.final_patch, gateway, judge);
            verdicts.insert(verdicts.end(), vs.begin(), vs.end());
        }
    }
    for (const auto* run : {&skill, &base})
        for (const auto& [id, _] : *run)
            if (!known.count(id)) excluded.push_back({{"task_id", id}, {"reason", "not a test task of the dataset"}});
    if (pairs.empty()) throw StageError("no test task was solved in both runs");

    fs::create_directories(options.out_dir);
    std::string lines;
    for (const auto& v : verdicts) lines += v.to_json().dump() + "\n";
    write_file_atomic(options.out_dir / "judge.jsonl", lines);
    auto agg = aggregate(options.setting, pairs, verdicts);
    json metrics = {{"setting", options.setting},
                    {"skill_run", options.skill_run.string()},
                    {"baseline_run", options.baseline_run.string()},
                    {"judges", options.judges},
                    {"tasks", task_rows},
                    {"excluded", excluded},
                    {"aggregate", agg.to_json()}};
    write_file_atomic(options.out_dir / "metrics.json", metrics.dump(2) + "\n");
    // The summary is rendered from what was persisted, exactly as `report` would.
    auto reloaded = load_report(options.out_dir);
    write_file_atomic(options.out_dir / "summary.md", render_summary({reloaded}));
    return reloaded;
}

AggregateReport load_report(const fs::path& report_dir) {
    auto mpath = report_dir / "metrics.json";
    if (!fs::exists(mpath)) throw StageError("no metrics.json under " + report_dir.string());
    try {
        auto metrics = json::parse(ltc::read_file(mpath));
        std::vector<TaskPair> pairs;
        for (const auto& row : metrics.at("tasks")) {
            auto id = row.at("task_id").get<std::string>();
            pairs.push_back({metrics_from_json(id, row.at("skill")), metrics_from_json(id, row.at("baseline"))});
        }
        std::vector<JudgeVerdict> verdicts;
        if (fs::exists(report_dir / "judge.jsonl")) {
            for (const auto& line : split_lines(ltc::read_file(report_dir / "judge.jsonl"))) {
                if (trim(line).empty()) continue;
                verdicts.push_back(JudgeVerdict::from_json(json::parse(line)));
            }
        }
        return aggregate(metrics.value("setting", "skill"), pairs, verdicts);
    } catch (const json::exception& e) {
        throw StageError("malformed report in " + report_dir.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw StageError("malformed rational in " + report_dir.string() + ": " + e.what());
    }
}

}  // namespace ltc
