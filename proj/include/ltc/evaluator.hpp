#pragma once

#include "ltc/diff.hpp"
#include "ltc/gateway.hpp"
#include "ltc/miner.hpp"
#include "ltc/rational.hpp"
#include "ltc/solver.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ltc {

/// Jaccard over touched paths; two empty sets score 1.
Rational file_iou(const Patch& agent, const Patch& oracle);
/// (|agent| - |oracle|) / |oracle| in changed lines. StageError on an empty oracle.
Rational line_deviation(const Patch& agent, const Patch& oracle);
std::size_t steps_metric(const Trajectory& trajectory);

struct TaskMetrics {
    std::string task_id;
    Rational file_iou;
    std::size_t steps = 0;
    Rational line_deviation;
    std::set<std::string> flags;  // binary_files_present, truncated_trajectory
};

TaskMetrics compute_metrics(const std::string& task_id, const SolvedTask& solved, const Patch& oracle);

enum class Dimension { q1, q2, q3, q4, overall };
inline constexpr Dimension kDimensions[] = {Dimension::q1, Dimension::q2, Dimension::q3, Dimension::q4,
                                            Dimension::overall};
std::string to_string(Dimension d);  // Q1..Q4, overall
Dimension parse_dimension(const std::string& s);
/// Row label used in the dimension table, e.g. "Q2: Logic Similarity".
std::string dimension_label(Dimension d);

enum class Winner { skill, baseline, tie };
std::string to_string(Winner w);
enum class Order { skill_first, baseline_first };
std::string to_string(Order o);

struct JudgeVerdict {
    std::string task_id;
    std::string judge_id;
    Dimension dimension = Dimension::overall;
    Order order = Order::skill_first;
    /// Empty when the judge could not be reached for this cell.
    std::optional<Winner> winner;
    std::string rationale;
    std::vector<std::string> flags;

    json to_json() const;
    static JudgeVerdict from_json(const json& j);
};

/// Maps the judge's "A"/"B" back to a condition.
Winner deanonymize(char letter, Order order);

/// Both presentation orders for every dimension, one model call per cell.
std::vector<JudgeVerdict> judge_pair(const TaskSpec& task, const Patch& skill_patch, const Patch& baseline_patch,
                                     Gateway& gateway, const std::string& judge_id);

struct TaskPair {
    TaskMetrics skill;
    TaskMetrics baseline;
};

struct DimensionRates {
    Rational skill;
    Rational baseline;
    Rational tie;
    std::size_t counted = 0;
    std::size_t missing = 0;
};

struct AggregateReport {
    std::string setting;
    std::size_t tasks = 0;
    Rational iou_skill, iou_baseline;
    Rational steps_skill, steps_baseline;
    Rational deviation_skill, deviation_baseline;
    std::vector<std::string> judges;
    std::map<std::string, std::map<Dimension, DimensionRates>> per_judge;
    /// Unweighted mean of the per-judge rates.
    std::map<Dimension, DimensionRates> averaged;
    /// Pairwise judge agreement over (task, dimension) cells; unset with fewer
    /// than two judges.
    std::optional<Rational> agreement;

    json to_json() const;
};

/// Means over task pairs and per-judge rates; StageError on no tasks.
AggregateReport aggregate(const std::string& setting, const std::vector<TaskPair>& pairs,
                          const std::vector<JudgeVerdict>& verdicts);

/// Markdown tables for deterministic metrics and overall win rates, then a
/// per-dimension breakdown for each report.
std::string render_summary(const std::vector<AggregateReport>& reports);

struct EvaluateOptions {
    std::filesystem::path skill_run;
    std::filesystem::path baseline_run;
    std::vector<std::string> judges;
    std::string setting;
    std::filesystem::path out_dir;
};

/// Scores and judges every task present in both runs. Report files go to
/// out_dir.
AggregateReport evaluate_runs(const std::vector<TestTask>& tasks, Gateway& gateway, const EvaluateOptions& options);

/// Rebuilds the aggregate from a report directory's metrics.json and judge.jsonl.
AggregateReport load_report(const std::filesystem::path& report_dir);

}  // namespace ltc
