#pragma once

#include "ltc/error.hpp"
#include "ltc/gateway.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ltc {

enum class SkillKind { style, internal_api, architecture, maintainer_preference, other };
enum class SkillStatus { active, deprecated };

std::string_view to_string(SkillKind kind);
std::optional<SkillKind> parse_skill_kind(std::string_view s);

struct SkillEntry {
    std::string skill_id;
    std::string title;
    std::string body;
    SkillKind kind = SkillKind::other;
    std::string category;
    SkillStatus status = SkillStatus::active;
    std::vector<std::string> evidence;
    int created_at_step = 0;
    std::vector<int> revised_at_steps;

    friend bool operator==(const SkillEntry&, const SkillEntry&) = default;
};

/// create / revise / deprecate come from reflection replies. merge and noop are
/// written only by the pipeline itself: merge folds payload.absorb into
/// skill_id, noop records a batch that changed nothing so versions replay.
enum class OpKind { create, revise, deprecate, merge, noop };

std::string_view to_string(OpKind op);

struct UpdateOp {
    OpKind op = OpKind::noop;
    std::string skill_id;
    /// create: {title, body, kind, category}; revise: any subset of those;
    /// deprecate: optional {reason}; merge: {absorb, title?, body?}.
    json payload = json::object();
    std::string source_commit;
    /// Version produced by the batch this op belongs to.
    int step = 0;

    friend bool operator==(const UpdateOp&, const UpdateOp&) = default;
};

json to_json(const UpdateOp& op);
UpdateOp op_from_json(const json& j);

/// Rejected update batch; the document is left untouched.
class UpdateRejected : public StageError {
public:
    UpdateRejected(const std::string& what, std::size_t op_index)
        : StageError("op " + std::to_string(op_index) + ": " + what), op_index_(op_index) {}
    std::size_t op_index() const noexcept { return op_index_; }

private:
    std::size_t op_index_;
};

struct SkillDocument {
    std::vector<SkillEntry> entries;
    std::vector<UpdateOp> update_log;
    int version = 0;

    const SkillEntry* find(std::string_view id) const;
    std::size_t active_count() const;

    friend bool operator==(const SkillDocument&, const SkillDocument&) = default;
};

SkillDocument empty_document();

/// Applies one batch of reflection ops from `source_commit`. Returns the next
/// version; an empty batch still advances the version (logged as noop).
SkillDocument apply_update(const SkillDocument& doc, std::vector<UpdateOp> ops, const std::string& source_commit);

/// Rebuilds a document from its update log.
SkillDocument replay(const std::vector<UpdateOp>& log);

/// Entries and version only; the log lives next to it as JSON lines.
json to_json(const SkillDocument& doc);
std::string serialize_document(const SkillDocument& doc);

struct ParsedReflection {
    std::string gap_summary;
    std::vector<UpdateOp> ops;
    std::vector<std::string> warnings;
};

/// Reply format: free-text gap summary followed by a fenced ```json block
/// holding a list of {op, skill_id, title, body, kind, category}. Throws
/// ReplyParseError naming the offending field or fragment.
ParsedReflection parse_reflection(const std::string& reply);
std::vector<UpdateOp> parse_update_ops(const std::string& reply, std::vector<std::string>* warnings = nullptr);

inline constexpr std::size_t kDefaultRenderBudget = 24000;

/// Active entries, filtered by category when given, ordered by
/// (category, created_at_step) and cut at entry boundaries. Empty string when
/// nothing is active.
std::string render_for_prompt(const SkillDocument& doc, const std::optional<std::set<std::string>>& filter = std::nullopt,
                              std::size_t budget = kDefaultRenderBudget);

struct MergeResult {
    SkillDocument doc;
    bool fallback = false;  // model reply unusable twice: plain concatenation
    std::size_t duplicates_removed = 0;
};

/// Concatenates the two logs (b renamed and re-based after a) and appends one
/// merge batch holding the model's duplicate verdicts.
MergeResult merge_documents(const SkillDocument& a, const SkillDocument& b, Gateway& gateway,
                            const std::string& backend_id);

/// Merges left to right in a balanced binary tree.
MergeResult merge_all(const std::vector<SkillDocument>& docs, Gateway& gateway, const std::string& backend_id);

/// memory/<run_id>/ layout: doc_v<t>.json per version plus log.jsonl.
void save_version(const std::filesystem::path& dir, const SkillDocument& doc);
SkillDocument load_latest(const std::filesystem::path& dir);
std::vector<UpdateOp> load_log(const std::filesystem::path& dir);

}  // namespace ltc
