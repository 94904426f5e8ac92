#include "ltc/skill_memory.hpp"

#include "ltc/util.hpp"

#include <algorithm>
#include <map>

namespace ltc {

namespace {

constexpr std::string_view kKindNames[] = {"style", "internal_api", "architecture", "maintainer_preference", "other"};
constexpr std::string_view kOpNames[] = {"create", "revise", "deprecate", "merge", "noop"};
constexpr const char* kMergeCommit = "merge";

SkillEntry* find_mut(SkillDocument& doc, std::string_view id) {
    for (auto& e : doc.entries)
        if (e.skill_id == id) return &e;
    return nullptr;
}

std::optional<std::string> opt_string(const json& payload, const char* key, std::size_t idx) {
    if (!payload.contains(key) || payload.at(key).is_null()) return std::nullopt;
    if (!payload.at(key).is_string()) throw UpdateRejected(std::string("field '") + key + "' must be a string", idx);
    return payload.at(key).get<std::string>();
}

void touch(SkillEntry& e, int step) {
    if (e.revised_at_steps.empty() || e.revised_at_steps.back() != step) e.revised_at_steps.push_back(step);
}

void add_evidence(SkillEntry& e, const std::string& commit) {
    if (commit.empty() || commit == kMergeCommit) return;
    if (std::find(e.evidence.begin(), e.evidence.end(), commit) == e.evidence.end()) e.evidence.push_back(commit);
}

void apply_one(SkillDocument& doc, const UpdateOp& op, std::size_t idx) {
    switch (op.op) {
    case OpKind::noop:
        return;
    case OpKind::create: {
        if (op.skill_id.empty()) throw UpdateRejected("create without skill_id", idx);
        if (doc.find(op.skill_id)) throw UpdateRejected("create of existing skill '" + op.skill_id + "'", idx);
        SkillEntry e;
        e.skill_id = op.skill_id;
        auto title = opt_string(op.payload, "title", idx);
        auto body = opt_string(op.payload, "body", idx);
        if (!title || title->empty()) throw UpdateRejected("create without title", idx);
        if (!body || body->empty()) throw UpdateRejected("create without body", idx);
        e.title = *title;
        e.body = *body;
        if (auto k = opt_string(op.payload, "kind", idx)) {
            auto kind = parse_skill_kind(*k);
            if (!kind) throw UpdateRejected("unknown kind '" + *k + "'", idx);
            e.kind = *kind;
        }
        e.category = opt_string(op.payload, "category", idx).value_or("");
        e.created_at_step = op.step;
        add_evidence(e, op.source_commit);
        doc.entries.push_back(std::move(e));
        return;
    }
    case OpKind::revise: {
        auto* e = find_mut(doc, op.skill_id);
        if (!e) throw UpdateRejected("revise of unknown skill '" + op.skill_id + "'", idx);
        if (auto v = opt_string(op.payload, "title", idx); v && !v->empty()) e->title = *v;
        if (auto v = opt_string(op.payload, "body", idx); v && !v->empty()) e->body = *v;
        if (auto v = opt_string(op.payload, "category", idx); v && !v->empty()) e->category = *v;
        if (auto v = opt_string(op.payload, "kind", idx)) {
            auto kind = parse_skill_kind(*v);
            if (!kind) throw UpdateRejected("unknown kind '" + *v + "'", idx);
            e->kind = *kind;
        }
        touch(*e, op.step);
        add_evidence(*e, op.source_commit);
        return;
    }
    case OpKind::deprecate: {
        auto* e = find_mut(doc, op.skill_id);
        if (!e) throw UpdateRejected("deprecate of unknown skill '" + op.skill_id + "'", idx);
        e->status = SkillStatus::deprecated;
        touch(*e, op.step);
        add_evidence(*e, op.source_commit);
        return;
    }
    case OpKind::merge: {
        auto absorb = opt_string(op.payload, "absorb", idx);
        if (!absorb) throw UpdateRejected("merge without absorb", idx);
        if (*absorb == op.skill_id) throw UpdateRejected("merge of a skill into itself", idx);
        auto* keep = find_mut(doc, op.skill_id);
        const auto* drop = doc.find(*absorb);
        if (!keep || !drop) throw UpdateRejected("merge of unknown skill", idx);
        for (const auto& c : drop->evidence) add_evidence(*keep, c);
        if (auto v = opt_string(op.payload, "title", idx); v && !v->empty()) keep->title = *v;
        if (auto v = opt_string(op.payload, "body", idx); v && !v->empty()) keep->body = *v;
        touch(*keep, op.step);
        std::string dropped = *absorb;
        std::erase_if(doc.entries, [&](const SkillEntry& x) { return x.skill_id == dropped; });
        return;
    }
    }
}

void apply_batch(SkillDocument& doc, const std::vector<UpdateOp>& ops) {
    for (std::size_t i = 0; i < ops.size(); ++i) apply_one(doc, ops[i], i);
    doc.update_log.insert(doc.update_log.end(), ops.begin(), ops.end());
    ++doc.version;
}

json entry_json(const SkillEntry& e) {
    return {{"skill_id", e.skill_id},
            {"title", e.title},
            {"body", e.body},
            {"kind", to_string(e.kind)},
            {"category", e.category},
            {"status", e.status == SkillStatus::active ? "active" : "deprecated"},
            {"evidence", e.evidence},
            {"created_at_step", e.created_at_step},
            {"revised_at_steps", e.revised_at_steps}};
}

}  // namespace

std::string_view to_string(SkillKind kind) { return kKindNames[static_cast<int>(kind)]; }

std::optional<SkillKind> parse_skill_kind(std::string_view s) {
    for (int i = 0; i < 5; ++i)
        if (kKindNames[i] == s) return static_cast<SkillKind>(i);
    return std::nullopt;
}

std::string_view to_string(OpKind op) { return kOpNames[static_cast<int>(op)]; }

json to_json(const UpdateOp& op) {
    return {{"op", to_string(op.op)},
            {"skill_id", op.skill_id},
            {"payload", op.payload},
            {"source_commit", op.source_commit},
            {"step", op.step}};
}

UpdateOp op_from_json(const json& j) {
    UpdateOp op;
    auto name = j.at("op").get<std::string>();
    auto it = std::find(std::begin(kOpNames), std::end(kOpNames), name);
    if (it == std::end(kOpNames)) throw StageError("unknown op in log: " + name);
    op.op = static_cast<OpKind>(it - std::begin(kOpNames));
    op.skill_id = j.value("skill_id", "");
    op.payload = j.value("payload", json::object());
    op.source_commit = j.value("source_commit", "");
    op.step = j.at("step").get<int>();
    return op;
}

const SkillEntry* SkillDocument::find(std::string_view id) const {
    for (const auto& e : entries)
        if (e.skill_id == id) return &e;
    return nullptr;
}

std::size_t SkillDocument::active_count() const {
    return std::count_if(entries.begin(), entries.end(), [](const SkillEntry& e) { return e.status == SkillStatus::active; });
}

SkillDocument empty_document() { return {}; }

SkillDocument apply_update(const SkillDocument& doc, std::vector<UpdateOp> ops, const std::string& source_commit) {
    for (std::size_t i = 0; i < ops.size(); ++i) {
        if (ops[i].op == OpKind::merge || ops[i].op == OpKind::noop)
            throw UpdateRejected("op '" + std::string(to_string(ops[i].op)) + "' is internal", i);
        ops[i].source_commit = source_commit;
        ops[i].step = doc.version + 1;
    }
    if (ops.empty()) ops.push_back({OpKind::noop, "", json::object(), source_commit, doc.version + 1});
    SkillDocument next = doc;
    apply_batch(next, ops);
    return next;
}

SkillDocument replay(const std::vector<UpdateOp>& log) {
    SkillDocument doc;
    std::size_t i = 0;
    while (i < log.size()) {
        int step = log[i].step;
        if (step != doc.version + 1)
            throw StageError("update log out of order: step " + std::to_string(step) + " after version " +
                             std::to_string(doc.version));
        std::vector<UpdateOp> batch;
        while (i < log.size() && log[i].step == step) batch.push_back(log[i++]);
        apply_batch(doc, batch);
    }
    return doc;
}

json to_json(const SkillDocument& doc) {
    json entries = json::array();
    for (const auto& e : doc.entries) entries.push_back(entry_json(e));
    return {{"version", doc.version}, {"entries", entries}};
}

std::string serialize_document(const SkillDocument& doc) { return to_json(doc).dump(2) + "\n"; }

// --- Reflection replies ----------------------------------------------------

ParsedReflection parse_reflection(const std::string& reply) {
    // Use the last fenced block that holds an op list.
    std::optional<json> ops_json;
    std::size_t block_begin = std::string::npos, block_end = std::string::npos;
    std::size_t pos = 0;
    while ((pos = reply.find("```", pos)) != std::string::npos) {
        auto eol = reply.find('\n', pos);
        if (eol == std::string::npos) break;
        auto close = reply.find("```", eol + 1);
        if (close == std::string::npos) break;
        try {
            auto j = json::parse(reply.substr(eol + 1, close - eol - 1));
            if (j.is_object() && j.contains("ops")) j = j.at("ops");
            if (j.is_array()) {
                ops_json = std::move(j);
                block_begin = pos;
                block_end = close + 3;
            }
        } catch (const json::exception&) {
        }
        pos = close + 3;
    }
    if (!ops_json) throw ReplyParseError("reflection reply has no fenced op list", "```json");

    ParsedReflection out;
    out.gap_summary = std::string(trim(reply.substr(0, block_begin) + reply.substr(block_end)));

    static const std::set<std::string> known{"op", "skill_id", "title", "body", "kind", "category", "reason"};
    for (std::size_t i = 0; i < ops_json->size(); ++i) {
        const auto& item = (*ops_json)[i];
        auto where = "op " + std::to_string(i);
        if (!item.is_object()) throw ReplyParseError(where + " is not an object", item.dump());
        for (const auto& [key, _] : item.items())
            if (!known.count(key)) out.warnings.push_back(where + ": ignored unknown field '" + key + "'");
        auto field = [&](const char* key) -> std::optional<std::string> {
            if (!item.contains(key) || item.at(key).is_null()) return std::nullopt;
            if (!item.at(key).is_string()) throw ReplyParseError(where + ": field '" + key + "' must be a string", key);
            return item.at(key).get<std::string>();
        };
        UpdateOp op;
        auto name = field("op");
        if (!name) throw ReplyParseError(where + ": missing field 'op'", "op");
        if (*name == "create") op.op = OpKind::create;
        else if (*name == "revise") op.op = OpKind::revise;
        else if (*name == "deprecate") op.op = OpKind::deprecate;
        else throw ReplyParseError(where + ": unknown op '" + *name + "'", *name);
        auto id = field("skill_id");
        if (!id || id->empty()) throw ReplyParseError(where + ": missing field 'skill_id'", "skill_id");
        op.skill_id = *id;
        if (op.op == OpKind::create) {
            for (const char* required : {"title", "body"}) {
                auto v = field(required);
                if (!v || trim(*v).empty())
                    throw ReplyParseError(where + ": create is missing field '" + required + "'", required);
            }
            op.payload["kind"] = "other";
        }
        for (const char* key : {"title", "body", "kind", "category", "reason"}) {
            if (auto v = field(key)) op.payload[key] = *v;
        }
        if (op.payload.contains("kind") && !parse_skill_kind(op.payload["kind"].get<std::string>()))
            throw ReplyParseError(where + ": invalid kind", op.payload["kind"].get<std::string>());
        out.ops.push_back(std::move(op));
    }
    return out;
}

std::vector<UpdateOp> parse_update_ops(const std::string& reply, std::vector<std::string>* warnings) {
    auto parsed = parse_reflection(reply);
    if (warnings) warnings->insert(warnings->end(), parsed.warnings.begin(), parsed.warnings.end());
    return std::move(parsed.ops);
}

// --- Rendering -------------------------------------------------------------

std::string render_for_prompt(const SkillDocument& doc, const std::optional<std::set<std::string>>& filter,
                              std::size_t budget) {
    std::vector<const SkillEntry*> chosen;
    for (const auto& e : doc.entries) {
        if (e.status != SkillStatus::active) continue;
        if (filter && !filter->count(e.category)) continue;
        chosen.push_back(&e);
    }
    if (chosen.empty()) return "";
    std::stable_sort(chosen.begin(), chosen.end(), [](const SkillEntry* x, const SkillEntry* y) {
        return std::tie(x->category, x->created_at_step) < std::tie(y->category, y->created_at_step);
    });

    std::string out = "# Repository skills\nConventions learned from this repository's history.\n\n";
    std::size_t omitted = 0;
    for (const auto* e : chosen) {
        if (omitted > 0) {
            ++omitted;
            continue;
        }
        std::string block = "## " + e->title + "\n[" + e->skill_id + " | " + std::string(to_string(e->kind)) +
                            " | " + (e->category.empty() ? "uncategorized" : e->category) + "]\n" + e->body;
        if (block.back() != '\n') block.push_back('\n');
        block.push_back('\n');
        if (out.size() + block.size() > budget) {
            ++omitted;
            continue;
        }
        out += block;
    }
    if (omitted > 0) out += "[omitted: " + std::to_string(omitted) + "]\n";
    return out;
}

// --- Merge -----------------------------------------------------------------

namespace {

std::string describe(const SkillDocument& doc) {
    std::string s;
    for (const auto& e : doc.entries) {
        if (e.status != SkillStatus::active) continue;
        s += "- id: " + e.skill_id + " (" + std::string(to_string(e.kind)) + ", " + e.category + ")\n  " + e.title +
             "\n  " + e.body + "\n";
    }
    return s.empty() ? "(none)\n" : s;
}

/// b's log with ids clear of a's and steps shifted past a's version.
std::vector<UpdateOp> rebase(const SkillDocument& a, const SkillDocument& b) {
    std::set<std::string> taken;
    for (const auto& op : a.update_log) {
        if (!op.skill_id.empty()) taken.insert(op.skill_id);
        if (op.payload.contains("absorb")) taken.insert(op.payload["absorb"].get<std::string>());
    }
    std::map<std::string, std::string> rename;
    auto mapped = [&](const std::string& id) -> std::string {
        if (id.empty()) return id;
        if (auto it = rename.find(id); it != rename.end()) return it->second;
        std::string fresh = id;
        for (int n = 2; taken.count(fresh); ++n) fresh = id + "-" + std::to_string(n);
        taken.insert(fresh);
        rename[id] = fresh;
        return fresh;
    };
    std::vector<UpdateOp> out;
    for (auto op : b.update_log) {
        op.skill_id = mapped(op.skill_id);
        if (op.payload.contains("absorb")) op.payload["absorb"] = mapped(op.payload["absorb"].get<std::string>());
        op.step += a.version;
        out.push_back(std::move(op));
    }
    return out;
}

std::optional<std::vector<UpdateOp>> parse_duplicates(const std::string& reply, const SkillDocument& left,
                                                      const SkillDocument& right, int step, std::string& problem) {
    auto j = extract_json(reply);
    if (!j || !j->is_object() || !j->contains("duplicates") || !(*j)["duplicates"].is_array()) {
        problem = "reply must be a JSON object with a \"duplicates\" list";
        return std::nullopt;
    }
    std::vector<UpdateOp> ops;
    std::set<std::string> dropped;
    for (const auto& d : (*j)["duplicates"]) {
        if (!d.is_object() || !d.contains("keep") || !d.contains("drop") || !d["keep"].is_string() ||
            !d["drop"].is_string()) {
            problem = "each duplicate needs string fields keep and drop";
            return std::nullopt;
        }
        auto keep = d["keep"].get<std::string>(), drop = d["drop"].get<std::string>();
        const auto* k = left.find(keep);
        const auto* r = right.find(drop);
        if (!k || !r || k->status != SkillStatus::active || r->status != SkillStatus::active) {
            problem = "keep must name an active skill of the first list and drop one of the second: " + keep + ", " + drop;
            return std::nullopt;
        }
        if (!dropped.insert(drop).second) {
            problem = "skill dropped twice: " + drop;
            return std::nullopt;
        }
        UpdateOp op{OpKind::merge, keep, {{"absorb", drop}}, kMergeCommit, step};
        if (d.contains("title") && d["title"].is_string()) op.payload["title"] = d["title"];
        if (d.contains("body") && d["body"].is_string()) op.payload["body"] = d["body"];
        ops.push_back(std::move(op));
    }
    return ops;
}

}  // namespace

MergeResult merge_documents(const SkillDocument& a, const SkillDocument& b, Gateway& gateway,
                            const std::string& backend_id) {
    auto log = a.update_log;
    auto rebased = rebase(a, b);
    log.insert(log.end(), rebased.begin(), rebased.end());
    const int step = a.version + b.version + 1;

    // Right-hand entries under their renamed ids, for the prompt and validation.
    SkillDocument right = replay(log);
    std::erase_if(right.entries, [&](const SkillEntry& e) { return a.find(e.skill_id) != nullptr; });

    MergeResult result;
    std::vector<UpdateOp> batch;
    if (a.active_count() > 0 && right.active_count() > 0) {
        ChatRequest req;
        req.backend_id = backend_id;
        req.audit_tags = {tags::merge};
        req.messages = {
            {"system",
             "You merge two skill lists learned from the same repository. Find pairs that describe the same "
             "pattern. Reply with JSON only: {\"duplicates\": [{\"keep\": <id from list A>, \"drop\": <id from "
             "list B>, \"title\": <optional merged title>, \"body\": <optional merged body>}]}. Use an empty list "
             "when nothing overlaps."},
            {"user", "List A:\n" + describe(a) + "\nList B:\n" + describe(right)}};
        std::string problem;
        std::optional<std::vector<UpdateOp>> parsed;
        for (int attempt = 0; attempt < 2 && !parsed; ++attempt) {
            auto reply = gateway.complete(req);
            parsed = parse_duplicates(reply, a, right, step, problem);
            req.messages.push_back({"assistant", reply});
            req.messages.push_back({"user", "That reply was invalid: " + problem + ". Answer again."});
        }
        if (parsed) {
            batch = std::move(*parsed);
        } else {
            result.fallback = true;
        }
    }
    result.duplicates_removed = batch.size();
    if (batch.empty()) batch.push_back({OpKind::noop, "", json::object(), kMergeCommit, step});
    log.insert(log.end(), batch.begin(), batch.end());
    result.doc = replay(log);
    return result;
}

MergeResult merge_all(const std::vector<SkillDocument>& docs, Gateway& gateway, const std::string& backend_id) {
    if (docs.empty()) return {empty_document(), false, 0};
    if (docs.size() == 1) return {docs.front(), false, 0};
    auto mid = docs.begin() + static_cast<std::ptrdiff_t>(docs.size() / 2);
    auto left = merge_all({docs.begin(), mid}, gateway, backend_id);
    auto right = merge_all({mid, docs.end()}, gateway, backend_id);
    auto merged = merge_documents(left.doc, right.doc, gateway, backend_id);
    merged.fallback = merged.fallback || left.fallback || right.fallback;
    merged.duplicates_removed += left.duplicates_removed + right.duplicates_removed;
    return merged;
}

// --- Disk ------------------------------------------------------------------

void save_version(const std::filesystem::path& dir, const SkillDocument& doc) {
    std::filesystem::create_directories(dir);
    std::string log;
    for (const auto& op : doc.update_log) log += to_json(op).dump() + "\n";
    write_file_atomic(dir / "log.jsonl", log);
    write_file_atomic(dir / ("doc_v" + std::to_string(doc.version) + ".json"), serialize_document(doc));
}

std::vector<UpdateOp> load_log(const std::filesystem::path& dir) {
    std::vector<UpdateOp> log;
    auto path = dir / "log.jsonl";
    if (!std::filesystem::exists(path)) throw StageError("no memory log at " + path.string());
    for (const auto& line : split_lines(read_file(path))) {
        if (trim(line).empty()) continue;
        try {
            log.push_back(op_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw StageError("corrupt memory log " + path.string() + ": " + e.what());
        }
    }
    return log;
}

SkillDocument load_latest(const std::filesystem::path& dir) { return replay(load_log(dir)); }

}  // namespace ltc
