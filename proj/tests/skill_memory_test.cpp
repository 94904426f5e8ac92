#include "ltc/skill_memory.hpp"

#include "test_support.hpp"

using namespace ltc;
using ltc::testing::TempDir;

namespace {

UpdateOp create(std::string id, std::string title = "t", std::string category = "testing") {
    return {OpKind::create, std::move(id), {{"title", title}, {"body", "body of " + title}, {"kind", "style"},
                                             {"category", category}}};
}
UpdateOp revise(std::string id, json payload = {{"body", "revised"}}) { return {OpKind::revise, std::move(id), payload}; }
UpdateOp deprecate(std::string id) { return {OpKind::deprecate, std::move(id)}; }

std::shared_ptr<ScriptedBackend> merge_script(const std::string& reply) {
    json script = {{"entries", {{{"tags", {"merge"}}, {"replies", {reply}}}}}};
    return ScriptedBackend::from_json(script);
}

}  // namespace

TEST(SkillMemory, EmptyDocument) {
    auto d = empty_document();
    EXPECT_EQ(d.version, 0);
    EXPECT_TRUE(d.entries.empty());
    EXPECT_EQ(render_for_prompt(d), "");
    EXPECT_EQ(replay({}), d);
}

TEST(SkillMemory, CreateReviseDeprecate) {
    auto d0 = empty_document();
    auto d1 = apply_update(d0, {create("s1")}, "c1");
    EXPECT_EQ(d0.version, 0);  // value semantics
    EXPECT_EQ(d1.version, 1);
    ASSERT_EQ(d1.entries.size(), 1u);
    EXPECT_EQ(d1.entries[0].status, SkillStatus::active);
    EXPECT_EQ(d1.entries[0].evidence, std::vector<std::string>{"c1"});
    EXPECT_EQ(d1.entries[0].created_at_step, 1);

    auto d2 = apply_update(d1, {deprecate("s1")}, "c2");
    ASSERT_EQ(d2.entries.size(), 1u);
    EXPECT_EQ(d2.entries[0].status, SkillStatus::deprecated);
    EXPECT_EQ(d2.entries[0].evidence, (std::vector<std::string>{"c1", "c2"}));
    EXPECT_EQ(d2.entries[0].revised_at_steps, std::vector<int>{2});
}

TEST(SkillMemory, BatchRejectedAtomically) {
    auto d1 = apply_update(empty_document(), {create("s1")}, "c1");
    try {
        apply_update(d1, {create("s2"), revise("ghost")}, "c2");
        FAIL();
    } catch (const UpdateRejected& e) {
        EXPECT_EQ(e.op_index(), 1u);
    }
    EXPECT_EQ(d1.version, 1);
    EXPECT_EQ(d1.entries.size(), 1u);
    EXPECT_THROW(apply_update(d1, {create("s1")}, "c2"), UpdateRejected);
    EXPECT_THROW(apply_update(d1, {{OpKind::merge, "s1", {{"absorb", "s1"}}}}, "c2"), UpdateRejected);
}

TEST(SkillMemory, EmptyBatchStillAdvancesVersion) {
    auto d = apply_update(empty_document(), {}, "c1");
    d = apply_update(d, {create("s1")}, "c2");
    d = apply_update(d, {}, "c3");
    EXPECT_EQ(d.version, 3);
    EXPECT_EQ(replay(d.update_log), d);
}

TEST(SkillMemory, RenderSkipsDeprecatedAndFilters) {
    auto d = apply_update(empty_document(), {create("s1", "Keep me", "testing"), create("s2", "Old", "concurrency"),
                                             create("s3", "Locks", "concurrency")},
                          "c1");
    d = apply_update(d, {deprecate("s2")}, "c2");
    auto text = render_for_prompt(d);
    EXPECT_NE(text.find("Keep me"), std::string::npos);
    EXPECT_EQ(text.find("Old"), std::string::npos);
    EXPECT_EQ(text.find("body of Old"), std::string::npos);
    // (category, created_at_step) order: concurrency before testing.
    EXPECT_LT(text.find("Locks"), text.find("Keep me"));

    auto only = render_for_prompt(d, std::set<std::string>{"concurrency"});
    EXPECT_NE(only.find("Locks"), std::string::npos);
    EXPECT_EQ(only.find("Keep me"), std::string::npos);
}

TEST(SkillMemory, RenderTruncatesAtEntryBoundary) {
    auto d = apply_update(empty_document(), {create("s1", std::string(200, 'x')), create("s2")}, "c1");
    auto text = render_for_prompt(d, std::nullopt, 80);
    EXPECT_EQ(text.find("xxxx"), std::string::npos);
    EXPECT_NE(text.find("[omitted: 2]"), std::string::npos);
    EXPECT_NE(text.find("# Repository skills"), std::string::npos);
}

TEST(ParseReflection, WellFormed) {
    std::string reply = R"(The attempt edited the wrong module.

```json
[{"op": "create", "skill_id": "s1", "title": "Use the logger", "body": "Call log::warn", "kind": "internal_api"},
 {"op": "revise", "skill_id": "s0", "body": "new body"},
 {"op": "deprecate", "skill_id": "s9", "reason": "contradicted"}]
```
)";
    auto parsed = parse_reflection(reply);
    EXPECT_EQ(parsed.gap_summary, "The attempt edited the wrong module.");
    ASSERT_EQ(parsed.ops.size(), 3u);
    EXPECT_EQ(parsed.ops[0].op, OpKind::create);
    EXPECT_EQ(parsed.ops[1].op, OpKind::revise);
    EXPECT_EQ(parsed.ops[2].op, OpKind::deprecate);
    EXPECT_EQ(parsed.ops[0].payload["kind"], "internal_api");
}

TEST(ParseReflection, MissingBodyNamesField) {
    try {
        parse_update_ops("```json\n[{\"op\":\"create\",\"skill_id\":\"s1\",\"title\":\"x\"}]\n```");
        FAIL();
    } catch (const ReplyParseError& e) {
        EXPECT_EQ(e.fragment(), "body");
    }
}

TEST(ParseReflection, Errors) {
    EXPECT_THROW(parse_update_ops("no block at all"), ReplyParseError);
    EXPECT_THROW(parse_update_ops("```json\n[{\"op\":\"delete\",\"skill_id\":\"s\"}]\n```"), ReplyParseError);
    EXPECT_THROW(parse_update_ops("```json\n[{\"op\":\"create\",\"skill_id\":\"s\",\"title\":\"a\",\"body\":\"b\","
                                  "\"kind\":\"weird\"}]\n```"),
                 ReplyParseError);
    std::vector<std::string> warnings;
    auto ops = parse_update_ops("```json\n[{\"op\":\"deprecate\",\"skill_id\":\"s\",\"colour\":1}]\n```", &warnings);
    EXPECT_EQ(ops.size(), 1u);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("colour"), std::string::npos);
    // A create with no kind defaults to other.
    ops = parse_update_ops("```json\n[{\"op\":\"create\",\"skill_id\":\"s\",\"title\":\"a\",\"body\":\"b\"}]\n```");
    EXPECT_EQ(ops[0].payload["kind"], "other");
}

TEST(Merge, WithEmptyIsIdentityAndSkipsModel) {
    auto backend = merge_script("{\"duplicates\": []}");
    Gateway gw({});
    gw.register_backend("m", backend);
    auto a = apply_update(empty_document(), {create("s1"), create("s2")}, "c1");
    auto r = merge_documents(a, empty_document(), gw, "m");
    EXPECT_EQ(r.doc.entries, a.entries);
    EXPECT_EQ(backend->calls(), 0u);
    auto r2 = merge_documents(empty_document(), a, gw, "m");
    EXPECT_EQ(r2.doc.entries, a.entries);
}

TEST(Merge, DuplicateVerdictUnionsEvidence) {
    auto a = apply_update(empty_document(), {create("s1", "Use fixtures"), create("s2", "Locks")}, "ca");
    auto b = apply_update(empty_document(), {create("s1", "Use shared fixtures")}, "cb");
    // b's s1 collides with a's and becomes s1-2.
    auto backend = merge_script(R"({"duplicates": [{"keep": "s1", "drop": "s1-2", "title": "Use shared fixtures"}]})");
    Gateway gw({});
    gw.register_backend("m", backend);
    auto r = merge_documents(a, b, gw, "m");
    EXPECT_FALSE(r.fallback);
    EXPECT_EQ(r.doc.entries.size(), a.entries.size() + b.entries.size() - 1);
    const auto* s1 = r.doc.find("s1");
    ASSERT_NE(s1, nullptr);
    EXPECT_EQ(s1->evidence, (std::vector<std::string>{"ca", "cb"}));
    EXPECT_EQ(s1->title, "Use shared fixtures");
    EXPECT_EQ(r.doc.version, 3);
    EXPECT_EQ(replay(r.doc.update_log), r.doc);
}

TEST(Merge, DoubleFailureFallsBackToConcatenation) {
    auto a = apply_update(empty_document(), {create("s1")}, "ca");
    auto b = apply_update(empty_document(), {create("s2")}, "cb");
    auto backend = merge_script("I cannot decide");
    Gateway gw({});
    gw.register_backend("m", backend);
    auto r = merge_documents(a, b, gw, "m");
    EXPECT_TRUE(r.fallback);
    EXPECT_EQ(r.doc.entries.size(), 2u);
    EXPECT_EQ(backend->calls(), 2u);
}

TEST(Merge, BalancedTreeCoversAllShards) {
    std::vector<SkillDocument> shards;
    for (int i = 0; i < 5; ++i)
        shards.push_back(apply_update(empty_document(), {create("s" + std::to_string(i))}, "c" + std::to_string(i)));
    Gateway gw({});
    gw.register_backend("m", merge_script("{\"duplicates\": []}"));
    auto r = merge_all(shards, gw, "m");
    EXPECT_EQ(r.doc.entries.size(), 5u);
    std::set<std::string> evidence;
    for (const auto& e : r.doc.entries) evidence.insert(e.evidence.begin(), e.evidence.end());
    EXPECT_EQ(evidence.size(), 5u);
    EXPECT_EQ(replay(r.doc.update_log), r.doc);
}

TEST(SkillMemoryProperty, ReplayReproducesEveryRandomHistory) {
    StableRng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        SkillDocument doc;
        int next_id = 0;
        std::size_t prev_entries = 0;
        for (int step = 0; step < 12; ++step) {
            std::vector<UpdateOp> ops;
            auto n = rng.below(4);
            for (std::uint64_t k = 0; k < n; ++k) {
                auto choice = rng.below(3);
                if (choice == 0 || doc.entries.empty()) {
                    ops.push_back(create("k" + std::to_string(next_id++), "t", rng.below(2) ? "a" : "b"));
                } else {
                    const auto& target = doc.entries[rng.below(doc.entries.size())].skill_id;
                    ops.push_back(choice == 1 ? revise(target) : deprecate(target));
                }
            }
            int before = doc.version;
            doc = apply_update(doc, ops, "c" + std::to_string(step));
            ASSERT_EQ(doc.version, before + 1);
            ASSERT_GE(doc.entries.size(), prev_entries);  // soft delete
            prev_entries = doc.entries.size();
        }
        ASSERT_EQ(serialize_document(replay(doc.update_log)), serialize_document(doc));
        for (const auto& e : doc.entries) ASSERT_FALSE(e.evidence.empty());
        auto text = render_for_prompt(doc);
        for (const auto& e : doc.entries)
            if (e.status == SkillStatus::deprecated) ASSERT_EQ(text.find("[" + e.skill_id + " |"), std::string::npos);
    }
}

TEST(SkillMemory, DiskRoundTrip) {
    TempDir dir;
    auto d = apply_update(empty_document(), {create("s1")}, "c1");
    save_version(dir.path(), d);
    d = apply_update(d, {revise("s1")}, "c2");
    save_version(dir.path(), d);
    EXPECT_TRUE(std::filesystem::exists(dir / "doc_v1.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "doc_v2.json"));
    auto loaded = load_latest(dir.path());
    EXPECT_EQ(loaded, d);
    EXPECT_EQ(serialize_document(loaded), read_file(dir / "doc_v2.json"));
}
