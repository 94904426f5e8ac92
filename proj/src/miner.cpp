#include "ltc/miner.hpp"

#include "ltc/git.hpp"
#include "ltc/util.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fnmatch.h>
#include <regex>

namespace ltc {

namespace fs = std::filesystem;

std::string_view to_string(Quality::Kind kind) {
    switch (kind) {
    case Quality::Kind::unassessed: return "unassessed";
    case Quality::Kind::rejected_prefilter: return "rejected_prefilter";
    case Quality::Kind::rejected_llm: return "rejected_llm";
    case Quality::Kind::accepted: return "accepted";
    }
    return "?";
}

std::string CommitRecord::title() const {
    auto nl = message.find('\n');
    return std::string(trim(message.substr(0, nl)));
}

// --- Stage (i): history and prefilters ------------------------------------

std::vector<CommitRecord> scan_history(const fs::path& repo, const std::string& range, std::size_t token_divisor) {
    if (!fs::exists(repo) || !is_git_repository(repo)) throw ConfigError("not a git repository: " + repo.string());
    if (token_divisor == 0) throw ConfigError("token_divisor must be positive");
    auto log = git(repo, {"log", "--reverse", "--format=%H%x00%P%x00%at%x00%B%x1e", range, "--"});

    std::vector<CommitRecord> records;
    for (auto& chunk : split(log, '\x1e')) {
        auto entry = std::string(trim(chunk));
        if (entry.empty()) continue;
        auto fields = split(entry, '\0');
        if (fields.size() < 4) throw StageError("unexpected git log output near: " + entry.substr(0, 80));
        auto parents = split(std::string(trim(fields[1])), ' ');
        std::erase_if(parents, [](const std::string& p) { return p.empty(); });
        if (parents.size() > 1) continue;  // merge commit

        CommitRecord r;
        r.commit_id = fields[0];
        r.parent_id = parents.empty() ? kEmptyTree : parents[0];
        r.author_time = std::stoll(fields[2]);
        r.message = std::string(trim(fields[3]));
        auto text = git(repo, {"diff", "--no-color", "--no-ext-diff", "--no-textconv", "-M", "--src-prefix=a/",
                               "--dst-prefix=b/", r.parent_id, r.commit_id, "--"});
        try {
            r.patch = parse_patch(text);
        } catch (const DiffParseError& e) {
            throw StageError("cannot parse diff of " + r.commit_id + ": " + e.what());
        }
        r.diff_token_estimate = (text.size() + token_divisor - 1) / token_divisor;
        records.push_back(std::move(r));
    }
    std::stable_sort(records.begin(), records.end(),
                     [](const CommitRecord& a, const CommitRecord& b) { return a.author_time < b.author_time; });
    return records;
}

bool matches_manifest_glob(const std::string& path, const std::vector<std::string>& globs) {
    auto slash = path.rfind('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    for (const auto& g : globs) {
        const std::string& subject = g.find('/') != std::string::npos ? path : base;
        if (::fnmatch(g.c_str(), subject.c_str(), 0) == 0) return true;
    }
    return false;
}

CommitRecord prefilter(CommitRecord record, const PrefilterConfig& rules) {
    if (record.quality.kind != Quality::Kind::unassessed) return record;
    auto size = patch_size(record.patch);
    auto files = file_set(record.patch);
    auto reject = [&](const char* reason) {
        record.quality = {Quality::Kind::rejected_prefilter, reason};
        return record;
    };
    if (size < rules.min_modified_lines) return reject("min_lines");
    bool manifests_only = !files.empty() && std::all_of(files.begin(), files.end(), [&](const std::string& f) {
        return matches_manifest_glob(f, rules.version_manifest_globs);
    });
    if (manifests_only && size <= rules.version_bump_max_lines) return reject("version_bump");
    if (record.diff_token_estimate > rules.token_limit) return reject("token_limit");
    return record;
}

namespace {

std::string commit_context(const CommitRecord& r) {
    return "Commit message:\n" + r.message + "\n\nDiff:\n" + serialize_patch(r.patch);
}

ChatRequest make_request(const std::string& backend, const char* tag, std::string system, std::string user) {
    ChatRequest req;
    req.backend_id = backend;
    req.audit_tags = {tag};
    req.messages = {{"system", std::move(system)}, {"user", std::move(user)}};
    return req;
}

/// Sends the request; on a parse failure asks once more with `correction`.
template <typename Parse>
auto ask_with_retry(Gateway& gateway, ChatRequest req, const std::string& correction, Parse parse)
    -> decltype(parse(std::string())) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto reply = gateway.complete(req);
        if (auto parsed = parse(reply)) return parsed;
        req.messages.push_back({"assistant", reply});
        req.messages.push_back({"user", correction});
    }
    return std::nullopt;
}

}  // namespace

CommitRecord assess_quality(CommitRecord record, Gateway& gateway, const std::string& backend_id) {
    auto req = make_request(
        backend_id, tags::assess,
        "You review commits from a software repository. Decide whether the commit shows substantive, learnable "
        "development patterns (architecture, internal APIs, conventions, non-trivial logic) rather than trivial or "
        "mechanical edits. Reply with JSON only: {\"verdict\": \"accept\" | \"reject\", \"rationale\": \"<one "
        "paragraph describing what kind of development work this is>\"}.",
        commit_context(record));
    auto parsed = ask_with_retry(
        gateway, req, "Reply with JSON only: {\"verdict\": \"accept\" | \"reject\", \"rationale\": \"...\"}.",
        [](const std::string& reply) -> std::optional<Quality> {
            auto j = extract_json(reply);
            if (!j || !j->is_object() || !j->contains("verdict") || !(*j)["verdict"].is_string()) return std::nullopt;
            auto verdict = to_lower((*j)["verdict"].get<std::string>());
            std::string rationale = j->contains("rationale") && (*j)["rationale"].is_string()
                                        ? (*j)["rationale"].get<std::string>()
                                        : "";
            if (verdict == "accept") return Quality{Quality::Kind::accepted, rationale};
            if (verdict == "reject") return Quality{Quality::Kind::rejected_llm, rationale};
            return std::nullopt;
        });
    record.quality = parsed ? *parsed : Quality{Quality::Kind::rejected_llm, "unparseable"};
    return record;
}

// --- Stages (ii) and (iii): taxonomy and tagging --------------------------

bool CategoryTaxonomy::contains(const std::string& label) const {
    return std::any_of(categories.begin(), categories.end(), [&](const auto& c) { return c.label == label; });
}

std::vector<std::string> CategoryTaxonomy::labels() const {
    std::vector<std::string> out;
    for (const auto& c : categories) out.push_back(c.label);
    return out;
}

json to_json(const CategoryTaxonomy& taxonomy) {
    json arr = json::array();
    for (const auto& c : taxonomy.categories)
        arr.push_back({{"label", c.label}, {"description", c.description}, {"exemplars", c.exemplar_rationales}});
    return arr;
}

CategoryTaxonomy taxonomy_from_json(const json& j) {
    CategoryTaxonomy t;
    for (const auto& c : j)
        t.categories.push_back({c.at("label").get<std::string>(), c.value("description", ""),
                                c.value("exemplars", std::vector<std::string>{})});
    return t;
}

CategoryTaxonomy build_taxonomy(const std::vector<std::string>& rationales, Gateway& gateway,
                                const std::string& backend_id, std::size_t k_target) {
    if (rationales.empty()) throw StageError("no accepted commits to build a taxonomy from");
    if (k_target < 2) throw ConfigError("k_target must be at least 2");

    std::string listing;
    for (std::size_t i = 0; i < rationales.size(); ++i) listing += "[" + std::to_string(i) + "] " + rationales[i] + "\n";
    auto req = make_request(
        backend_id, tags::taxonomy,
        "You cluster descriptions of commits from one repository into at most " + std::to_string(k_target) +
            " development categories. Reply with JSON only: {\"categories\": [{\"label\": \"<short-kebab-label>\", "
            "\"description\": \"...\", \"exemplars\": [<indices of member descriptions>]}]}.",
        listing);

    const auto n = rationales.size();
    auto parsed = ask_with_retry(
        gateway, req, "Reply with JSON only, shaped as {\"categories\": [{\"label\", \"description\", \"exemplars\"}]}.",
        [&](const std::string& reply) -> std::optional<CategoryTaxonomy> {
            auto j = extract_json(reply);
            if (!j || !j->is_object() || !j->contains("categories") || !(*j)["categories"].is_array())
                return std::nullopt;
            CategoryTaxonomy t;
            for (const auto& c : (*j)["categories"]) {
                if (!c.is_object() || !c.contains("label") || !c["label"].is_string()) continue;
                std::string label(trim(c["label"].get<std::string>()));
                if (label.empty() || t.contains(label)) continue;
                TaxonomyCategory cat{label, c.value("description", ""), {}};
                if (c.contains("exemplars") && c["exemplars"].is_array()) {
                    for (const auto& idx : c["exemplars"])
                        if (idx.is_number_unsigned() && idx.get<std::size_t>() < n)
                            cat.exemplar_rationales.push_back(rationales[idx.get<std::size_t>()]);
                }
                if (cat.exemplar_rationales.empty()) cat.exemplar_rationales.push_back(rationales[t.categories.size() % n]);
                t.categories.push_back(std::move(cat));
                if (t.categories.size() == k_target) break;
            }
            if (t.categories.empty()) return std::nullopt;
            return t;
        });
    if (!parsed) throw StageError("taxonomy reply unparseable after retry");
    if (parsed->categories.size() < 2 && !parsed->contains(kOtherCategory)) {
        parsed->categories.push_back(
            {kOtherCategory, "Changes that fit no other category.", {rationales[rationales.size() - 1]}});
    }
    return *parsed;
}

CommitRecord tag_category(CommitRecord record, const CategoryTaxonomy& taxonomy, Gateway& gateway,
                          const std::string& backend_id, std::vector<std::string>* warnings) {
    if (record.quality.kind != Quality::Kind::accepted)
        throw StageError("tag_category on a record that is not accepted: " + record.commit_id);
    std::string cats;
    for (const auto& c : taxonomy.categories) cats += "- " + c.label + ": " + c.description + "\n";
    auto req = make_request(backend_id, tags::tag,
                            "Assign the commit to exactly one of these categories:\n" + cats +
                                "Reply with JSON only: {\"category\": \"<label>\"}.",
                            "Title: " + record.title() + "\nRationale: " + record.quality.detail + "\n\n" +
                                commit_context(record));
    auto label = ask_with_retry(gateway, req, "Reply with JSON only: {\"category\": \"<label>\"}.",
                                [](const std::string& reply) -> std::optional<std::string> {
                                    auto j = extract_json(reply);
                                    if (j && j->is_object() && j->contains("category") && (*j)["category"].is_string())
                                        return std::string(trim((*j)["category"].get<std::string>()));
                                    if (j) return std::nullopt;
                                    auto line = reply.substr(0, reply.find('\n'));
                                    std::string s(trim(line));
                                    while (!s.empty() && (s.front() == '"' || s.front() == '`' || s.front() == '\''))
                                        s.erase(s.begin());
                                    while (!s.empty() && (s.back() == '"' || s.back() == '`' || s.back() == '\'' ||
                                                          s.back() == '.'))
                                        s.pop_back();
                                    if (s.empty() || s.find(' ') != std::string::npos) return std::nullopt;
                                    return s;
                                });
    auto warn = [&](const std::string& w) {
        if (warnings) warnings->push_back(w);
    };
    if (!label) {
        warn("tag reply for " + record.commit_id + " unparseable; using 'other'");
        record.category = kOtherCategory;
        return record;
    }
    for (const auto& c : taxonomy.categories) {
        if (c.label == *label || to_lower(c.label) == to_lower(*label)) {
            record.category = c.label;
            return record;
        }
    }
    if (*label != kOtherCategory) warn("unknown category '" + *label + "' for " + record.commit_id + "; using 'other'");
    record.category = kOtherCategory;
    return record;
}

// --- Stage (iv): temporal split and stratified sampling -------------------

std::map<std::string, std::size_t> largest_remainder(const std::vector<Stratum>& strata, std::size_t quota) {
    std::map<std::string, std::size_t> out;
    std::uint64_t total = 0;
    for (const auto& s : strata) total += s.population;
    if (quota >= total) {
        for (const auto& s : strata) out[s.label] = s.population;
        return out;
    }
    std::vector<std::uint64_t> remainder(strata.size());
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < strata.size(); ++i) {
        std::uint64_t scaled = static_cast<std::uint64_t>(quota) * strata[i].population;
        out[strata[i].label] = scaled / total;
        remainder[i] = scaled % total;
        assigned += scaled / total;
    }
    std::vector<std::size_t> order(strata.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
        if (strata[a].most_recent_time != strata[b].most_recent_time)
            return strata[a].most_recent_time > strata[b].most_recent_time;
        if (strata[a].most_recent_commit != strata[b].most_recent_commit)
            return strata[a].most_recent_commit < strata[b].most_recent_commit;
        return strata[a].label < strata[b].label;
    });
    for (std::size_t k = 0; k < quota - assigned; ++k) ++out[strata[order[k]].label];
    return out;
}

Cutoff Cutoff::parse(const std::string& text) {
    std::string s(trim(text));
    Cutoff c;
    if (s.empty()) throw ConfigError("empty cutoff");
    if (s.find('T') != std::string::npos && s.back() == 'Z') {
        std::tm tm{};
        if (!strptime(s.c_str(), "%Y-%m-%dT%H:%M:%SZ", &tm)) throw ConfigError("bad cutoff timestamp: " + s);
        c.timestamp = static_cast<std::int64_t>(timegm(&tm));
        return c;
    }
    if (s.find('.') != std::string::npos) {
        std::size_t used = 0;
        double f = 0;
        try {
            f = std::stod(s, &used);
        } catch (const std::exception&) {
            throw ConfigError("bad cutoff fraction: " + s);
        }
        if (used != s.size() || !(f > 0.0 && f < 1.0)) throw ConfigError("cutoff fraction must lie in (0, 1): " + s);
        c.fraction = f;
        return c;
    }
    if (!std::all_of(s.begin(), s.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); }))
        throw ConfigError("cutoff must be unix seconds, RFC 3339 UTC or a fraction: " + s);
    c.timestamp = std::stoll(s);
    return c;
}

std::string Cutoff::str() const {
    if (fraction) {
        json j = *fraction;
        return j.dump();
    }
    return timestamp ? std::to_string(*timestamp) : "";
}

std::int64_t resolve_cutoff(const std::vector<CommitRecord>& records, const Cutoff& cutoff) {
    if (records.empty()) throw StageError("no records to split");
    std::vector<std::int64_t> times;
    for (const auto& r : records) times.push_back(r.author_time);
    std::sort(times.begin(), times.end());
    std::int64_t t;
    if (cutoff.fraction) {
        auto k = static_cast<std::size_t>(std::floor(*cutoff.fraction * static_cast<double>(times.size())));
        if (k == 0) throw StageError("cutoff leaves the learn pool empty");
        t = times[std::min(k, times.size()) - 1];
    } else if (cutoff.timestamp) {
        t = *cutoff.timestamp;
    } else {
        throw ConfigError("no cutoff configured");
    }
    if (times.front() > t) throw StageError("cutoff " + format_utc(t) + " precedes every commit: empty learn pool");
    if (times.back() <= t) throw StageError("cutoff " + format_utc(t) + " follows every commit: empty test pool");
    return t;
}

json to_json(const TaskSpec& t) {
    return {{"task_id", t.task_id},
            {"commit_id", t.commit_id},
            {"pool", t.pool == Pool::learn ? "learn" : "test"},
            {"category", t.category},
            {"query", t.query},
            {"snapshot_ref", t.snapshot_ref},
            {"author_time", t.author_time},
            {"oracle_patch", serialize_patch(t.oracle_patch)}};
}

TaskSpec task_from_json(const json& j) {
    TaskSpec t;
    try {
        t.task_id = j.at("task_id").get<std::string>();
        t.commit_id = j.at("commit_id").get<std::string>();
        auto pool = j.at("pool").get<std::string>();
        if (pool != "learn" && pool != "test") throw ConfigError("unknown pool '" + pool + "'");
        t.pool = pool == "learn" ? Pool::learn : Pool::test;
        t.category = j.at("category").get<std::string>();
        t.query = j.at("query").get<std::string>();
        t.snapshot_ref = j.at("snapshot_ref").get<std::string>();
        t.author_time = j.at("author_time").get<std::int64_t>();
        t.oracle_patch = parse_patch(j.at("oracle_patch").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed task spec: ") + e.what());
    } catch (const DiffParseError& e) {
        throw ConfigError(std::string("malformed oracle patch in task spec: ") + e.what());
    }
    return t;
}

LearnTask::LearnTask(TaskSpec spec) : spec_(std::move(spec)) {
    if (spec_.pool != Pool::learn) throw StageError("task " + spec_.task_id + " is not a learn task");
}

TestTask::TestTask(TaskSpec spec) : spec_(std::move(spec)) {
    if (spec_.pool != Pool::test) throw StageError("task " + spec_.task_id + " is not a test task");
}

void verify_temporal_split(const std::vector<TaskSpec>& learn, const std::vector<TaskSpec>& test) {
    if (learn.empty() || test.empty()) return;
    auto latest = std::max_element(learn.begin(), learn.end(),
                                   [](const auto& a, const auto& b) { return a.author_time < b.author_time; });
    auto earliest = std::min_element(test.begin(), test.end(),
                                     [](const auto& a, const auto& b) { return a.author_time < b.author_time; });
    if (latest->author_time >= earliest->author_time)
        throw StageError("temporal leak: learn task " + latest->task_id + " (" + format_utc(latest->author_time) +
                         ") does not precede test task " + earliest->task_id + " (" +
                         format_utc(earliest->author_time) + ")");
}

namespace {

std::vector<TaskSpec> sample_pool(const std::vector<const CommitRecord*>& pool, std::size_t quota, Pool kind,
                                  StableRng& rng, std::map<std::string, std::size_t>& allocation,
                                  std::vector<std::string>& warnings) {
    const char* name = kind == Pool::learn ? "learn" : "test";
    if (quota > pool.size())
        warnings.push_back(std::string(name) + " quota " + std::to_string(quota) + " exceeds the " +
                           std::to_string(pool.size()) + " available records; taking all");
    std::map<std::string, std::vector<const CommitRecord*>> by_category;
    for (const auto* r : pool) by_category[*r->category].push_back(r);
    std::vector<Stratum> strata;
    for (const auto& [label, members] : by_category) {
        const auto* latest = *std::max_element(members.begin(), members.end(), [](const auto* a, const auto* b) {
            return std::tie(a->author_time, b->commit_id) < std::tie(b->author_time, a->commit_id);
        });
        strata.push_back({label, members.size(), latest->author_time, latest->commit_id});
    }
    allocation = largest_remainder(strata, quota);

    std::vector<const CommitRecord*> chosen;
    for (auto& [label, members] : by_category) {
        std::sort(members.begin(), members.end(), [](const auto* a, const auto* b) {
            return std::tie(a->author_time, a->commit_id) < std::tie(b->author_time, b->commit_id);
        });
        rng.shuffle(members);
        chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(allocation[label]));
    }
    std::sort(chosen.begin(), chosen.end(), [](const auto* a, const auto* b) {
        return std::tie(a->author_time, a->commit_id) < std::tie(b->author_time, b->commit_id);
    });
    std::vector<TaskSpec> out;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        const auto& r = *chosen[i];
        char seq[24];
        std::snprintf(seq, sizeof seq, "%03zu", i + 1);
        out.push_back({std::string(name) + "-" + seq + "-" + r.commit_id.substr(0, 8), r.commit_id, kind, *r.category,
                       "", r.parent_id, r.patch, r.author_time});
    }
    return out;
}

}  // namespace

SplitResult split_and_sample(const std::vector<CommitRecord>& records, const Cutoff& cutoff,
                             const SamplingConfig& quotas, std::uint64_t seed) {
    for (const auto& r : records) {
        if (r.quality.kind != Quality::Kind::accepted || !r.category)
            throw StageError("record " + r.commit_id + " is not accepted and tagged");
    }
    SplitResult out;
    out.cutoff_time = resolve_cutoff(records, cutoff);
    std::vector<const CommitRecord*> learn, test;
    for (const auto& r : records) (r.author_time <= out.cutoff_time ? learn : test).push_back(&r);

    StableRng rng(seed);
    out.learn = sample_pool(learn, quotas.learn_quota, Pool::learn, rng, out.learn_allocation, out.warnings);
    out.test = sample_pool(test, quotas.test_quota, Pool::test, rng, out.test_allocation, out.warnings);
    if (out.learn.empty() || out.test.empty()) throw StageError("sampling produced an empty pool");
    verify_temporal_split(out.learn, out.test);
    return out;
}

// --- Stage (v): query synthesis and leakage scan --------------------------

namespace {

const std::set<std::string>& keyword_stoplist() {
    static const std::set<std::string> words{
        "abstract", "async",  "auto",     "await",   "bool",      "break",     "case",    "catch",   "char",
        "class",    "const",  "continue", "default", "delete",    "double",    "elif",    "else",    "enum",
        "except",   "export", "extends",  "extern",  "false",     "False",     "final",   "finally", "float",
        "from",     "func",   "function", "impl",    "implements", "import",   "inline",  "interface", "lambda",
        "long",     "module", "namespace", "None",   "null",      "override",  "package", "pass",    "private",
        "protected", "public", "raise",   "return",  "self",      "short",     "signed",  "static",  "string",
        "struct",   "switch", "template", "this",    "throw",     "throws",    "trait",   "true",    "True",
        "typedef",  "typename", "type",   "union",   "unsigned",  "virtual",   "void",    "volatile", "where",
        "while",    "with",   "yield"};
    return words;
}

const std::set<std::string>& call_keywords() {
    static const std::set<std::string> words{"return", "if",    "while", "for",   "switch", "else",  "new",
                                             "delete", "throw", "case",  "await", "yield",  "print", "assert",
                                             "raise",  "not",   "and",   "or",    "elif",   "in",    "is",
                                             "sizeof", "do",    "goto",  "echo",  "puts"};
    return words;
}

void add_identifier(std::set<std::string>& out, std::string name) {
    if (auto pos = name.rfind("::"); pos != std::string::npos) name = name.substr(pos + 2);
    if (name.size() >= 4 && !keyword_stoplist().count(name)) out.insert(name);
}

}  // namespace

std::set<std::string> oracle_identifiers(const Patch& patch) {
    static const std::regex word(R"([A-Za-z_][A-Za-z0-9_]*)");
    static const std::regex keyword_def(
        R"(\b(?:def|class|struct|fn|func|function|interface|enum|trait|type|module|macro|record|object|union)\s+\*?([A-Za-z_]\w*))");
    static const std::regex go_method(R"(\bfunc\s*\([^)]*\)\s*([A-Za-z_]\w*))");
    static const std::regex js_binding(
        R"(\b(?:const|let|var)\s+([A-Za-z_]\w*)\s*=\s*(?:async\s*)?(?:function\b|\([^)]*\)\s*=>|[A-Za-z_]\w*\s*=>))");
    static const std::regex c_like(R"(^\s*([A-Za-z_][\w:<>,]*)[\s\*&]+(?:[A-Za-z_][\w:<>,]*[\s\*&]+)*\**([A-Za-z_][\w:~]*)\s*\([^;]*$)");

    std::set<std::string> out;
    for (const auto& fp : patch.files) {
        for (const auto& h : fp.hunks) {
            for (std::sregex_iterator it(h.section.begin(), h.section.end(), word), end; it != end; ++it)
                add_identifier(out, it->str());
            for (const auto& line : h.lines) {
                if (line.kind != '+') continue;
                std::smatch m;
                for (const auto* re : {&keyword_def, &go_method, &js_binding}) {
                    for (std::sregex_iterator it(line.text.begin(), line.text.end(), *re), end; it != end; ++it)
                        add_identifier(out, (*it)[1].str());
                }
                if (std::regex_search(line.text, m, c_like) && !call_keywords().count(m[1].str()))
                    add_identifier(out, m[2].str());
            }
        }
    }
    return out;
}

std::vector<std::string> leakage_violations(const std::string& query, const Patch& patch) {
    std::set<std::string> found;
    for (const auto& path : file_set(patch)) {
        if (query.find(path) != std::string::npos) found.insert("path " + path);
        auto slash = path.rfind('/');
        auto base = slash == std::string::npos ? path : path.substr(slash + 1);
        if (base.size() >= 4 && contains_word(query, base)) found.insert("file name " + base);
    }
    for (const auto& id : oracle_identifiers(patch))
        if (contains_word(query, id)) found.insert("identifier " + id);
    return {found.begin(), found.end()};
}

QueryOutcome synthesize_query(const CommitRecord& record, Gateway& gateway, const std::string& backend_id) {
    auto req = make_request(
        backend_id, tags::query,
        "Write an issue-style request, as a user or maintainer would file it, that asks for the change this commit "
        "makes. Describe the problem or the desired behaviour only. Never mention file paths, file names, function, "
        "class or variable names, or how to implement the change. Reply with JSON only: {\"query\": \"...\"}.",
        commit_context(record));
    auto extract = [](const std::string& reply) {
        auto j = extract_json(reply);
        if (j && j->is_object() && j->contains("query") && (*j)["query"].is_string())
            return std::string(trim((*j)["query"].get<std::string>()));
        return std::string(trim(reply));
    };
    QueryOutcome out;
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto reply = gateway.complete(req);
        auto query = extract(reply);
        out.violations = query.empty() ? std::vector<std::string>{"empty query"} : leakage_violations(query, record.patch);
        if (out.violations.empty()) {
            out.query = query;
            return out;
        }
        req.messages.push_back({"assistant", reply});
        req.messages.push_back({"user", "The request mentions implementation details: " + join(out.violations, "; ") +
                                            ". Rewrite it without them. Reply with JSON only: {\"query\": \"...\"}."});
    }
    return out;
}

// --- Dataset files ---------------------------------------------------------

Dataset load_dataset(const fs::path& dir) {
    auto manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw ConfigError("no dataset at " + dir.string() + " (manifest.json missing)");
    Dataset d;
    try {
        d.manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw ConfigError("malformed dataset manifest: " + std::string(e.what()));
    }
    auto read_task = [&](const std::string& id) {
        auto p = dir / "tasks" / (id + ".json");
        if (!fs::exists(p)) throw ConfigError("dataset task file missing: " + p.string());
        try {
            return task_from_json(json::parse(read_file(p)));
        } catch (const json::exception& e) {
            throw ConfigError("malformed task file " + p.string() + ": " + e.what());
        }
    };
    std::vector<TaskSpec> learn, test;
    try {
        for (const auto& id : d.manifest.at("learn_tasks")) learn.push_back(read_task(id.get<std::string>()));
        for (const auto& id : d.manifest.at("test_tasks")) test.push_back(read_task(id.get<std::string>()));
        d.repository = d.manifest.at("repository").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError("malformed dataset manifest: " + std::string(e.what()));
    }
    verify_temporal_split(learn, test);
    for (auto& t : learn) d.learn.emplace_back(std::move(t));
    for (auto& t : test) d.test.emplace_back(std::move(t));
    return d;
}

MineReport mine_repository(const MineOptions& opt, Gateway& gateway, const fs::path& dataset_dir,
                           const json& config_echo) {
    MineReport report;
    auto& counts = report.counts;
    std::string rejections;
    auto reject = [&](const std::string& commit, const std::string& stage, const std::string& reason) {
        rejections += json{{"commit_id", commit}, {"stage", stage}, {"reason", reason}}.dump() + "\n";
    };

    auto records = scan_history(opt.repository, opt.range, opt.prefilter.token_divisor);
    counts["scanned"] = records.size();

    std::vector<CommitRecord> survivors;
    for (auto& r : records) {
        r = prefilter(std::move(r), opt.prefilter);
        if (r.quality.kind == Quality::Kind::rejected_prefilter) reject(r.commit_id, "prefilter", r.quality.detail);
        else survivors.push_back(std::move(r));
    }
    counts["prefilter_passed"] = survivors.size();

    std::vector<CommitRecord> accepted;
    for (auto& r : survivors) {
        const std::string id = r.commit_id;
        try {
            r = assess_quality(std::move(r), gateway, opt.backend_id);
        } catch (const BackendError& e) {
            reject(id, "assess", std::string("gateway failure: ") + e.what());
            ++counts["unassessed"];
            continue;
        } catch (const ScriptError& e) {
            reject(id, "assess", std::string("gateway failure: ") + e.what());
            ++counts["unassessed"];
            continue;
        }
        if (r.quality.kind == Quality::Kind::accepted) accepted.push_back(std::move(r));
        else reject(r.commit_id, "assess", r.quality.detail);
    }
    counts["accepted"] = accepted.size();
    if (accepted.empty()) throw StageError("no commit survived quality assessment");

    std::vector<std::string> rationales;
    for (const auto& r : accepted) rationales.push_back(r.quality.detail);
    StableRng sample_rng(opt.seed);
    sample_rng.shuffle(rationales);
    if (rationales.size() > opt.rationale_sample) rationales.resize(opt.rationale_sample);
    auto taxonomy = build_taxonomy(rationales, gateway, opt.backend_id, opt.k_target);

    std::vector<CommitRecord> tagged;
    for (auto& r : accepted) {
        const std::string id = r.commit_id;
        try {
            tagged.push_back(tag_category(std::move(r), taxonomy, gateway, opt.backend_id, &report.warnings));
        } catch (const BackendError& e) {
            reject(id, "tag", std::string("gateway failure: ") + e.what());
        } catch (const ScriptError& e) {
            reject(id, "tag", std::string("gateway failure: ") + e.what());
        }
    }
    counts["tagged"] = tagged.size();

    auto split = split_and_sample(tagged, opt.cutoff, opt.quotas, opt.seed);
    report.warnings.insert(report.warnings.end(), split.warnings.begin(), split.warnings.end());
    std::map<std::string, const CommitRecord*> by_id;
    for (const auto& r : tagged) by_id[r.commit_id] = &r;

    auto fill_queries = [&](std::vector<TaskSpec>& pool) {
        std::vector<TaskSpec> kept;
        for (auto& t : pool) {
            QueryOutcome q;
            try {
                q = synthesize_query(*by_id.at(t.commit_id), gateway, opt.backend_id);
            } catch (const BackendError& e) {
                q.violations = {std::string("gateway failure: ") + e.what()};
            } catch (const ScriptError& e) {
                q.violations = {std::string("gateway failure: ") + e.what()};
            }
            if (!q.query) {
                reject(t.commit_id, "query", join(q.violations, "; "));
                ++counts["excluded_query"];
                continue;
            }
            t.query = *q.query;
            kept.push_back(std::move(t));
        }
        pool = std::move(kept);
    };
    fill_queries(split.learn);
    fill_queries(split.test);
    if (split.learn.empty() || split.test.empty()) throw StageError("query synthesis excluded every task of a pool");
    counts["learn"] = split.learn.size();
    counts["test"] = split.test.size();
    counts.try_emplace("excluded_query", 0);
    counts.try_emplace("unassessed", 0);

    fs::create_directories(dataset_dir);
    fs::remove_all(dataset_dir / "tasks");
    fs::create_directories(dataset_dir / "tasks");
    json learn_ids = json::array(), test_ids = json::array();
    for (const auto* pool : {&split.learn, &split.test}) {
        for (const auto& t : *pool) {
            write_file_atomic(dataset_dir / "tasks" / (t.task_id + ".json"), to_json(t).dump(2) + "\n");
            (t.pool == Pool::learn ? learn_ids : test_ids).push_back(t.task_id);
        }
    }
    write_file_atomic(dataset_dir / "rejections.jsonl", rejections);

    json manifest = {{"repository", fs::canonical(opt.repository).string()},
                     {"head", std::string(trim(git(opt.repository, {"rev-parse", "HEAD"})))},
                     {"range", opt.range},
                     {"taxonomy", to_json(taxonomy)},
                     {"counts", counts},
                     {"cutoff", {{"spec", opt.cutoff.str()}, {"time", split.cutoff_time}, {"utc", format_utc(split.cutoff_time)}}},
                     {"allocation", {{"learn", split.learn_allocation}, {"test", split.test_allocation}}},
                     {"seed", opt.seed},
                     {"config", config_echo},
                     {"learn_tasks", learn_ids},
                     {"test_tasks", test_ids},
                     {"warnings", report.warnings}};
    write_file_atomic(dataset_dir / "manifest.json", manifest.dump(2) + "\n");
    return report;
}

}  // namespace ltc
