#include "ltc/agent.hpp"

#include "ltc/util.hpp"

#include <algorithm>
#include <chrono>
#include <regex>

namespace ltc {

namespace fs = std::filesystem;

std::string Trajectory::to_jsonl() const {
    std::string out;
    for (std::size_t i = 0; i < tool_calls.size(); ++i) {
        const auto& c = tool_calls[i];
        json line = {{"step", i + 1},
                     {"tool", c.tool},
                     {"args", c.args},
                     {"args_digest", c.args_digest},
                     {"result_digest", c.result_digest},
                     {"error", c.error}};
        out += line.dump() + "\n";
    }
    json summary = {{"task_id", task_id},
                    {"condition", condition},
                    {"steps", steps},
                    {"truncated", truncated},
                    {"final_patch_files", final_patch.files.size()}};
    out += summary.dump() + "\n";
    return out;
}

// --- Sandbox ---------------------------------------------------------------

Sandbox::Sandbox(fs::path root) : root_(fs::canonical(root)) {}

namespace {

bool inside(const fs::path& base, const fs::path& p) {
    auto rel = p.lexically_relative(base);
    if (rel.empty()) return false;
    auto first = *rel.begin();
    return first != "..";
}

}  // namespace

fs::path Sandbox::resolve(const std::string& relative) const {
    if (relative.find('\0') != std::string::npos) throw SandboxViolation("path contains NUL");
    fs::path p(relative.empty() ? "." : relative);
    if (p.is_absolute() || p.has_root_name()) throw SandboxViolation("absolute path outside the worktree: " + relative);
    auto normal = p.lexically_normal();
    for (const auto& part : normal) {
        if (part == "..") throw SandboxViolation("path escapes the worktree: " + relative);
        if (part == ".git") throw SandboxViolation("path enters repository metadata: " + relative);
    }
    auto full = (root_ / normal).lexically_normal();
    std::error_code ec;
    auto real = fs::weakly_canonical(full, ec);
    if (ec) throw SandboxViolation("cannot resolve " + relative + ": " + ec.message());
    if (real != root_ && !inside(root_, real)) throw SandboxViolation("path resolves outside the worktree: " + relative);
    if (!full.empty() && full.filename().empty()) full = full.parent_path();
    return full;
}

std::string Sandbox::relative(const fs::path& resolved) const {
    auto rel = resolved.lexically_relative(root_).generic_string();
    return rel.empty() ? "." : rel;
}

// --- ToolBox ---------------------------------------------------------------

ToolBox::ToolBox(fs::path root, Limits limits) : sandbox_(std::move(root)), limits_(limits) {}

namespace {

std::string arg_string(const json& args, const char* key, std::optional<std::string> fallback = std::nullopt) {
    if (!args.contains(key) || args.at(key).is_null()) {
        if (fallback) return *fallback;
        throw ToolError(std::string("missing argument '") + key + "'");
    }
    if (!args.at(key).is_string()) throw ToolError(std::string("argument '") + key + "' must be a string");
    return args.at(key).get<std::string>();
}

std::size_t arg_size(const json& args, const char* key, std::size_t fallback) {
    if (!args.contains(key) || args.at(key).is_null()) return fallback;
    if (!args.at(key).is_number_integer() || args.at(key).get<long long>() < 0)
        throw ToolError(std::string("argument '") + key + "' must be a non-negative integer");
    return args.at(key).get<std::size_t>();
}

bool is_binary(const std::string& content) { return content.find('\0') != std::string::npos; }

std::vector<fs::path> files_under(const fs::path& start) {
    std::vector<fs::path> files;
    if (fs::is_regular_file(fs::symlink_status(start))) return {start};
    for (auto it = fs::recursive_directory_iterator(start); it != fs::recursive_directory_iterator(); ++it) {
        if (it->path().filename() == ".git") {
            it.disable_recursion_pending();
            continue;
        }
        if (it->is_regular_file() && !it->is_symlink()) files.push_back(it->path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

std::string ToolBox::execute(const std::string& tool, const json& args) {
    if (!args.is_object()) throw ToolError("args must be an object");
    if (tool == "read_file")
        return read_file(arg_string(args, "path"), arg_size(args, "start_line", 1),
                         std::min(arg_size(args, "max_lines", limits_.read_max_lines), limits_.read_max_lines));
    if (tool == "search") {
        bool regex = args.contains("regex") && args["regex"].is_boolean() && args["regex"].get<bool>();
        return search(arg_string(args, "query"), regex, arg_string(args, "path", "."));
    }
    if (tool == "list_dir") return list_dir(arg_string(args, "path", "."));
    if (tool == "edit_file") return edit_file(arg_string(args, "path"), arg_string(args, "old", ""), arg_string(args, "new"));
    throw ToolError("unknown tool '" + tool + "'");
}

std::string ToolBox::read_file(const std::string& path, std::size_t start_line, std::size_t max_lines) const {
    auto full = sandbox_.resolve(path);
    if (!fs::is_regular_file(full)) throw ToolError("not a file: " + path);
    auto content = ltc::read_file(full);
    if (is_binary(content)) throw ToolError("binary file: " + path);
    auto lines = split_lines(content);
    if (start_line == 0) start_line = 1;
    if (lines.empty()) return sandbox_.relative(full) + " is empty\n";
    if (start_line > lines.size())
        throw ToolError("start_line " + std::to_string(start_line) + " beyond end of file (" +
                        std::to_string(lines.size()) + " lines)");
    auto end = std::min(lines.size(), start_line - 1 + std::max<std::size_t>(max_lines, 1));
    std::string out = sandbox_.relative(full) + " lines " + std::to_string(start_line) + "-" + std::to_string(end) +
                      " of " + std::to_string(lines.size()) + "\n";
    for (std::size_t i = start_line - 1; i < end; ++i) out += std::to_string(i + 1) + "\t" + lines[i] + "\n";
    return out;
}

std::string ToolBox::search(const std::string& query, bool regex, const std::string& path) const {
    if (query.empty()) throw ToolError("empty search query");
    std::optional<std::regex> re;
    if (regex) {
        try {
            re.emplace(query);
        } catch (const std::regex_error& e) {
            throw ToolError(std::string("invalid regex: ") + e.what());
        }
    }
    auto start = sandbox_.resolve(path);
    if (!fs::exists(start)) throw ToolError("no such path: " + path);
    std::string out;
    std::size_t matches = 0;
    bool truncated = false;
    for (const auto& file : files_under(start)) {
        auto content = ltc::read_file(file);
        if (is_binary(content)) continue;
        auto lines = split_lines(content);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            bool hit = re ? std::regex_search(lines[i], *re) : lines[i].find(query) != std::string::npos;
            if (!hit) continue;
            if (matches == limits_.search_max_results) {
                truncated = true;
                break;
            }
            ++matches;
            auto text = lines[i].size() > 200 ? lines[i].substr(0, 200) + "..." : lines[i];
            out += sandbox_.relative(file) + ":" + std::to_string(i + 1) + ": " + text + "\n";
        }
        if (truncated) break;
    }
    if (matches == 0) return "no matches\n";
    if (truncated) out += "(results truncated at " + std::to_string(matches) + ")\n";
    return out;
}

std::string ToolBox::list_dir(const std::string& path) const {
    auto dir = sandbox_.resolve(path);
    if (!fs::is_directory(dir)) throw ToolError("not a directory: " + path);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto name = e.path().filename().string();
        if (name == ".git") continue;
        names.push_back(e.is_directory() && !e.is_symlink() ? name + "/" : name);
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) return "(empty)\n";
    return join(names, "\n") + "\n";
}

std::string ToolBox::edit_file(const std::string& path, const std::string& old_text, const std::string& new_text) {
    auto full = sandbox_.resolve(path);
    auto rel = sandbox_.relative(full);
    if (rel == ".") throw ToolError("edit_file needs a file path");
    auto status = fs::symlink_status(full);
    if (fs::is_symlink(status)) throw ToolError("refusing to edit through a symlink: " + path);
    if (!fs::exists(status)) {
        if (!old_text.empty()) throw ToolError("no such file: " + path + " (use an empty 'old' to create it)");
        originals_.try_emplace(rel, std::nullopt);
        fs::create_directories(full.parent_path());
        write_file_atomic(full, new_text);
        return "created " + rel + "\n";
    }
    if (!fs::is_regular_file(status)) throw ToolError("not a file: " + path);
    auto content = ltc::read_file(full);
    if (old_text.empty()) throw ToolError("'old' must not be empty when editing an existing file");
    auto n = count_occurrences(content, old_text);
    if (n == 0) throw ToolError("anchor not found in " + rel);
    if (n > 1) throw ToolError("anchor is ambiguous: " + std::to_string(n) + " matches in " + rel);
    originals_.try_emplace(rel, content);
    auto pos = content.find(old_text);
    content.replace(pos, old_text.size(), new_text);
    write_file_atomic(full, content);
    return "edited " + rel + "\n";
}

Patch ToolBox::diff() const {
    std::vector<FilePatch> files;
    for (const auto& [rel, original] : originals_) {
        auto full = sandbox_.root() / rel;
        std::optional<std::string> current;
        if (fs::exists(full)) current = ltc::read_file(full);
        if (current == original) continue;
        files.push_back(make_file_patch(rel, original, current));
    }
    return make_patch(std::move(files));
}

// --- Agent loop ------------------------------------------------------------

std::string agent_system_prompt(const std::string& memory) {
    std::string prompt =
        "You are a software engineer working inside a checked-out repository. Resolve the task by exploring and "
        "editing files with tools. Reply with exactly one JSON object per turn: {\"tool\": <name>, \"args\": {...}}.\n"
        "Tools:\n"
        "- read_file {path, start_line?, max_lines?}: numbered lines of a file\n"
        "- search {query, regex?, path?}: matching lines as path:line: text\n"
        "- list_dir {path?}: directory entries\n"
        "- edit_file {path, old, new}: replace the single occurrence of old with new; an empty old creates a new "
        "file\n"
        "- finish {summary?}: end the task\n"
        "Repository skills learned from earlier work are listed below. Consult them when relevant.\n";
    prompt += std::string(kMemoryOpen);
    if (!memory.empty()) prompt += "\n" + memory;
    prompt += std::string(kMemoryClose) + "\n";
    return prompt;
}

Trajectory run_agent(Gateway& gateway, const AgentConfig& config, const AgentTask& task, const fs::path& worktree) {
    auto started = std::chrono::steady_clock::now();
    Trajectory traj;
    traj.task_id = task.task_id;
    traj.condition = task.condition;
    ToolBox tools(worktree, config.limits);

    ChatRequest req;
    req.backend_id = config.backend_id;
    req.audit_tags = {task.audit_tag};
    req.audit = task.audit;
    req.messages = {{"system", agent_system_prompt(task.memory)}, {"user", "Task:\n" + task.query}};

    bool finished = false;
    while (traj.steps < config.max_steps) {
        auto reply = gateway.complete(req);
        ++traj.steps;
        req.messages.push_back({"assistant", reply});

        ToolCall call;
        auto parsed = extract_json(reply);
        if (!parsed || !parsed->is_object() || !parsed->contains("tool") || !(*parsed)["tool"].is_string()) {
            call.tool = "invalid";
            call.error = true;
            call.args_digest = sha256_hex(reply);
            std::string msg = "error: reply with one JSON object {\"tool\": ..., \"args\": {...}}";
            call.result_digest = sha256_hex(msg);
            traj.tool_calls.push_back(std::move(call));
            req.messages.push_back({"user", msg});
            continue;
        }
        call.tool = (*parsed)["tool"].get<std::string>();
        call.args = parsed->value("args", json::object());
        call.args_digest = sha256_hex(call.args.dump());
        if (call.tool == "finish") {
            call.result_digest = sha256_hex("");
            traj.tool_calls.push_back(std::move(call));
            finished = true;
            break;
        }
        std::string result;
        try {
            result = tools.execute(call.tool, call.args);
        } catch (const ToolError& e) {
            result = std::string("error: ") + e.what() + "\n";
            call.error = true;
        }
        call.result_digest = sha256_hex(result);
        req.messages.push_back({"user", "[" + call.tool + " result]\n" + result});
        traj.tool_calls.push_back(std::move(call));
    }
    traj.truncated = !finished;
    traj.final_patch = tools.diff();
    traj.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return traj;
}

std::vector<std::string> oracle_fragments(const Patch& oracle, const fs::path& snapshot) {
    std::string corpus;
    if (fs::exists(snapshot)) {
        for (const auto& file : files_under(snapshot)) {
            corpus += ltc::read_file(file);
            corpus.push_back('\n');
        }
    }
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& fp : oracle.files) {
        for (const auto& h : fp.hunks) {
            for (const auto& line : h.lines) {
                if (line.kind != '+') continue;
                std::string text(trim(line.text));
                if (text.size() <= 12 || corpus.find(text) != std::string::npos) continue;
                if (seen.insert(text).second) out.push_back(std::move(text));
            }
        }
    }
    return out;
}

}  // namespace ltc
