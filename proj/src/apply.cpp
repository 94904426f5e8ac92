#include "ltc/apply.hpp"

#include "ltc/error.hpp"
#include "ltc/util.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <sys/stat.h>

namespace ltc {

namespace {

struct FileText {
    std::vector<std::string> lines;
    bool trailing_newline = true;
};

FileText split_text(const std::string& text) {
    return {split_lines(text), text.empty() || text.back() == '\n'};
}

std::string join_text(const FileText& t) {
    std::string out = join(t.lines, "\n");
    if (!t.lines.empty() && t.trailing_newline) out.push_back('\n');
    return out;
}

struct Mismatch {
    std::size_t hunk;
    std::string reason;
};

/// Applies hunks; returns the mismatches instead of throwing so every
/// failing hunk is reported.
FileText apply_hunks(const FileText& original, const FilePatch& fp, std::vector<Mismatch>& mismatches) {
    FileText out;
    std::size_t cursor = 0;
    bool new_no_newline = false;
    bool old_no_newline = false;
    for (std::size_t h = 0; h < fp.hunks.size(); ++h) {
        const Hunk& hunk = fp.hunks[h];
        std::size_t start = hunk.old_len == 0 ? hunk.old_start : (hunk.old_start == 0 ? 0 : hunk.old_start - 1);
        if (start < cursor || start > original.lines.size()) {
            mismatches.push_back({h + 1, "hunk starts outside the file or overlaps the previous hunk"});
            continue;
        }
        for (std::size_t i = cursor; i < start; ++i) out.lines.push_back(original.lines[i]);
        std::size_t pos = start;
        bool ok = true;
        char prev = 0;
        for (const auto& line : hunk.lines) {
            if (line.kind == '\\') {
                if (prev == ' ' || prev == '-') {
                    old_no_newline = true;
                    if (original.trailing_newline || pos != original.lines.size()) ok = false;
                }
                if (prev == ' ' || prev == '+') new_no_newline = true;
                continue;
            }
            prev = line.kind;
            if (line.kind == ' ' || line.kind == '-') {
                if (pos >= original.lines.size() || original.lines[pos] != line.text) {
                    ok = false;
                    break;
                }
                ++pos;
            }
            if (line.kind == ' ' || line.kind == '+') out.lines.push_back(line.text);
        }
        if (!ok) {
            mismatches.push_back({h + 1, "context does not match at line " + std::to_string(start + 1)});
            pos = std::max(pos, start + hunk.old_len);
        }
        cursor = std::min(pos, original.lines.size());
    }
    for (std::size_t i = cursor; i < original.lines.size(); ++i) out.lines.push_back(original.lines[i]);
    if (new_no_newline) out.trailing_newline = false;
    else if (old_no_newline) out.trailing_newline = true;
    else out.trailing_newline = original.trailing_newline;
    return out;
}

bool is_executable(const std::string& mode) { return mode == "100755"; }

struct PlannedWrite {
    std::string path;
    std::optional<std::string> content;  // nullopt: remove
    std::optional<std::string> mode;
};

struct Backup {
    std::string path;
    std::optional<std::string> content;
    fs::perms perms{};
    bool symlink = false;
};

std::optional<std::string> read_entry(const fs::path& p, bool& symlink) {
    symlink = false;
    std::error_code ec;
    auto st = fs::symlink_status(p, ec);
    if (ec || !fs::exists(st)) return std::nullopt;
    if (fs::is_symlink(st)) {
        symlink = true;
        return fs::read_symlink(p).string();
    }
    if (!fs::is_regular_file(st)) return std::nullopt;
    return read_file(p);
}

void remove_empty_parents(const fs::path& root, fs::path dir) {
    std::error_code ec;
    while (!dir.empty() && dir != root && fs::is_directory(dir, ec) && fs::is_empty(dir, ec)) {
        fs::remove(dir, ec);
        dir = dir.parent_path();
    }
}

void write_entry(const fs::path& p, const std::string& content, const std::optional<std::string>& mode) {
    std::error_code ec;
    if (fs::is_symlink(fs::symlink_status(p, ec))) fs::remove(p);
    if (mode && *mode == "120000") {
        fs::create_directories(p.parent_path());
        fs::remove(p, ec);
        fs::create_symlink(content, p);
        return;
    }
    write_file_atomic(p, content);
    if (mode) {
        auto perms = fs::status(p).permissions();
        constexpr auto exec = fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec;
        fs::permissions(p, is_executable(*mode) ? (perms | exec) : (perms & ~exec));
    }
}

}  // namespace

std::string apply_file_patch_text(const std::string& original, const FilePatch& fp) {
    std::vector<Mismatch> mismatches;
    FileText out = apply_hunks(split_text(original), fp, mismatches);
    if (!mismatches.empty()) {
        throw StageError(fp.display_path() + " hunk " + std::to_string(mismatches.front().hunk) + ": " +
                         mismatches.front().reason);
    }
    return join_text(out);
}

ApplyResult apply_patch(const fs::path& root, const Patch& patch) {
    ApplyResult result;
    std::vector<PlannedWrite> plan;
    // Later file patches may read paths earlier ones produced (rare); model
    // this with an overlay of planned contents.
    std::map<std::string, std::optional<std::string>> overlay;

    auto current = [&](const std::string& rel, bool& symlink) -> std::optional<std::string> {
        if (auto it = overlay.find(rel); it != overlay.end()) {
            symlink = false;
            return it->second;
        }
        return read_entry(root / rel, symlink);
    };

    for (const auto& fp : patch.files) {
        const std::string label = fp.display_path();
        if (fp.change_kind == ChangeKind::binary) {
            result.conflicts.push_back({label, 0, "binary patches cannot be applied"});
            continue;
        }
        bool symlink = false;
        std::optional<std::string> before;
        if (fp.old_path) {
            before = current(*fp.old_path, symlink);
            if (!before) {
                result.conflicts.push_back({*fp.old_path, 0, "target file is missing"});
                continue;
            }
        } else if (fp.new_path) {
            bool dummy = false;
            if (current(*fp.new_path, dummy)) {
                result.conflicts.push_back({*fp.new_path, 0, "file to be created already exists"});
                continue;
            }
            if (fp.copy_source) {
                before = current(*fp.copy_source, symlink);
                if (!before) {
                    result.conflicts.push_back({*fp.copy_source, 0, "copy source is missing"});
                    continue;
                }
            }
        }

        std::vector<Mismatch> mismatches;
        FileText after = apply_hunks(split_text(before.value_or("")), fp, mismatches);
        for (auto& m : mismatches) result.conflicts.push_back({label, m.hunk, m.reason});
        if (!mismatches.empty()) continue;

        std::optional<std::string> mode = fp.new_mode;
        if (!mode && symlink) mode = "120000";
        if (fp.change_kind == ChangeKind::remove) {
            if (!after.lines.empty()) {
                result.conflicts.push_back({label, 0, "file to be deleted has content the patch does not remove"});
                continue;
            }
            plan.push_back({*fp.old_path, std::nullopt, std::nullopt});
            overlay[*fp.old_path] = std::nullopt;
            continue;
        }
        if (fp.change_kind == ChangeKind::rename) {
            plan.push_back({*fp.old_path, std::nullopt, std::nullopt});
            overlay[*fp.old_path] = std::nullopt;
        }
        std::string content = join_text(after);
        plan.push_back({*fp.new_path, content, mode});
        overlay[*fp.new_path] = content;
    }
    if (!result.ok()) return result;

    std::vector<Backup> backups;
    try {
        for (const auto& w : plan) {
            fs::path target = root / w.path;
            Backup b;
            b.path = w.path;
            b.content = read_entry(target, b.symlink);
            if (b.content && !b.symlink) b.perms = fs::status(target).permissions();
            backups.push_back(b);
            if (w.content) {
                write_entry(target, *w.content, w.mode);
            } else {
                fs::remove(target);
                remove_empty_parents(root, target.parent_path());
            }
            result.touched.push_back(w.path);
        }
    } catch (const std::exception& e) {
        for (auto it = backups.rbegin(); it != backups.rend(); ++it) {
            fs::path target = root / it->path;
            std::error_code ec;
            fs::remove(target, ec);
            if (!it->content) continue;
            if (it->symlink) {
                fs::create_directories(target.parent_path(), ec);
                fs::create_symlink(*it->content, target, ec);
            } else {
                write_file_atomic(target, *it->content);
                fs::permissions(target, it->perms, ec);
            }
        }
        result.touched.clear();
        result.conflicts.push_back({"", 0, std::string("write failed, rolled back: ") + e.what()});
    }
    return result;
}

namespace {

std::optional<std::string> tree_object(const fs::path& dir, bool top) {
    struct Entry {
        std::string name;
        std::string mode;
        std::string raw_id;
        bool is_dir;
    };
    std::vector<Entry> entries;
    for (const auto& de : fs::directory_iterator(dir)) {
        std::string name = de.path().filename().string();
        if (top && name == ".git") continue;
        auto st = de.symlink_status();
        if (fs::is_symlink(st)) {
            std::string target = fs::read_symlink(de.path()).string();
            entries.push_back({name, "120000", sha1_raw("blob " + std::to_string(target.size()) + '\0' + target), false});
        } else if (fs::is_directory(st)) {
            if (auto sub = tree_object(de.path(), false)) entries.push_back({name, "40000", *sub, true});
        } else if (fs::is_regular_file(st)) {
            std::string content = read_file(de.path());
            bool exec = (st.permissions() & fs::perms::owner_exec) != fs::perms::none;
            entries.push_back({name, exec ? "100755" : "100644",
                               sha1_raw("blob " + std::to_string(content.size()) + '\0' + content), false});
        }
    }
    if (entries.empty() && !top) return std::nullopt;
    // Git sorts tree entries as if directory names had a trailing '/'.
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return (a.is_dir ? a.name + "/" : a.name) < (b.is_dir ? b.name + "/" : b.name);
    });
    std::string body;
    for (const auto& e : entries) {
        body += e.mode;
        body += ' ';
        body += e.name;
        body += '\0';
        body += e.raw_id;
    }
    return sha1_raw("tree " + std::to_string(body.size()) + '\0' + body);
}

}  // namespace

std::string git_tree_hash(const fs::path& root) {
    std::string raw = *tree_object(root, true);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    for (unsigned char c : raw) {
        hex.push_back(kHex[c >> 4]);
        hex.push_back(kHex[c & 0xF]);
    }
    return hex;
}

}  // namespace ltc
