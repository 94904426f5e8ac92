#include "ltc/diff.hpp"

#include "ltc/error.hpp"
#include "ltc/util.hpp"

#include <algorithm>
#include <charconv>
#include <unordered_map>

namespace ltc {

std::string_view to_string(ChangeKind kind) {
    switch (kind) {
        case ChangeKind::modify: return "modify";
        case ChangeKind::add: return "add";
        case ChangeKind::remove: return "delete";
        case ChangeKind::rename: return "rename";
        case ChangeKind::mode_only: return "mode_only";
        case ChangeKind::binary: return "binary";
    }
    return "modify";
}

bool Patch::has_binary() const {
    return std::any_of(files.begin(), files.end(),
                       [](const FilePatch& f) { return f.change_kind == ChangeKind::binary; });
}

std::string normalize_path(std::string_view path) {
    std::string p(path);
    std::replace(p.begin(), p.end(), '\\', '/');
    while (p.starts_with("./")) p.erase(0, 2);
    std::string out;
    out.reserve(p.size());
    for (char c : p) {
        if (c == '/' && !out.empty() && out.back() == '/') continue;
        out.push_back(c);
    }
    return out;
}

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::string unquote_c(std::string_view quoted) {
    // quoted includes the surrounding double quotes.
    std::string out;
    for (std::size_t i = 1; i + 1 < quoted.size(); ++i) {
        char c = quoted[i];
        if (c != '\\' || i + 2 >= quoted.size()) {
            out.push_back(c);
            continue;
        }
        char e = quoted[++i];
        switch (e) {
            case 'a': out.push_back('\a'); break;
            case 'b': out.push_back('\b'); break;
            case 't': out.push_back('\t'); break;
            case 'n': out.push_back('\n'); break;
            case 'v': out.push_back('\v'); break;
            case 'f': out.push_back('\f'); break;
            case 'r': out.push_back('\r'); break;
            case '"': out.push_back('"'); break;
            case '\\': out.push_back('\\'); break;
            default:
                if (e >= '0' && e <= '7') {
                    int v = 0;
                    int n = 0;
                    while (n < 3 && i < quoted.size() - 1 && quoted[i] >= '0' && quoted[i] <= '7') {
                        v = v * 8 + (quoted[i] - '0');
                        ++i;
                        ++n;
                    }
                    --i;
                    out.push_back(static_cast<char>(v));
                } else {
                    out.push_back(e);
                }
        }
    }
    return out;
}

/// Reads one possibly-quoted token at the start of `s`; returns the raw
/// token length consumed.
std::size_t quoted_token_length(std::string_view s) {
    if (s.empty() || s.front() != '"') return std::string_view::npos;
    for (std::size_t i = 1; i < s.size(); ++i) {
        if (s[i] == '\\') {
            ++i;
            continue;
        }
        if (s[i] == '"') return i + 1;
    }
    return std::string_view::npos;
}

/// Git diffs carry a one-letter side prefix (absent with --no-prefix);
/// plain diffs follow `patch -p1` and drop the first path component.
std::optional<std::string> strip_prefix(std::string path, bool git) {
    if (path == "/dev/null") return std::nullopt;
    path = normalize_path(path);
    if (git) {
        static constexpr std::string_view kPrefixes[] = {"a/", "b/", "c/", "i/", "w/", "o/", "1/", "2/"};
        for (auto p : kPrefixes) {
            if (starts_with(path, p)) {
                path.erase(0, 2);
                break;
            }
        }
    } else if (auto slash = path.find('/'); slash != std::string::npos) {
        path.erase(0, slash + 1);
    }
    return path;
}

/// Path from a "--- " / "+++ " line (prefix already removed).
std::string marker_path(std::string_view rest) {
    if (!rest.empty() && rest.front() == '"') {
        auto len = quoted_token_length(rest);
        if (len != std::string_view::npos) return unquote_c(rest.substr(0, len));
    }
    auto tab = rest.find('\t');
    if (tab != std::string_view::npos) rest = rest.substr(0, tab);
    return std::string(rest);
}

std::pair<std::string, std::string> split_git_header(std::string_view rest) {
    if (!rest.empty() && rest.front() == '"') {
        auto len = quoted_token_length(rest);
        if (len != std::string_view::npos) {
            std::string left = unquote_c(rest.substr(0, len));
            auto right_raw = trim(rest.substr(len));
            std::string right = !right_raw.empty() && right_raw.front() == '"' ? unquote_c(right_raw)
                                                                                 : std::string(right_raw);
            return {left, right};
        }
    }
    auto q = rest.find(" \"");
    if (q != std::string_view::npos) {
        return {std::string(rest.substr(0, q)), unquote_c(rest.substr(q + 1))};
    }
    // Unquoted: find the split where both halves name the same path.
    for (std::size_t k = rest.find(' '); k != std::string_view::npos; k = rest.find(' ', k + 1)) {
        auto left = rest.substr(0, k);
        auto right = rest.substr(k + 1);
        if (left.size() >= 2 && right.size() >= 2 && left.substr(2) == right.substr(2)) {
            return {std::string(left), std::string(right)};
        }
    }
    auto b = rest.find(" b/");
    if (b != std::string_view::npos) return {std::string(rest.substr(0, b)), std::string(rest.substr(b + 1))};
    auto sp = rest.find(' ');
    if (sp == std::string_view::npos) return {std::string(rest), std::string(rest)};
    return {std::string(rest.substr(0, sp)), std::string(rest.substr(sp + 1))};
}

bool parse_size(std::string_view s, std::size_t& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_range(std::string_view s, std::size_t& start, std::size_t& len) {
    auto comma = s.find(',');
    if (comma == std::string_view::npos) {
        len = 1;
        return parse_size(s, start);
    }
    return parse_size(s.substr(0, comma), start) && parse_size(s.substr(comma + 1), len);
}

bool parse_hunk_header(const std::string& line, Hunk& hunk) {
    // "@@ -a[,b] +c[,d] @@[section]"
    if (!starts_with(line, "@@ -")) return false;
    auto close = line.find(" @@", 4);
    if (close == std::string::npos) return false;
    std::string_view ranges(line.data() + 4, close - 4);
    auto plus = ranges.find(" +");
    if (plus == std::string_view::npos) return false;
    if (!parse_range(ranges.substr(0, plus), hunk.old_start, hunk.old_len)) return false;
    if (!parse_range(ranges.substr(plus + 2), hunk.new_start, hunk.new_len)) return false;
    hunk.section = line.substr(close + 3);
    hunk.raw_header = line;
    return true;
}

bool is_file_start(const std::vector<std::string>& lines, std::size_t i) {
    const auto& l = lines[i];
    if (starts_with(l, "diff ")) return true;
    return starts_with(l, "--- ") && i + 1 < lines.size() && starts_with(lines[i + 1], "+++ ");
}

class Parser {
public:
    explicit Parser(std::string_view text) : lines_(split_lines(text)) {
        patch_.source_text = std::string(text);
        patch_.ends_with_newline = text.empty() || text.back() == '\n';
    }

    Patch run() {
        while (i_ < lines_.size() && !is_file_start(lines_, i_)) patch_.preamble.push_back(lines_[i_++]);
        while (i_ < lines_.size()) patch_.files.push_back(parse_file());
        return std::move(patch_);
    }

private:
    FilePatch parse_file() {
        FilePatch fp;
        header_line_ = i_ + 1;
        bool git = false;
        std::optional<std::string> header_old, header_new, marker_old, marker_new, rename_from, rename_to,
            copy_to, binary_old, binary_new;
        bool new_file = false, deleted_file = false, binary = false, copied = false;

        auto take_markers = [&]() {
            fp.header_lines.push_back(lines_[i_]);
            marker_old = marker_path(std::string_view(lines_[i_]).substr(4));
            fp.header_lines.push_back(lines_[i_ + 1]);
            marker_new = marker_path(std::string_view(lines_[i_ + 1]).substr(4));
            i_ += 2;
        };

        const std::string& first = lines_[i_];
        if (starts_with(first, "diff --git ")) {
            git = true;
            auto [l, r] = split_git_header(std::string_view(first).substr(11));
            header_old = l;
            header_new = r;
            fp.header_lines.push_back(first);
            ++i_;
            while (i_ < lines_.size() && !starts_with(lines_[i_], "@@") && !starts_with(lines_[i_], "diff ")) {
                const std::string& l2 = lines_[i_];
                if (starts_with(l2, "--- ") && i_ + 1 < lines_.size() && starts_with(lines_[i_ + 1], "+++ ")) {
                    take_markers();
                    break;
                }
                std::string_view v(l2);
                if (starts_with(v, "old mode ")) fp.old_mode = std::string(v.substr(9));
                else if (starts_with(v, "new mode ")) fp.new_mode = std::string(v.substr(9));
                else if (starts_with(v, "new file mode ")) {
                    new_file = true;
                    fp.new_mode = std::string(v.substr(14));
                } else if (starts_with(v, "deleted file mode ")) {
                    deleted_file = true;
                    fp.old_mode = std::string(v.substr(18));
                } else if (starts_with(v, "rename from ")) rename_from = marker_path(v.substr(12));
                else if (starts_with(v, "rename to ")) rename_to = marker_path(v.substr(10));
                else if (starts_with(v, "copy to ")) {
                    copied = true;
                    copy_to = marker_path(v.substr(8));
                } else if (starts_with(v, "GIT binary patch")) binary = true;
                else if (starts_with(v, "Binary files ")) {
                    binary = true;
                    parse_binary_line(v, binary_old, binary_new);
                }
                fp.header_lines.push_back(l2);
                ++i_;
            }
        } else if (starts_with(first, "diff ")) {
            fp.header_lines.push_back(first);
            ++i_;
            while (i_ < lines_.size() && !starts_with(lines_[i_], "diff ") && !starts_with(lines_[i_], "@@")) {
                if (starts_with(lines_[i_], "--- ") && i_ + 1 < lines_.size() &&
                    starts_with(lines_[i_ + 1], "+++ ")) {
                    take_markers();
                    break;
                }
                if (starts_with(lines_[i_], "Binary files ")) {
                    binary = true;
                    parse_binary_line(lines_[i_], binary_old, binary_new);
                }
                fp.header_lines.push_back(lines_[i_++]);
            }
        } else {
            take_markers();
        }

        while (i_ < lines_.size() && starts_with(lines_[i_], "@@")) fp.hunks.push_back(parse_hunk());
        while (i_ < lines_.size() && !is_file_start(lines_, i_)) {
            if (starts_with(lines_[i_], "@@")) {
                fp.hunks.push_back(parse_hunk());
                continue;
            }
            fp.trailer_lines.push_back(lines_[i_++]);
        }

        // Resolve paths, preferring the most specific header.
        std::optional<std::string> old_p, new_p;
        if (marker_old || marker_new) {
            old_p = marker_old ? strip_prefix(*marker_old, git) : std::nullopt;
            new_p = marker_new ? strip_prefix(*marker_new, git) : std::nullopt;
        } else if (binary_old || binary_new) {
            old_p = binary_old ? strip_prefix(*binary_old, git) : std::nullopt;
            new_p = binary_new ? strip_prefix(*binary_new, git) : std::nullopt;
        } else if (header_old) {
            old_p = strip_prefix(*header_old, git);
            new_p = strip_prefix(*header_new, git);
        }
        if (rename_from) old_p = normalize_path(*rename_from);
        if (rename_to) new_p = normalize_path(*rename_to);
        if (copied && copy_to) {
            fp.copy_source = old_p;
            old_p.reset();
            new_p = normalize_path(*copy_to);
        }
        if (new_file) old_p.reset();
        if (deleted_file) new_p.reset();
        if (!old_p && !new_p) throw DiffParseError("file header names no path", header_line_);

        fp.old_path = old_p;
        fp.new_path = new_p;
        if (binary) fp.change_kind = ChangeKind::binary;
        else if (!old_p || copied) fp.change_kind = ChangeKind::add;
        else if (!new_p) fp.change_kind = ChangeKind::remove;
        else if (*old_p != *new_p) fp.change_kind = ChangeKind::rename;
        else if (fp.hunks.empty() && fp.old_mode && fp.new_mode) fp.change_kind = ChangeKind::mode_only;
        else fp.change_kind = ChangeKind::modify;

        for (const auto& h : fp.hunks) {
            for (const auto& l : h.lines) {
                if (l.kind == '+') ++fp.added_lines;
                else if (l.kind == '-') ++fp.deleted_lines;
            }
        }
        return fp;
    }

    static void parse_binary_line(std::string_view v, std::optional<std::string>& old_p,
                                  std::optional<std::string>& new_p) {
        // "Binary files X and Y differ"
        v.remove_prefix(13);
        if (v.ends_with(" differ")) v.remove_suffix(7);
        auto sep = v.find(" and ");
        if (sep == std::string_view::npos) return;
        old_p = marker_path(v.substr(0, sep));
        new_p = marker_path(v.substr(sep + 5));
    }

    Hunk parse_hunk() {
        Hunk h;
        std::size_t header_line = i_ + 1;
        if (!parse_hunk_header(lines_[i_], h)) throw DiffParseError("malformed hunk header: " + lines_[i_], header_line);
        ++i_;
        std::size_t old_left = h.old_len;
        std::size_t new_left = h.new_len;
        while (old_left > 0 || new_left > 0) {
            if (i_ >= lines_.size()) throw DiffParseError("truncated hunk (unexpected end of diff)", i_ + 1);
            const std::string& l = lines_[i_];
            char kind = l.empty() ? ' ' : l.front();
            std::string text = l.empty() ? std::string() : l.substr(1);
            switch (kind) {
                case ' ':
                    if (old_left == 0 || new_left == 0) throw DiffParseError("hunk body longer than its header", i_ + 1);
                    --old_left;
                    --new_left;
                    break;
                case '-':
                    if (old_left == 0) throw DiffParseError("hunk body longer than its header", i_ + 1);
                    --old_left;
                    break;
                case '+':
                    if (new_left == 0) throw DiffParseError("hunk body longer than its header", i_ + 1);
                    --new_left;
                    break;
                case '\\': break;
                default: throw DiffParseError("truncated hunk (unexpected line inside hunk body)", i_ + 1);
            }
            h.lines.push_back({kind, std::move(text)});
            ++i_;
        }
        if (i_ < lines_.size() && starts_with(lines_[i_], "\\")) {
            h.lines.push_back({'\\', lines_[i_].substr(1)});
            ++i_;
        }
        return h;
    }

    std::vector<std::string> lines_;
    std::size_t i_ = 0;
    std::size_t header_line_ = 0;
    Patch patch_;
};

}  // namespace

std::string format_hunk_header(const Hunk& hunk) {
    auto range = [](std::size_t start, std::size_t len) {
        return len == 1 ? std::to_string(start) : std::to_string(start) + "," + std::to_string(len);
    };
    return "@@ -" + range(hunk.old_start, hunk.old_len) + " +" + range(hunk.new_start, hunk.new_len) + " @@" +
           hunk.section;
}

Patch parse_patch(std::string_view text) { return Parser(text).run(); }

std::string serialize_patch(const Patch& patch) {
    std::vector<std::string> out;
    for (const auto& l : patch.preamble) out.push_back(l);
    for (const auto& f : patch.files) {
        for (const auto& l : f.header_lines) out.push_back(l);
        for (const auto& h : f.hunks) {
            out.push_back(h.raw_header.empty() ? format_hunk_header(h) : h.raw_header);
            for (const auto& l : h.lines) out.push_back(std::string(1, l.kind) + l.text);
        }
        for (const auto& l : f.trailer_lines) out.push_back(l);
    }
    std::string text = join(out, "\n");
    if (!out.empty() && patch.ends_with_newline) text.push_back('\n');
    return text;
}

std::set<std::string> file_set(const Patch& patch) {
    std::set<std::string> files;
    for (const auto& f : patch.files) {
        if (f.old_path) files.insert(normalize_path(*f.old_path));
        if (f.new_path) files.insert(normalize_path(*f.new_path));
    }
    return files;
}

std::size_t patch_size(const Patch& patch) {
    std::size_t total = 0;
    for (const auto& f : patch.files) {
        if (f.change_kind == ChangeKind::binary) continue;
        total += f.added_lines + f.deleted_lines;
    }
    return total;
}

namespace {

struct TextLines {
    std::vector<std::string> lines;
    bool trailing_newline = true;
};

TextLines to_lines(const std::string& text) {
    TextLines t;
    t.lines = split_lines(text);
    t.trailing_newline = text.empty() || text.back() == '\n';
    return t;
}

enum class Op { keep, del, ins };

/// Myers O(ND) shortest edit script over interned line ids.
std::vector<Op> myers(const std::vector<int>& a, const std::vector<int>& b) {
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    const int max = n + m;
    const int offset = max + 1;
    std::vector<int> v(2 * static_cast<std::size_t>(max) + 3, 0);
    std::vector<std::vector<int>> trace;
    int final_d = 0;
    for (int d = 0; d <= max; ++d) {
        trace.push_back(v);
        bool done = false;
        for (int k = -d; k <= d; k += 2) {
            int x;
            if (k == -d || (k != d && v[offset + k - 1] < v[offset + k + 1])) x = v[offset + k + 1];
            else x = v[offset + k - 1] + 1;
            int y = x - k;
            while (x < n && y < m && a[x] == b[y]) {
                ++x;
                ++y;
            }
            v[offset + k] = x;
            if (x >= n && y >= m) {
                done = true;
                break;
            }
        }
        if (done) {
            final_d = d;
            break;
        }
    }
    std::vector<Op> ops;
    int x = n, y = m;
    for (int d = final_d; d > 0; --d) {
        const auto& vd = trace[static_cast<std::size_t>(d)];
        int k = x - y;
        int prev_k = (k == -d || (k != d && vd[offset + k - 1] < vd[offset + k + 1])) ? k + 1 : k - 1;
        int prev_x = vd[offset + prev_k];
        int prev_y = prev_x - prev_k;
        while (x > prev_x && y > prev_y) {
            ops.push_back(Op::keep);
            --x;
            --y;
        }
        ops.push_back(x == prev_x ? Op::ins : Op::del);
        x = prev_x;
        y = prev_y;
    }
    while (x > 0 && y > 0) {
        ops.push_back(Op::keep);
        --x;
        --y;
    }
    std::reverse(ops.begin(), ops.end());
    return ops;
}

}  // namespace

FilePatch make_file_patch(const std::string& path, const std::optional<std::string>& old_text,
                          const std::optional<std::string>& new_text, std::size_t context) {
    FilePatch fp;
    const std::string p = normalize_path(path);
    if (old_text) fp.old_path = p;
    if (new_text) fp.new_path = p;
    fp.change_kind = !old_text ? ChangeKind::add : !new_text ? ChangeKind::remove : ChangeKind::modify;
    fp.header_lines.push_back("diff --git a/" + p + " b/" + p);
    if (!old_text) {
        fp.new_mode = "100644";
        fp.header_lines.push_back("new file mode 100644");
    } else if (!new_text) {
        fp.old_mode = "100644";
        fp.header_lines.push_back("deleted file mode 100644");
    }

    TextLines a = old_text ? to_lines(*old_text) : TextLines{};
    TextLines b = new_text ? to_lines(*new_text) : TextLines{};

    // Intern lines; a final line without a newline gets a distinct identity.
    std::unordered_map<std::string, int> ids;
    auto intern = [&](const TextLines& t) {
        std::vector<int> out;
        for (std::size_t i = 0; i < t.lines.size(); ++i) {
            std::string key = t.lines[i];
            if (i + 1 == t.lines.size() && !t.trailing_newline) key.push_back('\0');
            out.push_back(ids.emplace(std::move(key), static_cast<int>(ids.size())).first->second);
        }
        return out;
    };
    auto ia = intern(a);
    auto ib = intern(b);
    auto ops = myers(ia, ib);

    // Positions of each op in the old/new sequences.
    struct Step {
        Op op;
        std::size_t ai, bi;
    };
    std::vector<Step> steps;
    std::size_t ai = 0, bi = 0;
    for (Op op : ops) {
        steps.push_back({op, ai, bi});
        if (op != Op::ins) ++ai;
        if (op != Op::del) ++bi;
    }

    std::vector<std::size_t> changed;
    for (std::size_t s = 0; s < steps.size(); ++s)
        if (steps[s].op != Op::keep) changed.push_back(s);

    if (!changed.empty()) {
        std::size_t g = 0;
        while (g < changed.size()) {
            std::size_t first = changed[g];
            std::size_t last = first;
            std::size_t h = g + 1;
            while (h < changed.size() && changed[h] - last <= 2 * context + 1) last = changed[h++];
            std::size_t begin = first >= context ? first - context : 0;
            std::size_t end = std::min(steps.size(), last + context + 1);

            Hunk hunk;
            std::size_t old_count = 0, new_count = 0;
            // Deletions before insertions within each change run, as git emits.
            std::size_t s = begin;
            auto emit = [&](char kind, const TextLines& t, std::size_t idx) {
                hunk.lines.push_back({kind, t.lines[idx]});
                if (idx + 1 == t.lines.size() && !t.trailing_newline)
                    hunk.lines.push_back({'\\', " No newline at end of file"});
            };
            while (s < end) {
                if (steps[s].op == Op::keep) {
                    emit(' ', a, steps[s].ai);
                    ++old_count;
                    ++new_count;
                    ++s;
                    continue;
                }
                std::size_t run_end = s;
                while (run_end < end && steps[run_end].op != Op::keep) ++run_end;
                for (std::size_t r = s; r < run_end; ++r)
                    if (steps[r].op == Op::del) {
                        emit('-', a, steps[r].ai);
                        ++old_count;
                    }
                for (std::size_t r = s; r < run_end; ++r)
                    if (steps[r].op == Op::ins) {
                        emit('+', b, steps[r].bi);
                        ++new_count;
                    }
                s = run_end;
            }
            hunk.old_len = old_count;
            hunk.new_len = new_count;
            hunk.old_start = old_count == 0 ? steps[begin].ai : steps[begin].ai + 1;
            hunk.new_start = new_count == 0 ? steps[begin].bi : steps[begin].bi + 1;
            hunk.raw_header = format_hunk_header(hunk);
            for (const auto& l : hunk.lines) {
                if (l.kind == '+') ++fp.added_lines;
                else if (l.kind == '-') ++fp.deleted_lines;
            }
            fp.hunks.push_back(std::move(hunk));
            g = h;
        }
    }
    fp.header_lines.push_back(old_text ? "--- a/" + p : "--- /dev/null");
    fp.header_lines.push_back(new_text ? "+++ b/" + p : "+++ /dev/null");
    if (fp.hunks.empty()) {
        // Git prints no ---/+++ lines when there is no textual change.
        fp.header_lines.resize(fp.header_lines.size() - 2);
    }
    return fp;
}

Patch make_patch(std::vector<FilePatch> files) {
    Patch patch;
    patch.files = std::move(files);
    patch.source_text = serialize_patch(patch);
    return patch;
}

}  // namespace ltc
