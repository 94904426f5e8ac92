#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ltc {

enum class ChangeKind { modify, add, remove, rename, mode_only, binary };

std::string_view to_string(ChangeKind kind);

struct HunkLine {
    /// ' ' context, '+' added, '-' deleted, '\\' "No newline at end of file" marker.
    char kind = ' ';
    std::string text;

    friend bool operator==(const HunkLine&, const HunkLine&) = default;
};

struct Hunk {
    std::size_t old_start = 0;
    std::size_t old_len = 0;
    std::size_t new_start = 0;
    std::size_t new_len = 0;
    /// Text after the closing "@@" (usually " enclosing_function()").
    std::string section;
    /// The header exactly as it appeared; regenerated by format_hunk_header()
    /// for programmatically built hunks.
    std::string raw_header;
    std::vector<HunkLine> lines;

    friend bool operator==(const Hunk&, const Hunk&) = default;
};

std::string format_hunk_header(const Hunk& hunk);

struct FilePatch {
    std::optional<std::string> old_path;
    std::optional<std::string> new_path;
    ChangeKind change_kind = ChangeKind::modify;
    /// Source of a git copy ("copy from"); copies are kinded as additions.
    std::optional<std::string> copy_source;
    std::optional<std::string> old_mode;
    std::optional<std::string> new_mode;
    /// Raw header lines: "diff --git", extended headers, "---"/"+++".
    std::vector<std::string> header_lines;
    std::vector<Hunk> hunks;
    /// Unrecognised lines following the last hunk, kept for round-tripping.
    std::vector<std::string> trailer_lines;
    std::size_t added_lines = 0;
    std::size_t deleted_lines = 0;

    /// Path the file has after the patch, or before it for deletions.
    const std::string& display_path() const { return new_path ? *new_path : *old_path; }

    friend bool operator==(const FilePatch&, const FilePatch&) = default;
};

struct Patch {
    std::vector<std::string> preamble;
    std::vector<FilePatch> files;
    bool ends_with_newline = true;
    std::string source_text;

    bool empty() const noexcept { return files.empty(); }
    bool has_binary() const;

    friend bool operator==(const Patch&, const Patch&) = default;
};

/// Parses unified-diff text (git flavour, plain `diff -u` tolerated).
/// Throws DiffParseError with a 1-based line number on malformed or
/// truncated hunks.
Patch parse_patch(std::string_view text);

/// Renders the patch back to text. Bit-exact with the parsed input for
/// anything parse_patch accepted.
std::string serialize_patch(const Patch& patch);

/// Repo-relative, forward slashes, no leading "./".
std::string normalize_path(std::string_view path);

/// Every present old and new path (both sides of a rename).
std::set<std::string> file_set(const Patch& patch);

/// Added plus deleted lines over all files; binary files contribute 0.
std::size_t patch_size(const Patch& patch);

/// Builds a git-style file diff between two optional texts (nullopt means the
/// file does not exist on that side) with `context` lines of context.
FilePatch make_file_patch(const std::string& path, const std::optional<std::string>& old_text,
                          const std::optional<std::string>& new_text, std::size_t context = 3);

/// Assembles file patches into a Patch whose source_text is its serialization.
Patch make_patch(std::vector<FilePatch> files);

}  // namespace ltc
