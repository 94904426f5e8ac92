#pragma once

#include "ltc/diff.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ltc {

struct HunkConflict {
    std::string path;
    /// 1-based hunk index within the file patch; 0 for file-level problems.
    std::size_t hunk = 0;
    std::string reason;
};

struct ApplyResult {
    bool ok() const noexcept { return conflicts.empty(); }
    std::vector<HunkConflict> conflicts;
    std::vector<std::string> touched;
};

/// Applies `patch` to the checkout rooted at `root`. Hunks must match
/// exactly at their stated positions. On any conflict nothing is written;
/// an I/O failure part-way through restores every file already touched.
ApplyResult apply_patch(const std::filesystem::path& root, const Patch& patch);

/// Applies the hunks of one file patch to in-memory text. Throws StageError
/// naming the first mismatching hunk.
std::string apply_file_patch_text(const std::string& original, const FilePatch& fp);

/// Git tree object id (SHA-1) of the directory contents, computed the way git
/// would store them: regular files as 100644/100755 blobs, symlinks as 120000,
/// empty directories omitted. A top-level ".git" entry is skipped.
std::string git_tree_hash(const std::filesystem::path& root);

}  // namespace ltc
