#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ltc {

/// Object id of git's empty tree; stands in for the parent of a root commit.
inline constexpr const char* kEmptyTree = "4b825dc642cb6eb9a060e54bf8d69288fbee4904";

/// Runs `git -C repo args...`; throws StageError with stderr on failure.
std::string git(const std::filesystem::path& repo, const std::vector<std::string>& args);

bool is_git_repository(const std::filesystem::path& path);

/// Writes the tree of `commit` (or kEmptyTree) into `dest` without touching the
/// repository's index or working tree.
void materialize_tree(const std::filesystem::path& repo, const std::string& commit, const std::filesystem::path& dest);

}  // namespace ltc
