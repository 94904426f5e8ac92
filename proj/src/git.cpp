#include "ltc/git.hpp"

#include "ltc/error.hpp"
#include "ltc/process.hpp"
#include "ltc/util.hpp"

namespace ltc {

std::string git(const std::filesystem::path& repo, const std::vector<std::string>& args) {
    std::vector<std::string> argv{"git", "-C", repo.string()};
    argv.insert(argv.end(), args.begin(), args.end());
    auto r = run_process(argv, {}, {{"GIT_CONFIG_NOSYSTEM", "1"}, {"LC_ALL", "C"}});
    if (r.exit_code != 0) {
        throw StageError("git " + (args.empty() ? std::string() : args.front()) + " failed in " + repo.string() + ": " +
                         std::string(trim(r.err)));
    }
    return r.out;
}

bool is_git_repository(const std::filesystem::path& path) {
    auto r = run_process({"git", "-C", path.string(), "rev-parse", "--git-dir"});
    return r.exit_code == 0;
}

void materialize_tree(const std::filesystem::path& repo, const std::string& commit, const std::filesystem::path& dest) {
    std::filesystem::create_directories(dest);
    if (commit == kEmptyTree) return;
    auto abs_dest = std::filesystem::absolute(dest);
    auto index = abs_dest.parent_path() / ("." + abs_dest.filename().string() + ".index");
    std::map<std::string, std::string> env{{"GIT_INDEX_FILE", index.string()}, {"LC_ALL", "C"}};
    auto run = [&](std::vector<std::string> args) {
        std::vector<std::string> argv{"git", "-C", repo.string()};
        argv.insert(argv.end(), args.begin(), args.end());
        auto r = run_process(argv, {}, env);
        if (r.exit_code != 0) {
            std::filesystem::remove(index);
            throw StageError("cannot materialize " + commit + ": " + std::string(trim(r.err)));
        }
    };
    run({"read-tree", commit});
    auto prefix = abs_dest.string();
    if (prefix.back() != '/') prefix.push_back('/');
    run({"checkout-index", "-a", "-f", "--prefix=" + prefix});
    std::filesystem::remove(index);
}

}  // namespace ltc
