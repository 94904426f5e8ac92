#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ltc {

struct ProcessResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

/// Runs `argv` (no shell) and captures stdout/stderr. `env` entries are added
/// to (or override) the inherited environment.
ProcessResult run_process(const std::vector<std::string>& argv,
                          const std::filesystem::path& cwd = {},
                          const std::map<std::string, std::string>& env = {},
                          const std::string& stdin_data = {});

}  // namespace ltc
