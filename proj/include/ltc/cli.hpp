#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ltc::cli {

inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kStageError = 3;
inline constexpr int kAuditViolation = 4;

/// Runs one `ltc` subcommand in-process; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace ltc::cli
