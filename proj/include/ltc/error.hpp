#pragma once

#include <stdexcept>
#include <string>

namespace ltc {

/// Base class for every error raised by the pipeline.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unusable configuration or command-line input (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage could not complete (exit code 3).
class StageError : public Error {
public:
    using Error::Error;
};

/// A prompt failed the oracle-isolation or baseline-purity audit (exit code 4).
/// Never caught inside the pipeline; it always aborts the run.
class AuditViolation : public Error {
public:
    using Error::Error;
};

/// Malformed unified diff. `line` is 1-based within the parsed text.
class DiffParseError : public Error {
public:
    DiffParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Transport-level failure talking to a model backend.
class BackendError : public Error {
public:
    using Error::Error;
};

/// A model reply that does not follow the expected schema. `fragment` carries
/// the offending piece of the reply (or the missing field name).
class ReplyParseError : public Error {
public:
    ReplyParseError(const std::string& what, std::string fragment)
        : Error(what), fragment_(std::move(fragment)) {}
    const std::string& fragment() const noexcept { return fragment_; }

private:
    std::string fragment_;
};

/// Tool misuse inside an agent trajectory (surfaced back to the agent).
class ToolError : public Error {
public:
    using Error::Error;
};

/// A tool path argument resolved outside the task worktree.
class SandboxViolation : public Error {
public:
    using Error::Error;
};

}  // namespace ltc
