#pragma once

#include <stdexcept>
#include <string>

namespace forge {

// Process exit codes used by the CLI.
enum class ExitCode : int {
    Success = 0,
    Failure = 1,
    Config = 2,
    Dependency = 3,
    Backend = 4,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual ExitCode exit_code() const noexcept { return ExitCode::Failure; }
};

// Bad or missing configuration, including authentication failures.
class ConfigError : public Error {
public:
    using Error::Error;
    [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::Config; }
};

// A stage was requested before the stages it consumes completed.
class DependencyError : public Error {
public:
    using Error::Error;
    [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::Dependency; }
};

// Remote backend failed after exhausting retries, or the run budget was hit.
class BackendUnavailable : public Error {
public:
    BackendUnavailable(const std::string& what, int last_status)
        : Error(what), last_status_(last_status) {}
    [[nodiscard]] int last_status() const noexcept { return last_status_; }
    [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::Backend; }

private:
    int last_status_;
};

// Dangling references, duplicate keys and other corrupted-state conditions.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Malformed input file content; carries the 1-based line number when known.
class InputError : public Error {
public:
    InputError(const std::string& what, std::size_t line = 0) : Error(what), line_(line) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace forge
