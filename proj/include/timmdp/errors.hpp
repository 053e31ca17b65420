#pragma once

#include <stdexcept>
#include <string>

namespace timmdp {

// Raised when a caller breaks an operation's precondition (dimension
// mismatches, invalid sequences, unknown ids).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a data structure built by this library turns out to be
// inconsistent. Seeing one of these is a bug.
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A configured resource budget (state count, memory) was exceeded.
class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A cooperative time budget ran out.
class TimeoutError : public std::runtime_error {
public:
    TimeoutError() : std::runtime_error("time budget exceeded") {}
};

// Reward partition does not satisfy scope or completeness rules.
class PartitionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed instance/policy document. `path` is a JSON pointer to the
// offending field (empty for syntax errors).
class SchemaError : public std::runtime_error {
public:
    SchemaError(std::string path, const std::string& what)
        : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace timmdp
