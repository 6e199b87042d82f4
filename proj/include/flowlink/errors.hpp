#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowlink {

// Error categories. The CLI maps IoError to exit code 2 and everything
// else derived from Error to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StructuralError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct SamplingError : Error {
    SamplingError(const std::string& what, std::size_t achieved)
        : Error(what + " (achieved " + std::to_string(achieved) + ")"), achieved_(achieved) {}
    std::size_t achieved() const noexcept { return achieved_; }

private:
    std::size_t achieved_;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace flowlink
