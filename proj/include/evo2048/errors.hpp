#pragma once

#include <stdexcept>
#include <string>

namespace evo2048 {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller broke an operation's precondition (full board spawn, terminal search root...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Game record, spec or fixture text could not be parsed. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// A value function spec violates its invariants (unknown term, negative weight...).
class SpecError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class PersistenceError : public Error {
public:
    using Error::Error;
};

// Replayed game diverged from the stored record.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace evo2048
