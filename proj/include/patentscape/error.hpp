#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace patentscape {

// Bad input data: malformed rows, contract violations on user-supplied
// values, files that do not parse. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Syntax error in a search formula. Carries the byte offset of the
// offending token in the source text.
class QueryParseError : public DataError {
public:
    QueryParseError(const std::string& what, std::size_t position)
        : DataError(what + " (at position " + std::to_string(position) + ")"),
          position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

// A broken internal invariant, i.e. a bug. Maps to CLI exit code 3.
class InternalError : public std::logic_error {
public:
    explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace patentscape
