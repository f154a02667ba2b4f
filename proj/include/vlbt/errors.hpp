#pragma once

#include <stdexcept>
#include <string>

namespace vlbt {

// Error taxonomy shared by every module. All of them derive from
// std::runtime_error so callers that do not care can catch one type;
// the CLI maps them onto exit codes.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor extents (matmul inner dims, concat widths, ...).
struct dim_error : error {
    explicit dim_error(const std::string& msg) : error(msg) {}
};

// A precondition of an operation was violated by the caller.
struct contract_error : error {
    explicit contract_error(const std::string& msg) : error(msg) {}
};

// Bad or inconsistent configuration values.
struct config_error : error {
    explicit config_error(const std::string& msg) : error(msg) {}
};

// Non-finite values where finite ones are required.
struct numeric_error : error {
    explicit numeric_error(const std::string& msg) : error(msg) {}
};

// Malformed serialized data (checkpoints, dataset files).
struct format_error : error {
    explicit format_error(const std::string& msg) : error(msg) {}
};

// Bad command line usage.
struct usage_error : error {
    explicit usage_error(const std::string& msg) : error(msg) {}
};

}  // namespace vlbt
