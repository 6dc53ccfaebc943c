#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace phasetrack {

/// Validation errors are caller mistakes (bad parameters, malformed input);
/// numerical errors are failures of a well-posed computation.
enum class ErrorKind { validation, numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& detail)
        : std::runtime_error(code + ": " + detail), kind_(kind), code_(std::move(code)) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// Stable machine-readable identifier, e.g. "requires-even-p".
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

inline void require(bool condition, const char* code, const std::string& detail) {
    if (!condition) {
        throw Error(ErrorKind::validation, code, detail);
    }
}

[[noreturn]] inline void fail_numerical(const char* code, const std::string& detail) {
    throw Error(ErrorKind::numerical, code, detail);
}

}  // namespace phasetrack
