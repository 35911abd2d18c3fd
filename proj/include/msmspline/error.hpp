#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace msms {

enum class ErrorKind { Validation, Config, Numeric, NonConvergence };

// Exception carrying a stable machine-readable code alongside the message,
// so the CLI can map failures to exit statuses and greppable categories.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& what)
        : std::runtime_error(code + ": " + what), kind_(kind), code_(std::move(code)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& code, const std::string& what) {
    throw Error(kind, code, what);
}

// CLI exit statuses: 0 success, 2 validation/config, 3 non-convergence, 4 numeric.
inline int exit_status(ErrorKind k) {
    switch (k) {
        case ErrorKind::Validation:
        case ErrorKind::Config: return 2;
        case ErrorKind::NonConvergence: return 3;
        case ErrorKind::Numeric: return 4;
    }
    return 4;
}

}  // namespace msms
