#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace capmfg {

/// Failure categories shared by every solver stage. The CLI maps them onto
/// its exit codes (validation -> 2, convergence family -> 3, io -> 4).
enum class ErrorKind {
    validation,    ///< malformed input or violated precondition
    domain,        ///< function evaluated outside its domain
    divergence,    ///< non-finite state during time stepping
    bracketing,    ///< root bracket without a sign change
    convergence,   ///< iteration cap reached
    stability,     ///< CFL / explicit-step restriction violated
    scheme_fault,  ///< discrete invariant broken (e.g. negative density)
    io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace capmfg
