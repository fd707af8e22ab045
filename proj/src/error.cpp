#include "capmfg/error.hpp"

namespace capmfg {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::validation: return "validation";
        case ErrorKind::domain: return "domain";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::bracketing: return "bracketing";
        case ErrorKind::convergence: return "convergence";
        case ErrorKind::stability: return "stability";
        case ErrorKind::scheme_fault: return "scheme_fault";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace capmfg
