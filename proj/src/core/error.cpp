#include "error.hpp"

namespace rlab {

const char* error_kind_name(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::Domain: return "domain";
        case ErrorKind::Contract: return "contract";
        case ErrorKind::ReplayContract: return "replay_contract";
        case ErrorKind::Format: return "format";
        case ErrorKind::Config: return "config";
        case ErrorKind::Data: return "data";
        case ErrorKind::Export: return "export";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

}  // namespace rlab
