#include "error.hpp"

namespace ras {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid_argument";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Io: return "io";
        case ErrorKind::BadMagic: return "bad_magic";
        case ErrorKind::BadVersion: return "bad_version";
        case ErrorKind::Truncated: return "truncated";
        case ErrorKind::Corrupt: return "corrupt";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::State: return "state";
    }
    return "unknown";
}

}  // namespace ras
