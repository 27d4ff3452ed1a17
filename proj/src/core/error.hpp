#pragma once

#include <stdexcept>
#include <string>

namespace ras {

enum class ErrorKind {
    InvalidArgument,
    Shape,
    Io,
    BadMagic,
    BadVersion,
    Truncated,
    Corrupt,
    Numeric,
    State,
};

const char* error_kind_name(ErrorKind kind);

// All core failures are reported through this one exception type; the C API
// maps `kind()` onto a status code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const char* what) {
    if (!cond) {
        throw Error(kind, what);
    }
}

}  // namespace ras
