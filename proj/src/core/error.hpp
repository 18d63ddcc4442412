#pragma once

#include <stdexcept>
#include <string>

namespace rlab {

enum class ErrorKind {
    Dimension,
    Domain,
    Contract,
    ReplayContract,
    Format,
    Config,
    Data,
    Export,
    Io,
};

const char* error_kind_name(ErrorKind kind) noexcept;

/// Base exception for every failure raised by the library. The kind maps
/// one-to-one onto the C API status codes.
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

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        throw Error(kind, message);
    }
}

}  // namespace rlab
