#pragma once

#include <stdexcept>
#include <string>

namespace dfl {

// Categories surface through the C API as status codes and through the CLI
// as exit codes.
enum class ErrorKind {
    InvalidArgument = 1,
    Shape = 2,
    Io = 3,
    Format = 4,
    Version = 5,
    Config = 6,
    Numeric = 7,
    Runtime = 8,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

}  // namespace dfl
