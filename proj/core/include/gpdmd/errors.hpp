#pragma once

#include <stdexcept>
#include <string>

namespace gpdmd {

// Error taxonomy mirrored by the CLI exit codes: config 2, numerical 3, io 4.
enum class ErrorKind { config, numerical, io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(ErrorKind::config, msg) {}
};

struct NumericalError : Error {
    explicit NumericalError(const std::string& msg) : Error(ErrorKind::numerical, msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(ErrorKind::io, msg) {}
};

} // namespace gpdmd
