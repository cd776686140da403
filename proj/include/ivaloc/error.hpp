#pragma once

#include <stdexcept>
#include <string>

namespace ivaloc {

enum class ErrorKind {
    Shape,
    Contract,
    Config,
    Data,
    Numeric,
    Version,
};

/// Base of every exception the library throws. The kind drives CLI exit codes
/// and C API status values.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error(ErrorKind::Shape, w) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& w) : Error(ErrorKind::Contract, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorKind::Data, w) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error(ErrorKind::Numeric, w) {}
};
struct VersionError : Error {
    explicit VersionError(const std::string& w) : Error(ErrorKind::Version, w) {}
};

}  // namespace ivaloc
