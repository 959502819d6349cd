#pragma once

#include <stdexcept>
#include <string>

namespace viscog {

enum class ErrorKind { config, data, numeric, io, contract };

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
    case ErrorKind::contract: return "contract";
  }
  return "unknown";
}

/// Every failure raised by the library carries a category so the CLI can map
/// it onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorKind::contract, w) {}
};

// placement failure is a data problem of the spec, not of the config file
struct SatisfiabilityError : DataError {
  explicit SatisfiabilityError(const std::string& w) : DataError(w) {}
};

}  // namespace viscog
