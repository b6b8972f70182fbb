#pragma once

#include <stdexcept>
#include <string>

namespace seqdistill {

enum class ErrorKind {
  contract,
  config,
  data,
  numeric,
  io,
  integrity,
  dependency,
  migration,
  determinism,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::contract: return "contract";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::dependency: return "dependency";
    case ErrorKind::migration: return "migration";
    case ErrorKind::determinism: return "determinism";
  }
  return "unknown";
}

// Process exit codes are part of the CLI contract: config=2, data=3,
// numeric=4, io=5. The remaining kinds fold into the closest category.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data:
    case ErrorKind::dependency: return 3;
    case ErrorKind::numeric:
    case ErrorKind::determinism: return 4;
    case ErrorKind::io:
    case ErrorKind::integrity:
    case ErrorKind::migration: return 5;
    case ErrorKind::contract: return 1;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::contract, what);
}

}  // namespace seqdistill
