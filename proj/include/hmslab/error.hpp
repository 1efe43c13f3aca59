#pragma once

#include <stdexcept>
#include <string>

namespace hmslab {

// Numeric values double as CLI exit codes.
enum class ErrorKind {
  kUsage = 1,      // bad arguments, flags, or out-of-range options
  kData = 2,       // malformed or inconsistent input files
  kInvariant = 3,  // shape mismatches and violated internal invariants
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_usage(const std::string& msg) {
  throw Error(ErrorKind::kUsage, msg);
}
[[noreturn]] inline void fail_data(const std::string& msg) {
  throw Error(ErrorKind::kData, msg);
}
[[noreturn]] inline void fail_invariant(const std::string& msg) {
  throw Error(ErrorKind::kInvariant, msg);
}

}  // namespace hmslab
