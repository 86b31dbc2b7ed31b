#pragma once

#include <stdexcept>
#include <string>

namespace vicc {

/// Broad failure classes; the CLI maps these onto stable exit codes.
enum class ErrorKind {
  Usage,    // bad arguments or flag values
  Format,   // unreadable or inconsistent file contents
  Numeric,  // divergence, singular matrices, non-finite values
  Contract  // a precondition of an operation was violated
};

/// Fine-grained codes for file-format failures so callers can distinguish
/// them without parsing messages.
enum class FormatCode { None, BadMagic, Truncated, DimOverflow, BadSidecar };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string msg, FormatCode code = FormatCode::None)
      : std::runtime_error(std::move(msg)), kind_(kind), code_(code) {}

  ErrorKind kind() const { return kind_; }
  FormatCode code() const { return code_; }

private:
  ErrorKind kind_;
  FormatCode code_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) {
  throw Error(ErrorKind::Usage, msg);
}
[[noreturn]] inline void throw_format(const std::string& msg, FormatCode code) {
  throw Error(ErrorKind::Format, msg, code);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(ErrorKind::Numeric, msg);
}
[[noreturn]] inline void throw_contract(const std::string& msg) {
  throw Error(ErrorKind::Contract, msg);
}

}  // namespace vicc
