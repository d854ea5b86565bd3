#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stepsteer {

enum class ErrorCode {
  EmptyContrastSet,
  DimensionMismatch,
  DegeneratePerturbation,
  ZeroVector,
  EmptyPrompt,
  DegenerateLabels,
  InvalidK,
  MissingRecord,
  ParseError,
  EmptyEval,
  ConfigError,
  ProtocolError,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every library failure is reported through this type; `code()` is the
// machine-readable part surfaced by the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace stepsteer
