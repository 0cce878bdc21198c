#pragma once

#include <stdexcept>
#include <string>

namespace anomagent {

enum class ErrorCode {
  // transcript parsing
  UnclosedTag,
  MalformedJson,
  UnknownTool,
  SchemaViolation,
  StrayText,
  // tool invocation
  BackendUnavailable,
  BadResponse,
  DanglingImage,
  // numerics
  GroupTooSmall,
  ShapeMismatch,
  DegenerateRow,
  NoEligibleCluster,
  // episodes
  PolicyError,
  NoGeneration,
  // configuration / io
  ConfigError,
  IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace anomagent
