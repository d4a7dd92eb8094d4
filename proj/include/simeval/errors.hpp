#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace simeval {

/// Base of every error the library throws. `code()` is the stable
/// machine-readable identifier printed by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define SIMEVAL_DEFINE_ERROR(Name, code_string)                           \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& message) : Error(code_string, message) {} \
  };

SIMEVAL_DEFINE_ERROR(ConfigError, "config_error")
SIMEVAL_DEFINE_ERROR(ArgumentError, "argument_error")
SIMEVAL_DEFINE_ERROR(ScreeningError, "screening_error")
SIMEVAL_DEFINE_ERROR(ConflictError, "conflict")
SIMEVAL_DEFINE_ERROR(NotFoundError, "not_found")
SIMEVAL_DEFINE_ERROR(InfeasibleError, "infeasible")
SIMEVAL_DEFINE_ERROR(IoError, "io_error")
SIMEVAL_DEFINE_ERROR(EmptyOutputError, "empty_output")
SIMEVAL_DEFINE_ERROR(UsageError, "usage_error")

#undef SIMEVAL_DEFINE_ERROR

/// The provider could not be reached or answered with a retryable failure.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& message, bool retryable = true)
      : Error("transport_error", message), retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

/// The provider declined to answer on content-policy grounds. Never retried.
class RefusalError : public Error {
 public:
  explicit RefusalError(const std::string& message) : Error("provider_refusal", message) {}
};

}  // namespace simeval
