#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cnf {

// Exit codes used by the command-line front end.
enum class ExitCode : int { Ok = 0, Usage = 2, Data = 3, Numeric = 4 };

/// Caller violated an operation's contract (bad arguments, empty batch, ...).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data could not be read or failed validation.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Query point outside the unit domain of the field.
class DomainError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Ground-truth pixels requested outside the current training stage.
class AccessError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// A non-finite value appeared. `param_index` names the first offending
/// parameter when one can be identified, otherwise -1.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::int64_t param_index = -1)
      : std::runtime_error(what), param_index_(param_index) {}
  std::int64_t param_index() const noexcept { return param_index_; }

 private:
  std::int64_t param_index_;
};

}  // namespace cnf
