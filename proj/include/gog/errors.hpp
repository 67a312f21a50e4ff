#pragma once

#include <stdexcept>
#include <string>

namespace gog {

// Caller broke an operation's precondition (dimension mismatch, alpha out of
// range, t = 0 passed to a scheduler step, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or invalid configuration: policy file, world file, run flags.
// `subject` names the offending key or concept id when one exists.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, std::string subject = {})
      : std::runtime_error(what), subject_(std::move(subject)) {}

  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

// Network failure, timeout or non-2xx response from a chat endpoint.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Endpoint answered but the reply does not follow the expected grammar.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gog
