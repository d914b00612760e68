#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tof {

/// Base for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration. Carries every violated invariant.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  explicit ConfigError(const std::string& message) : ConfigError(std::vector<std::string>{message}) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-contract message from a worker.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Worker unreachable, timed out, or answered with an error message.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// A verifier produced no usable score (non-finite value or transport failure).
class VerifierFault : public Error {
 public:
  using Error::Error;
};

/// Inputs that disagree with each other (e.g. rank tables over different candidates).
class InputError : public Error {
 public:
  using Error::Error;
};

/// The exhaustive oracle refuses schedules above its path-count bound.
class OracleRefused : public Error {
 public:
  using Error::Error;
};

/// The search could not produce any complete candidate.
class RunError : public Error {
 public:
  using Error::Error;
};

}  // namespace tof
