#pragma once

#include <stdexcept>
#include <string>

namespace casimir {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected inputs: bad parameters, indices, domains. CLI exit code 2.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class IndexRangeError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class DomainError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// Stop time does not return the wall to L0.
class MatchingDomainError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// Resonant closed forms need an integer drive ratio.
class ResonanceUndefinedError : public InvalidInput {
 public:
  ResonanceUndefinedError() : InvalidInput("resonance undefined for non-integer gamma") {}
};

/// Numerical failure during time stepping. CLI exit code 1.
class IntegrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace casimir
