#pragma once

#include <stdexcept>
#include <string>

namespace attnverify {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed JSON or a file that is not the expected document shape.
struct ParseError : Error {
  using Error::Error;
};

// Tensor dimensions inconsistent with the model config; message names the tensor.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite or otherwise out-of-domain numeric content in an input artifact.
struct ValueError : Error {
  using Error::Error;
};

// A relaxation was asked for an interval outside its domain (e.g. reciprocal
// spanning zero, or lo > hi).
struct DomainError : Error {
  using Error::Error;
};

// Non-finite gradient; message names the offending site.
struct GradientError : Error {
  using Error::Error;
};

// Brute-force enumeration would exceed the configured budget.
struct BudgetError : Error {
  using Error::Error;
};

// Softmax denominator bounds were not strictly positive: upstream bounds are
// too loose to continue, the task verdict becomes Unverifiable.
struct UnverifiableError : Error {
  using Error::Error;
};

struct SearchError : Error {
  enum class Kind { LabelMismatch, CapReached };
  Kind kind;
  SearchError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

}  // namespace attnverify
