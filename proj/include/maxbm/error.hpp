#pragma once

#include <stdexcept>
#include <string>

namespace maxbm {

/// Raised for malformed input files and violated preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input could not be parsed (edge list, label CSV, snapshot JSON).
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace maxbm
