#pragma once

#include <stdexcept>
#include <string>

namespace rulelab {

// Runtime failures (I/O, numerical breakdown, rejection-budget exhaustion).
// The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration. The CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  GenerationError(int index, int attempts, const std::string& what)
      : Error(what), index_(index), attempts_(attempts) {}
  int index() const { return index_; }
  int attempts() const { return attempts_; }

 private:
  int index_;
  int attempts_;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace rulelab
