#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bdk {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate an operation's precondition.
struct PreconditionError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Malformed input file (CSV, IDX, checkpoint, metrics).
struct ParseError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  ConfigError(std::string field, const std::string& reason)
      : Error(field + ": " + reason), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// A chain or student produced non-finite parameters.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, std::size_t iteration)
      : Error(what + " diverged at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw PreconditionError(msg);
}

}  // namespace bdk
