#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rra {

// Bad input: unknown model family, out-of-range parameters, malformed config.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure inside a solver. `step` is the offending grid step when known.
class SolverError : public std::runtime_error {
 public:
  static constexpr std::size_t kNoStep = static_cast<std::size_t>(-1);

  explicit SolverError(const std::string& what, std::size_t step = kNoStep)
      : std::runtime_error(what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Allocation failure while building large per-path arrays.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rra
