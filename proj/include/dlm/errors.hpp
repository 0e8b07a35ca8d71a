#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlm {

// Wrong vector length handed to a network or a grid-shaped buffer.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An epoch that does not sit on the simulation grid.
class OffGridError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite drift or diffusion inside the Euler-Maruyama loop.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(std::size_t step, const std::string& what)
      : std::runtime_error("integration failed at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Training produced a non-finite objective or gradient.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(std::size_t update)
      : std::runtime_error("training diverged at update " + std::to_string(update)),
        update_(update) {}
  std::size_t update() const noexcept { return update_; }

 private:
  std::size_t update_;
};

// Iterative solver hit its cap; carries the last iterate.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last)
      : std::runtime_error(what), last_(std::move(last)) {}
  const std::vector<double>& last_iterate() const noexcept { return last_; }

 private:
  std::vector<double> last_;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public FormatError {
 public:
  VersionError(unsigned found, unsigned expected)
      : FormatError("unsupported format version " + std::to_string(found) + " (expected " +
                    std::to_string(expected) + ")") {}
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dlm
