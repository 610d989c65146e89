#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mfgi {

// Parameter or config validation failure; carries every violation at once so
// a bad config is reported in a single pass.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string msg = "validation failed:";
    for (const auto& s : v) {
      msg += "\n  - ";
      msg += s;
    }
    return msg;
  }

  std::vector<std::string> violations_;
};

// Numerical failure inside an ODE solve or the fixed-point loop.
class SolverError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A strategy source produced rates outside the admissible range.
class PolicyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mfgi
