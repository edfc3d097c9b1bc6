#pragma once

#include <stdexcept>
#include <string>

namespace epitome {

/// Raised for every recoverable failure in the pipeline: malformed input,
/// violated preconditions, numerically degenerate states.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace epitome
