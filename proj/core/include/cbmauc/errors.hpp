#pragma once

#include <stdexcept>
#include <string>

namespace cbmauc {

// Error taxonomy mapped to CLI exit codes:
// ValidationError -> 1, DivergenceError -> 2, IoError -> 3.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cbmauc
