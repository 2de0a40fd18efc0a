#pragma once

#include <stdexcept>
#include <string>

namespace cssl {

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidDistribution : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or degenerate inputs met during a computation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": size " + std::to_string(a) +
                            " vs " + std::to_string(b));
  }
}

}  // namespace detail
}  // namespace cssl
