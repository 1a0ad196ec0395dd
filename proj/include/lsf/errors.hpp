#pragma once

#include <stdexcept>
#include <string>

namespace lsf {

// Error taxonomy maps onto process exit codes: usage/config problems exit 2,
// data problems exit 3, numeric failures exit 4 (see tools/lsf.cpp).
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lsf
