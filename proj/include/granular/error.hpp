#pragma once

#include <stdexcept>
#include <string>

namespace granular {

/// Bad input data: unreadable files, malformed rows, unknown regions.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite losses, failed solves and similar numerical breakdowns.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace granular
