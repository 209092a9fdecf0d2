#pragma once

#include <stdexcept>
#include <string>

namespace pwer {

/// Invalid input: bad prevalences, out-of-range levels, shape mismatches.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A numerical routine could not produce a result (no bracket, failed factorization).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pwer
