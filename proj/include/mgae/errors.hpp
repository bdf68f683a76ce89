// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <stdexcept>
#include <string>

namespace mgae {

/// Bad command line or config key. Maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data, config value or checkpoint. Maps to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch between tensors or parameter sets.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// NaN/Inf produced by a forward op, a gradient or a loss. Maps to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  return 2;
}

}  // namespace mgae
