// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mpns {

/// Operand shapes do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on values (labels, probabilities, sizes) was violated.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed config, dataset, checkpoint or SCM file.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite or exploding loss term.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string term, int epoch, double value)
      : std::runtime_error("divergence: term " + term + " = " + std::to_string(value) +
                           " at epoch " + std::to_string(epoch)),
        term_(std::move(term)),
        epoch_(epoch) {}

  const std::string& term() const noexcept { return term_; }
  int epoch() const noexcept { return epoch_; }

 private:
  std::string term_;
  int epoch_;
};

}  // namespace mpns
