// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace c2d {

/// Raised when a caller breaks an operation's precondition (shape mismatch,
/// out-of-range argument, malformed request).
class ContractViolation : public std::invalid_argument {
public:
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a NaN/Inf shows up in a forward value, gradient or loss term.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) {
        throw ContractViolation(what);
    }
}

}  // namespace c2d
