// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite differences, used as the independent oracle for every
// analytic gradient in the test suites. Only touches leaf values.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "c2d/rng.hpp"
#include "c2d/tensor.hpp"

namespace c2d::testing {

struct FdReport {
    double worst_rel = 0.0;
    double worst_abs = 0.0;
    std::size_t checked = 0;
    std::size_t failures = 0;
    std::string first_failure;
};

/// Compares backward() of `loss()` against (f(x+h) - f(x-h)) / 2h for every
/// entry of every leaf in `leaves`. An entry passes when either
/// |a - n| <= abs_tol or |a - n| / max(|a|, |n|) <= rel_tol.
inline FdReport fd_check(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, double h = 1e-5,
                         double rel_tol = 1e-4, double abs_tol = 1e-7, std::size_t max_entries_per_leaf = 0) {
    FdReport rep;
    Gradients grads = backward(loss());
    for (auto& leaf : leaves) {
        const auto analytic = grads.of(leaf);
        auto vals = leaf.mutable_values();
        std::size_t n = vals.size();
        std::size_t stride = 1;
        if (max_entries_per_leaf > 0 && n > max_entries_per_leaf) {
            stride = (n + max_entries_per_leaf - 1) / max_entries_per_leaf;
        }
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = vals[i];
            double up = 0.0;
            double down = 0.0;
            {
                NoGradGuard ng;
                vals[i] = saved + h;
                up = loss().item();
                vals[i] = saved - h;
                down = loss().item();
            }
            vals[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double diff = std::abs(numeric - analytic[i]);
            const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
            const double rel = scale > 0.0 ? diff / scale : 0.0;
            rep.checked += 1;
            const bool ok = diff <= abs_tol || rel <= rel_tol;
            if (!ok) {
                rep.failures += 1;
                if (rep.first_failure.empty()) {
                    rep.first_failure = (leaf.name().empty() ? std::string("leaf") : leaf.name()) + "[" +
                                        std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                                        " numeric=" + std::to_string(numeric);
                }
            }
            if (diff > abs_tol) {
                rep.worst_rel = std::max(rep.worst_rel, rel);
            }
            rep.worst_abs = std::max(rep.worst_abs, diff);
        }
    }
    return rep;
}

inline Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0, bool rg = true) {
    std::vector<double> v(r * c);
    for (double& x : v) {
        x = rng.uniform(-scale, scale);
    }
    return Tensor::from(r, c, std::move(v), rg);
}

}  // namespace c2d::testing
