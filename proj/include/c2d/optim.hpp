// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "c2d/tensor.hpp"

namespace c2d {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

/// Moments are stored in the same order as the parameter list they were
/// created for.
struct OptimizerState {
    AdamWConfig config;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step_count = 0;

    static OptimizerState for_params(std::span<const Tensor> params, AdamWConfig config = {});
    [[nodiscard]] std::size_t scalar_count() const;
};

/// One decoupled-weight-decay Adam update. `grads[i]` belongs to `params[i]`.
void adamw_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, OptimizerState& state,
                double lr);
/// Same update reading gradients from a backward pass; a parameter missing
/// from `grads` is treated as having a zero gradient.
void adamw_step(std::span<Tensor> params, const Gradients& grads, OptimizerState& state, double lr);

struct LRSchedule {
    double eta_max = 1e-4;
    double eta_min = 1e-6;
    std::uint64_t t_max = 50000;
};

/// eta_min + (eta_max - eta_min) * (1 + cos(pi t / t_max)) / 2. A step past
/// t_max returns eta_min and appends a warning to `warnings` when given.
double cosine_lr(std::uint64_t t, const LRSchedule& sched, std::vector<std::string>* warnings = nullptr);

/// g / max(1, |g| / c) for a single gradient tensor.
std::vector<double> clip_gradient(std::span<const double> g, double c);
/// Clips every gradient in place, each against its own norm.
void clip_gradients(Gradients& grads, double c);
void clip_gradients(std::vector<std::vector<double>>& grads, double c);

double l2_norm(std::span<const double> g);

}  // namespace c2d
