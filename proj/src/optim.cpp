// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/optim.hpp"

#include <cmath>
#include <numbers>

#include "c2d/errors.hpp"

namespace c2d {

OptimizerState OptimizerState::for_params(std::span<const Tensor> params, AdamWConfig config) {
    OptimizerState st;
    st.config = config;
    for (const auto& p : params) {
        st.first_moment.emplace_back(p.size(), 0.0);
        st.second_moment.emplace_back(p.size(), 0.0);
    }
    return st;
}

std::size_t OptimizerState::scalar_count() const {
    std::size_t n = 0;
    for (const auto& m : first_moment) {
        n += 2 * m.size();
    }
    return n;
}

void adamw_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, OptimizerState& state,
                double lr) {
    require(lr > 0.0, "adamw_step: learning rate must be positive");
    require(grads.size() == params.size() && state.first_moment.size() == params.size() &&
                state.second_moment.size() == params.size(),
            "adamw_step: parameter, gradient and moment counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(grads[i].size() == params[i].size() && state.first_moment[i].size() == params[i].size() &&
                    state.second_moment[i].size() == params[i].size(),
                "adamw_step: shape mismatch for parameter '" + params[i].name() + "'");
    }
    const auto& cfg = state.config;
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].mutable_values();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] *= decay;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

void adamw_step(std::span<Tensor> params, const Gradients& grads, OptimizerState& state, double lr) {
    std::vector<std::vector<double>> dense;
    dense.reserve(params.size());
    for (const auto& p : params) {
        dense.push_back(grads.of(p));
    }
    adamw_step(params, dense, state, lr);
}

double cosine_lr(std::uint64_t t, const LRSchedule& sched, std::vector<std::string>* warnings) {
    require(sched.t_max > 0, "cosine_lr: t_max must be positive");
    require(sched.eta_min > 0.0 && sched.eta_min < sched.eta_max, "cosine_lr: need 0 < eta_min < eta_max");
    if (t > sched.t_max) {
        if (warnings != nullptr) {
            warnings->push_back("cosine_lr: step " + std::to_string(t) + " beyond t_max " +
                                std::to_string(sched.t_max) + ", clamped to eta_min");
        }
        return sched.eta_min;
    }
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(sched.t_max);
    return sched.eta_min + 0.5 * (sched.eta_max - sched.eta_min) * (1.0 + std::cos(phase));
}

double l2_norm(std::span<const double> g) {
    double s = 0.0;
    for (double x : g) {
        s += x * x;
    }
    return std::sqrt(s);
}

std::vector<double> clip_gradient(std::span<const double> g, double c) {
    require(c > 0.0, "clip_gradients: threshold must be positive");
    const double factor = std::max(1.0, l2_norm(g) / c);
    std::vector<double> out(g.begin(), g.end());
    if (factor > 1.0) {
        for (double& x : out) {
            x /= factor;
        }
    }
    return out;
}

void clip_gradients(Gradients& grads, double c) {
    require(c > 0.0, "clip_gradients: threshold must be positive");
    for (const auto& [id, g] : grads.raw()) {
        grads.put(id, clip_gradient(g, c));
    }
}

void clip_gradients(std::vector<std::vector<double>>& grads, double c) {
    for (auto& g : grads) {
        g = clip_gradient(g, c);
    }
}

}  // namespace c2d
