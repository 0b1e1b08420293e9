// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Complexity-aware mixture-of-experts layer over visual tokens.

#pragma once

#include <array>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "c2d/chartlab.hpp"
#include "c2d/nn.hpp"

namespace c2d {

enum class ReweightMode { literal, sharpen };
enum class RoutingStrategy { topk, probabilistic };
std::string_view to_string(ReweightMode m);
std::string_view to_string(RoutingStrategy s);
ReweightMode parse_reweight_mode(std::string_view s);
RoutingStrategy parse_routing_strategy(std::string_view s);

// ------------------------------------------------------------ complexity

/// Per-type difficulty at initialization, in ChartType order.
inline constexpr std::array<double, kChartTypeCount> kTypeComplexityInit{3.2, 4.1, 4.5, 2.7, 4.0};

struct ComplexityHead {
    Tensor alpha;  // 1 x 1
    Tensor beta;   // 1 x 1
    Tensor psi;    // 1 x 5, one entry per chart type
};
ComplexityHead make_complexity_head(ParamRegistry& reg, double alpha, double beta);

/// alpha * predicted_count + beta * psi[type], as a 1 x 1 tensor.
Tensor complexity_score(const Tensor& predicted_count, ChartType type, const ComplexityHead& head);

// ------------------------------------------------------------ gating

struct GateOutput {
    Tensor raw;        // T x N
    Tensor noised;     // T x N
    Tensor probs;      // softmax of noised
    Tensor log_probs;  // log-softmax of noised
};
/// Linear scores plus N(0, sigma^2) noise when training with an rng.
GateOutput gate(const Tensor& tokens, const Linear& scorer, double sigma, bool training, Rng* rng);

/// literal: p * exp(c/T) renormalized (the factor is constant per token and
/// cancels); sharpen: softmax(log p * (1 + c/T)). `c` is T x 1 or 1 x 1.
/// Rows of p must sum to 1 within 1e-9.
Tensor reweight(const Tensor& p, const Tensor& c, double temperature, ReweightMode mode);
/// Same map taking log p, which keeps the sharpen path finite for tiny p.
Tensor reweight_log(const Tensor& log_p, const Tensor& c, double temperature, ReweightMode mode);

// ------------------------------------------------------------ dispatch

struct DispatchResult {
    std::vector<std::vector<int>> selected;  // per token, in choice order; empty = bypass
    std::vector<int> load;                   // tokens per expert
};
/// Assigns tokens in order. Each token walks its experts by descending p'
/// (ties to the lower id) or, for `probabilistic`, samples without
/// replacement in proportion to p'; full experts are skipped, so overflow
/// falls through and a token with no free expert bypasses the layer.
DispatchResult dispatch(const std::vector<double>& p_prime, std::size_t tokens, std::size_t experts,
                        RoutingStrategy strategy, int k, int capacity, Rng* rng);

/// Renormalized p' over each token's selected set (T x N, zeros elsewhere).
Tensor fusion_weights(const Tensor& p_prime, const DispatchResult& d);

/// x + sum_e w[:, e] * expert_e(x) over the dispatched tokens.
Tensor fuse(const Tensor& x, const Tensor& weights, const DispatchResult& d, const std::vector<FeedForward>& experts);

// ------------------------------------------------------------ losses

/// Squared deviation of routing probabilities from 1/N. By default on the
/// batch-mean distribution; `per_token` averages the per-token deviation.
Tensor load_balance_loss(const Tensor& probs, bool per_token = false);
/// Mean over tokens of sum_i p_i log(p_i N), with 0 log 0 = 0.
Tensor router_kl_loss(const Tensor& probs);
Tensor router_kl_loss(const Tensor& probs, const Tensor& log_probs);

// ------------------------------------------------------------ utilization

/// Expert usage over a rolling window of steps.
class UtilizationTracker {
public:
    explicit UtilizationTracker(std::size_t experts = 8, std::size_t window = 1000);
    /// counts[type][expert] = routed token-slots in this step.
    void record(const std::array<std::vector<double>, kChartTypeCount>& counts);
    void record(const std::vector<int>& expert_slots, ChartType type);
    void end_step();
    /// Share of routed slots per expert over the window; zeros before any routing.
    [[nodiscard]] std::vector<double> utilization() const;
    /// [type][expert] share of that type's slots.
    [[nodiscard]] std::array<std::vector<double>, kChartTypeCount> per_type_share() const;
    [[nodiscard]] std::string heatmap_csv() const;
    [[nodiscard]] std::size_t experts() const { return experts_; }
    [[nodiscard]] std::size_t steps_in_window() const { return window_.size(); }

private:
    using StepCounts = std::array<std::vector<double>, kChartTypeCount>;
    std::size_t experts_;
    std::size_t window_size_;
    std::deque<StepCounts> window_;
    StepCounts pending_;
    bool pending_any_ = false;
};

/// std of u across experts and the largest share.
double utilization_std(const std::vector<double>& u);
double utilization_max(const std::vector<double>& u);

// ------------------------------------------------------------ layer

struct MoEConfig {
    int experts = 8;
    int capacity = 32;  // per expert, per chart
    int k = 2;
    int hidden = 256;
    RoutingStrategy strategy = RoutingStrategy::topk;
    double temperature = 1.0;
    double sigma = 0.01;
    ReweightMode reweight = ReweightMode::sharpen;
};

struct RoutingDecision {
    std::size_t tokens = 0;
    std::size_t experts = 0;
    std::vector<double> raw_scores, noised_scores, probs, reweighted;  // tokens x experts
    std::vector<std::vector<std::pair<int, double>>> selected;        // (expert, fusion weight)
    std::vector<double> complexity;                                    // per chart
};

struct MoEOutput {
    std::vector<Tensor> outputs;  // per chart, M x d
    Tensor probs, log_probs;      // T x N over the whole batch
    Tensor reweighted, log_reweighted;
    RoutingDecision decision;
    std::vector<std::vector<int>> load;  // per chart, per expert slots
};

class MoELayer {
public:
    MoELayer() = default;
    MoELayer(const MoEConfig& cfg, std::size_t d, ParamRegistry& reg, const std::string& name, Rng& rng);

    /// `charts` are per-chart token matrices, `complexity` their 1 x 1 scores.
    /// Capacity is enforced within each chart.
    [[nodiscard]] MoEOutput forward(const std::vector<Tensor>& charts, const std::vector<Tensor>& complexity,
                                    bool training, Rng* rng) const;

    [[nodiscard]] const MoEConfig& config() const { return cfg_; }
    Linear scorer;
    std::vector<FeedForward> experts;

private:
    MoEConfig cfg_;
};

}  // namespace c2d
