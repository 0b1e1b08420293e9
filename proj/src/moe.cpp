// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "c2d/errors.hpp"

namespace c2d {

std::string_view to_string(ReweightMode m) { return m == ReweightMode::literal ? "literal" : "sharpen"; }
std::string_view to_string(RoutingStrategy s) { return s == RoutingStrategy::topk ? "topk" : "prob"; }

ReweightMode parse_reweight_mode(std::string_view s) {
    if (s == "literal") return ReweightMode::literal;
    if (s == "sharpen") return ReweightMode::sharpen;
    throw ContractViolation("unknown reweight mode '" + std::string(s) + "' (literal, sharpen)");
}

RoutingStrategy parse_routing_strategy(std::string_view s) {
    if (s == "topk") return RoutingStrategy::topk;
    if (s == "prob" || s == "probabilistic") return RoutingStrategy::probabilistic;
    throw ContractViolation("unknown routing strategy '" + std::string(s) + "' (topk, prob)");
}

ComplexityHead make_complexity_head(ParamRegistry& reg, double alpha, double beta) {
    ComplexityHead h;
    h.alpha = init_const(reg, "complexity.alpha", 1, 1, alpha, ParamGroup::complexity);
    h.beta = init_const(reg, "complexity.beta", 1, 1, beta, ParamGroup::complexity);
    h.psi = reg.add("complexity.psi",
                    Tensor::from(1, kChartTypeCount,
                                 std::vector<double>(kTypeComplexityInit.begin(), kTypeComplexityInit.end()), true),
                    ParamGroup::complexity);
    return h;
}

Tensor complexity_score(const Tensor& predicted_count, ChartType type, const ComplexityHead& head) {
    require(predicted_count.size() == 1, "complexity_score: predicted count must be 1x1");
    const auto t = static_cast<std::size_t>(type);
    const Tensor psi_t = slice_cols(head.psi, t, t + 1);
    return add(mul(head.alpha, predicted_count), mul(head.beta, psi_t));
}

GateOutput gate(const Tensor& tokens, const Linear& scorer, double sigma, bool training, Rng* rng) {
    require(sigma >= 0.0, "gate: sigma must be non-negative");
    GateOutput g;
    g.raw = scorer.forward(tokens);
    g.noised = g.raw;
    if (training && rng != nullptr && sigma > 0.0) {
        std::vector<double> noise(g.raw.size());
        for (double& v : noise) {
            v = rng->normal(0.0, sigma);
        }
        g.noised = add(g.raw, Tensor::from(g.raw.rows(), g.raw.cols(), std::move(noise), false));
    }
    g.probs = softmax_rows(g.noised);
    g.log_probs = log_softmax_rows(g.noised);
    return g;
}

namespace {

Tensor per_token(const Tensor& c, std::size_t rows) {
    require(c.cols() == 1 && (c.rows() == 1 || c.rows() == rows), "reweight: complexity must be 1x1 or Tx1");
    return c.rows() == rows ? c : gather_rows(c, std::vector<std::size_t>(rows, 0));
}

void check_distribution(const Tensor& p) {
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            const double v = p.at(r, j);
            require(v >= 0.0, "reweight: probabilities must be non-negative");
            s += v;
        }
        require(std::abs(s - 1.0) <= 1e-9, "reweight: probability rows must sum to 1");
    }
}

}  // namespace

Tensor reweight(const Tensor& p, const Tensor& c, double temperature, ReweightMode mode) {
    require(temperature > 0.0, "reweight: temperature must be positive");
    check_distribution(p);
    if (mode == ReweightMode::literal) {
        return row_normalize(scale_rows(p, exp(scale(per_token(c, p.rows()), 1.0 / temperature))));
    }
    return reweight_log(log(p), c, temperature, mode);
}

Tensor reweight_log(const Tensor& log_p, const Tensor& c, double temperature, ReweightMode mode) {
    require(temperature > 0.0, "reweight: temperature must be positive");
    const Tensor ct = per_token(c, log_p.rows());
    if (mode == ReweightMode::literal) {
        return row_normalize(scale_rows(exp(log_p), exp(scale(ct, 1.0 / temperature))));
    }
    return softmax_rows(scale_rows(log_p, add_const(scale(ct, 1.0 / temperature), 1.0)));
}

DispatchResult dispatch(const std::vector<double>& p_prime, std::size_t tokens, std::size_t experts,
                        RoutingStrategy strategy, int k, int capacity, Rng* rng) {
    require(k >= 1 && static_cast<std::size_t>(k) <= experts, "dispatch: k must lie in [1, N]");
    require(capacity >= 0, "dispatch: capacity must be non-negative");
    require(p_prime.size() == tokens * experts, "dispatch: probability table has the wrong size");
    require(strategy == RoutingStrategy::topk || rng != nullptr, "dispatch: probabilistic routing needs an rng");
    DispatchResult d;
    d.selected.resize(tokens);
    d.load.assign(experts, 0);
    std::vector<int> order(experts);
    for (std::size_t t = 0; t < tokens; ++t) {
        const double* row = p_prime.data() + t * experts;
        auto& sel = d.selected[t];
        if (strategy == RoutingStrategy::topk) {
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [row](int a, int b) { return row[a] > row[b]; });
            for (int e : order) {
                if (static_cast<int>(sel.size()) == k) break;
                if (d.load[static_cast<std::size_t>(e)] < capacity) {
                    sel.push_back(e);
                    ++d.load[static_cast<std::size_t>(e)];
                }
            }
        } else {
            std::vector<int> avail;
            for (std::size_t e = 0; e < experts; ++e) {
                if (d.load[e] < capacity) avail.push_back(static_cast<int>(e));
            }
            while (static_cast<int>(sel.size()) < k && !avail.empty()) {
                double total = 0.0;
                for (int e : avail) total += row[e];
                std::size_t pick = 0;
                if (total > 0.0) {
                    const double u = rng->uniform() * total;
                    double acc = 0.0;
                    pick = avail.size() - 1;
                    for (std::size_t i = 0; i < avail.size(); ++i) {
                        acc += row[avail[i]];
                        if (u < acc && row[avail[i]] > 0.0) {
                            pick = i;
                            break;
                        }
                    }
                    // rounding can leave u == total; step back to a positive entry
                    while (pick > 0 && row[avail[pick]] <= 0.0) --pick;
                }
                const int e = avail[pick];
                sel.push_back(e);
                ++d.load[static_cast<std::size_t>(e)];
                avail.erase(avail.begin() + static_cast<std::ptrdiff_t>(pick));
            }
        }
    }
    for (std::size_t e = 0; e < experts; ++e) {
        if (d.load[e] > capacity) {
            throw std::logic_error("dispatch: capacity exceeded for expert " + std::to_string(e));
        }
    }
    return d;
}

Tensor fusion_weights(const Tensor& p_prime, const DispatchResult& d) {
    require(d.selected.size() == p_prime.rows(), "fusion_weights: token count mismatch");
    std::vector<double> mask(p_prime.size(), 0.0);
    for (std::size_t t = 0; t < d.selected.size(); ++t) {
        for (int e : d.selected[t]) {
            mask[t * p_prime.cols() + static_cast<std::size_t>(e)] = 1.0;
        }
    }
    return row_normalize(mul_const(p_prime, std::move(mask)));
}

Tensor fuse(const Tensor& x, const Tensor& weights, const DispatchResult& d, const std::vector<FeedForward>& experts) {
    require(weights.rows() == x.rows() && weights.cols() == experts.size(), "fuse: weight table shape mismatch");
    Tensor out = x;
    for (std::size_t e = 0; e < experts.size(); ++e) {
        std::vector<std::size_t> idx;
        for (std::size_t t = 0; t < d.selected.size(); ++t) {
            if (std::find(d.selected[t].begin(), d.selected[t].end(), static_cast<int>(e)) != d.selected[t].end()) {
                idx.push_back(t);
            }
        }
        if (idx.empty()) {
            continue;
        }
        const Tensor y = experts[e].forward(gather_rows(x, idx), 0.0, false, nullptr);
        const Tensor w = gather_rows(slice_cols(weights, e, e + 1), idx);
        out = add(out, scatter_rows(scale_rows(y, w), idx, x.rows()));
    }
    return out;
}

Tensor load_balance_loss(const Tensor& probs, bool per_token) {
    const double u = 1.0 / static_cast<double>(probs.cols());
    if (per_token) {
        return scale(sum(square(add_const(probs, -u))), 1.0 / static_cast<double>(probs.rows()));
    }
    return sum(square(add_const(mean_rows(probs), -u)));
}

Tensor router_kl_loss(const Tensor& probs) {
    // log(p + [p == 0]) leaves log p untouched except at exact zeros, where
    // it gives log 1 = 0 and so the 0 log 0 = 0 convention.
    std::vector<double> zero_fix(probs.size(), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        zero_fix[i] = probs.values()[i] == 0.0 ? 1.0 : 0.0;
    }
    const Tensor logp = log(add(probs, Tensor::from(probs.rows(), probs.cols(), std::move(zero_fix), false)));
    return router_kl_loss(probs, logp);
}

Tensor router_kl_loss(const Tensor& probs, const Tensor& log_probs) {
    const double ln_n = std::log(static_cast<double>(probs.cols()));
    return scale(sum(mul(probs, add_const(log_probs, ln_n))), 1.0 / static_cast<double>(probs.rows()));
}

// ------------------------------------------------------------ utilization

UtilizationTracker::UtilizationTracker(std::size_t experts, std::size_t window)
    : experts_(experts), window_size_(window) {
    require(experts >= 1 && window >= 1, "utilization tracker: experts and window must be positive");
    for (auto& v : pending_) v.assign(experts_, 0.0);
}

void UtilizationTracker::record(const std::array<std::vector<double>, kChartTypeCount>& counts) {
    for (std::size_t t = 0; t < kChartTypeCount; ++t) {
        require(counts[t].size() == experts_, "utilization: expert count mismatch");
        for (std::size_t e = 0; e < experts_; ++e) pending_[t][e] += counts[t][e];
    }
    pending_any_ = true;
}

void UtilizationTracker::record(const std::vector<int>& expert_slots, ChartType type) {
    require(expert_slots.size() == experts_, "utilization: expert count mismatch");
    for (std::size_t e = 0; e < experts_; ++e) {
        pending_[static_cast<std::size_t>(type)][e] += expert_slots[e];
    }
    pending_any_ = true;
}

void UtilizationTracker::end_step() {
    window_.push_back(pending_);
    if (window_.size() > window_size_) {
        window_.pop_front();
    }
    for (auto& v : pending_) std::fill(v.begin(), v.end(), 0.0);
    pending_any_ = false;
}

std::vector<double> UtilizationTracker::utilization() const {
    std::vector<double> u(experts_, 0.0);
    double total = 0.0;
    for (const auto& step : window_) {
        for (const auto& per_type : step) {
            for (std::size_t e = 0; e < experts_; ++e) {
                u[e] += per_type[e];
                total += per_type[e];
            }
        }
    }
    if (total > 0.0) {
        for (double& v : u) v /= total;
    }
    return u;
}

std::array<std::vector<double>, kChartTypeCount> UtilizationTracker::per_type_share() const {
    std::array<std::vector<double>, kChartTypeCount> out;
    for (std::size_t t = 0; t < kChartTypeCount; ++t) {
        out[t].assign(experts_, 0.0);
        double total = 0.0;
        for (const auto& step : window_) {
            for (std::size_t e = 0; e < experts_; ++e) {
                out[t][e] += step[t][e];
                total += step[t][e];
            }
        }
        if (total > 0.0) {
            for (double& v : out[t]) v /= total;
        }
    }
    return out;
}

std::string UtilizationTracker::heatmap_csv() const {
    const auto share = per_type_share();
    std::ostringstream os;
    os.precision(6);
    os << "expert";
    for (auto t : kChartTypes) os << ',' << to_string(t);
    os << '\n';
    for (std::size_t e = 0; e < experts_; ++e) {
        os << e;
        for (std::size_t t = 0; t < kChartTypeCount; ++t) os << ',' << std::fixed << share[t][e];
        os << '\n';
    }
    return os.str();
}

double utilization_std(const std::vector<double>& u) {
    if (u.empty()) return 0.0;
    const double m = std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size());
    double s = 0.0;
    for (double v : u) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(u.size()));
}

double utilization_max(const std::vector<double>& u) { return u.empty() ? 0.0 : *std::max_element(u.begin(), u.end()); }

// ------------------------------------------------------------ layer

MoELayer::MoELayer(const MoEConfig& cfg, std::size_t d, ParamRegistry& reg, const std::string& name, Rng& rng)
    : cfg_(cfg) {
    require(cfg.experts >= 2, "moe: at least two experts are required");
    require(cfg.k >= 1 && cfg.k <= cfg.experts, "moe: k must lie in [1, experts]");
    require(cfg.capacity >= 1, "moe: capacity must be positive");
    require(cfg.temperature > 0.0 && cfg.sigma >= 0.0, "moe: temperature must be positive and sigma non-negative");
    scorer = make_linear(reg, name + ".gate", d, static_cast<std::size_t>(cfg.experts), rng, ProjRole::other,
                         ParamGroup::gate);
    for (int e = 0; e < cfg.experts; ++e) {
        experts.push_back(make_ffn(reg, name + ".expert" + std::to_string(e), d, static_cast<std::size_t>(cfg.hidden),
                                   rng, ParamGroup::expert));
    }
}

MoEOutput MoELayer::forward(const std::vector<Tensor>& charts, const std::vector<Tensor>& complexity, bool training,
                            Rng* rng) const {
    require(!charts.empty() && charts.size() == complexity.size(), "moe: one complexity score per chart");
    const auto n_exp = static_cast<std::size_t>(cfg_.experts);
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> owner;
    for (std::size_t i = 0; i < charts.size(); ++i) {
        offsets.push_back(offsets.back() + charts[i].rows());
        owner.insert(owner.end(), charts[i].rows(), i);
    }
    const std::size_t T = offsets.back();
    const Tensor X = charts.size() == 1 ? charts[0] : concat_rows(charts);
    const Tensor C = complexity.size() == 1 ? complexity[0] : concat_rows(complexity);

    MoEOutput out;
    const GateOutput g = gate(X, scorer, cfg_.sigma, training, rng);
    const Tensor c_tok = gather_rows(C, owner);
    out.probs = g.probs;
    out.log_probs = g.log_probs;
    if (cfg_.reweight == ReweightMode::sharpen) {
        const Tensor z = scale_rows(g.log_probs, add_const(scale(c_tok, 1.0 / cfg_.temperature), 1.0));
        out.reweighted = softmax_rows(z);
        out.log_reweighted = log_softmax_rows(z);
    } else {
        out.reweighted = reweight_log(g.log_probs, c_tok, cfg_.temperature, ReweightMode::literal);
        out.log_reweighted = log(out.reweighted);
    }

    DispatchResult all;
    all.selected.resize(T);
    all.load.assign(n_exp, 0);
    const auto pv = out.reweighted.values();
    for (std::size_t i = 0; i < charts.size(); ++i) {
        const std::size_t lo = offsets[i];
        const std::size_t n = offsets[i + 1] - lo;
        std::vector<double> slice(pv.begin() + static_cast<std::ptrdiff_t>(lo * n_exp),
                                  pv.begin() + static_cast<std::ptrdiff_t>((lo + n) * n_exp));
        // without a stream (inference), sampled routing uses a fixed per-chart
        // stream so a chart routes the same way alone or inside a batch
        Rng fixed(0x726f757465ULL);
        Rng* r = rng != nullptr ? rng : &fixed;
        auto d = dispatch(slice, n, n_exp, cfg_.strategy, cfg_.k, cfg_.capacity, r);
        for (std::size_t t = 0; t < n; ++t) all.selected[lo + t] = std::move(d.selected[t]);
        for (std::size_t e = 0; e < n_exp; ++e) all.load[e] += d.load[e];
        out.load.push_back(std::move(d.load));
    }

    const Tensor W = fusion_weights(out.reweighted, all);
    const Tensor Y = fuse(X, W, all, experts);
    for (std::size_t i = 0; i < charts.size(); ++i) {
        out.outputs.push_back(charts.size() == 1 ? Y : slice_rows(Y, offsets[i], offsets[i + 1]));
    }

    auto& dec = out.decision;
    dec.tokens = T;
    dec.experts = n_exp;
    dec.raw_scores.assign(g.raw.values().begin(), g.raw.values().end());
    dec.noised_scores.assign(g.noised.values().begin(), g.noised.values().end());
    dec.probs.assign(g.probs.values().begin(), g.probs.values().end());
    dec.reweighted.assign(pv.begin(), pv.end());
    dec.selected.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        for (int e : all.selected[t]) {
            dec.selected[t].emplace_back(e, W.at(t, static_cast<std::size_t>(e)));
        }
    }
    for (const auto& c : complexity) dec.complexity.push_back(c.item());
    return out;
}

}  // namespace c2d
