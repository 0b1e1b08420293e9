// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/tensor.hpp"

#include <atomic>
#include <cmath>
#include <string>
#include <unordered_set>

#include "c2d/errors.hpp"

namespace c2d {

namespace {

thread_local bool tl_grad_enabled = true;
thread_local ComputeStats tl_stats;
std::atomic<std::uint64_t> g_next_id{1};

}  // namespace

namespace detail {

Node::Node(std::size_t r, std::size_t c, std::vector<double> v, bool activation)
    : rows(r), cols(c), value(std::move(v)), is_activation(activation), id(g_next_id.fetch_add(1)) {
    if (is_activation) {
        tl_stats.live_scalars += static_cast<std::int64_t>(value.size());
        if (tl_stats.live_scalars > tl_stats.peak_scalars) {
            tl_stats.peak_scalars = tl_stats.live_scalars;
        }
    }
}

Node::~Node() {
    if (is_activation) {
        tl_stats.live_scalars -= static_cast<std::int64_t>(value.size());
    }
}

}  // namespace detail

ComputeStats& compute_stats() { return tl_stats; }
void reset_peak() { tl_stats.peak_scalars = tl_stats.live_scalars; }

bool grad_enabled() { return tl_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    require(rows > 0 && cols > 0, "tensor: shape entries must be positive");
    require(values.size() == rows * cols, "tensor: value count " + std::to_string(values.size()) +
                                              " does not match shape " + std::to_string(rows) + "x" +
                                              std::to_string(cols));
    auto node = std::make_shared<detail::Node>(rows, cols, std::move(values), false);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from(1, 1, {v}, requires_grad); }

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return from(1, n, std::move(values), requires_grad);
}

std::span<double> Tensor::mutable_values() {
    require(!node_->is_activation, "tensor: only leaf tensors can be modified in place");
    return node_->value;
}

double Tensor::item() const {
    require(size() == 1, "tensor: item() needs a single-element tensor");
    return node_->value[0];
}

void Tensor::set_requires_grad(bool on) {
    require(!node_->is_activation, "tensor: requires_grad is set on leaves only");
    node_->requires_grad = on;
}

Tensor& Tensor::named(std::string name) {
    node_->name = std::move(name);
    return *this;
}

Tensor Tensor::detach() const { return from(rows(), cols(), node_->value, false); }

std::vector<double> Gradients::of(const Tensor& t) const {
    if (const auto* g = find(t)) {
        return *g;
    }
    return std::vector<double>(t.size(), 0.0);
}

const std::vector<double>* Gradients::find(const Tensor& t) const {
    auto it = map_.find(t.id());
    return it == map_.end() ? nullptr : &it->second;
}

std::vector<double>& Gradients::slot(const Tensor& t) {
    auto& g = map_[t.id()];
    if (g.empty()) {
        g.assign(t.size(), 0.0);
    }
    return g;
}

Gradients backward(const Tensor& root) {
    require(root.defined() && root.size() == 1, "backward: root must be a scalar tensor");
    Gradients out;
    if (!root.requires_grad()) {
        return out;
    }

    // iterative post-order DFS gives a topological order
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    auto release = [&order] {
        for (detail::Node* node : order) {
            node->grad.clear();
            node->grad.shrink_to_fit();
            if (node->is_activation) {
                node->backward = nullptr;
                node->parents.clear();
            }
        }
    };

    root.node()->grad_buffer()[0] = 1.0;
    try {
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* node = *it;
            if (node->grad.empty()) {
                continue;
            }
            if (node->backward) {
                node->backward(*node);
                for (const auto& p : node->parents) {
                    for (double g : p->grad) {
                        if (!std::isfinite(g)) {
                            throw NumericalError(std::string("backward: non-finite gradient produced by node '") +
                                                 node->op + (node->name.empty() ? "" : ":" + node->name) + "'");
                        }
                    }
                }
            } else if (!node->is_activation) {
                out.put(node->id, std::move(node->grad));
            }
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    } catch (...) {
        release();
        throw;
    }
    release();
    return out;
}

}  // namespace c2d
