// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors (rank 1 or 2) with a dynamically recorded tape for
// reverse-mode differentiation. A Tensor is a cheap handle; ops allocate a new
// node, and when gradient recording is on they remember their parents and a
// backward closure. backward() walks the tape once and then releases it.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace c2d {

class Rng;

namespace detail {

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_activation = false;
    std::uint64_t id = 0;
    const char* op = "leaf";
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Node(std::size_t r, std::size_t c, std::vector<double> v, bool activation);
    ~Node();
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) {
            grad.assign(value.size(), 0.0);
        }
        return grad;
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor row(std::vector<double> values, bool requires_grad = false);

    [[nodiscard]] std::size_t rows() const { return node_->rows; }
    [[nodiscard]] std::size_t cols() const { return node_->cols; }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    [[nodiscard]] std::vector<std::size_t> shape() const { return {rows(), cols()}; }

    [[nodiscard]] std::span<const double> values() const { return node_->value; }
    /// Only leaves may be written in place (parameter updates, test fixtures).
    [[nodiscard]] std::span<double> mutable_values();
    [[nodiscard]] double item() const;
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);
    [[nodiscard]] bool is_leaf() const { return !node_->is_activation; }

    [[nodiscard]] std::uint64_t id() const { return node_->id; }
    [[nodiscard]] const std::string& name() const { return node_->name; }
    Tensor& named(std::string name);
    [[nodiscard]] const char* op() const { return node_->op; }

    /// Fresh leaf holding a copy of the values, detached from any tape.
    [[nodiscard]] Tensor detach() const;

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    explicit operator bool() const { return defined(); }

    [[nodiscard]] detail::Node* node() const { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<detail::Node>& ptr() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Gradients of one backward pass, keyed by leaf id.
class Gradients {
public:
    [[nodiscard]] bool contains(const Tensor& t) const { return map_.count(t.id()) != 0; }
    /// Gradient of `t`, or zeros of the same size when `t` was unreachable.
    [[nodiscard]] std::vector<double> of(const Tensor& t) const;
    [[nodiscard]] const std::vector<double>* find(const Tensor& t) const;
    std::vector<double>& slot(const Tensor& t);
    void put(std::uint64_t id, std::vector<double> g) { map_[id] = std::move(g); }
    [[nodiscard]] std::size_t size() const { return map_.size(); }
    [[nodiscard]] const std::unordered_map<std::uint64_t, std::vector<double>>& raw() const { return map_; }

private:
    std::unordered_map<std::uint64_t, std::vector<double>> map_;
};

/// Reverse-mode pass from a 1x1 root. Every reachable leaf with
/// requires_grad gets an entry; the recorded graph is released afterwards.
/// Throws ContractViolation for a non-scalar root and NumericalError when a
/// non-finite gradient appears (the message names the node's op).
Gradients backward(const Tensor& root);

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

[[nodiscard]] bool grad_enabled();

/// Per-thread activation accounting: live scalars held by op outputs, their
/// high-water mark, and multiply-accumulates issued by matmul.
struct ComputeStats {
    std::int64_t live_scalars = 0;
    std::int64_t peak_scalars = 0;
    std::uint64_t macs = 0;
};
ComputeStats& compute_stats();
void reset_peak();

// ---------------------------------------------------------------------------
// Ops. Shapes are (rows, cols); "row vector" means 1 x cols.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (n x m) + b (1 x m), broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& b);
/// col (n x 1) and row (1 x m) -> out[i][j] = col[i] + row[j].
Tensor outer_add(const Tensor& col, const Tensor& row);
/// a (n x m) scaled row-wise by w (n x 1).
Tensor scale_rows(const Tensor& a, const Tensor& w);
/// a times a 1x1 tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor scale(const Tensor& a, double k);
Tensor add_const(const Tensor& a, double k);
/// Elementwise product with a constant (non-differentiated) mask.
Tensor mul_const(const Tensor& a, std::vector<double> mask);

Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means: (n x m) -> (1 x m).
Tensor mean_rows(const Tensor& a);
/// Row sums: (n x m) -> (n x 1).
Tensor row_sums(const Tensor& a);

/// Row-wise softmax, max-shifted. With `causal`, entry (i, j) for j > i is
/// excluded (probability exactly 0).
Tensor softmax_rows(const Tensor& a, bool causal = false);
Tensor log_softmax_rows(const Tensor& a);
/// Divides each row by its sum; all-zero rows stay zero.
Tensor row_normalize(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index);
/// out (rows_out x m) with out[index[i]] += a[i].
Tensor scatter_rows(const Tensor& a, std::vector<std::size_t> index, std::size_t rows_out);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);

/// Inverted dropout: kept entries are scaled by 1/(1-p). Identity when
/// !training or p == 0.
Tensor dropout(const Tensor& a, double p, bool training, Rng& rng);

/// Mean token cross-entropy of logits (n x V) against targets; positions
/// whose target equals `ignore` are skipped.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore = -1);

}  // namespace c2d
