// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters on frozen weight matrices.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "c2d/rng.hpp"
#include "c2d/tensor.hpp"

namespace c2d {

/// Update dW = (alpha / rank) * A * B added to a frozen W0 (in x out).
struct LoRAAdapter {
    std::string target;
    Tensor A;  // in x rank, U(-0.01, 0.01) at creation
    Tensor B;  // rank x out, zero at creation
    int rank = 0;
    double alpha = 0.0;
    bool merged = false;

    [[nodiscard]] double scaling() const { return alpha / rank; }
    [[nodiscard]] std::size_t parameter_count() const { return A.size() + B.size(); }
};

/// rank must be strictly below min(in, out).
LoRAAdapter make_adapter(std::string target, std::size_t in, std::size_t out, int rank, double alpha, Rng& rng);

/// x W0 + (alpha/r) (x A) B. W0 is used as given; freeze it by clearing its
/// requires_grad flag.
Tensor forward_adapted(const Tensor& x, const Tensor& W0, const LoRAAdapter& adapter);

/// lambda * sum(|A|_F^2 + |B|_F^2). Returns a constant zero when lambda is 0
/// or the list is empty.
Tensor frobenius_penalty(const std::vector<const LoRAAdapter*>& adapters, double lambda);

/// W0 + (alpha/r) A B as plain values.
std::vector<double> merge(const Tensor& W0, const LoRAAdapter& adapter);

/// Folds the adapter into W0 in place and flags it merged. A second call
/// on the same adapter throws.
void merge_into(Tensor& W0, LoRAAdapter& adapter);

enum class TargetPreset { attn, out, attn_out, attn_mlp };
std::string_view to_string(TargetPreset p);
TargetPreset parse_target_preset(std::string_view s);

/// Projection roles carried by the model's linear layers.
enum class ProjRole { q, k, v, o, mlp_up, mlp_down, other };
bool preset_covers(TargetPreset p, ProjRole role);

}  // namespace c2d
