// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter registry and the layers shared by encoder, MoE and decoder.

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "c2d/lora.hpp"
#include "c2d/rng.hpp"
#include "c2d/tensor.hpp"

namespace c2d {

/// What a parameter is for; training modes decide trainability per group.
enum class ParamGroup { base, adapter, gate, complexity, output, expert };
std::string_view to_string(ParamGroup g);

struct Param {
    std::string name;
    Tensor tensor;
    ParamGroup group = ParamGroup::base;
};

class ParamRegistry {
public:
    Tensor add(std::string name, Tensor t, ParamGroup group);
    [[nodiscard]] const std::vector<Param>& all() const { return params_; }
    [[nodiscard]] const Param* find(const std::string& name) const;
    [[nodiscard]] std::size_t total_scalars() const;
    [[nodiscard]] std::size_t trainable_scalars() const;
    [[nodiscard]] std::vector<Tensor> trainable() const;

private:
    std::vector<Param> params_;
    std::map<std::string, std::size_t> index_;
};

/// Xavier-uniform weight (in x out) registered under `name`.
Tensor init_weight(ParamRegistry& reg, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   ParamGroup group);
Tensor init_const(ParamRegistry& reg, const std::string& name, std::size_t rows, std::size_t cols, double v,
                  ParamGroup group);

struct Linear {
    std::string name;
    Tensor W;  // in x out
    Tensor b;  // 1 x out, may be undefined
    ProjRole role = ProjRole::other;
    std::shared_ptr<LoRAAdapter> lora;

    [[nodiscard]] Tensor forward(const Tensor& x) const;
    [[nodiscard]] std::size_t in() const { return W.rows(); }
    [[nodiscard]] std::size_t out() const { return W.cols(); }
};
Linear make_linear(ParamRegistry& reg, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   ProjRole role = ProjRole::other, ParamGroup group = ParamGroup::base, bool bias = true);

struct LayerNorm {
    Tensor gain;
    Tensor bias;
    [[nodiscard]] Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }
};
LayerNorm make_layer_norm(ParamRegistry& reg, const std::string& name, std::size_t d, ParamGroup group = ParamGroup::base);

struct FeedForward {
    Linear up;
    Linear down;
    [[nodiscard]] Tensor forward(const Tensor& x, double drop, bool training, Rng* rng) const;
};
FeedForward make_ffn(ParamRegistry& reg, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng,
                     ParamGroup group = ParamGroup::base);

/// Standard multi-head scaled dot-product attention with output projection.
struct MultiHeadAttention {
    Linear q, k, v, o;
    int heads = 1;
    [[nodiscard]] Tensor forward(const Tensor& xq, const Tensor& xkv, bool causal, double drop, bool training,
                                 Rng* rng) const;
};
MultiHeadAttention make_mha(ParamRegistry& reg, const std::string& name, std::size_t d, int heads, Rng& rng);

/// Fixed sinusoidal table (n x d), sin on even columns, cos on odd.
Tensor sinusoidal_pe(std::size_t n, std::size_t d);

/// Attaches adapters to every linear whose role the preset covers; adapters
/// are registered in the `adapter` group. Returns the number attached.
std::size_t attach_adapters(ParamRegistry& reg, std::vector<Linear*> linears, TargetPreset preset, int rank,
                            double alpha, Rng& rng);

}  // namespace c2d
