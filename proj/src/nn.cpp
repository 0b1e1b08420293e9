// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/nn.hpp"

#include <cmath>

#include "c2d/errors.hpp"

namespace c2d {

std::string_view to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::base: return "base";
        case ParamGroup::adapter: return "adapter";
        case ParamGroup::gate: return "gate";
        case ParamGroup::complexity: return "complexity";
        case ParamGroup::output: return "output";
        case ParamGroup::expert: return "expert";
    }
    return "?";
}

Tensor ParamRegistry::add(std::string name, Tensor t, ParamGroup group) {
    require(index_.count(name) == 0, "duplicate parameter name " + name);
    t.named(name);
    index_[name] = params_.size();
    params_.push_back(Param{std::move(name), t, group});
    return t;
}

const Param* ParamRegistry::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParamRegistry::total_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.tensor.size();
    }
    return n;
}

std::size_t ParamRegistry::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.tensor.requires_grad() ? p.tensor.size() : 0;
    }
    return n;
}

std::vector<Tensor> ParamRegistry::trainable() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) {
        if (p.tensor.requires_grad()) {
            out.push_back(p.tensor);
        }
    }
    return out;
}

Tensor init_weight(ParamRegistry& reg, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   ParamGroup group) {
    const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> v(in * out);
    for (double& x : v) {
        x = rng.uniform(-lim, lim);
    }
    return reg.add(name, Tensor::from(in, out, std::move(v), true), group);
}

Tensor init_const(ParamRegistry& reg, const std::string& name, std::size_t rows, std::size_t cols, double v,
                  ParamGroup group) {
    return reg.add(name, Tensor::from(rows, cols, std::vector<double>(rows * cols, v), true), group);
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = lora ? forward_adapted(x, W, *lora) : matmul(x, W);
    return b ? add_row(y, b) : y;
}

Linear make_linear(ParamRegistry& reg, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   ProjRole role, ParamGroup group, bool bias) {
    Linear l;
    l.name = name;
    l.role = role;
    l.W = init_weight(reg, name + ".W", in, out, rng, group);
    if (bias) {
        l.b = init_const(reg, name + ".b", 1, out, 0.0, group);
    }
    return l;
}

LayerNorm make_layer_norm(ParamRegistry& reg, const std::string& name, std::size_t d, ParamGroup group) {
    return LayerNorm{init_const(reg, name + ".gain", 1, d, 1.0, group), init_const(reg, name + ".bias", 1, d, 0.0, group)};
}

Tensor FeedForward::forward(const Tensor& x, double drop, bool training, Rng* rng) const {
    Tensor h = gelu(up.forward(x));
    Tensor y = down.forward(h);
    return rng != nullptr ? dropout(y, drop, training, *rng) : y;
}

FeedForward make_ffn(ParamRegistry& reg, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng,
                     ParamGroup group) {
    return FeedForward{make_linear(reg, name + ".up", d, hidden, rng, ProjRole::mlp_up, group),
                       make_linear(reg, name + ".down", hidden, d, rng, ProjRole::mlp_down, group)};
}

Tensor MultiHeadAttention::forward(const Tensor& xq, const Tensor& xkv, bool causal, double drop, bool training,
                                   Rng* rng) const {
    const Tensor Q = q.forward(xq);
    const Tensor K = k.forward(xkv);
    const Tensor V = v.forward(xkv);
    const std::size_t d = Q.cols();
    const auto dh = d / static_cast<std::size_t>(heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    for (int h = 0; h < heads; ++h) {
        const std::size_t lo = static_cast<std::size_t>(h) * dh;
        const Tensor qh = heads == 1 ? Q : slice_cols(Q, lo, lo + dh);
        const Tensor kh = heads == 1 ? K : slice_cols(K, lo, lo + dh);
        const Tensor vh = heads == 1 ? V : slice_cols(V, lo, lo + dh);
        const Tensor att = softmax_rows(scale(matmul(qh, kh, true), inv), causal);
        outs.push_back(matmul(att, vh));
    }
    Tensor y = o.forward(heads == 1 ? outs[0] : concat_cols(outs));
    return rng != nullptr ? dropout(y, drop, training, *rng) : y;
}

MultiHeadAttention make_mha(ParamRegistry& reg, const std::string& name, std::size_t d, int heads, Rng& rng) {
    require(heads > 0 && d % static_cast<std::size_t>(heads) == 0, "attention: width must divide into heads");
    MultiHeadAttention m;
    m.q = make_linear(reg, name + ".q", d, d, rng, ProjRole::q);
    m.k = make_linear(reg, name + ".k", d, d, rng, ProjRole::k);
    m.v = make_linear(reg, name + ".v", d, d, rng, ProjRole::v);
    m.o = make_linear(reg, name + ".o", d, d, rng, ProjRole::o);
    m.heads = heads;
    return m;
}

Tensor sinusoidal_pe(std::size_t n, std::size_t d) {
    std::vector<double> v(n * d);
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
            v[pos * d + i] = i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
        }
    }
    return Tensor::from(n, d, std::move(v), false);
}

std::size_t attach_adapters(ParamRegistry& reg, std::vector<Linear*> linears, TargetPreset preset, int rank,
                            double alpha, Rng& rng) {
    std::size_t n = 0;
    for (Linear* l : linears) {
        if (!preset_covers(preset, l->role)) {
            continue;
        }
        auto ad = std::make_shared<LoRAAdapter>(make_adapter(l->name, l->in(), l->out(), rank, alpha, rng));
        reg.add(l->name + ".lora_A", ad->A, ParamGroup::adapter);
        reg.add(l->name + ".lora_B", ad->B, ParamGroup::adapter);
        l->lora = std::move(ad);
        ++n;
    }
    return n;
}

}  // namespace c2d
