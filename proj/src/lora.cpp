// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/lora.hpp"

#include <algorithm>

#include "c2d/errors.hpp"

namespace c2d {

LoRAAdapter make_adapter(std::string target, std::size_t in, std::size_t out, int rank, double alpha, Rng& rng) {
    require(rank > 0 && static_cast<std::size_t>(rank) < std::min(in, out),
            "lora: rank must satisfy 0 < r < min(in, out) for " + target);
    require(alpha > 0.0, "lora: alpha must be positive");
    std::vector<double> a(in * static_cast<std::size_t>(rank));
    for (double& v : a) {
        v = rng.uniform(-0.01, 0.01);
    }
    LoRAAdapter ad;
    ad.target = target;
    ad.A = Tensor::from(in, static_cast<std::size_t>(rank), std::move(a), true);
    ad.A.named(target + ".lora_A");
    ad.B = Tensor::zeros(static_cast<std::size_t>(rank), out, true);
    ad.B.named(target + ".lora_B");
    ad.rank = rank;
    ad.alpha = alpha;
    return ad;
}

Tensor forward_adapted(const Tensor& x, const Tensor& W0, const LoRAAdapter& adapter) {
    require(x.cols() == W0.rows(), "lora: input width does not match W0");
    require(adapter.A.rows() == W0.rows() && adapter.B.cols() == W0.cols(), "lora: adapter shape does not match W0");
    const Tensor base = matmul(x, W0);
    if (adapter.merged) {
        return base;
    }
    return add(base, scale(matmul(matmul(x, adapter.A), adapter.B), adapter.scaling()));
}

Tensor frobenius_penalty(const std::vector<const LoRAAdapter*>& adapters, double lambda) {
    require(lambda >= 0.0, "frobenius_penalty: lambda must be non-negative");
    if (lambda == 0.0 || adapters.empty()) {
        return Tensor::scalar(0.0);
    }
    std::vector<Tensor> parts;
    for (const auto* a : adapters) {
        parts.push_back(sum(square(a->A)));
        parts.push_back(sum(square(a->B)));
    }
    Tensor total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) {
        total = add(total, parts[i]);
    }
    return scale(total, lambda);
}

std::vector<double> merge(const Tensor& W0, const LoRAAdapter& adapter) {
    require(adapter.A.rows() == W0.rows() && adapter.B.cols() == W0.cols(), "lora: adapter shape does not match W0");
    NoGradGuard ng;
    const Tensor ab = matmul(adapter.A, adapter.B);
    std::vector<double> out(W0.values().begin(), W0.values().end());
    const double s = adapter.scaling();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += s * ab.values()[i];
    }
    return out;
}

void merge_into(Tensor& W0, LoRAAdapter& adapter) {
    require(!adapter.merged, "lora: adapter " + adapter.target + " is already merged");
    const auto merged = merge(W0, adapter);
    std::copy(merged.begin(), merged.end(), W0.mutable_values().begin());
    adapter.merged = true;
}

std::string_view to_string(TargetPreset p) {
    switch (p) {
        case TargetPreset::attn: return "attn";
        case TargetPreset::out: return "out";
        case TargetPreset::attn_out: return "attn+out";
        case TargetPreset::attn_mlp: return "attn+mlp";
    }
    return "?";
}

TargetPreset parse_target_preset(std::string_view s) {
    for (auto p : {TargetPreset::attn, TargetPreset::out, TargetPreset::attn_out, TargetPreset::attn_mlp}) {
        if (to_string(p) == s) {
            return p;
        }
    }
    throw ContractViolation("unknown LoRA target preset '" + std::string(s) + "' (attn, out, attn+out, attn+mlp)");
}

bool preset_covers(TargetPreset p, ProjRole role) {
    const bool qkv = role == ProjRole::q || role == ProjRole::k || role == ProjRole::v;
    const bool o = role == ProjRole::o;
    const bool mlp = role == ProjRole::mlp_up || role == ProjRole::mlp_down;
    switch (p) {
        case TargetPreset::attn: return qkv;
        case TargetPreset::out: return o;
        case TargetPreset::attn_out: return qkv || o;
        case TargetPreset::attn_mlp: return qkv || o || mlp;
    }
    return false;
}

}  // namespace c2d
