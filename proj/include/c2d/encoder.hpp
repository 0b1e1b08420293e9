// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Patch-transformer visual encoder and the element-count head.

#pragma once

#include <optional>
#include <vector>

#include "c2d/chartlab.hpp"
#include "c2d/nn.hpp"

namespace c2d {

struct EncoderConfig {
    int image_side = 64;
    int patch = 8;
    int d = 64;
    int heads = 4;
    int layers = 2;
    int ffn = 256;
    double dropout = 0.1;

    [[nodiscard]] int tokens() const { return (image_side / patch) * (image_side / patch); }
};

struct VisualTokens {
    Tensor tokens;  // M x d
    ChartType chart_type = ChartType::bar;
    std::optional<int> true_element_count;
};

/// Patch rows in raster order, each (patch*patch*3) values of (255 - v) / 255,
/// so background is 0 and saturated ink approaches 1.
Tensor patchify(const Raster& r, int patch);

struct EncoderBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;
};

class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, ParamRegistry& reg, Rng& rng);

    /// Dropout is active only when `training` and `rng` is given.
    [[nodiscard]] VisualTokens encode(const Raster& r, ChartType type, std::optional<int> count, bool training,
                                      Rng* rng) const;
    [[nodiscard]] std::vector<Linear*> linears();
    [[nodiscard]] const EncoderConfig& config() const { return cfg_; }

    Linear patch_embed;

private:
    EncoderConfig cfg_;
    std::vector<EncoderBlock> blocks_;
    LayerNorm final_;
    Tensor pe_;
};

/// softplus(mean-pooled tokens . w + b); non-negative.
struct CountHead {
    Linear head;  // d x 1
    [[nodiscard]] Tensor predict(const VisualTokens& v) const;
};
/// Zero weights and zero bias, so an untrained head predicts ln 2.
CountHead make_count_head(ParamRegistry& reg, std::size_t d);

}  // namespace c2d
