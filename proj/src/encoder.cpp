// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/encoder.hpp"

#include "c2d/errors.hpp"

namespace c2d {

Tensor patchify(const Raster& r, int patch) {
    require(patch > 0 && r.width % patch == 0 && r.height % patch == 0,
            "encode: raster " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                " is not divisible by patch " + std::to_string(patch));
    const int gx = r.width / patch;
    const int gy = r.height / patch;
    const auto per = static_cast<std::size_t>(patch * patch * 3);
    std::vector<double> v(static_cast<std::size_t>(gx * gy) * per);
    std::size_t o = 0;
    for (int py = 0; py < gy; ++py) {
        for (int px = 0; px < gx; ++px) {
            for (int y = 0; y < patch; ++y) {
                for (int x = 0; x < patch; ++x) {
                    const auto i = static_cast<std::size_t>((py * patch + y) * r.width + px * patch + x) * 3;
                    for (int c = 0; c < 3; ++c) {
                        v[o++] = (255.0 - r.rgb[i + static_cast<std::size_t>(c)]) / 255.0;
                    }
                }
            }
        }
    }
    return Tensor::from(static_cast<std::size_t>(gx * gy), per, std::move(v), false);
}

Encoder::Encoder(const EncoderConfig& cfg, ParamRegistry& reg, Rng& rng) : cfg_(cfg) {
    require(cfg.image_side % cfg.patch == 0, "encoder: image side must be divisible by the patch side");
    const auto d = static_cast<std::size_t>(cfg.d);
    patch_embed = make_linear(reg, "enc.patch", static_cast<std::size_t>(cfg.patch * cfg.patch * 3), d, rng);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "enc.block" + std::to_string(l);
        blocks_.push_back(EncoderBlock{make_layer_norm(reg, p + ".ln1", d), make_layer_norm(reg, p + ".ln2", d),
                                       make_mha(reg, p + ".attn", d, cfg.heads, rng),
                                       make_ffn(reg, p + ".ffn", d, static_cast<std::size_t>(cfg.ffn), rng)});
    }
    final_ = make_layer_norm(reg, "enc.final_ln", d);
    pe_ = sinusoidal_pe(static_cast<std::size_t>(cfg.tokens()), d);
}

VisualTokens Encoder::encode(const Raster& r, ChartType type, std::optional<int> count, bool training,
                             Rng* rng) const {
    require(r.width == cfg_.image_side && r.height == cfg_.image_side,
            "encode: raster size does not match the configured image side");
    Tensor x = add(patch_embed.forward(patchify(r, cfg_.patch)), pe_);
    for (const auto& b : blocks_) {
        const Tensor h = b.ln1.forward(x);
        x = add(x, b.attn.forward(h, h, false, cfg_.dropout, training, rng));
        x = add(x, b.ffn.forward(b.ln2.forward(x), cfg_.dropout, training, rng));
    }
    return VisualTokens{final_.forward(x), type, count};
}

std::vector<Linear*> Encoder::linears() {
    std::vector<Linear*> out;
    for (auto& b : blocks_) {
        for (Linear* l : {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.o, &b.ffn.up, &b.ffn.down}) {
            out.push_back(l);
        }
    }
    return out;
}

Tensor CountHead::predict(const VisualTokens& v) const { return softplus(head.forward(mean_rows(v.tokens))); }

CountHead make_count_head(ParamRegistry& reg, std::size_t d) {
    CountHead h;
    h.head.name = "count_head";
    h.head.W = init_const(reg, "count_head.W", d, 1, 0.0, ParamGroup::complexity);
    h.head.b = init_const(reg, "count_head.b", 1, 1, 0.0, ParamGroup::complexity);
    return h;
}

}  // namespace c2d
