// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/decoder.hpp"

#include <cmath>

#include "c2d/errors.hpp"

namespace c2d {

std::string_view to_string(CrossAttnMode m) { return m == CrossAttnMode::concat ? "concat" : "concat_dot"; }

CrossAttnMode parse_cross_attn_mode(std::string_view s) {
    if (s == "concat") return CrossAttnMode::concat;
    if (s == "concat_dot") return CrossAttnMode::concat_dot;
    throw ContractViolation("unknown cross-attention mode '" + std::string(s) + "' (concat, concat_dot)");
}

CrossAttention make_cross_attention(ParamRegistry& reg, const std::string& name, std::size_t d, int heads,
                                    CrossAttnMode mode, Rng& rng) {
    require(heads > 0 && d % static_cast<std::size_t>(heads) == 0, "cross-attention: width must divide into heads");
    CrossAttention ca;
    ca.mode = mode;
    ca.heads = heads;
    ca.w_s = init_weight(reg, name + ".score_s", d, 1, rng, ParamGroup::base);
    ca.w_f = init_weight(reg, name + ".score_f", d, 1, rng, ParamGroup::base);
    ca.bias = init_const(reg, name + ".score_b", 1, 1, 0.0, ParamGroup::base);
    if (mode == CrossAttnMode::concat_dot) {
        ca.q = make_linear(reg, name + ".q", d, d, rng, ProjRole::q);
        ca.k = make_linear(reg, name + ".k", d, d, rng, ProjRole::k);
        ca.v = make_linear(reg, name + ".v", d, d, rng, ProjRole::v);
    }
    ca.o = make_linear(reg, name + ".o", d, d, rng, ProjRole::o);
    return ca;
}

CrossMemory prepare_cross_memory(const CrossAttention& ca, const Tensor& visual) {
    CrossMemory m;
    m.visual = visual;
    const Tensor pe = sinusoidal_pe(visual.rows(), visual.cols());
    m.f_score = transpose(matmul(add(visual, pe), ca.w_f));
    if (ca.mode == CrossAttnMode::concat_dot) {
        m.keys = ca.k.forward(visual);
        m.values = ca.v.forward(visual);
    }
    return m;
}

CrossAttnResult cross_attention(const Tensor& states, const CrossMemory& mem, const CrossAttention& ca) {
    require(states.cols() == mem.visual.cols(), "cross_attention: width mismatch");
    const Tensor pe = sinusoidal_pe(states.rows(), states.cols());
    const Tensor s_score = add_row(matmul(add(states, pe), ca.w_s), ca.bias);
    const Tensor scores = outer_add(s_score, mem.f_score);
    CrossAttnResult r;
    if (ca.mode == CrossAttnMode::concat) {
        const Tensor a = softmax_rows(scores);
        r.context = matmul(a, mem.visual);
        r.weights.push_back(a);
        return r;
    }
    const Tensor Q = ca.q.forward(states);
    const std::size_t d = states.cols();
    const auto dh = d / static_cast<std::size_t>(ca.heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> ctx;
    for (int h = 0; h < ca.heads; ++h) {
        const std::size_t lo = static_cast<std::size_t>(h) * dh;
        const bool whole = ca.heads == 1;
        const Tensor qh = whole ? Q : slice_cols(Q, lo, lo + dh);
        const Tensor kh = whole ? mem.keys : slice_cols(mem.keys, lo, lo + dh);
        const Tensor vh = whole ? mem.values : slice_cols(mem.values, lo, lo + dh);
        const Tensor a = softmax_rows(add(scores, scale(matmul(qh, kh, true), inv)));
        ctx.push_back(matmul(a, vh));
        r.weights.push_back(a);
    }
    r.context = ca.heads == 1 ? ctx[0] : concat_cols(ctx);
    return r;
}

Decoder::Decoder(const DecoderConfig& cfg, ParamRegistry& reg, Rng& rng) : cfg_(cfg) {
    require(cfg.max_len >= 1 && cfg.vocab > tok::end, "decoder: bad vocabulary or max_len");
    const auto d = static_cast<std::size_t>(cfg.d);
    const auto V = static_cast<std::size_t>(cfg.vocab);
    embedding = init_weight(reg, "dec.embed", V, d, rng, ParamGroup::base);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "dec.block" + std::to_string(l);
        blocks_.push_back(DecoderBlock{make_layer_norm(reg, p + ".ln1", d), make_layer_norm(reg, p + ".ln2", d),
                                       make_layer_norm(reg, p + ".ln3", d),
                                       make_mha(reg, p + ".self", d, cfg.heads, rng),
                                       make_cross_attention(reg, p + ".cross", d, cfg.heads, cfg.cross_mode, rng),
                                       make_ffn(reg, p + ".ffn", d, static_cast<std::size_t>(cfg.ffn), rng)});
    }
    final_ = make_layer_norm(reg, "dec.final_ln", d);
    output = make_linear(reg, "dec.out", d, V, rng, ProjRole::other, ParamGroup::output);
    pe_ = sinusoidal_pe(static_cast<std::size_t>(cfg.max_len) + 1, d);
}

Decoder::Memory Decoder::prepare(const Tensor& visual) const {
    require(visual.cols() == static_cast<std::size_t>(cfg_.d), "decoder: visual width does not match the model");
    Memory m;
    for (const auto& b : blocks_) {
        m.blocks.push_back(prepare_cross_memory(b.cross, visual));
    }
    return m;
}

Tensor Decoder::forward_inputs(const Memory& mem, const std::vector<int>& inputs, bool training, Rng* rng,
                               std::vector<std::vector<Tensor>>* attention) const {
    require(!inputs.empty(), "decoder: empty input sequence");
    require(inputs.size() <= pe_.rows(), "decoder: sequence longer than max_len");
    std::vector<std::size_t> ids;
    for (int t : inputs) {
        require(t >= 0 && t < cfg_.vocab, "decoder: unknown token id " + std::to_string(t));
        ids.push_back(static_cast<std::size_t>(t));
    }
    const std::size_t n = ids.size();
    Tensor x = add(gather_rows(embedding, ids), slice_rows(pe_, 0, n));
    if (attention != nullptr) attention->clear();
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const Tensor h = b.ln1.forward(x);
        x = add(x, b.self_attn.forward(h, h, true, cfg_.dropout, training, rng));
        auto ca = cross_attention(b.ln2.forward(x), mem.blocks[l], b.cross);
        Tensor y = b.cross.o.forward(ca.context);
        x = add(x, rng != nullptr ? dropout(y, cfg_.dropout, training, *rng) : y);
        x = add(x, b.ffn.forward(b.ln3.forward(x), cfg_.dropout, training, rng));
        if (attention != nullptr) attention->push_back(std::move(ca.weights));
    }
    return output.forward(final_.forward(x));
}

Tensor Decoder::forward_teacher_forced(const Memory& mem, const std::vector<int>& target, bool training, Rng* rng,
                                       std::vector<std::vector<Tensor>>* attention) const {
    require(!target.empty() && target.size() <= static_cast<std::size_t>(cfg_.max_len),
            "decoder: target length must lie in [1, max_len]");
    std::vector<int> inputs{tok::bos};
    inputs.insert(inputs.end(), target.begin(), target.end() - 1);
    return forward_inputs(mem, inputs, training, rng, attention);
}

DSLProgram Decoder::generate(const Memory& mem, Sampling mode, int max_len, double temperature, Rng* rng) const {
    require(max_len >= 1, "generate: max_len must be at least 1");
    require(mode == Sampling::greedy || (rng != nullptr && temperature > 0.0),
            "generate: sampling needs an rng and a positive temperature");
    NoGradGuard ng;
    const int limit = std::min(max_len, cfg_.max_len);
    std::vector<int> inputs{tok::bos};
    DSLProgram out;
    for (int step = 0; step < limit; ++step) {
        const Tensor logits = forward_inputs(mem, inputs, false, nullptr);
        const std::size_t last = logits.rows() - 1;
        // PAD and BOS are never targets, so they are not offered
        int pick = tok::figure;
        if (mode == Sampling::greedy) {
            double best = -INFINITY;
            for (int v = tok::figure; v < cfg_.vocab; ++v) {
                const double z = logits.at(last, static_cast<std::size_t>(v));
                if (z > best) {
                    best = z;
                    pick = v;
                }
            }
        } else {
            double mx = -INFINITY;
            for (int v = tok::figure; v < cfg_.vocab; ++v) mx = std::max(mx, logits.at(last, static_cast<std::size_t>(v)));
            std::vector<double> w;
            double total = 0.0;
            for (int v = tok::figure; v < cfg_.vocab; ++v) {
                w.push_back(std::exp((logits.at(last, static_cast<std::size_t>(v)) - mx) / temperature));
                total += w.back();
            }
            const double u = rng->uniform() * total;
            double acc = 0.0;
            pick = cfg_.vocab - 1;
            for (std::size_t i = 0; i < w.size(); ++i) {
                acc += w[i];
                if (u < acc) {
                    pick = tok::figure + static_cast<int>(i);
                    break;
                }
            }
        }
        out.tokens.push_back(pick);
        if (pick == tok::end) break;
        inputs.push_back(pick);
    }
    return out;
}

std::vector<Linear*> Decoder::linears() {
    std::vector<Linear*> out;
    for (auto& b : blocks_) {
        for (Linear* l : {&b.self_attn.q, &b.self_attn.k, &b.self_attn.v, &b.self_attn.o}) out.push_back(l);
        if (b.cross.mode == CrossAttnMode::concat_dot) {
            for (Linear* l : {&b.cross.q, &b.cross.k, &b.cross.v}) out.push_back(l);
        }
        out.push_back(&b.cross.o);
        out.push_back(&b.ffn.up);
        out.push_back(&b.ffn.down);
    }
    return out;
}

Tensor syntax_loss(const Tensor& logits, const std::vector<int>& target) {
    require(logits.rows() == target.size(), "syntax_loss: logits rows must match the target length");
    return cross_entropy(logits, target, tok::pad);
}

}  // namespace c2d
