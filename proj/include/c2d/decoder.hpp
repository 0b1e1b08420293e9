// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive DSL decoder with cross-modal attention over visual tokens.

#pragma once

#include <vector>

#include "c2d/chartlab.hpp"
#include "c2d/nn.hpp"

namespace c2d {

/// `concat` scores each (token, visual) pair with one linear map over
/// [PE(s_n) ; PE(f_m)] and returns A F. Because the token half of that score
/// is the same for every m it cancels in the softmax, so the weights do not
/// depend on the query. `concat_dot` adds per-head scaled dot products of
/// projected queries and keys to the same score and reads projected values.
enum class CrossAttnMode { concat, concat_dot };
std::string_view to_string(CrossAttnMode m);
CrossAttnMode parse_cross_attn_mode(std::string_view s);

struct CrossAttention {
    CrossAttnMode mode = CrossAttnMode::concat_dot;
    int heads = 1;
    Tensor w_s;  // d x 1, token half of the concat score
    Tensor w_f;  // d x 1, visual half
    Tensor bias;  // 1 x 1
    Linear q, k, v;  // concat_dot only
    Linear o;
};
CrossAttention make_cross_attention(ParamRegistry& reg, const std::string& name, std::size_t d, int heads,
                                    CrossAttnMode mode, Rng& rng);

/// Visual-side quantities reused by every decoding step.
struct CrossMemory {
    Tensor visual;   // M x d
    Tensor f_score;  // 1 x M
    Tensor keys;     // M x d (concat_dot)
    Tensor values;   // M x d (concat_dot)
};
CrossMemory prepare_cross_memory(const CrossAttention& ca, const Tensor& visual);

struct CrossAttnResult {
    Tensor context;               // n x d, before the output projection
    std::vector<Tensor> weights;  // per head, n x M; a single entry in concat mode
};
/// `states` are the n token states; positions are 0..n-1.
CrossAttnResult cross_attention(const Tensor& states, const CrossMemory& mem, const CrossAttention& ca);

struct DecoderConfig {
    int d = 64;
    int heads = 4;
    int layers = 2;
    int ffn = 256;
    int vocab = tok::vocab_size;
    int max_len = 48;
    double dropout = 0.1;
    CrossAttnMode cross_mode = CrossAttnMode::concat_dot;
};

struct DecoderBlock {
    LayerNorm ln1, ln2, ln3;
    MultiHeadAttention self_attn;
    CrossAttention cross;
    FeedForward ffn;
};

class Decoder {
public:
    Decoder() = default;
    Decoder(const DecoderConfig& cfg, ParamRegistry& reg, Rng& rng);

    struct Memory {
        std::vector<CrossMemory> blocks;
    };
    [[nodiscard]] Memory prepare(const Tensor& visual) const;

    /// Logits (len x vocab) for inputs [BOS, target[0..len-2]], so row n
    /// predicts target[n] from target[0..n-1].
    [[nodiscard]] Tensor forward_teacher_forced(const Memory& mem, const std::vector<int>& target, bool training,
                                                Rng* rng, std::vector<std::vector<Tensor>>* attention = nullptr) const;
    /// Logits for an explicit input sequence (starting with BOS).
    [[nodiscard]] Tensor forward_inputs(const Memory& mem, const std::vector<int>& inputs, bool training, Rng* rng,
                                        std::vector<std::vector<Tensor>>* attention = nullptr) const;

    enum class Sampling { greedy, sample };
    /// Stops after `end` or max_len tokens. Runs without recording a tape.
    [[nodiscard]] DSLProgram generate(const Memory& mem, Sampling mode, int max_len, double temperature,
                                      Rng* rng) const;

    [[nodiscard]] std::vector<Linear*> linears();
    [[nodiscard]] const DecoderConfig& config() const { return cfg_; }

    Tensor embedding;  // vocab x d
    Linear output;     // d x vocab, untied

private:
    DecoderConfig cfg_;
    std::vector<DecoderBlock> blocks_;
    LayerNorm final_;
    Tensor pe_;
};

/// Mean token cross-entropy over positions whose target is not PAD.
Tensor syntax_loss(const Tensor& logits, const std::vector<int>& target);

}  // namespace c2d
