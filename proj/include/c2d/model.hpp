// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Encoder, MoE fusion and decoder assembled into one chart-to-DSL model.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "c2d/decoder.hpp"
#include "c2d/encoder.hpp"
#include "c2d/lora.hpp"
#include "c2d/moe.hpp"

namespace c2d {

enum class TrainMode { full_finetune, lora_only, moe_lora };
std::string_view to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view s);

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    MoEConfig moe;
    int moe_layers = 1;
    double complexity_alpha = 0.05;
    double complexity_beta = 0.25;
    int lora_rank = 8;
    double lora_alpha = 16.0;
    TargetPreset lora_targets = TargetPreset::attn_mlp;
    TrainMode mode = TrainMode::moe_lora;
    std::uint64_t seed = 1;
};

struct ChartInput {
    const Raster* raster = nullptr;
    ChartType type = ChartType::bar;
    std::optional<int> element_count;
    const std::vector<int>* target = nullptr;  // canonical program tokens
};

struct BatchOutput {
    std::vector<Tensor> logits;       // per chart, len x vocab
    std::vector<Tensor> count_pred;   // per chart, 1 x 1
    std::vector<Tensor> complexity;   // per chart, 1 x 1
    std::vector<MoEOutput> moe;       // per MoE layer
};

class Model {
public:
    explicit Model(const ModelConfig& cfg);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    /// Teacher-forced forward over a batch. The MoE layers see the whole batch
    /// at once; capacity applies per chart.
    [[nodiscard]] BatchOutput forward(const std::vector<ChartInput>& batch, bool training, Rng* rng) const;

    /// Visual memory for one chart: encoder, MoE (skipped when bypass_moe),
    /// and the decoder's cross-attention cache.
    struct Prepared {
        Decoder::Memory memory;
        std::vector<std::vector<int>> load;  // per MoE layer, per expert slots
    };
    [[nodiscard]] Prepared prepare(const Raster& r, ChartType type, bool bypass_moe = false) const;
    [[nodiscard]] DSLProgram generate(const Raster& r, ChartType type, int max_len = 0, bool bypass_moe = false) const;

    [[nodiscard]] const ParamRegistry& params() const { return reg_; }
    [[nodiscard]] ParamRegistry& params() { return reg_; }
    [[nodiscard]] const ModelConfig& config() const { return cfg_; }
    [[nodiscard]] std::vector<const LoRAAdapter*> adapters() const;
    [[nodiscard]] std::size_t adapter_scalars() const;
    /// Trainable scalars over all scalars, from the current requires_grad flags.
    [[nodiscard]] double trainable_fraction() const;

    /// Sets requires_grad per parameter group for `mode`.
    void apply_mode(TrainMode mode);
    /// Folds every adapter into its base weight.
    void merge_adapters();

    Encoder encoder;
    CountHead count_head;
    ComplexityHead complexity;
    std::vector<MoELayer> moe;
    Decoder decoder;

private:
    ModelConfig cfg_;
    ParamRegistry reg_;
    std::vector<std::shared_ptr<LoRAAdapter>> adapters_;
};

// ------------------------------------------------------------ checkpoints

inline constexpr int kCheckpointVersion = 1;

/// Binary checkpoint: magic, format_version, config hash, then a tensor table
/// (name, rows, cols) followed by little-endian doubles.
void save_checkpoint(const std::string& path, const Model& model, const std::string& config_text);
struct CheckpointInfo {
    int format_version = 0;
    std::uint64_t config_hash = 0;
    std::string config_text;
};
/// Loads values into a model with matching parameter names and shapes.
CheckpointInfo load_checkpoint(const std::string& path, Model& model);
CheckpointInfo read_checkpoint_info(const std::string& path);

/// Adapter-only file: target -> {A, B, rank, alpha}, loadable without base weights.
void save_adapters(const std::string& path, const Model& model);
void load_adapters(const std::string& path, Model& model);

}  // namespace c2d
