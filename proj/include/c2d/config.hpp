// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat key = value document with dotted keys.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "c2d/model.hpp"

namespace c2d {

enum class SemanticMode { log_only, scaled_ce };
std::string_view to_string(SemanticMode m);

struct RunConfig {
    TrainMode mode = TrainMode::moe_lora;
    std::uint64_t seed = 1;

    // data
    std::string data_dir;  // empty: generate in memory
    std::size_t data_count = 2000;
    std::uint64_t data_seed = 7;

    // schedule
    int epochs = 5;
    int batch = 4;
    int max_steps = 0;  // 0: epochs decide
    double lr = 1e-4;
    double lr_min = 1e-6;
    int t_max = 0;  // 0: total planned steps
    double weight_decay = 0.01;
    double clip = 1.0;
    double aug_prob = 0.5;

    // model
    int d = 64;
    int heads = 4;
    int enc_layers = 2;
    int dec_layers = 2;
    int ffn = 256;
    int patch = 8;
    int max_len = 48;
    double dropout = 0.1;
    CrossAttnMode cross_attn = CrossAttnMode::concat_dot;

    // moe
    int experts = 8;
    int capacity = 32;
    int k = 2;
    RoutingStrategy routing = RoutingStrategy::topk;
    double temperature = 1.0;
    double sigma = 0.01;
    ReweightMode reweight = ReweightMode::sharpen;
    int moe_layers = 1;
    int expert_hidden = 256;
    double complexity_alpha = 0.05;
    double complexity_beta = 0.25;

    // lora
    int rank = 8;
    double alpha = 16.0;
    TargetPreset targets = TargetPreset::attn_mlp;

    // loss
    double lambda1 = 0.5;
    double lambda2 = 0.7;
    double lambda3 = 0.3;
    double lambda_load = 1.0;
    double lambda_frob = 1e-4;
    double lambda_count = 0.01;
    SemanticMode semantic = SemanticMode::log_only;
    int semantic_every = 10;
    bool kl_on_reweighted = false;
    bool load_per_token = false;

    // evaluation
    double tau = 0.85;
    int eval_every = 0;      // steps; 0: once per epoch
    std::size_t eval_count = 200;
    int patience = 2;        // evaluations without improvement; 0 disables
    std::size_t util_window = 1000;
    std::size_t probe_count = 64;

    [[nodiscard]] ModelConfig model_config() const;
};

struct ConfigKey {
    std::string key;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};
const std::vector<ConfigKey>& config_keys();

/// Applies one `key=value`; unknown keys and malformed values throw ContractViolation.
void apply_override(RunConfig& cfg, const std::string& assignment);
/// Parses a config document: `key = value` lines, `#` comments, blank lines.
RunConfig parse_config(const std::string& text, const RunConfig& base = RunConfig{});
RunConfig load_config(const std::string& path);
/// Canonical text with every key, in table order; hashing this text
/// identifies a configuration.
std::string config_to_text(const RunConfig& cfg);
/// Throws ContractViolation naming the first field outside its legal range.
void validate(const RunConfig& cfg);

}  // namespace c2d
