// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "c2d/errors.hpp"

namespace c2d {

std::string_view to_string(SemanticMode m) { return m == SemanticMode::log_only ? "log_only" : "scaled_ce"; }

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* first = v.data();
    const auto* last = v.data() + v.size();
    auto [p, ec] = std::from_chars(first, last, out);
    require(ec == std::errc() && p == last, "config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ContractViolation("config: '" + key + "' expects true or false, got '" + v + "'");
}

template <typename T>
ConfigKey num_key(std::string key, std::string help, T RunConfig::*field) {
    return ConfigKey{key, std::move(help),
                     [key, field](RunConfig& c, const std::string& v) { c.*field = parse_number<T>(key, v); },
                     [field](const RunConfig& c) {
                         if constexpr (std::is_floating_point_v<T>) {
                             return fmt_double(c.*field);
                         } else {
                             return std::to_string(c.*field);
                         }
                     }};
}

ConfigKey bool_key(std::string key, std::string help, bool RunConfig::*field) {
    return ConfigKey{key, std::move(help),
                     [key, field](RunConfig& c, const std::string& v) { c.*field = parse_bool(key, v); },
                     [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

template <typename E, typename Parse>
ConfigKey enum_key(std::string key, std::string help, E RunConfig::*field, Parse parse) {
    return ConfigKey{key, std::move(help), [field, parse](RunConfig& c, const std::string& v) { c.*field = parse(v); },
                     [field](const RunConfig& c) { return std::string(to_string(c.*field)); }};
}

std::vector<ConfigKey> build_keys() {
    std::vector<ConfigKey> k;
    k.push_back(enum_key("mode", "training mode: full_finetune, lora_only, moe_lora", &RunConfig::mode,
                         [](const std::string& v) { return parse_train_mode(v); }));
    k.push_back(num_key("seed", "root seed for initialization, shuffling, dropout and routing noise", &RunConfig::seed));
    k.push_back(ConfigKey{"data.dir", "dataset directory from gen-data; empty generates data.count samples in memory",
                          [](RunConfig& c, const std::string& v) { c.data_dir = v; },
                          [](const RunConfig& c) { return c.data_dir; }});
    k.push_back(num_key("data.count", "samples generated when data.dir is empty", &RunConfig::data_count));
    k.push_back(num_key("data.seed", "seed for in-memory data generation", &RunConfig::data_seed));
    k.push_back(num_key("train.epochs", "passes over the training split", &RunConfig::epochs));
    k.push_back(num_key("train.batch", "charts per optimizer step", &RunConfig::batch));
    k.push_back(num_key("train.max_steps", "stop after this many steps; 0 lets train.epochs decide", &RunConfig::max_steps));
    k.push_back(num_key("optim.lr", "peak learning rate of the cosine schedule", &RunConfig::lr));
    k.push_back(num_key("optim.lr_min", "final learning rate of the cosine schedule", &RunConfig::lr_min));
    k.push_back(num_key("optim.t_max", "cosine period in steps; 0 uses the planned step count", &RunConfig::t_max));
    k.push_back(num_key("optim.weight_decay", "AdamW decoupled weight decay", &RunConfig::weight_decay));
    k.push_back(num_key("optim.clip", "per-tensor gradient norm bound", &RunConfig::clip));
    k.push_back(num_key("aug.prob", "probability that a training chart is rotated and colour jittered", &RunConfig::aug_prob));
    k.push_back(num_key("model.d", "hidden width", &RunConfig::d));
    k.push_back(num_key("model.heads", "attention heads", &RunConfig::heads));
    k.push_back(num_key("model.enc_layers", "encoder blocks", &RunConfig::enc_layers));
    k.push_back(num_key("model.dec_layers", "decoder blocks", &RunConfig::dec_layers));
    k.push_back(num_key("model.ffn", "feed-forward width", &RunConfig::ffn));
    k.push_back(num_key("model.patch", "patch side in pixels", &RunConfig::patch));
    k.push_back(num_key("model.max_len", "longest generated program in tokens", &RunConfig::max_len));
    k.push_back(num_key("model.dropout", "dropout rate", &RunConfig::dropout));
    k.push_back(enum_key("model.cross_attn", "cross-attention score: concat or concat_dot", &RunConfig::cross_attn,
                         [](const std::string& v) { return parse_cross_attn_mode(v); }));
    k.push_back(num_key("moe.experts", "experts per MoE layer", &RunConfig::experts));
    k.push_back(num_key("moe.capacity", "tokens one expert accepts per chart", &RunConfig::capacity));
    k.push_back(num_key("moe.k", "experts per token", &RunConfig::k));
    k.push_back(enum_key("moe.routing", "routing strategy: topk or prob", &RunConfig::routing,
                         [](const std::string& v) { return parse_routing_strategy(v); }));
    k.push_back(num_key("moe.temperature", "complexity temperature T", &RunConfig::temperature));
    k.push_back(num_key("moe.sigma", "gate noise standard deviation", &RunConfig::sigma));
    k.push_back(enum_key("moe.reweight", "complexity reweighting: literal or sharpen", &RunConfig::reweight,
                         [](const std::string& v) { return parse_reweight_mode(v); }));
    k.push_back(num_key("moe.layers", "MoE layers after the encoder", &RunConfig::moe_layers));
    k.push_back(num_key("moe.hidden", "expert feed-forward width", &RunConfig::expert_hidden));
    k.push_back(num_key("moe.alpha", "initial weight of the predicted element count in the complexity score",
                        &RunConfig::complexity_alpha));
    k.push_back(num_key("moe.beta", "initial weight of the chart-type difficulty", &RunConfig::complexity_beta));
    k.push_back(num_key("lora.rank", "adapter rank", &RunConfig::rank));
    k.push_back(num_key("lora.alpha", "adapter scale numerator (scaling = alpha / rank)", &RunConfig::alpha));
    k.push_back(enum_key("lora.targets", "adapted projections: attn, out, attn+out, attn+mlp", &RunConfig::targets,
                         [](const std::string& v) { return parse_target_preset(v); }));
    k.push_back(num_key("loss.lambda1", "utilization regularizer weight inside L_util", &RunConfig::lambda1));
    k.push_back(num_key("loss.lambda2", "router KL weight", &RunConfig::lambda2));
    k.push_back(num_key("loss.lambda3", "utilization regularizer weight in the total", &RunConfig::lambda3));
    k.push_back(num_key("loss.lambda_load", "load-balance loss weight", &RunConfig::lambda_load));
    k.push_back(num_key("loss.lambda_frob", "adapter Frobenius penalty weight", &RunConfig::lambda_frob));
    k.push_back(num_key("loss.lambda_count", "element-count regression weight", &RunConfig::lambda_count));
    k.push_back(enum_key("loss.semantic", "semantic penalty: log_only or scaled_ce", &RunConfig::semantic,
                         [](const std::string& v) {
                             if (v == "log_only") return SemanticMode::log_only;
                             if (v == "scaled_ce") return SemanticMode::scaled_ce;
                             throw ContractViolation("config: loss.semantic must be log_only or scaled_ce");
                         }));
    k.push_back(num_key("loss.semantic_every", "steps between greedy decodes for the semantic penalty",
                        &RunConfig::semantic_every));
    k.push_back(bool_key("loss.kl_on_reweighted", "apply the router KL to p' instead of p", &RunConfig::kl_on_reweighted));
    k.push_back(bool_key("loss.load_per_token", "load loss on per-token distributions instead of the batch mean",
                         &RunConfig::load_per_token));
    k.push_back(num_key("eval.tau", "IoU threshold for a successful program", &RunConfig::tau));
    k.push_back(num_key("eval.every", "steps between validation passes; 0 evaluates once per epoch", &RunConfig::eval_every));
    k.push_back(num_key("eval.count", "validation charts per pass; 0 uses the whole split", &RunConfig::eval_count));
    k.push_back(num_key("eval.patience", "validation passes without improvement before stopping; 0 disables",
                        &RunConfig::patience));
    k.push_back(num_key("util.window", "steps in the utilization window", &RunConfig::util_window));
    k.push_back(num_key("train.probe_count", "training charts in the fixed loss probe", &RunConfig::probe_count));
    return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.encoder.patch = patch;
    m.encoder.d = d;
    m.encoder.heads = heads;
    m.encoder.layers = enc_layers;
    m.encoder.ffn = ffn;
    m.encoder.dropout = dropout;
    m.decoder.d = d;
    m.decoder.heads = heads;
    m.decoder.layers = dec_layers;
    m.decoder.ffn = ffn;
    m.decoder.max_len = max_len;
    m.decoder.dropout = dropout;
    m.decoder.cross_mode = cross_attn;
    m.moe.experts = experts;
    m.moe.capacity = capacity;
    m.moe.k = k;
    m.moe.hidden = expert_hidden;
    m.moe.strategy = routing;
    m.moe.temperature = temperature;
    m.moe.sigma = sigma;
    m.moe.reweight = reweight;
    m.moe_layers = moe_layers;
    m.complexity_alpha = complexity_alpha;
    m.complexity_beta = complexity_beta;
    m.lora_rank = rank;
    m.lora_alpha = alpha;
    m.lora_targets = targets;
    m.mode = mode;
    m.seed = seed;
    return m;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, "config: expected key=value, got '" + assignment + "'");
    const std::string key = trim(std::string_view(assignment).substr(0, eq));
    const std::string value = trim(std::string_view(assignment).substr(eq + 1));
    for (const auto& k : config_keys()) {
        if (k.key == key) {
            k.set(cfg, value);
            return;
        }
    }
    throw ContractViolation("config: unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
    RunConfig cfg = base;
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        try {
            apply_override(cfg, line);
        } catch (const ContractViolation& e) {
            throw ContractViolation("line " + std::to_string(n) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    require(static_cast<bool>(f), "config file not found: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : config_keys()) out += k.key + " = " + k.get(cfg) + "\n";
    return out;
}

void validate(const RunConfig& c) {
    auto need = [](bool ok, const std::string& what) { require(ok, "config: " + what); };
    need(c.data_count >= 10, "data.count must be at least 10");
    need(c.epochs >= 0, "train.epochs must be non-negative");
    need(c.batch >= 1, "train.batch must be positive");
    need(c.max_steps >= 0, "train.max_steps must be non-negative");
    need(c.lr > 0.0 && c.lr_min >= 0.0 && c.lr_min <= c.lr, "optim.lr must be positive and at least optim.lr_min");
    need(c.t_max >= 0, "optim.t_max must be non-negative");
    need(c.weight_decay >= 0.0, "optim.weight_decay must be non-negative");
    need(c.clip > 0.0, "optim.clip must be positive");
    need(c.aug_prob >= 0.0 && c.aug_prob <= 1.0, "aug.prob must lie in [0, 1]");
    need(c.d >= 2 && c.heads >= 1 && c.d % c.heads == 0, "model.d must be a positive multiple of model.heads");
    need(c.enc_layers >= 0 && c.dec_layers >= 1, "model.enc_layers >= 0 and model.dec_layers >= 1");
    need(c.ffn >= 1, "model.ffn must be positive");
    need(c.patch >= 1 && 64 % c.patch == 0, "model.patch must divide the 64 px image side");
    need(c.max_len >= 8 && c.max_len <= 256, "model.max_len must lie in [8, 256]");
    need(c.dropout >= 0.0 && c.dropout < 1.0, "model.dropout must lie in [0, 1)");
    need(c.experts >= 2, "moe.experts must be at least 2");
    need(c.capacity >= 1, "moe.capacity must be positive");
    need(c.k >= 1 && c.k <= c.experts, "moe.k must lie in [1, moe.experts]");
    need(c.temperature > 0.0, "moe.temperature must be positive");
    need(c.sigma >= 0.0, "moe.sigma must be non-negative");
    need(c.moe_layers >= 0, "moe.layers must be non-negative");
    need(c.expert_hidden >= 1, "moe.hidden must be positive");
    need(c.rank >= 1 && c.rank < c.d, "lora.rank must lie in [1, model.d)");
    need(c.alpha > 0.0, "lora.alpha must be positive");
    for (double l : {c.lambda1, c.lambda2, c.lambda3, c.lambda_load, c.lambda_frob, c.lambda_count}) {
        need(l >= 0.0, "loss weights must be non-negative");
    }
    need(c.semantic_every >= 0, "loss.semantic_every must be non-negative");
    need(c.tau >= 0.75 && c.tau <= 0.90, "eval.tau must lie in [0.75, 0.90]");
    need(c.eval_every >= 0, "eval.every must be non-negative");
    need(c.patience >= 0, "eval.patience must be non-negative");
    need(c.util_window >= 1, "util.window must be positive");
}

}  // namespace c2d
