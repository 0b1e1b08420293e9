// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/model.hpp"

#include <cstring>
#include <fstream>
#include <functional>
#include <map>

#include <json.hpp>

#include "c2d/errors.hpp"

namespace c2d {

std::string_view to_string(TrainMode m) {
    switch (m) {
        case TrainMode::full_finetune: return "full_finetune";
        case TrainMode::lora_only: return "lora_only";
        case TrainMode::moe_lora: return "moe_lora";
    }
    return "?";
}

TrainMode parse_train_mode(std::string_view s) {
    for (auto m : {TrainMode::full_finetune, TrainMode::lora_only, TrainMode::moe_lora}) {
        if (to_string(m) == s) return m;
    }
    throw ContractViolation("unknown mode '" + std::string(s) + "' (full_finetune, lora_only, moe_lora)");
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    require(cfg.encoder.d == cfg.decoder.d, "model: encoder and decoder widths differ");
    require(cfg.moe_layers >= 0, "model: moe_layers must be non-negative");
    const Rng root(cfg.seed);
    Rng enc_rng = root.split("encoder");
    Rng moe_rng = root.split("moe");
    Rng dec_rng = root.split("decoder");
    Rng lora_rng = root.split("lora");
    const auto d = static_cast<std::size_t>(cfg.encoder.d);

    encoder = Encoder(cfg.encoder, reg_, enc_rng);
    count_head = make_count_head(reg_, d);
    complexity = make_complexity_head(reg_, cfg.complexity_alpha, cfg.complexity_beta);
    for (int l = 0; l < cfg.moe_layers; ++l) {
        moe.emplace_back(cfg.moe, d, reg_, "moe" + std::to_string(l), moe_rng);
    }
    decoder = Decoder(cfg.decoder, reg_, dec_rng);

    if (cfg.mode != TrainMode::full_finetune) {
        std::vector<Linear*> targets = encoder.linears();
        for (Linear* l : decoder.linears()) targets.push_back(l);
        attach_adapters(reg_, targets, cfg.lora_targets, cfg.lora_rank, cfg.lora_alpha, lora_rng);
        for (Linear* l : targets) {
            if (l->lora) adapters_.push_back(l->lora);
        }
    }
    apply_mode(cfg.mode);
}

void Model::apply_mode(TrainMode mode) {
    for (const auto& p : reg_.all()) {
        bool on = false;
        switch (mode) {
            case TrainMode::full_finetune: on = true; break;
            case TrainMode::lora_only: on = p.group == ParamGroup::adapter; break;
            case TrainMode::moe_lora: on = p.group != ParamGroup::base; break;
        }
        Tensor t = p.tensor;
        t.set_requires_grad(on);
    }
}

std::vector<const LoRAAdapter*> Model::adapters() const {
    std::vector<const LoRAAdapter*> out;
    for (const auto& a : adapters_) out.push_back(a.get());
    return out;
}

std::size_t Model::adapter_scalars() const {
    std::size_t n = 0;
    for (const auto& a : adapters_) n += a->parameter_count();
    return n;
}

double Model::trainable_fraction() const {
    return static_cast<double>(reg_.trainable_scalars()) / static_cast<double>(reg_.total_scalars());
}

void Model::merge_adapters() {
    std::vector<Linear*> targets = encoder.linears();
    for (Linear* l : decoder.linears()) targets.push_back(l);
    for (Linear* l : targets) {
        if (l->lora) merge_into(l->W, *l->lora);
    }
}

BatchOutput Model::forward(const std::vector<ChartInput>& batch, bool training, Rng* rng) const {
    require(!batch.empty(), "model: empty batch");
    BatchOutput out;
    std::vector<Tensor> tokens;
    for (const auto& in : batch) {
        require(in.raster != nullptr && in.target != nullptr, "model: chart input needs a raster and a target");
        const VisualTokens v = encoder.encode(*in.raster, in.type, in.element_count, training, rng);
        out.count_pred.push_back(count_head.predict(v));
        out.complexity.push_back(complexity_score(out.count_pred.back(), in.type, complexity));
        tokens.push_back(v.tokens);
    }
    for (const auto& layer : moe) {
        out.moe.push_back(layer.forward(tokens, out.complexity, training, rng));
        tokens = out.moe.back().outputs;
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto mem = decoder.prepare(tokens[i]);
        out.logits.push_back(decoder.forward_teacher_forced(mem, *batch[i].target, training, rng));
    }
    return out;
}

Model::Prepared Model::prepare(const Raster& r, ChartType type, bool bypass_moe) const {
    NoGradGuard ng;
    Prepared p;
    const VisualTokens v = encoder.encode(r, type, std::nullopt, false, nullptr);
    Tensor x = v.tokens;
    if (!bypass_moe && !moe.empty()) {
        const Tensor c = complexity_score(count_head.predict(v), type, complexity);
        for (const auto& layer : moe) {
            auto o = layer.forward({x}, {c}, false, nullptr);
            x = o.outputs[0];
            p.load.push_back(o.load[0]);
        }
    }
    p.memory = decoder.prepare(x);
    return p;
}

DSLProgram Model::generate(const Raster& r, ChartType type, int max_len, bool bypass_moe) const {
    const auto p = prepare(r, type, bypass_moe);
    return decoder.generate(p.memory, Decoder::Sampling::greedy, max_len > 0 ? max_len : cfg_.decoder.max_len, 1.0,
                            nullptr);
}

// ------------------------------------------------------------ checkpoints

namespace {

constexpr char kMagic[8] = {'C', '2', 'D', 'C', 'K', 'P', 'T', '\n'};
constexpr char kAdapterMagic[8] = {'C', '2', 'D', 'L', 'O', 'R', 'A', '\n'};

void write_blob(const std::string& path, const char* magic, const nlohmann::json& header,
                const std::vector<const Tensor*>& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    const std::string h = header.dump();
    const auto len = static_cast<std::uint32_t>(h.size());
    f.write(magic, 8);
    unsigned char lb[4] = {static_cast<unsigned char>(len & 0xFF), static_cast<unsigned char>((len >> 8) & 0xFF),
                           static_cast<unsigned char>((len >> 16) & 0xFF), static_cast<unsigned char>(len >> 24)};
    f.write(reinterpret_cast<const char*>(lb), 4);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const Tensor* t : tensors) {
        for (double v : t->values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            unsigned char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
            f.write(reinterpret_cast<const char*>(b), 8);
        }
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

struct Blob {
    nlohmann::json header;
    std::vector<double> data;
};

Blob read_blob(const std::string& path, const char* magic, bool header_only = false) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot open checkpoint " + path);
    char m[8];
    f.read(m, 8);
    require(f && std::memcmp(m, magic, 8) == 0, "not a checkpoint of the expected kind: " + path);
    unsigned char lb[4];
    f.read(reinterpret_cast<char*>(lb), 4);
    const std::uint32_t len = lb[0] | (lb[1] << 8) | (lb[2] << 16) | (static_cast<std::uint32_t>(lb[3]) << 24);
    std::string h(len, '\0');
    f.read(h.data(), len);
    require(static_cast<bool>(f), "truncated checkpoint header: " + path);
    Blob b;
    b.header = nlohmann::json::parse(h);
    if (header_only) return b;
    unsigned char buf[8];
    while (f.read(reinterpret_cast<char*>(buf), 8)) {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        b.data.push_back(v);
    }
    return b;
}

void fill_tensors(const Blob& b, const std::function<Tensor*(const std::string&)>& lookup, const std::string& path) {
    std::size_t off = 0;
    for (const auto& e : b.header.at("tensors")) {
        const auto name = e.at("name").get<std::string>();
        const auto rows = e.at("rows").get<std::size_t>();
        const auto cols = e.at("cols").get<std::size_t>();
        Tensor* t = lookup(name);
        require(t != nullptr, "checkpoint tensor '" + name + "' has no counterpart in the model");
        require(t->rows() == rows && t->cols() == cols, "checkpoint tensor '" + name + "' has a different shape");
        require(off + rows * cols <= b.data.size(), "checkpoint payload is truncated: " + path);
        auto dst = t->mutable_values();
        std::copy(b.data.begin() + static_cast<std::ptrdiff_t>(off),
                  b.data.begin() + static_cast<std::ptrdiff_t>(off + rows * cols), dst.begin());
        off += rows * cols;
    }
    require(off == b.data.size(), "checkpoint payload has trailing data: " + path);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const std::string& config_text) {
    nlohmann::json h;
    h["format_version"] = kCheckpointVersion;
    h["config_hash"] = fnv1a(config_text);
    h["config"] = config_text;
    h["tensors"] = nlohmann::json::array();
    std::vector<const Tensor*> ts;
    for (const auto& p : model.params().all()) {
        h["tensors"].push_back({{"name", p.name}, {"rows", p.tensor.rows()}, {"cols", p.tensor.cols()}});
        ts.push_back(&p.tensor);
    }
    write_blob(path, kMagic, h, ts);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    const auto b = read_blob(path, kMagic, true);
    CheckpointInfo info;
    info.format_version = b.header.at("format_version").get<int>();
    info.config_hash = b.header.at("config_hash").get<std::uint64_t>();
    info.config_text = b.header.at("config").get<std::string>();
    require(info.format_version == kCheckpointVersion,
            "unsupported checkpoint format_version " + std::to_string(info.format_version));
    require(info.config_hash == fnv1a(info.config_text), "checkpoint config hash mismatch");
    return info;
}

CheckpointInfo load_checkpoint(const std::string& path, Model& model) {
    const auto info = read_checkpoint_info(path);
    const auto b = read_blob(path, kMagic);
    require(b.header.at("tensors").size() == model.params().all().size(),
            "checkpoint parameter count does not match the model");
    std::map<std::string, Tensor> by_name;
    for (const auto& p : model.params().all()) by_name.emplace(p.name, p.tensor);
    fill_tensors(
        b,
        [&by_name](const std::string& n) -> Tensor* {
            auto it = by_name.find(n);
            return it == by_name.end() ? nullptr : &it->second;
        },
        path);
    return info;
}

void save_adapters(const std::string& path, const Model& model) {
    nlohmann::json h;
    h["format_version"] = kCheckpointVersion;
    h["tensors"] = nlohmann::json::array();
    h["adapters"] = nlohmann::json::array();
    std::vector<const Tensor*> ts;
    for (const LoRAAdapter* a : model.adapters()) {
        h["adapters"].push_back({{"target", a->target}, {"rank", a->rank}, {"alpha", a->alpha}});
        h["tensors"].push_back({{"name", a->target + ".lora_A"}, {"rows", a->A.rows()}, {"cols", a->A.cols()}});
        h["tensors"].push_back({{"name", a->target + ".lora_B"}, {"rows", a->B.rows()}, {"cols", a->B.cols()}});
        ts.push_back(&a->A);
        ts.push_back(&a->B);
    }
    write_blob(path, kAdapterMagic, h, ts);
}

void load_adapters(const std::string& path, Model& model) {
    const auto b = read_blob(path, kAdapterMagic);
    std::map<std::string, Tensor> by_name;
    for (const LoRAAdapter* a : model.adapters()) {
        by_name.emplace(a->target + ".lora_A", a->A);
        by_name.emplace(a->target + ".lora_B", a->B);
    }
    for (const auto& a : b.header.at("adapters")) {
        const auto target = a.at("target").get<std::string>();
        bool found = false;
        for (const LoRAAdapter* m : model.adapters()) {
            if (m->target == target) {
                require(m->rank == a.at("rank").get<int>() && m->alpha == a.at("alpha").get<double>(),
                        "adapter '" + target + "' rank or alpha differs from the model");
                found = true;
            }
        }
        require(found, "adapter target '" + target + "' does not exist in the model");
    }
    fill_tensors(
        b,
        [&by_name](const std::string& n) -> Tensor* {
            auto it = by_name.find(n);
            return it == by_name.end() ? nullptr : &it->second;
        },
        path);
}

}  // namespace c2d
