// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen-data, train, eval, generate, ablate, report.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "c2d/errors.hpp"
#include "c2d/image_io.hpp"
#include "c2d/training.hpp"

namespace fs = std::filesystem;
using namespace c2d;

namespace {

// Exit codes.
constexpr int kExitFailure = 1;
constexpr int kExitMissingConfig = 2;
constexpr int kExitNumerical = 3;

struct MissingConfig : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
};

std::string keys_help() {
    const RunConfig d;
    std::ostringstream os;
    os << "\nConfiguration keys (key=value, applied after --config):\n";
    for (const auto& k : config_keys()) {
        std::string left = "  " + k.key + "=" + k.get(d);
        if (left.size() < 34) left.resize(34, ' ');
        os << left << " " << k.help << "\n";
    }
    return os.str();
}

void add_common(CLI::App* app, Common& c, bool needs_out) {
    app->add_option("--config", c.config, "Run config file (key = value lines)");
    app->add_option("--seed", c.seed, "Root seed, overrides the config");
    auto* out = app->add_option("--out", c.out, "Output directory");
    if (needs_out) out->required();
    app->add_option("overrides", c.overrides, "key=value overrides");
    app->footer(keys_help());
}

RunConfig resolve(const Common& c, const std::string& fallback_text = {}) {
    RunConfig cfg;
    if (!c.config.empty()) {
        if (!fs::exists(c.config)) throw MissingConfig("config file not found: " + c.config);
        cfg = load_config(c.config);
    } else if (!fallback_text.empty()) {
        cfg = parse_config(fallback_text);
    }
    for (const auto& o : c.overrides) apply_override(cfg, o);
    if (c.seed) cfg.seed = *c.seed;
    validate(cfg);
    return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

auto progress_to_stderr() {
    return [](const std::string& s) { std::cerr << s << "\n"; };
}

TypeMix parse_mix(const std::string& text) {
    TypeMix mix{};
    std::stringstream ss(text);
    std::string part;
    std::size_t i = 0;
    double total = 0.0;
    while (std::getline(ss, part, ',')) {
        require(i < mix.size(), "--mix needs exactly 5 comma-separated weights");
        try {
            mix[i] = std::stod(part);
        } catch (const std::exception&) {
            throw ContractViolation("--mix weight '" + part + "' is not a number");
        }
        require(mix[i] >= 0.0 && std::isfinite(mix[i]), "--mix weights must be non-negative");
        total += mix[i++];
    }
    require(i == mix.size(), "--mix needs exactly 5 comma-separated weights");
    require(std::abs(total - 1.0) < 1e-9, "--mix weights must sum to 1");
    return mix;
}

Split parse_split(const std::string& s) {
    for (std::size_t i = 0; i < kSplitNames.size(); ++i) {
        if (s == kSplitNames[i]) return static_cast<Split>(i);
    }
    throw ContractViolation("unknown split '" + s + "' (train, val, test)");
}

std::vector<DSLProgram> read_predictions(const std::string& path, const std::vector<Sample>& samples) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot open predictions " + path);
    std::map<std::string, DSLProgram> by_id;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        by_id[j.at("id").get<std::string>()].tokens = j.at("tokens").get<std::vector<int>>();
    }
    std::vector<DSLProgram> out;
    for (const auto& s : samples) {
        auto it = by_id.find(s.id);
        require(it != by_id.end(), "predictions file has no entry for chart " + s.id);
        out.push_back(it->second);
    }
    return out;
}

std::string predictions_jsonl(const std::vector<Sample>& samples, const std::vector<DSLProgram>& preds) {
    std::string out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        nlohmann::json j{{"id", samples[i].id}, {"tokens", preds[i].tokens}, {"program", program_to_text(preds[i])}};
        out += j.dump() + "\n";
    }
    return out;
}

std::unique_ptr<Model> load_model(const std::string& ckpt, const RunConfig& cfg) {
    auto m = std::make_unique<Model>(cfg.model_config());
    load_checkpoint(ckpt, *m);
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chart2dsl: chart image to plotting-DSL generation with routed experts and low-rank adapters"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "c2d 1.0.0");

    // gen-data
    Common gd;
    std::size_t gd_count = 2000;
    std::string gd_mix;
    bool gd_png = false;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with a stratified split");
    add_common(gen, gd, true);
    gen->add_option("--count", gd_count, "Number of charts")->capture_default_str();
    gen->add_flag("--png", gd_png, "Also write every raster as png/<id>.png");
    gen->add_option("--mix", gd_mix, "Type weights bar,line,scatter,pie,complex (default 0.313,0.268,0.179,0.134,0.089 renormalised)");

    // train
    Common tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model; writes a checkpoint, run log and report");
    add_common(train_cmd, tr, true);

    // eval
    Common ev;
    std::string ev_ckpt, ev_split = "test", ev_preds;
    bool ev_timing = false;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (or a predictions file) on a split");
    add_common(eval_cmd, ev, true);
    eval_cmd->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
    eval_cmd->add_option("--split", ev_split, "train, val or test")->capture_default_str();
    eval_cmd->add_option("--predictions", ev_preds, "Score this predictions .jsonl instead of running a model");
    eval_cmd->add_flag("--timing", ev_timing, "Also measure latency and route overhead (metrics_timing.csv)");

    // generate
    Common gn;
    std::string gn_ckpt, gn_image, gn_spec, gn_type;
    bool gn_bypass = false;
    auto* gen_cmd = app.add_subcommand("generate", "Print the program generated for one chart");
    add_common(gen_cmd, gn, false);
    gen_cmd->add_option("--checkpoint", gn_ckpt, "Model checkpoint")->required();
    gen_cmd->add_option("--image", gn_image, "Chart raster (.png)");
    gen_cmd->add_option("--spec", gn_spec, "Chart spec (.json), rasterized first");
    gen_cmd->add_option("--type", gn_type, "Chart type for an --image (bar, line, scatter, pie, complex)");
    gen_cmd->add_flag("--bypass-moe", gn_bypass, "Skip the expert layers");

    // ablate
    Common ab;
    int ab_jobs = 1;
    std::vector<int> ab_experts{4, 8, 12}, ab_capacity{16, 32, 64}, ab_rank{4, 8, 16};
    std::vector<std::string> ab_routing{"topk", "prob"}, ab_targets{"attn", "out", "attn+out"};
    std::vector<double> ab_alpha{16, 32, 64};
    auto* abl = app.add_subcommand("ablate", "Run the expert and adapter ablation grids");
    add_common(abl, ab, true);
    abl->add_option("--jobs", ab_jobs, "Parallel workers")->capture_default_str()->check(CLI::PositiveNumber);
    abl->add_option("--experts", ab_experts, "Expert counts (empty skips the expert sub-grid)")->capture_default_str();
    abl->add_option("--capacity", ab_capacity, "Expert capacities")->capture_default_str();
    abl->add_option("--routing", ab_routing, "Routing strategies")->capture_default_str();
    abl->add_option("--rank", ab_rank, "Adapter ranks (empty skips the adapter sub-grid)")->capture_default_str();
    abl->add_option("--alpha", ab_alpha, "Adapter alphas")->capture_default_str();
    abl->add_option("--targets", ab_targets, "Adapter target presets")->capture_default_str();

    // report
    Common rp;
    std::string rp_run;
    auto* rep = app.add_subcommand("report", "Render a run directory into a markdown summary");
    add_common(rep, rp, false);
    rep->add_option("--run", rp_run, "Run directory written by train")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const RunConfig cfg = resolve(gd);
            require(gd_count >= 10, "gen-data: --count must be at least 10");
            const TypeMix mix = gd_mix.empty() ? default_type_mix() : parse_mix(gd_mix);
            const auto s = write_dataset(gd.out, gd_count, gd.seed ? *gd.seed : cfg.data_seed, mix);
            if (gd_png) {
                fs::create_directories(fs::path(gd.out) / "png");
                for (auto split : {Split::train, Split::val, Split::test}) {
                    for (const auto& x : load_split(gd.out, split)) {
                        write_png((fs::path(gd.out) / "png" / (x.id + ".png")).string(), x.raster);
                    }
                }
            }
            std::cout << "train " << s.split_sizes[0] << ", val " << s.split_sizes[1] << ", test " << s.split_sizes[2]
                      << "\n";
        } else if (train_cmd->parsed()) {
            const RunConfig cfg = resolve(tr);
            const auto data = load_data(cfg);
            TrainOptions opt;
            opt.out_dir = tr.out;
            opt.progress = progress_to_stderr();
            const auto r = train(cfg, data, opt);
            const auto& last = r.report.evals.back().metrics;
            std::cout << "steps " << r.report.steps << ", val success " << last.success_rate << ", val parse "
                      << last.parse_rate << "\n";
        } else if (eval_cmd->parsed()) {
            require(!ev_ckpt.empty() || !ev_preds.empty(), "eval: pass --checkpoint or --predictions");
            std::string ckpt_cfg;
            if (!ev_ckpt.empty() && ev.config.empty()) ckpt_cfg = read_checkpoint_info(ev_ckpt).config_text;
            const RunConfig cfg = resolve(ev, ckpt_cfg);
            const auto data = load_data(cfg);
            const auto split = parse_split(ev_split);
            const auto& samples = split_of(data, split);
            require(!samples.empty(), "eval: split '" + ev_split + "' is empty");
            EvalMetrics m;
            std::vector<DSLProgram> preds;
            if (!ev_preds.empty()) {
                preds = read_predictions(ev_preds, samples);
                m = score_predictions(samples, preds, cfg.tau, ev_split);
            } else {
                const auto model = load_model(ev_ckpt, cfg);
                m = evaluate(*model, samples, EvalOptions{cfg.tau, ev_split, ev_timing, 0}, &preds);
            }
            const fs::path out(ev.out);
            write_file(out / "metrics.csv", metrics_csv_header() + "\n" + metrics_csv_row(m) + "\n");
            write_file(out / "predictions.jsonl", predictions_jsonl(samples, preds));
            if (ev_timing) write_file(out / "metrics_timing.csv", metrics_timing_csv(m));
            std::cout << metrics_csv_header() << "\n" << metrics_csv_row(m) << "\n";
        } else if (gen_cmd->parsed()) {
            require(gn_image.empty() != gn_spec.empty(), "generate: pass exactly one of --image or --spec");
            std::string ckpt_cfg;
            if (gn.config.empty()) ckpt_cfg = read_checkpoint_info(gn_ckpt).config_text;
            const RunConfig cfg = resolve(gn, ckpt_cfg);
            const auto model = load_model(gn_ckpt, cfg);
            Raster r;
            ChartType type{};
            if (!gn_spec.empty()) {
                std::ifstream f(gn_spec);
                require(static_cast<bool>(f), "cannot open spec " + gn_spec);
                const ChartSpec spec = spec_from_json(nlohmann::json::parse(f));
                r = rasterize(spec);
                type = spec.type;
            } else {
                require(!gn_type.empty(), "generate: --image needs --type");
                const auto t = parse_chart_type(gn_type);
                require(t.has_value(), "generate: unknown chart type '" + gn_type + "'");
                type = *t;
                r = read_png(gn_image);
            }
            const DSLProgram p = model->generate(r, type, 0, gn_bypass);
            std::cout << program_to_text(p) << "\n";
            if (!gn.out.empty()) {
                nlohmann::json j{{"tokens", p.tokens}, {"program", program_to_text(p)}};
                write_file(fs::path(gn.out) / "program.json", j.dump(2) + "\n");
            }
        } else if (abl->parsed()) {
            const RunConfig base = resolve(ab);
            AblationGrid g;
            g.experts = ab_experts;
            g.capacity = ab_capacity;
            g.rank = ab_rank;
            g.alpha = ab_alpha;
            g.routing.clear();
            for (const auto& r : ab_routing) g.routing.push_back(parse_routing_strategy(r));
            g.targets.clear();
            for (const auto& t : ab_targets) g.targets.push_back(parse_target_preset(t));
            const auto cells = expand_grid(base, g);
            for (const auto& c : cells) validate(c.config);
            const auto data = load_data(base);
            const auto rows = run_ablation(cells, data, ab_jobs, progress_to_stderr());
            const fs::path out(ab.out);
            write_file(out / "ablation.csv", ablation_csv(rows));
            write_file(out / "ablation_timing.csv", ablation_timing_csv(rows));
            std::size_t failed = 0;
            for (const auto& r : rows) failed += r.status == "ok" ? 0 : 1;
            std::cout << rows.size() << " cells, " << failed << " failed\n";
        } else if (rep->parsed()) {
            const std::string md = render_report(rp_run);
            if (rp.out.empty()) {
                std::cout << md;
            } else {
                write_file(fs::path(rp.out) / "summary.md", md);
            }
        }
    } catch (const MissingConfig& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingConfig;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return 0;
}
