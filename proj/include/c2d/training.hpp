// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Loss composition, the training loop, evaluation and the ablation grid.

#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "c2d/config.hpp"
#include "c2d/dataset.hpp"
#include "c2d/model.hpp"

namespace c2d {

// ------------------------------------------------------------ losses

/// lambda1 * sum_i (u_i - 1/N)^2. u must sum to 1 or be all zero.
double utilization_regularizer(const std::vector<double>& u, double lambda1);

/// Mean of max(0, tau - IoU); a failed execution counts as IoU 0.
double semantic_penalty(const std::vector<double>& ious, double tau);
double semantic_penalty(const std::vector<std::pair<Raster, DSLProgram>>& pairs, double tau);

struct LossWeights {
    double lambda2 = 0.7;
    double lambda3 = 0.3;
    double lambda_load = 1.0;
    double lambda_frob = 1e-4;
    double lambda_count = 0.01;
};

/// Undefined tensors count as zero.
struct LossParts {
    Tensor syntax;
    double semantic_penalty = 0.0;
    SemanticMode semantic_mode = SemanticMode::log_only;
    Tensor router_kl;
    Tensor load;
    double util = 0.0;  // already includes lambda1
    Tensor frobenius;   // unweighted
    Tensor count;
};

struct LossBreakdown {
    double syntax = 0.0;
    double semantic = 0.0;  // penalty (log_only) or penalty * syntax (scaled_ce)
    double router_kl = 0.0;
    double load = 0.0;
    double util = 0.0;
    double frobenius = 0.0;
    double count = 0.0;
    double total = 0.0;
    LossWeights weights;
    Tensor objective;  // differentiable part of total
};

/// total = syntax + semantic + l2 kl + l3 util + l_load load + l_frob frob
/// + l_count count. Throws NumericalError naming the first non-finite part.
LossBreakdown compose_loss(const LossParts& parts, const LossWeights& w);

// ------------------------------------------------------------ data

struct DatasetSplits {
    std::vector<Sample> train, val, test;
};
/// Reads data.dir, or generates data.count samples from data.seed and splits them.
DatasetSplits load_data(const RunConfig& cfg);
const std::vector<Sample>& split_of(const DatasetSplits& d, Split s);

// ------------------------------------------------------------ evaluation

struct EvalMetrics {
    std::string split;
    std::size_t charts = 0;
    double success_rate = 0.0;
    double mean_iou = 0.0;
    double parse_rate = 0.0;
    std::array<double, kChartTypeCount> type_success{};
    std::array<std::size_t, kChartTypeCount> type_charts{};
    double syntax_loss = 0.0;  // teacher forced, no dropout
    double trainable_fraction = 0.0;
    double gen_macs = 0.0;    // per chart
    double route_macs = 0.0;  // per chart, routing on minus routing bypassed
    // wall clock; kept out of the deterministic outputs
    double latency_ms = 0.0;
    double route_overhead_ms = 0.0;
};

struct EvalOptions {
    double tau = 0.85;
    std::string split = "test";
    bool timing = false;
    std::size_t limit = 0;  // first `limit` charts; 0 means all
};

/// Greedy generation on every chart, then execute and compare.
EvalMetrics evaluate(const Model& model, const std::vector<Sample>& samples, const EvalOptions& opt,
                     std::vector<DSLProgram>* predictions = nullptr);
/// Scores given predictions without a model; trainable_fraction and costs stay 0.
EvalMetrics score_predictions(const std::vector<Sample>& samples, const std::vector<DSLProgram>& predictions,
                              double tau, const std::string& split);

std::string metrics_csv_header();
std::string metrics_csv_row(const EvalMetrics& m);
std::string metrics_timing_csv(const EvalMetrics& m);
/// Empty when the CSV has the fixed header and every row is in range.
std::string validate_metrics_csv(const std::string& csv);

// ------------------------------------------------------------ training

struct EvalRecord {
    int step = 0;
    int epoch = 0;
    EvalMetrics metrics;
};

struct TrainReport {
    std::vector<EvalRecord> evals;  // evals[0] is the initial evaluation
    int steps = 0;
    int epochs_completed = 0;
    bool stopped_early = false;
    double initial_probe_loss = 0.0;
    double final_probe_loss = 0.0;
    std::vector<double> utilization;
    double utilization_std = 0.0;
    double utilization_max = 0.0;
    std::uint64_t train_macs = 0;
    std::size_t peak_activation = 0;
    std::size_t param_scalars = 0;
    std::size_t trainable_scalars = 0;
    std::size_t optimizer_scalars = 0;
    std::string heatmap_csv;
    double wall_seconds = 0.0;  // sidecar only

    [[nodiscard]] std::size_t memory_proxy() const { return param_scalars + optimizer_scalars + peak_activation; }
};

struct TrainOptions {
    std::string out_dir;  // empty: nothing is written
    std::function<void(const std::string&)> progress;
};

struct TrainResult {
    std::unique_ptr<Model> model;
    TrainReport report;
};

/// Writes under out_dir: run_log.jsonl, report.json, config.txt, heatmap.csv,
/// model.ckpt, adapters.lora (when adapters exist) and timing.json.
TrainResult train(const RunConfig& cfg, const DatasetSplits& data, const TrainOptions& opt = {});

/// Mean teacher-forced syntax loss, eval mode.
double probe_loss(const Model& model, const std::vector<Sample>& samples);

std::string report_to_json(const TrainReport& r);

// ------------------------------------------------------------ ablation

struct AblationGrid {
    std::vector<int> experts{4, 8, 12};
    std::vector<int> capacity{16, 32, 64};
    std::vector<RoutingStrategy> routing{RoutingStrategy::topk, RoutingStrategy::probabilistic};
    std::vector<int> rank{4, 8, 16};
    std::vector<double> alpha{16, 32, 64};
    std::vector<TargetPreset> targets{TargetPreset::attn, TargetPreset::out, TargetPreset::attn_out};
};
/// Throws ContractViolation for a value outside the allowed axis sets.
void validate(const AblationGrid& g);

struct AblationCell {
    std::string id;
    std::string subgrid;  // "moe" or "lora"
    RunConfig config;
};
/// MoE cells vary experts x capacity x routing with LoRA at the base values;
/// LoRA cells vary rank x alpha x targets with MoE at the base values. A
/// sub-grid with an empty axis is skipped.
std::vector<AblationCell> expand_grid(const RunConfig& base, const AblationGrid& g);

struct AblationRow {
    AblationCell cell;
    std::string status = "ok";
    EvalMetrics metrics;
    TrainReport report;
    std::size_t total_params = 0;
    std::size_t trainable_params = 0;
    std::size_t adapter_params = 0;
    double utilization_balance = 0.0;
};

/// 1 - std(u) / std_max, with std_max the spread of a single busy expert.
double utilization_balance(const std::vector<double>& u);

/// Trains and evaluates every cell on `data.test`. A failing cell records its
/// error in `status` and the grid continues. `jobs` workers run cells in parallel.
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const DatasetSplits& data, int jobs = 1,
                                      const std::function<void(const std::string&)>& progress = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_timing_csv(const std::vector<AblationRow>& rows);

// ------------------------------------------------------------ report

/// Markdown summary of a run directory: evaluations, loss curves and the
/// utilization heatmap.
std::string render_report(const std::string& run_dir);

}  // namespace c2d
