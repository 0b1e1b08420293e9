// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "c2d/errors.hpp"
#include "c2d/optim.hpp"

namespace c2d {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

// ------------------------------------------------------------ losses

double utilization_regularizer(const std::vector<double>& u, double lambda1) {
    require(!u.empty(), "utilization_regularizer: empty utilization vector");
    const double total = std::accumulate(u.begin(), u.end(), 0.0);
    require(total == 0.0 || std::abs(total - 1.0) < 1e-9, "utilization_regularizer: u must sum to 1");
    if (total == 0.0) return 0.0;
    const double target = 1.0 / static_cast<double>(u.size());
    double s = 0.0;
    for (double v : u) s += (v - target) * (v - target);
    return lambda1 * s;
}

double semantic_penalty(const std::vector<double>& ious, double tau) {
    require(tau >= 0.75 && tau <= 0.90, "semantic_penalty: tau must lie in [0.75, 0.90]");
    if (ious.empty()) return 0.0;
    double s = 0.0;
    for (double v : ious) s += std::max(0.0, tau - v);
    return s / static_cast<double>(ious.size());
}

double semantic_penalty(const std::vector<std::pair<Raster, DSLProgram>>& pairs, double tau) {
    std::vector<double> ious;
    for (const auto& [input, program] : pairs) {
        const auto r = execute(program, input.width, input.height);
        ious.push_back(r.ok() ? iou(input, *r.raster) : 0.0);
    }
    return semantic_penalty(ious, tau);
}

LossBreakdown compose_loss(const LossParts& p, const LossWeights& w) {
    auto val = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
    LossBreakdown b;
    b.weights = w;
    b.syntax = val(p.syntax);
    b.semantic = p.semantic_mode == SemanticMode::log_only ? p.semantic_penalty : p.semantic_penalty * b.syntax;
    b.router_kl = val(p.router_kl);
    b.load = val(p.load);
    b.util = p.util;
    b.frobenius = val(p.frobenius);
    b.count = val(p.count);
    const std::pair<const char*, double> parts[] = {{"syntax", b.syntax},     {"semantic", b.semantic},
                                                    {"router_kl", b.router_kl}, {"load", b.load},
                                                    {"util", b.util},         {"frobenius", b.frobenius},
                                                    {"count", b.count}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) throw NumericalError(std::string("non-finite loss component: ") + name);
    }
    b.total = b.syntax + b.semantic + w.lambda2 * b.router_kl + w.lambda3 * b.util + w.lambda_load * b.load +
              w.lambda_frob * b.frobenius + w.lambda_count * b.count;
    if (!std::isfinite(b.total)) throw NumericalError("non-finite loss component: total");

    Tensor obj = p.syntax.defined() ? p.syntax : Tensor::scalar(0.0);
    double constant = w.lambda3 * b.util;
    if (p.semantic_mode == SemanticMode::scaled_ce) {
        obj = scale(obj, 1.0 + p.semantic_penalty);
    } else {
        constant += b.semantic;
    }
    auto add_weighted = [&obj](const Tensor& t, double k) {
        if (t.defined() && k != 0.0) obj = add(obj, scale(t, k));
    };
    add_weighted(p.router_kl, w.lambda2);
    add_weighted(p.load, w.lambda_load);
    add_weighted(p.frobenius, w.lambda_frob);
    add_weighted(p.count, w.lambda_count);
    b.objective = constant != 0.0 ? add_const(obj, constant) : obj;
    return b;
}

// ------------------------------------------------------------ data

DatasetSplits load_data(const RunConfig& cfg) {
    DatasetSplits d;
    if (!cfg.data_dir.empty()) {
        d.train = load_split(cfg.data_dir, Split::train);
        d.val = load_split(cfg.data_dir, Split::val);
        d.test = load_split(cfg.data_dir, Split::test);
        return d;
    }
    auto samples = generate_samples(cfg.data_count, cfg.data_seed, default_type_mix());
    const auto splits = stratified_split(samples);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& dst = splits[i] == Split::train ? d.train : splits[i] == Split::val ? d.val : d.test;
        dst.push_back(std::move(samples[i]));
    }
    return d;
}

const std::vector<Sample>& split_of(const DatasetSplits& d, Split s) {
    return s == Split::train ? d.train : s == Split::val ? d.val : d.test;
}

// ------------------------------------------------------------ evaluation

EvalMetrics score_predictions(const std::vector<Sample>& samples, const std::vector<DSLProgram>& predictions,
                              double tau, const std::string& split) {
    require(!samples.empty(), "evaluate: split '" + split + "' is empty");
    require(predictions.size() == samples.size(), "evaluate: one prediction per chart is required");
    EvalMetrics m;
    m.split = split;
    m.charts = samples.size();
    std::array<std::size_t, kChartTypeCount> wins{};
    std::size_t parsed = 0;
    double iou_sum = 0.0;
    std::vector<std::pair<Raster, DSLProgram>> pairs;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto t = static_cast<std::size_t>(s.spec.type);
        ++m.type_charts[t];
        if (parse_program(predictions[i], s.raster.width, s.raster.height).ok()) ++parsed;
        const auto r = execute(predictions[i], s.raster.width, s.raster.height);
        const double v = r.ok() ? iou(s.raster, *r.raster) : 0.0;
        iou_sum += v;
        if (r.ok() && v >= tau) ++wins[t];
        pairs.emplace_back(s.raster, predictions[i]);
    }
    m.success_rate = success_rate(pairs, tau);
    m.mean_iou = iou_sum / static_cast<double>(m.charts);
    m.parse_rate = static_cast<double>(parsed) / static_cast<double>(m.charts);
    for (std::size_t t = 0; t < kChartTypeCount; ++t) {
        m.type_success[t] = m.type_charts[t] ? static_cast<double>(wins[t]) / static_cast<double>(m.type_charts[t]) : 0.0;
    }
    return m;
}

EvalMetrics evaluate(const Model& model, const std::vector<Sample>& all, const EvalOptions& opt,
                     std::vector<DSLProgram>* predictions) {
    require(!all.empty(), "evaluate: split '" + opt.split + "' is empty");
    const std::size_t n = opt.limit ? std::min(opt.limit, all.size()) : all.size();
    const std::vector<Sample> samples(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    NoGradGuard ng;
    auto& stats = compute_stats();
    std::vector<DSLProgram> preds;
    double loss_sum = 0.0;
    std::uint64_t gen_macs = 0;
    std::int64_t route_macs = 0;
    double gen_s = 0.0, route_s = 0.0;
    const int max_len = model.config().decoder.max_len;
    for (const auto& s : samples) {
        const auto t0 = Clock::now();
        const std::uint64_t m0 = stats.macs;
        const auto prepared = model.prepare(s.raster, s.spec.type);
        const std::uint64_t m1 = stats.macs;
        preds.push_back(model.decoder.generate(prepared.memory, Decoder::Sampling::greedy, max_len, 1.0, nullptr));
        gen_macs += stats.macs - m0;
        gen_s += seconds_since(t0);

        const auto t1 = Clock::now();
        const std::uint64_t m2 = stats.macs;
        (void)model.prepare(s.raster, s.spec.type, true);
        route_macs += static_cast<std::int64_t>(m1 - m0) - static_cast<std::int64_t>(stats.macs - m2);
        if (opt.timing) {
            const double bypass_s = seconds_since(t1);
            const auto t2 = Clock::now();
            (void)model.prepare(s.raster, s.spec.type);
            route_s += seconds_since(t2) - bypass_s;
        }

        const Tensor logits = model.decoder.forward_teacher_forced(prepared.memory, s.program.tokens, false, nullptr);
        loss_sum += syntax_loss(logits, s.program.tokens).item();
    }
    EvalMetrics m = score_predictions(samples, preds, opt.tau, opt.split);
    const auto cnt = static_cast<double>(n);
    m.syntax_loss = loss_sum / cnt;
    m.trainable_fraction = model.trainable_fraction();
    m.gen_macs = static_cast<double>(gen_macs) / cnt;
    m.route_macs = static_cast<double>(route_macs) / cnt;
    if (opt.timing) {
        m.latency_ms = 1e3 * gen_s / cnt;
        m.route_overhead_ms = 1e3 * route_s / cnt;
    }
    if (predictions != nullptr) *predictions = std::move(preds);
    return m;
}

std::string metrics_csv_header() {
    std::string h = "split,charts,success_rate,mean_iou,parse_rate";
    for (auto t : kChartTypes) h += ",success_" + std::string(to_string(t));
    for (auto t : kChartTypes) h += ",charts_" + std::string(to_string(t));
    h += ",syntax_loss,trainable_fraction,gen_macs_per_chart,route_macs_per_chart";
    return h;
}

std::string metrics_csv_row(const EvalMetrics& m) {
    std::string r = m.split + "," + std::to_string(m.charts) + "," + fixed(m.success_rate) + "," + fixed(m.mean_iou) +
                    "," + fixed(m.parse_rate);
    for (double v : m.type_success) r += "," + fixed(v);
    for (std::size_t c : m.type_charts) r += "," + std::to_string(c);
    r += "," + fixed(m.syntax_loss) + "," + fixed(m.trainable_fraction) + "," + fixed(m.gen_macs, 1) + "," +
         fixed(m.route_macs, 1);
    return r;
}

std::string metrics_timing_csv(const EvalMetrics& m) {
    return "split,latency_ms_per_chart,route_overhead_ms_per_chart\n" + m.split + "," + fixed(m.latency_ms, 3) + "," +
           fixed(m.route_overhead_ms, 3) + "\n";
}

std::string validate_metrics_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != metrics_csv_header()) return "header does not match the metrics schema";
    const auto split_fields = [](const std::string& l) {
        std::vector<std::string> f;
        std::stringstream ss(l);
        std::string x;
        while (std::getline(ss, x, ',')) f.push_back(x);
        return f;
    };
    const std::size_t width = split_fields(metrics_csv_header()).size();
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        const auto f = split_fields(line);
        if (f.size() != width) return "row " + std::to_string(rows) + " has " + std::to_string(f.size()) + " fields";
        if (f[0].empty()) return "row " + std::to_string(rows) + " has no split name";
        try {
            if (std::stoll(f[1]) <= 0) return "row " + std::to_string(rows) + " has no charts";
            for (std::size_t i = 2; i < 10; ++i) {
                const double v = std::stod(f[i]);
                if (!(v >= 0.0 && v <= 1.0)) return "row " + std::to_string(rows) + ": rate outside [0, 1]";
            }
            for (std::size_t i = 10; i < width; ++i) {
                const double v = std::stod(f[i]);
                if (!std::isfinite(v) || (i < 16 && v < 0.0)) return "row " + std::to_string(rows) + ": bad value";
            }
        } catch (const std::exception&) {
            return "row " + std::to_string(rows) + " has a non-numeric field";
        }
    }
    if (rows == 0) return "no metrics rows";
    return "";
}

// ------------------------------------------------------------ training

double probe_loss(const Model& model, const std::vector<Sample>& samples) {
    require(!samples.empty(), "probe_loss: no samples");
    NoGradGuard ng;
    double s = 0.0;
    for (const auto& x : samples) {
        const auto p = model.prepare(x.raster, x.spec.type);
        s += syntax_loss(model.decoder.forward_teacher_forced(p.memory, x.program.tokens, false, nullptr),
                         x.program.tokens)
                 .item();
    }
    return s / static_cast<double>(samples.size());
}

namespace {

nlohmann::json metrics_json(const EvalMetrics& m) {
    nlohmann::json types = nlohmann::json::object();
    for (std::size_t t = 0; t < kChartTypeCount; ++t) types[std::string(to_string(kChartTypes[t]))] = m.type_success[t];
    return {{"split", m.split},
            {"charts", m.charts},
            {"success_rate", m.success_rate},
            {"mean_iou", m.mean_iou},
            {"parse_rate", m.parse_rate},
            {"type_success", types},
            {"syntax_loss", m.syntax_loss},
            {"trainable_fraction", m.trainable_fraction},
            {"gen_macs_per_chart", m.gen_macs},
            {"route_macs_per_chart", m.route_macs}};
}

class RunLog {
public:
    explicit RunLog(const std::string& dir) {
        if (dir.empty()) return;
        f_.open(fs::path(dir) / "run_log.jsonl", std::ios::binary | std::ios::trunc);
        if (!f_) throw std::runtime_error("cannot write run log under " + dir);
    }
    void append(const nlohmann::json& j) {
        if (!f_.is_open()) return;
        f_ << j.dump() << '\n';
        f_.flush();
        if (!f_) throw std::runtime_error("run log write failed");
    }

private:
    std::ofstream f_;
};

std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
}

}  // namespace

std::string report_to_json(const TrainReport& r) {
    nlohmann::json j;
    j["steps"] = r.steps;
    j["epochs_completed"] = r.epochs_completed;
    j["stopped_early"] = r.stopped_early;
    j["initial_probe_loss"] = r.initial_probe_loss;
    j["final_probe_loss"] = r.final_probe_loss;
    j["utilization"] = r.utilization;
    j["utilization_std"] = r.utilization_std;
    j["utilization_max"] = r.utilization_max;
    j["train_macs"] = r.train_macs;
    j["peak_activation_scalars"] = r.peak_activation;
    j["param_scalars"] = r.param_scalars;
    j["trainable_scalars"] = r.trainable_scalars;
    j["optimizer_scalars"] = r.optimizer_scalars;
    j["memory_proxy"] = r.memory_proxy();
    j["evals"] = nlohmann::json::array();
    for (const auto& e : r.evals) {
        j["evals"].push_back({{"step", e.step}, {"epoch", e.epoch}, {"metrics", metrics_json(e.metrics)}});
    }
    return j.dump(2) + "\n";
}

TrainResult train(const RunConfig& cfg, const DatasetSplits& data, const TrainOptions& opt) {
    validate(cfg);
    require(!data.train.empty(), "train: the training split is empty");
    require(!data.val.empty(), "train: the validation split is empty");
    const auto wall0 = Clock::now();
    auto say = [&opt](const std::string& s) {
        if (opt.progress) opt.progress(s);
    };
    if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);

    TrainResult res;
    res.model = std::make_unique<Model>(cfg.model_config());
    Model& model = *res.model;
    TrainReport& rep = res.report;
    RunLog log(opt.out_dir);

    const Rng root(cfg.seed);
    std::vector<Tensor> params = model.params().trainable();
    std::vector<std::string> names;
    for (const auto& p : model.params().all()) {
        if (p.tensor.requires_grad()) names.push_back(p.name);
    }
    AdamWConfig ac;
    ac.weight_decay = cfg.weight_decay;
    OptimizerState state = OptimizerState::for_params(params, ac);

    const std::size_t n_train = data.train.size();
    const auto batch = static_cast<std::size_t>(cfg.batch);
    const int per_epoch = static_cast<int>((n_train + batch - 1) / batch);
    const int planned = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * per_epoch;
    LRSchedule sched{cfg.lr, cfg.lr_min, static_cast<std::uint64_t>(cfg.t_max > 0 ? cfg.t_max : std::max(planned, 1))};
    const LossWeights weights{cfg.lambda2, cfg.lambda3, cfg.lambda_load, cfg.lambda_frob, cfg.lambda_count};
    UtilizationTracker tracker(static_cast<std::size_t>(cfg.experts), cfg.util_window);

    const std::vector<Sample> probe(data.train.begin(),
                                    data.train.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.probe_count, n_train)));
    rep.initial_probe_loss = probe_loss(model, probe);
    const EvalOptions eval_opt{cfg.tau, "val", false, cfg.eval_count};

    EvalMetrics best;
    int bad_evals = 0;
    int last_eval_step = -1;
    auto run_eval = [&](int step, int epoch) {
        EvalRecord rec{step, epoch, evaluate(model, data.val, eval_opt)};
        last_eval_step = step;
        log.append({{"event", "eval"}, {"step", step}, {"epoch", epoch}, {"metrics", metrics_json(rec.metrics)}});
        say("eval step " + std::to_string(step) + ": success " + fixed(rec.metrics.success_rate, 3) + ", parse " +
            fixed(rec.metrics.parse_rate, 3) + ", val loss " + fixed(rec.metrics.syntax_loss, 4));
        const bool first = rep.evals.empty();
        const bool improved = first || rec.metrics.success_rate > best.success_rate ||
                              (rec.metrics.success_rate == best.success_rate &&
                               rec.metrics.syntax_loss < best.syntax_loss);
        rep.evals.push_back(rec);
        if (improved) {
            best = rec.metrics;
            bad_evals = 0;
        } else {
            ++bad_evals;
        }
        return !first && cfg.patience > 0 && bad_evals >= cfg.patience;
    };
    run_eval(0, 0);

    auto& stats = compute_stats();
    reset_peak();
    const std::uint64_t macs0 = stats.macs;
    double last_semantic = 0.0;
    int step = 0;
    bool stop = false;
    for (int epoch = 0; step < planned && !stop; ++epoch) {
        const auto order = permutation(n_train, root.split("shuffle").split(static_cast<std::uint64_t>(epoch)));
        for (std::size_t b0 = 0; b0 < n_train && step < planned && !stop; b0 += batch) {
            const std::size_t b1 = std::min(n_train, b0 + batch);
            Rng aug_rng = root.split("augment").split(static_cast<std::uint64_t>(step));
            Rng step_rng = root.split("step").split(static_cast<std::uint64_t>(step));
            std::vector<const Sample*> picked;
            std::vector<Raster> inputs;
            for (std::size_t i = b0; i < b1; ++i) {
                const Sample& s = data.train[order[i]];
                picked.push_back(&s);
                inputs.push_back(aug_rng.uniform() < cfg.aug_prob ? augment_image(s.raster, aug_rng) : s.raster);
            }

            if (cfg.semantic_every > 0 && step % cfg.semantic_every == 0) {
                std::vector<std::pair<Raster, DSLProgram>> pairs;
                for (const Sample* s : picked) pairs.emplace_back(s->raster, model.generate(s->raster, s->spec.type));
                last_semantic = semantic_penalty(pairs, cfg.tau);
            }

            std::vector<ChartInput> in;
            for (std::size_t j = 0; j < picked.size(); ++j) {
                in.push_back(ChartInput{&inputs[j], picked[j]->spec.type,
                                        static_cast<int>(picked[j]->spec.element_count()), &picked[j]->program.tokens});
            }
            const BatchOutput out = model.forward(in, true, &step_rng);
            const double inv = 1.0 / static_cast<double>(in.size());

            LossParts parts;
            parts.semantic_mode = cfg.semantic;
            parts.semantic_penalty = last_semantic;
            std::vector<Tensor> syn, cnt;
            for (std::size_t j = 0; j < in.size(); ++j) {
                syn.push_back(syntax_loss(out.logits[j], *in[j].target));
                cnt.push_back(square(add_const(out.count_pred[j], -static_cast<double>(*in[j].element_count))));
            }
            parts.syntax = scale(sum(concat_rows(syn)), inv);
            parts.count = scale(sum(concat_rows(cnt)), inv);
            for (const auto& mo : out.moe) {
                const Tensor kl = cfg.kl_on_reweighted ? router_kl_loss(mo.reweighted, mo.log_reweighted)
                                                       : router_kl_loss(mo.probs, mo.log_probs);
                const Tensor ld = load_balance_loss(mo.probs, cfg.load_per_token);
                parts.router_kl = parts.router_kl.defined() ? add(parts.router_kl, kl) : kl;
                parts.load = parts.load.defined() ? add(parts.load, ld) : ld;
            }
            if (!out.moe.empty()) {
                for (std::size_t j = 0; j < in.size(); ++j) tracker.record(out.moe[0].load[j], in[j].type);
            }
            tracker.end_step();
            parts.util = utilization_regularizer(tracker.utilization(), cfg.lambda1);
            if (!model.adapters().empty()) parts.frobenius = frobenius_penalty(model.adapters(), 1.0);

            const LossBreakdown lb = compose_loss(parts, weights);
            Gradients grads = backward(lb.objective);
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (const auto* g = grads.find(params[i])) {
                    for (double v : *g) {
                        if (!std::isfinite(v)) throw NumericalError("non-finite gradient for parameter " + names[i]);
                    }
                }
            }
            clip_gradients(grads, cfg.clip);
            const double lr = cosine_lr(static_cast<std::uint64_t>(step), sched);
            adamw_step(params, grads, state, lr);

            log.append({{"event", "step"},
                        {"step", step},
                        {"epoch", epoch},
                        {"lr", lr},
                        {"loss",
                         {{"syntax", lb.syntax},
                          {"semantic", lb.semantic},
                          {"router_kl", lb.router_kl},
                          {"load", lb.load},
                          {"util", lb.util},
                          {"frobenius", lb.frobenius},
                          {"count", lb.count},
                          {"total", lb.total}}},
                        {"weights",
                         {{"lambda2", weights.lambda2},
                          {"lambda3", weights.lambda3},
                          {"lambda_load", weights.lambda_load},
                          {"lambda_frob", weights.lambda_frob},
                          {"lambda_count", weights.lambda_count}}},
                        {"utilization", tracker.utilization()}});
            ++step;
            if (step % 50 == 0) say("step " + std::to_string(step) + "/" + std::to_string(planned) + " loss " + fixed(lb.total, 4));
            if (cfg.eval_every > 0 && step % cfg.eval_every == 0) stop = run_eval(step, epoch);
            if (b1 == n_train) {
                rep.epochs_completed = epoch + 1;
                if (cfg.eval_every == 0 && !stop) stop = run_eval(step, epoch + 1);
            }
        }
    }
    if (last_eval_step != step) run_eval(step, rep.epochs_completed);
    rep.stopped_early = stop;
    rep.steps = step;
    rep.train_macs = stats.macs - macs0;
    rep.peak_activation = static_cast<std::size_t>(std::max<std::int64_t>(0, stats.peak_scalars));
    rep.final_probe_loss = probe_loss(model, probe);
    rep.utilization = tracker.utilization();
    rep.utilization_std = utilization_std(rep.utilization);
    rep.utilization_max = utilization_max(rep.utilization);
    rep.param_scalars = model.params().total_scalars();
    rep.trainable_scalars = model.params().trainable_scalars();
    rep.optimizer_scalars = state.scalar_count();
    rep.heatmap_csv = tracker.heatmap_csv();
    rep.wall_seconds = seconds_since(wall0);

    if (!opt.out_dir.empty()) {
        const fs::path dir(opt.out_dir);
        const std::string cfg_text = config_to_text(cfg);
        write_text(dir / "config.txt", cfg_text);
        write_text(dir / "report.json", report_to_json(rep));
        write_text(dir / "heatmap.csv", rep.heatmap_csv);
        save_checkpoint((dir / "model.ckpt").string(), model, cfg_text);
        if (!model.adapters().empty()) save_adapters((dir / "adapters.lora").string(), model);
        nlohmann::json t;
        t["wall_seconds"] = rep.wall_seconds;
        t["seconds_per_step"] = step > 0 ? rep.wall_seconds / step : 0.0;
        write_text(dir / "timing.json", t.dump(2) + "\n");
    }
    return res;
}

// ------------------------------------------------------------ ablation

void validate(const AblationGrid& g) {
    auto within = [](const auto& values, std::initializer_list<std::decay_t<decltype(values[0])>> allowed,
                     const char* axis) {
        for (const auto& v : values) {
            require(std::find(allowed.begin(), allowed.end(), v) != allowed.end(),
                    std::string("ablation: value outside the allowed set for ") + axis);
        }
    };
    within(g.experts, {4, 8, 12}, "experts");
    within(g.capacity, {16, 32, 64}, "capacity");
    within(g.routing, {RoutingStrategy::topk, RoutingStrategy::probabilistic}, "routing");
    within(g.rank, {4, 8, 16}, "rank");
    within(g.alpha, {16.0, 32.0, 64.0}, "alpha");
    within(g.targets, {TargetPreset::attn, TargetPreset::out, TargetPreset::attn_out}, "targets");
}

std::vector<AblationCell> expand_grid(const RunConfig& base, const AblationGrid& g) {
    validate(g);
    std::vector<AblationCell> cells;
    for (int e : g.experts) {
        for (int c : g.capacity) {
            for (auto r : g.routing) {
                AblationCell cell{"moe-e" + std::to_string(e) + "-c" + std::to_string(c) + "-" + std::string(to_string(r)),
                                  "moe", base};
                cell.config.experts = e;
                cell.config.capacity = c;
                cell.config.routing = r;
                cells.push_back(cell);
            }
        }
    }
    for (int r : g.rank) {
        for (double a : g.alpha) {
            for (auto t : g.targets) {
                AblationCell cell{"lora-r" + std::to_string(r) + "-a" + std::to_string(static_cast<int>(a)) + "-" +
                                      std::string(to_string(t)),
                                  "lora", base};
                cell.config.rank = r;
                cell.config.alpha = a;
                cell.config.targets = t;
                cells.push_back(cell);
            }
        }
    }
    return cells;
}

double utilization_balance(const std::vector<double>& u) {
    if (u.size() < 2) return 1.0;
    const double total = std::accumulate(u.begin(), u.end(), 0.0);
    if (total == 0.0) return 0.0;
    const double n = static_cast<double>(u.size());
    const double std_max = std::sqrt(n - 1.0) / n;
    return 1.0 - utilization_std(u) / std_max;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const DatasetSplits& data, int jobs,
                                      const std::function<void(const std::string&)>& progress) {
    require(jobs >= 1, "ablation: jobs must be positive");
    std::vector<AblationRow> rows(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex say_mu;
    auto say = [&](const std::string& s) {
        if (!progress) return;
        std::lock_guard<std::mutex> lk(say_mu);
        progress(s);
    };
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            AblationRow& row = rows[i];
            row.cell = cells[i];
            try {
                const auto t0 = Clock::now();
                TrainResult tr = train(cells[i].config, data);
                row.report = std::move(tr.report);
                row.metrics = evaluate(*tr.model, data.test, EvalOptions{cells[i].config.tau, "test", true, 0});
                row.report.wall_seconds = seconds_since(t0);
                row.total_params = tr.model->params().total_scalars();
                row.trainable_params = tr.model->params().trainable_scalars();
                row.adapter_params = tr.model->adapter_scalars();
                row.utilization_balance = utilization_balance(row.report.utilization);
                say(row.cell.id + ": success " + fixed(row.metrics.success_rate, 3));
            } catch (const std::exception& e) {
                row.status = std::string("failed: ") + e.what();
                std::replace(row.status.begin(), row.status.end(), ',', ';');
                std::replace(row.status.begin(), row.status.end(), '\n', ' ');
                say(row.cell.id + ": " + row.status);
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out =
        "cell,subgrid,experts,capacity,routing,rank,alpha,targets,status,accuracy,mean_iou,parse_rate,"
        "memory_proxy_scalars,train_time_macs,route_overhead_macs,utilization_balance,total_params,"
        "trainable_params,adapter_params\n";
    for (const auto& r : rows) {
        const RunConfig& c = r.cell.config;
        out += r.cell.id + "," + r.cell.subgrid + "," + std::to_string(c.experts) + "," + std::to_string(c.capacity) +
               "," + std::string(to_string(c.routing)) + "," + std::to_string(c.rank) + "," + fixed(c.alpha, 0) + "," +
               std::string(to_string(c.targets)) + "," + r.status;
        if (r.status == "ok") {
            out += "," + fixed(r.metrics.success_rate) + "," + fixed(r.metrics.mean_iou) + "," +
                   fixed(r.metrics.parse_rate) + "," + std::to_string(r.report.memory_proxy()) + "," +
                   std::to_string(r.report.train_macs) + "," + fixed(r.metrics.route_macs, 1) + "," +
                   fixed(r.utilization_balance) + "," + std::to_string(r.total_params) + "," +
                   std::to_string(r.trainable_params) + "," + std::to_string(r.adapter_params);
        } else {
            out += ",,,,,,,,,,";
        }
        out += "\n";
    }
    return out;
}

std::string ablation_timing_csv(const std::vector<AblationRow>& rows) {
    std::string out = "cell,train_seconds,latency_ms_per_chart,route_overhead_ms_per_chart\n";
    for (const auto& r : rows) {
        out += r.cell.id + "," + fixed(r.report.wall_seconds, 3) + "," + fixed(r.metrics.latency_ms, 3) + "," +
               fixed(r.metrics.route_overhead_ms, 3) + "\n";
    }
    return out;
}

// ------------------------------------------------------------ report

std::string render_report(const std::string& run_dir) {
    const fs::path dir(run_dir);
    std::ifstream logf(dir / "run_log.jsonl");
    require(static_cast<bool>(logf), "report: no run_log.jsonl in " + run_dir);
    std::vector<nlohmann::json> steps, evals;
    std::string line;
    while (std::getline(logf, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        (j.at("event") == "eval" ? evals : steps).push_back(std::move(j));
    }

    std::ostringstream md;
    md << "# Training run summary\n\n";
    md << "Run directory: `" << dir.filename().string() << "`, " << steps.size() << " optimizer steps.\n\n";
    md << "## Evaluations\n\n| step | epoch | success | mean IoU | parse rate | val syntax loss |\n"
          "|---:|---:|---:|---:|---:|---:|\n";
    for (const auto& e : evals) {
        const auto& m = e.at("metrics");
        md << "| " << e.at("step").get<int>() << " | " << e.at("epoch").get<int>() << " | "
           << fixed(m.at("success_rate").get<double>(), 3) << " | " << fixed(m.at("mean_iou").get<double>(), 3)
           << " | " << fixed(m.at("parse_rate").get<double>(), 3) << " | "
           << fixed(m.at("syntax_loss").get<double>(), 4) << " |\n";
    }

    md << "\n## Loss curve\n\nMean of each window of steps.\n\n```\n";
    if (!steps.empty()) {
        const std::size_t buckets = std::min<std::size_t>(30, steps.size());
        std::vector<double> tot(buckets, 0.0), syn(buckets, 0.0);
        std::vector<std::size_t> cnt(buckets, 0);
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const std::size_t b = i * buckets / steps.size();
            tot[b] += steps[i]["loss"]["total"].get<double>();
            syn[b] += steps[i]["loss"]["syntax"].get<double>();
            ++cnt[b];
        }
        double hi = 0.0;
        for (std::size_t b = 0; b < buckets; ++b) {
            tot[b] /= static_cast<double>(cnt[b]);
            syn[b] /= static_cast<double>(cnt[b]);
            hi = std::max(hi, tot[b]);
        }
        std::size_t first = 0;
        for (std::size_t b = 0; b < buckets; ++b) {
            char head[64];
            std::snprintf(head, sizeof head, "step %6zu  total %8.4f  syntax %8.4f  ", first, tot[b], syn[b]);
            const int bar = hi > 0.0 ? static_cast<int>(std::lround(40.0 * tot[b] / hi)) : 0;
            md << head << std::string(static_cast<std::size_t>(bar), '#') << "\n";
            first += cnt[b];
        }
    }
    md << "```\n";

    std::ifstream hm(dir / "heatmap.csv");
    if (hm) {
        md << "\n## Expert utilization by chart type\n\n";
        std::string row;
        bool header = true;
        while (std::getline(hm, row)) {
            if (row.empty()) continue;
            std::string cells = "| " + row + " |";
            std::size_t pos = 0;
            while ((pos = cells.find(',', pos)) != std::string::npos) cells.replace(pos, 1, " | ");
            md << cells << "\n";
            if (header) {
                const auto cols = static_cast<std::size_t>(std::count(row.begin(), row.end(), ',')) + 1;
                md << "|";
                for (std::size_t c = 0; c < cols; ++c) md << "---|";
                md << "\n";
                header = false;
            }
        }
    }
    return md.str();
}

}  // namespace c2d
