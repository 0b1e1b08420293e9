// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "c2d/errors.hpp"
#include "c2d/training.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace c2d;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
    RunConfig c;
    c.data_count = 60;
    c.data_seed = 5;
    c.epochs = 1;
    c.batch = 4;
    c.lr = 1e-3;
    c.d = 16;
    c.heads = 2;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.ffn = 32;
    c.experts = 4;
    c.capacity = 16;
    c.expert_hidden = 16;
    c.max_len = 40;
    c.eval_count = 6;
    c.probe_count = 4;
    c.semantic_every = 5;
    return c;
}

const DatasetSplits& tiny_data() {
    static const DatasetSplits d = load_data(tiny_run());
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

// ------------------------------------------------------------ losses

TEST_CASE("utilization regularizer examples") {
    CHECK(utilization_regularizer({0.25, 0.25, 0.25, 0.25}, 0.5) == 0.0);
    CHECK(std::abs(utilization_regularizer({1.0, 0.0}, 0.5) - 0.25) < 1e-12);
    CHECK(std::abs(utilization_regularizer({0.4, 0.3, 0.2, 0.1}, 0.5) - 0.025) < 1e-12);
    CHECK(utilization_regularizer({0.0, 0.0, 0.0}, 0.5) == 0.0);
    CHECK_THROWS_AS(utilization_regularizer({0.5, 0.2}, 0.5), ContractViolation);
}

TEST_CASE("semantic penalty examples") {
    CHECK(semantic_penalty(std::vector<double>{1.0, 1.0, 1.0}, 0.85) == 0.0);
    CHECK(std::abs(semantic_penalty(std::vector<double>{0.0, 0.0}, 0.85) - 0.85) < 1e-12);
    CHECK(std::abs(semantic_penalty(std::vector<double>{0.9, 0.5}, 0.85) - 0.175) < 1e-12);
    CHECK_THROWS_AS(semantic_penalty(std::vector<double>{0.5}, 0.95), ContractViolation);

    const auto& s = tiny_data().train;
    std::vector<std::pair<Raster, DSLProgram>> exact{{s[0].raster, s[0].program}, {s[1].raster, s[1].program}};
    CHECK(semantic_penalty(exact, 0.85) == 0.0);
    std::vector<std::pair<Raster, DSLProgram>> broken{{s[0].raster, DSLProgram{}}};
    CHECK(std::abs(semantic_penalty(broken, 0.85) - 0.85) < 1e-12);
}

TEST_CASE("compose_loss arithmetic") {
    LossParts p;
    p.syntax = Tensor::scalar(1.0);
    p.router_kl = Tensor::scalar(0.2);
    p.util = 0.05;
    LossWeights w{0.7, 0.3, 0.0, 0.0, 0.0};
    auto b = compose_loss(p, w);
    CHECK(std::abs(b.total - 1.155) < 1e-12);
    CHECK(std::abs(b.objective.item() - 1.155) < 1e-12);

    LossParts q;
    q.syntax = Tensor::scalar(2.0);
    q.semantic_penalty = 0.3;
    q.router_kl = Tensor::scalar(0.4);
    q.load = Tensor::scalar(0.1);
    q.util = 0.02;
    q.frobenius = Tensor::scalar(5.0);
    q.count = Tensor::scalar(9.0);
    const LossWeights zero{0.0, 0.0, 0.0, 0.0, 0.0};
    CHECK(std::abs(compose_loss(q, zero).total - 2.3) < 1e-12);

    const LossWeights dw{};
    b = compose_loss(q, dw);
    const double want = 2.0 + 0.3 + 0.7 * 0.4 + 0.3 * 0.02 + 1.0 * 0.1 + 1e-4 * 5.0 + 0.01 * 9.0;
    CHECK(std::abs(b.total - want) < 1e-10);
    CHECK(std::abs(b.objective.item() - want) < 1e-10);

    q.semantic_mode = SemanticMode::scaled_ce;
    b = compose_loss(q, dw);
    CHECK(std::abs(b.semantic - 0.6) < 1e-12);
    CHECK(std::abs(b.total - (want + 0.3)) < 1e-10);
    CHECK(std::abs(b.objective.item() - b.total) < 1e-10);
}

TEST_CASE("compose_loss names the first non-finite component") {
    LossParts p;
    p.syntax = Tensor::scalar(1.0);
    p.load = Tensor::scalar(std::nan(""));
    try {
        (void)compose_loss(p, LossWeights{});
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("load") != std::string::npos);
    }
    p.load = Tensor::scalar(0.0);
    p.util = INFINITY;
    CHECK_THROWS_WITH_AS((void)compose_loss(p, LossWeights{}), doctest::Contains("util"), NumericalError);
}

TEST_CASE("compose_loss gradient is the weighted sum of component gradients") {
    Rng rng(3);
    auto theta = c2d::testing::random_tensor(3, 4, rng, 1.0, true);
    auto parts = [&](SemanticMode mode) {
        LossParts p;
        p.syntax = sum(square(theta));
        p.router_kl = sum(theta);
        p.load = sum(mul(theta, square(theta)));
        p.frobenius = sum(square(square(theta)));
        p.count = square(sum(theta));
        p.util = 0.07;
        p.semantic_penalty = 0.2;
        p.semantic_mode = mode;
        return p;
    };
    const LossWeights w{0.7, 0.3, 1.0, 0.5, 0.01};
    for (auto mode : {SemanticMode::log_only, SemanticMode::scaled_ce}) {
        auto rep = c2d::testing::fd_check([&] { return compose_loss(parts(mode), w).objective; }, {theta});
        CHECK_MESSAGE(rep.failures == 0, rep.first_failure);

        const auto g = backward(compose_loss(parts(mode), w).objective);
        const double ks = mode == SemanticMode::scaled_ce ? 1.2 : 1.0;
        const double k[] = {ks, w.lambda2, w.lambda_load, w.lambda_frob, w.lambda_count};
        std::vector<double> want(theta.size(), 0.0);
        for (int i = 0; i < 5; ++i) {
            const auto q = parts(mode);
            const Tensor sel[] = {q.syntax, q.router_kl, q.load, q.frobenius, q.count};
            const auto gi = backward(sel[i]);
            for (std::size_t j = 0; j < want.size(); ++j) want[j] += k[i] * gi.of(theta)[j];
        }
        for (std::size_t j = 0; j < want.size(); ++j) CHECK(std::abs(g.of(theta)[j] - want[j]) < 1e-10);
    }
}

// ------------------------------------------------------------ config

TEST_CASE("config: defaults, parsing, overrides and validation") {
    const RunConfig d;
    CHECK(d.batch == 4);
    CHECK(d.lr == 1e-4);
    CHECK(d.dropout == 0.1);
    CHECK(d.experts == 8);
    CHECK(d.capacity == 32);
    CHECK(d.k == 2);
    CHECK(d.temperature == 1.0);
    CHECK(d.sigma == 0.01);
    CHECK(d.lambda1 == 0.5);
    CHECK(d.rank == 8);
    CHECK(d.alpha == 16.0);
    CHECK(d.targets == TargetPreset::attn_mlp);
    CHECK(d.tau == 0.85);

    const auto c = parse_config("# toy\nmoe.experts = 12\n\noptim.lr=0.003  # scaled\nmode=full_finetune\n");
    CHECK(c.experts == 12);
    CHECK(c.lr == 0.003);
    CHECK(c.mode == TrainMode::full_finetune);
    CHECK_THROWS_WITH_AS(parse_config("seed=1\nmoe.expertz=3\n"), doctest::Contains("line 2"), ContractViolation);
    CHECK_THROWS_AS(parse_config("moe.experts\n"), ContractViolation);
    CHECK_THROWS_AS(parse_config("moe.experts=eight\n"), ContractViolation);

    RunConfig o;
    apply_override(o, "lora.targets=attn+out");
    CHECK(o.targets == TargetPreset::attn_out);
    CHECK_THROWS_AS(apply_override(o, "nope=1"), ContractViolation);
    CHECK_THROWS_AS(load_config("/nonexistent/toy.cfg"), ContractViolation);

    RunConfig bad;
    bad.tau = 0.95;
    CHECK_THROWS_AS(validate(bad), ContractViolation);
    bad = RunConfig{};
    bad.experts = 1;
    CHECK_THROWS_AS(validate(bad), ContractViolation);
    bad = RunConfig{};
    bad.k = 9;
    CHECK_THROWS_AS(validate(bad), ContractViolation);
    CHECK_NOTHROW(validate(RunConfig{}));
}

TEST_CASE("config: text round trip covers every key") {
    RunConfig c = tiny_run();
    c.sigma = 0.0123;
    c.routing = RoutingStrategy::probabilistic;
    c.semantic = SemanticMode::scaled_ce;
    const auto text = config_to_text(c);
    CHECK(config_to_text(parse_config(text)) == text);
    for (const auto& k : config_keys()) CHECK(text.find(k.key + " = ") != std::string::npos);
}

// ------------------------------------------------------------ evaluation

TEST_CASE("evaluation: oracle predictions, untrained floor and metrics schema") {
    const auto& test = tiny_data().test;
    std::vector<DSLProgram> oracle;
    for (const auto& s : test) oracle.push_back(s.program);
    const auto m = score_predictions(test, oracle, 0.85, "test");
    CHECK(m.success_rate == 1.0);
    CHECK(m.mean_iou == 1.0);
    CHECK(m.parse_rate == 1.0);

    Model untrained(tiny_run().model_config());
    const auto u = evaluate(untrained, test, EvalOptions{});
    CHECK(u.success_rate < 0.05);
    CHECK(u.charts == test.size());
    CHECK(u.gen_macs > 0.0);
    CHECK(u.route_macs > 0.0);

    const std::string csv = metrics_csv_header() + "\n" + metrics_csv_row(m) + "\n" + metrics_csv_row(u) + "\n";
    CHECK(validate_metrics_csv(csv).empty());
    CHECK_FALSE(validate_metrics_csv("split,charts\n").empty());
    std::string broken = csv;
    broken.replace(broken.find(",1.000000,"), 10, ",1.500000,");
    CHECK_FALSE(validate_metrics_csv(broken).empty());
}

// ------------------------------------------------------------ training

TEST_CASE("train: zero epochs gives only the initial evaluation") {
    TempDir dir("c2d_train_zero");
    RunConfig c = tiny_run();
    c.epochs = 0;
    TrainOptions opt;
    opt.out_dir = dir.path.string();
    const auto r = train(c, tiny_data(), opt);
    CHECK(r.report.steps == 0);
    REQUIRE(r.report.evals.size() == 1);
    CHECK(r.report.evals[0].step == 0);
    for (const char* f : {"run_log.jsonl", "report.json", "config.txt", "heatmap.csv", "model.ckpt", "adapters.lora"}) {
        CHECK_MESSAGE(fs::exists(dir.path / f), f);
    }
    Model fresh(c.model_config());
    Model loaded(c.model_config());
    load_checkpoint((dir.path / "model.ckpt").string(), loaded);
    for (std::size_t i = 0; i < fresh.params().all().size(); ++i) {
        const auto& a = fresh.params().all()[i].tensor.values();
        const auto& b = loaded.params().all()[i].tensor.values();
        CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
}

TEST_CASE("train: identical seeds give byte-identical artifacts") {
    TempDir a("c2d_train_det_a");
    TempDir b("c2d_train_det_b");
    const RunConfig c = tiny_run();
    TrainOptions oa, ob;
    oa.out_dir = a.path.string();
    ob.out_dir = b.path.string();
    const auto ra = train(c, tiny_data(), oa);
    const auto rb = train(c, tiny_data(), ob);
    CHECK(ra.report.steps > 0);
    for (const char* f : {"run_log.jsonl", "report.json", "config.txt", "heatmap.csv", "model.ckpt", "adapters.lora"}) {
        CHECK_MESSAGE(slurp(a.path / f) == slurp(b.path / f), f);
    }
    CHECK(slurp(a.path / "run_log.jsonl").find("\"event\":\"step\"") != std::string::npos);

    RunConfig other = c;
    other.seed = 2;
    TempDir o("c2d_train_det_o");
    TrainOptions oo;
    oo.out_dir = o.path.string();
    (void)train(other, tiny_data(), oo);
    CHECK(slurp(a.path / "run_log.jsonl") != slurp(o.path / "run_log.jsonl"));
}

TEST_CASE("train: full finetune and lora runs agree at step 0") {
    RunConfig full = tiny_run();
    full.mode = TrainMode::full_finetune;
    full.epochs = 0;
    RunConfig lora = full;
    lora.mode = TrainMode::lora_only;
    const auto a = train(full, tiny_data());
    const auto b = train(lora, tiny_data());
    CHECK(a.report.initial_probe_loss == b.report.initial_probe_loss);
}

TEST_CASE("train: rejects invalid configs and empty splits") {
    RunConfig c = tiny_run();
    c.batch = 0;
    CHECK_THROWS_AS(train(c, tiny_data()), ContractViolation);
    DatasetSplits empty;
    CHECK_THROWS_AS(train(tiny_run(), empty), ContractViolation);
}

// ------------------------------------------------------------ ablation

TEST_CASE("ablation: grid expansion") {
    const auto cells = expand_grid(RunConfig{}, AblationGrid{});
    CHECK(cells.size() == 45);
    std::size_t moe = 0, lora = 0;
    for (const auto& c : cells) (c.subgrid == "moe" ? moe : lora) += 1;
    CHECK(moe == 18);
    CHECK(lora == 27);
    CHECK(cells.front().config.rank == 8);
    CHECK(cells.back().config.experts == 8);

    AblationGrid bad;
    bad.experts = {5};
    CHECK_THROWS_AS(expand_grid(RunConfig{}, bad), ContractViolation);

    AblationGrid only_moe;
    only_moe.rank.clear();
    CHECK(expand_grid(RunConfig{}, only_moe).size() == 18);
}

TEST_CASE("ablation: balance normalisation") {
    CHECK(utilization_balance({0.25, 0.25, 0.25, 0.25}) == doctest::Approx(1.0));
    CHECK(utilization_balance({1.0, 0.0, 0.0, 0.0}) == doctest::Approx(0.0).epsilon(1e-12));
    const double mid = utilization_balance({0.4, 0.3, 0.2, 0.1});
    CHECK(mid > 0.0);
    CHECK(mid < 1.0);
}

TEST_CASE("ablation: singleton cell matches a direct run, accounting and failures") {
    RunConfig base = tiny_run();
    base.epochs = 0;
    base.d = 32;
    AblationGrid g;
    g.experts = {4, 8};
    g.capacity = {16};
    g.routing = {RoutingStrategy::topk};
    g.rank = {4, 8, 16};
    g.alpha = {16};
    g.targets = {TargetPreset::attn};
    auto cells = expand_grid(base, g);
    REQUIRE(cells.size() == 5);

    AblationCell broken = cells[0];
    broken.id = "broken";
    broken.config.d = 15;
    cells.push_back(broken);

    const auto rows = run_ablation(cells, tiny_data(), 2);
    REQUIRE(rows.size() == 6);
    for (std::size_t i = 0; i < 5; ++i) CHECK_MESSAGE(rows[i].status == "ok", rows[i].status);
    CHECK(rows[5].status.rfind("failed: ", 0) == 0);

    const auto direct = train(cells[0].config, tiny_data());
    const auto m = evaluate(*direct.model, tiny_data().test, EvalOptions{});
    CHECK(rows[0].metrics.success_rate == m.success_rate);
    CHECK(rows[0].metrics.mean_iou == m.mean_iou);
    CHECK(rows[0].total_params == direct.model->params().total_scalars());

    CHECK(rows[1].total_params > rows[0].total_params);
    CHECK(rows[1].trainable_params > rows[0].trainable_params);
    CHECK(rows[3].adapter_params == 2 * rows[2].adapter_params);
    CHECK(rows[4].adapter_params == 2 * rows[3].adapter_params);

    const auto csv = ablation_csv(rows);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    const auto columns = std::count(line.begin(), line.end(), ',');
    int n = 0;
    while (std::getline(in, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == columns);
        ++n;
    }
    CHECK(n == 6);
    CHECK(csv.find(",,,,") != std::string::npos);
}
