// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "c2d/dataset.hpp"
#include "c2d/encoder.hpp"
#include "c2d/errors.hpp"
#include "c2d/optim.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace c2d;
using c2d::testing::fd_check;

namespace {

EncoderConfig small() {
    EncoderConfig c;
    c.d = 16;
    c.heads = 2;
    c.layers = 1;
    c.ffn = 32;
    return c;
}

Raster sample_raster(std::uint64_t seed) {
    Rng rng(seed);
    return rasterize(sample_spec(rng, default_type_mix()));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

}  // namespace

TEST_CASE("patchify: layout and scaling") {
    Raster r(64, 64);
    r.paint(9, 0, Rgb{0, 255, 51});
    auto p = patchify(r, 8);
    CHECK(p.rows() == 64);
    CHECK(p.cols() == 192);
    // pixel (9, 0) is the second pixel of patch 1
    CHECK(p.at(1, 3) == 1.0);
    CHECK(p.at(1, 4) == 0.0);
    CHECK(p.at(1, 5) == doctest::Approx(204.0 / 255.0));
    double other = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) other += p.values()[i];
    CHECK(other == doctest::Approx(1.0 + 204.0 / 255.0));
    CHECK_THROWS_AS(patchify(Raster(60, 60), 8), ContractViolation);
}

TEST_CASE("encode: shape contract and non-constant map") {
    Rng rng(1);
    ParamRegistry reg;
    Encoder enc(EncoderConfig{}, reg, rng);
    Raster blank(64, 64);
    Raster ink(64, 64);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) ink.paint(x, y, Rgb{0, 0, 0});
    }
    auto a = enc.encode(blank, ChartType::bar, std::nullopt, false, nullptr);
    auto b = enc.encode(ink, ChartType::bar, std::nullopt, false, nullptr);
    CHECK(a.tokens.rows() == 64);
    CHECK(a.tokens.cols() == 64);
    CHECK(max_abs_diff(a.tokens, b.tokens) > 1e-3);
    for (double v : b.tokens.values()) CHECK(std::isfinite(v));

    auto again = enc.encode(blank, ChartType::bar, std::nullopt, false, nullptr);
    CHECK(max_abs_diff(a.tokens, again.tokens) == 0.0);
    CHECK_THROWS_AS(enc.encode(Raster(32, 32), ChartType::bar, std::nullopt, false, nullptr), ContractViolation);

    EncoderConfig bad;
    bad.patch = 7;
    ParamRegistry reg2;
    CHECK_THROWS_AS(Encoder(bad, reg2, rng), ContractViolation);
}

TEST_CASE("encode: shuffling patches is not a plain row permutation") {
    Rng rng(2);
    ParamRegistry reg;
    Encoder enc(small(), reg, rng);
    const Raster r = sample_raster(3);
    // swap patch 0 with patch 63 and patch 9 with patch 54
    Raster s = r;
    auto swap_patch = [&](int a, int b) {
        const int ax = (a % 8) * 8, ay = (a / 8) * 8, bx = (b % 8) * 8, by = (b / 8) * 8;
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                for (int c = 0; c < 3; ++c) {
                    std::swap(s.rgb[static_cast<std::size_t>(((ay + y) * 64 + ax + x) * 3 + c)],
                              s.rgb[static_cast<std::size_t>(((by + y) * 64 + bx + x) * 3 + c)]);
                }
            }
        }
    };
    swap_patch(0, 63);
    swap_patch(9, 54);
    const auto a = enc.encode(r, ChartType::bar, std::nullopt, false, nullptr).tokens;
    const auto b = enc.encode(s, ChartType::bar, std::nullopt, false, nullptr).tokens;
    std::vector<std::size_t> perm(64);
    for (std::size_t i = 0; i < 64; ++i) perm[i] = i;
    std::swap(perm[0], perm[63]);
    std::swap(perm[9], perm[54]);
    const auto b_back = gather_rows(b, perm);
    CHECK(max_abs_diff(a, b_back) > 1e-6);
}

TEST_CASE("encode: gradient of a scalar head w.r.t. the patch embedding") {
    Rng rng(4);
    ParamRegistry reg;
    Encoder enc(small(), reg, rng);
    const Raster r = sample_raster(5);
    auto w = c2d::testing::random_tensor(64, 16, rng, 1.0, false);
    auto loss = [&] { return sum(mul(enc.encode(r, ChartType::line, std::nullopt, false, nullptr).tokens, w)); };
    auto rep = fd_check(loss, {enc.patch_embed.W, enc.patch_embed.b}, 1e-5, 1e-4, 1e-7, 40);
    CHECK_MESSAGE(rep.failures == 0, rep.first_failure);
    CHECK(rep.checked >= 40);
}

TEST_CASE("count head: ln 2 at init, non-negative, gradient") {
    Rng rng(6);
    ParamRegistry reg;
    Encoder enc(small(), reg, rng);
    auto head = make_count_head(reg, 16);
    const auto v = enc.encode(sample_raster(7), ChartType::pie, 4, false, nullptr);
    CHECK(head.predict(v).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(v.true_element_count == 4);

    for (double& x : head.head.W.mutable_values()) x = rng.uniform(-3.0, 3.0);
    head.head.b.mutable_values()[0] = -20.0;
    const double p = head.predict(v).item();
    CHECK(p >= 0.0);

    head.head.b.mutable_values()[0] = 0.3;
    auto rep = fd_check([&] { return head.predict(v); }, {head.head.W, head.head.b});
    CHECK_MESSAGE(rep.failures == 0, rep.first_failure);
}

TEST_CASE("count head: auxiliary training reaches MAE below 1.5 on held-out charts") {
    const auto samples = generate_samples(2000, 41, default_type_mix());
    const std::size_t n_train = 1700;
    Rng rng(8);
    ParamRegistry reg;
    EncoderConfig cfg = small();
    cfg.dropout = 0.0;
    Encoder enc(cfg, reg, rng);
    auto head = make_count_head(reg, 16);
    auto params = reg.trainable();
    auto state = OptimizerState::for_params(params);

    auto mae = [&](std::size_t lo, std::size_t hi) {
        NoGradGuard ng;
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const auto& x = samples[i];
            const double p = head.predict(enc.encode(x.raster, x.spec.type, std::nullopt, false, nullptr)).item();
            s += std::abs(p - static_cast<double>(x.spec.element_count()));
        }
        return s / static_cast<double>(hi - lo);
    };
    const double before = mae(n_train, samples.size());
    const std::size_t batch = 8;
    for (int epoch = 0; epoch < 3; ++epoch) {
        for (std::size_t b = 0; b + batch <= n_train; b += batch) {
            std::vector<Tensor> errs;
            for (std::size_t i = b; i < b + batch; ++i) {
                const auto& x = samples[i];
                auto pred = head.predict(enc.encode(x.raster, x.spec.type, std::nullopt, false, nullptr));
                errs.push_back(square(add_const(pred, -static_cast<double>(x.spec.element_count()))));
            }
            auto g = backward(scale(sum(concat_rows(errs)), 1.0 / batch));
            clip_gradients(g, 1.0);
            adamw_step(params, g, state, 3e-3);
        }
    }
    const double after = mae(n_train, samples.size());
    MESSAGE("count MAE before " << before << ", after " << after);
    CHECK(after < 1.5);
    CHECK(after < before);
}
