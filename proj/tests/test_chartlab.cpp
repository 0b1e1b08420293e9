// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "c2d/chartlab.hpp"
#include "c2d/dataset.hpp"
#include "c2d/errors.hpp"
#include "c2d/image_io.hpp"

using namespace c2d;

namespace {

DSLProgram prog(std::initializer_list<int> t) { return DSLProgram{std::vector<int>(t)}; }
int V(int b) { return tok::value0 + b; }
int C(int c) { return tok::category0 + c; }
int K(int k) { return tok::color0 + k; }

Raster filled_square(int side, int x0, int y0, int w, int h) {
    Raster r(side, side);
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
            r.paint(x, y, palette(0));
        }
    }
    return r;
}

std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// fixed programs, one per chart type; their rasters are frozen under data/
const std::vector<std::pair<std::string, DSLProgram>>& golden_programs() {
    static const std::vector<std::pair<std::string, DSLProgram>> g{
        {"bar", prog({tok::figure, tok::kw_bar, tok::series, V(40), C(0), K(0), V(12), C(1), K(0), V(63), C(2), K(0),
                      tok::end})},
        {"line", prog({tok::figure, tok::kw_line, tok::series, V(5), C(0), K(3), V(50), C(1), K(3), V(20), C(2), K(3),
                       V(33), C(3), K(3), tok::end})},
        {"scatter", prog({tok::figure, tok::kw_scatter, tok::series, V(2), V(60), C(0), K(4), V(30), V(30), C(1), K(4),
                          V(61), V(3), C(2), K(4), tok::end})},
        {"pie", prog({tok::figure, tok::kw_pie, tok::series, V(10), C(0), K(1), V(30), C(1), K(2), V(20), C(2), K(3),
                      tok::end})},
        {"complex", prog({tok::figure, tok::kw_complex, tok::series, tok::kw_bar, V(20), C(0), K(5), V(40), C(1), K(5),
                          tok::series, tok::kw_line, V(45), C(0), K(6), V(10), C(1), K(6), tok::end})},
    };
    return g;
}

}  // namespace

TEST_CASE("sample_spec honours a degenerate mix") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        CHECK(sample_spec(rng, {1, 0, 0, 0, 0}).type == ChartType::bar);
    }
}

TEST_CASE("sample_spec default mix frequencies over 10k draws") {
    Rng rng(2024);
    const auto mix = default_type_mix();
    const double target[] = {0.313, 0.268, 0.179, 0.134, 0.089};
    double total = 0;
    for (double t : target) total += t;
    std::array<int, kChartTypeCount> counts{};
    for (int i = 0; i < 10000; ++i) {
        ++counts[static_cast<std::size_t>(sample_spec(rng, mix).type)];
    }
    for (std::size_t t = 0; t < kChartTypeCount; ++t) {
        CHECK(std::abs(counts[t] / 10000.0 - target[t] / total) <= 0.02);
    }
}

TEST_CASE("sample_spec determinism, validity and element ranges") {
    const auto mix = default_type_mix();
    Rng a(99), b(99);
    for (int i = 0; i < 50; ++i) {
        const auto sa = sample_spec(a, mix);
        const auto sb = sample_spec(b, mix);
        CHECK(sa.same_content(sb));
        CHECK(sa.seed == sb.seed);
    }
    Rng rng(5);
    std::array<std::array<bool, 17>, kChartTypeCount> seen{};
    for (int i = 0; i < 4000; ++i) {
        const auto s = sample_spec(rng, mix);
        REQUIRE(validate(s).empty());
        const auto range = element_range(s.type);
        const int per = static_cast<int>(s.series[0].elements.size());
        CHECK(per >= range.lo);
        CHECK(per <= range.hi);
        seen[static_cast<std::size_t>(s.type)][static_cast<std::size_t>(per)] = true;
        if (s.type == ChartType::complex) CHECK(s.series.size() == 2);
    }
    for (auto t : kChartTypes) {
        const auto range = element_range(t);
        for (int k = range.lo; k <= range.hi; ++k) {
            CHECK_MESSAGE(seen[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)], to_string(t), " ", k);
        }
    }
    CHECK_THROWS_AS(sample_spec(rng, {0.5, 0.2, 0, 0, 0}), ContractViolation);
    CHECK_THROWS_AS(sample_spec(rng, {1.5, -0.5, 0, 0, 0}), ContractViolation);
}

TEST_CASE("validate rejects broken specs") {
    ChartSpec s{ChartType::bar, {Series{Mark::bar, {Element{{3}, 0, 1}}}}, 64, 64, 0};
    CHECK(validate(s).empty());
    auto bad = s;
    bad.series[0].elements[0].values = {3, 4};
    CHECK_FALSE(validate(bad).empty());
    bad = s;
    bad.series[0].elements.assign(17, Element{{1}, 0, 0});
    CHECK_FALSE(validate(bad).empty());
    bad = s;
    bad.type = ChartType::complex;
    CHECK_FALSE(validate(bad).empty());
    bad = s;
    bad.series[0].mark = Mark::line;
    CHECK_FALSE(validate(bad).empty());
    bad = s;
    bad.series[0].elements[0].values = {64};
    CHECK_FALSE(validate(bad).empty());
    CHECK_THROWS_AS(rasterize(bad), ContractViolation);
    CHECK_THROWS_AS(emit_code(bad), ContractViolation);
}

TEST_CASE("emit_code minimal program and canonical order") {
    ChartSpec s{ChartType::bar, {Series{Mark::bar, {Element{{9}, 0, 2}}}}, 64, 64, 11};
    CHECK(emit_code(s).tokens == std::vector<int>{tok::figure, tok::kw_bar, tok::series, V(9), C(0), K(2), tok::end});
    CHECK(program_to_text(emit_code(s)) == "figure bar series v9 c0 k2 end");

    auto t = s;
    t.seed = 12345;
    CHECK(emit_code(s) == emit_code(t));

    // element order in the spec does not matter
    ChartSpec u{ChartType::bar, {Series{Mark::bar, {Element{{1}, 1, 0}, Element{{2}, 0, 0}}}}, 64, 64, 0};
    ChartSpec w{ChartType::bar, {Series{Mark::bar, {Element{{2}, 0, 0}, Element{{1}, 1, 0}}}}, 64, 64, 0};
    CHECK(emit_code(u) == emit_code(w));
    // and neither does series order in a complex chart
    ChartSpec x{ChartType::complex,
                {Series{Mark::line, {Element{{4}, 0, 1}}}, Series{Mark::bar, {Element{{5}, 0, 2}}}}, 64, 64, 0};
    ChartSpec y = x;
    std::swap(y.series[0], y.series[1]);
    CHECK(emit_code(x) == emit_code(y));
}

TEST_CASE("canonical round trip over random specs") {
    Rng rng(31337);
    const auto mix = default_type_mix();
    double total_len = 0;
    for (int i = 0; i < 300; ++i) {
        const auto spec = sample_spec(rng, mix);
        const auto p = emit_code(spec);
        total_len += static_cast<double>(p.tokens.size());
        const auto parsed = parse_program(p);
        REQUIRE_MESSAGE(parsed.ok(), parsed.error);
        CHECK(emit_code(*parsed.spec) == p);
        const auto ref = rasterize(spec);
        const auto out = execute(p);
        REQUIRE(out.ok());
        CHECK(*out.raster == ref);
        CHECK(iou(ref, *out.raster) == 1.0);
        CHECK(ref.ink_count() > 0);
        CHECK(success_rate({{ref, p}}, 0.85) == 1.0);
    }
    MESSAGE("mean program length ", total_len / 300);
}

TEST_CASE("parse(emit(parse(p))) == parse(p) for non-canonical programs") {
    // elements out of category order still parse; re-emission sorts them
    const auto p = prog({tok::figure, tok::kw_line, tok::series, V(5), C(2), K(1), V(9), C(0), K(1), tok::end});
    const auto a = parse_program(p);
    REQUIRE(a.ok());
    const auto b = parse_program(emit_code(*a.spec));
    REQUIRE(b.ok());
    CHECK(rasterize(*a.spec) == rasterize(*b.spec));
    CHECK(emit_code(*a.spec) == emit_code(*b.spec));
}

TEST_CASE("execute is total and rejects malformed programs") {
    CHECK_FALSE(execute(DSLProgram{}).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_bar, tok::series, tok::end})).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_bar, tok::series, V(1), C(0), tok::end})).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_scatter, tok::series, V(1), C(0), K(0), tok::end})).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_bar, tok::series, V(1), C(0), K(0)})).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_bar, tok::series, V(1), C(0), K(0), tok::end, tok::end})).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_complex, tok::series, tok::kw_bar, V(1), C(0), K(0), tok::end})).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_complex, tok::series, tok::kw_pie, V(1), C(0), K(0), tok::series,
                              tok::kw_bar, V(1), C(0), K(0), tok::end}))
                    .ok());
    CHECK_FALSE(execute(prog({tok::bos, tok::figure})).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_bar, tok::series, 500, tok::end})).ok());
    CHECK_FALSE(execute(prog({tok::figure, tok::kw_bar, tok::series, -3, tok::end})).ok());

    Rng rng(1);
    int ok = 0;
    for (int i = 0; i < 3000; ++i) {
        DSLProgram p;
        const auto len = rng.below(20);
        if (i % 2 == 0) p.tokens.push_back(tok::figure);
        for (std::uint64_t k = 0; k < len; ++k) p.tokens.push_back(static_cast<int>(rng.below(tok::vocab_size + 4)) - 2);
        CHECK_NOTHROW(ok += execute(p).ok() ? 1 : 0);
    }
    // a truncated canonical program is never valid
    Rng r2(4);
    for (int i = 0; i < 50; ++i) {
        auto p = emit_code(sample_spec(r2, default_type_mix()));
        p.tokens.pop_back();
        CHECK_FALSE(execute(p).ok());
    }
}

TEST_CASE("execute is deterministic and matches the golden rasters") {
    const char* regen = std::getenv("C2D_REGEN_GOLDEN");
    for (const auto& [name, p] : golden_programs()) {
        const auto a = execute(p);
        const auto b = execute(p);
        REQUIRE_MESSAGE(a.ok(), a.error);
        CHECK(*a.raster == *b.raster);
        const std::string path = "data/golden_" + name + ".png";
        if (regen != nullptr) {
            write_png(path, *a.raster);
        }
        REQUIRE_MESSAGE(std::filesystem::exists(path), path);
        CHECK_MESSAGE(encode_png(*a.raster) == slurp(path), name);
        CHECK(read_png(path) == *a.raster);
    }
}

TEST_CASE("iou examples and properties") {
    const auto a = filled_square(32, 0, 0, 10, 10);
    const auto b = filled_square(32, 5, 0, 10, 10);
    const auto far = filled_square(32, 20, 20, 10, 10);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, far) == 0.0);
    // pixel-count oracle: overlap 10x5 = 50, union 100 + 100 - 50 = 150
    CHECK(iou(a, b) == doctest::Approx(50.0 / 150.0).epsilon(1e-15));
    CHECK(iou(a, b) == iou(b, a));
    CHECK(iou(Raster(8, 8), Raster(8, 8)) == 1.0);
    CHECK_THROWS_AS(iou(Raster(8, 8), Raster(8, 9)), ContractViolation);

    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto x = rasterize(sample_spec(rng, default_type_mix()));
        const auto y = rasterize(sample_spec(rng, default_type_mix()));
        const double v = iou(x, y);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(v == iou(y, x));
    }
}

TEST_CASE("success_rate fixtures") {
    Rng rng(8);
    std::vector<std::pair<Raster, DSLProgram>> oracle;
    for (int i = 0; i < 20; ++i) {
        const auto s = sample_spec(rng, default_type_mix());
        oracle.emplace_back(rasterize(s), emit_code(s));
    }
    CHECK(success_rate(oracle, 0.85) == 1.0);

    auto broken = oracle;
    for (auto& [r, p] : broken) p.tokens.pop_back();
    CHECK(success_rate(broken, 0.85) == 0.0);

    // 3 ground-truth programs, 4 malformed, 3 executing but visibly wrong
    const auto tall = prog({tok::figure, tok::kw_bar, tok::series, V(63), C(0), K(0), tok::end});
    const auto short_bar = prog({tok::figure, tok::kw_bar, tok::series, V(5), C(0), K(0), tok::end});
    const Raster tall_r = *execute(tall).raster;
    std::vector<std::pair<Raster, DSLProgram>> fixture;
    for (int i = 0; i < 3; ++i) fixture.emplace_back(tall_r, tall);
    for (int i = 0; i < 4; ++i) fixture.emplace_back(tall_r, prog({tok::figure, tok::kw_bar}));
    for (int i = 0; i < 3; ++i) fixture.emplace_back(tall_r, short_bar);
    CHECK(iou(tall_r, *execute(short_bar).raster) < 0.2);
    CHECK(success_rate(fixture, 0.85) == doctest::Approx(0.3).epsilon(1e-15));

    CHECK_THROWS_AS(success_rate({}, 0.85), ContractViolation);
    CHECK_THROWS_AS(success_rate(oracle, 0.5), ContractViolation);
    CHECK_THROWS_AS(success_rate(oracle, 0.95), ContractViolation);
}

TEST_CASE("augment_image identity, clamp and sampling range") {
    Rng rng(12);
    const auto r = rasterize(sample_spec(rng, default_type_mix()));
    CHECK(augment_image(r, AugmentParams{}) == r);

    Raster px(2, 2);
    px.paint(0, 0, Rgb{250, 100, 10});
    const auto j = augment_image(px, AugmentParams{0.0, {1.1, 1.1, 1.1}});
    CHECK(j.rgb[0] == 255);
    CHECK(j.rgb[1] == 110);
    CHECK(j.rgb[2] == 11);

    double lo = 1e9, hi = -1e9, jlo = 1e9, jhi = -1e9;
    for (int i = 0; i < 1000; ++i) {
        const auto p = sample_augment(rng);
        lo = std::min(lo, p.angle_deg);
        hi = std::max(hi, p.angle_deg);
        for (double v : p.jitter) {
            jlo = std::min(jlo, v);
            jhi = std::max(jhi, v);
        }
    }
    CHECK(lo >= -15.0);
    CHECK(hi <= 15.0);
    CHECK(jlo >= 0.9);
    CHECK(jhi <= 1.1);
    CHECK(hi - lo > 25.0);

    const auto rot = augment_image(r, AugmentParams{10.0, {1, 1, 1}});
    CHECK(rot.width == r.width);
    CHECK(rot.height == r.height);
    CHECK(rot.mask != r.mask);
    // a small rotation keeps most of the ink
    CHECK(iou(rot, r) > 0.3);
}

TEST_CASE("png and base64 round trips") {
    CHECK(base64_encode({'f', 'o', 'o', 'b', 'a', 'r'}) == "Zm9vYmFy");
    CHECK(base64_encode({'f', 'o'}) == "Zm8=");
    CHECK(base64_encode({'f'}) == "Zg==");
    const std::vector<std::uint8_t> raw{0, 1, 2, 250, 255, 128, 7};
    CHECK(base64_decode(base64_encode(raw)) == raw);
    CHECK_THROWS_AS(base64_decode("Zm9*"), ContractViolation);

    Rng rng(77);
    const auto r = rasterize(sample_spec(rng, default_type_mix()));
    CHECK(decode_png(encode_png(r)) == r);
    CHECK_THROWS_AS(decode_png({1, 2, 3}), ContractViolation);
    auto bytes = encode_png(r);
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(decode_png(bytes), ContractViolation);
}

TEST_CASE("stratified split sizes and per-type balance") {
    const auto samples = generate_samples(100, 3, default_type_mix());
    const auto assign = stratified_split(samples);
    std::array<std::size_t, 3> sizes{};
    std::array<std::array<std::size_t, 3>, kChartTypeCount> cell{};
    std::array<std::size_t, kChartTypeCount> by_type{};
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto k = static_cast<std::size_t>(assign[i]);
        const auto t = static_cast<std::size_t>(samples[i].spec.type);
        ++sizes[k];
        ++cell[t][k];
        ++by_type[t];
    }
    CHECK(sizes == std::array<std::size_t, 3>{70, 15, 15});
    for (std::size_t t = 0; t < kChartTypeCount; ++t) {
        for (std::size_t k = 0; k < 3; ++k) {
            const double share = by_type[t] * static_cast<double>(sizes[k]) / 100.0;
            CHECK(std::abs(static_cast<double>(cell[t][k]) - share) < 1.0);
        }
    }

    for (std::size_t n : {10u, 37u, 250u, 2000u}) {
        const auto s = generate_samples(n, 11, default_type_mix());
        const auto a = stratified_split(s);
        const auto totals = split_totals(n);
        std::array<std::size_t, 3> got{};
        for (auto k : a) ++got[static_cast<std::size_t>(k)];
        CHECK(got == totals);
    }
}

TEST_CASE("dataset files are reproducible and reload exactly") {
    const auto dir_a = std::filesystem::temp_directory_path() / "c2d_ds_a";
    const auto dir_b = std::filesystem::temp_directory_path() / "c2d_ds_b";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    const auto sa = write_dataset(dir_a.string(), 40, 5, default_type_mix());
    write_dataset(dir_b.string(), 40, 5, default_type_mix());
    CHECK(sa.split_sizes == std::array<std::size_t, 3>{28, 6, 6});
    for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "summary.json"}) {
        CHECK(slurp((dir_a / f).string()) == slurp((dir_b / f).string()));
    }
    const auto val = load_split(dir_a.string(), Split::val);
    REQUIRE(val.size() == 6);
    for (const auto& s : val) {
        CHECK(rasterize(s.spec) == s.raster);
        CHECK(emit_code(s.spec) == s.program);
    }
    CHECK_THROWS_AS(load_split((dir_a / "nope").string(), Split::train), ContractViolation);
    CHECK_THROWS_AS(write_dataset(dir_a.string(), 5, 1, default_type_mix()), ContractViolation);
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}
