// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic chart substrate: chart specifications, the chart DSL, a
// deterministic rasterizer, mask IoU and success rate, and image augmentation.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "c2d/rng.hpp"

namespace c2d {

enum class ChartType : std::uint8_t { bar = 0, line, scatter, pie, complex };
inline constexpr std::size_t kChartTypeCount = 5;
inline constexpr std::array<ChartType, kChartTypeCount> kChartTypes{ChartType::bar, ChartType::line,
                                                                    ChartType::scatter, ChartType::pie,
                                                                    ChartType::complex};
std::string_view to_string(ChartType t);
std::optional<ChartType> parse_chart_type(std::string_view s);

/// How one series is drawn.
enum class Mark : std::uint8_t { bar = 0, line, scatter, pie };
std::string_view to_string(Mark m);
std::optional<Mark> parse_mark(std::string_view s);

inline constexpr int kValueBins = 64;
inline constexpr int kCategories = 16;
inline constexpr int kColors = 8;
inline constexpr std::size_t kMaxElements = 16;

/// Real value carried by a quantized bin: (bin + 1) / 64, always in (0, 1].
double bin_value(int bin);

struct Element {
    std::vector<int> values;  // value bins; scatter carries (x, y)
    int category = 0;
    int color = 0;
    bool operator==(const Element&) const = default;
};

struct Series {
    Mark mark = Mark::bar;
    std::vector<Element> elements;
    bool operator==(const Series&) const = default;
};

struct ChartSpec {
    ChartType type = ChartType::bar;
    std::vector<Series> series;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t element_count() const;
    /// Equality of drawn content; ignores the seed.
    [[nodiscard]] bool same_content(const ChartSpec& other) const;
};

/// Empty string when valid, otherwise the first broken invariant.
std::string validate(const ChartSpec& spec);

/// Per-type sampling weights in ChartType order; must sum to 1.
using TypeMix = std::array<double, kChartTypeCount>;
/// Training-set ratios per type (bar, line, scatter, pie, complex), normalized.
TypeMix default_type_mix();

struct ElementRange {
    int lo;
    int hi;
};
/// Inclusive element-count range drawn for each type. For `complex` the
/// range applies per series (two series).
ElementRange element_range(ChartType t);

ChartSpec sample_spec(Rng& rng, const TypeMix& mix, int width = 64, int height = 64);

// ------------------------------------------------------------------ DSL

namespace tok {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int figure = 2;
inline constexpr int end = 3;
inline constexpr int series = 4;
inline constexpr int kw_bar = 5;
inline constexpr int kw_line = 6;
inline constexpr int kw_scatter = 7;
inline constexpr int kw_pie = 8;
inline constexpr int kw_complex = 9;
inline constexpr int value0 = 10;
inline constexpr int category0 = value0 + kValueBins;
inline constexpr int color0 = category0 + kCategories;
inline constexpr int vocab_size = color0 + kColors;
}  // namespace tok

std::string token_name(int id);

struct DSLProgram {
    std::vector<int> tokens;
    bool operator==(const DSLProgram&) const = default;
};

/// Canonical program: series ordered by mark, elements by category.
DSLProgram emit_code(const ChartSpec& spec);

struct ParseResult {
    std::optional<ChartSpec> spec;
    std::string error;
    [[nodiscard]] bool ok() const { return spec.has_value(); }
};
/// Parses a token sequence (no BOS, must end with `end`). Never throws.
ParseResult parse_program(const DSLProgram& program, int width = 64, int height = 64);

std::string program_to_text(const DSLProgram& program);

// ------------------------------------------------------------------ raster

struct Rgb {
    std::uint8_t r = 255;
    std::uint8_t g = 255;
    std::uint8_t b = 255;
    bool operator==(const Rgb&) const = default;
};
inline constexpr Rgb kBackground{255, 255, 255};
Rgb palette(int color);

struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> mask;  // 1 where ink was drawn
    std::vector<std::uint8_t> rgb;   // interleaved, 3 bytes per pixel

    Raster() = default;
    Raster(int w, int h);
    [[nodiscard]] bool ink(int x, int y) const { return mask[static_cast<std::size_t>(y * width + x)] != 0; }
    [[nodiscard]] std::size_t ink_count() const;
    void paint(int x, int y, Rgb c);
    void clear_to_background(int x, int y);
    bool operator==(const Raster&) const = default;
};

/// Renders a valid spec; throws ContractViolation for an invalid one.
Raster rasterize(const ChartSpec& spec);

struct ExecResult {
    std::optional<Raster> raster;
    std::string error;
    [[nodiscard]] bool ok() const { return raster.has_value(); }
};
/// parse + rasterize; any failure is reported in the result, never thrown.
ExecResult execute(const DSLProgram& program, int width = 64, int height = 64);

/// |a & b| / |a | b| over ink masks; two empty masks give 1.
double iou(const Raster& a, const Raster& b);

/// Fraction of (input raster, generated program) pairs that execute and
/// reach IoU >= tau. tau must lie in [0.75, 0.90].
double success_rate(const std::vector<std::pair<Raster, DSLProgram>>& pairs, double tau);

struct AugmentParams {
    double angle_deg = 0.0;
    std::array<double, 3> jitter{1.0, 1.0, 1.0};
};
inline constexpr double kMaxRotationDeg = 15.0;
inline constexpr double kMaxJitter = 0.10;
AugmentParams sample_augment(Rng& rng);
/// Rotation about the image centre (nearest neighbour on the mask, bilinear
/// on colour, background fill) followed by per-channel colour scaling.
Raster augment_image(const Raster& r, const AugmentParams& params);
Raster augment_image(const Raster& r, Rng& rng);

}  // namespace c2d
