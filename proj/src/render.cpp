// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Rasterizer, mask IoU, success rate and augmentation.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "c2d/chartlab.hpp"
#include "c2d/errors.hpp"

namespace c2d {

namespace {

constexpr std::array<Rgb, kColors> kPalette{{
    {31, 119, 180},
    {255, 127, 14},
    {44, 160, 44},
    {214, 39, 40},
    {148, 103, 189},
    {140, 86, 75},
    {227, 119, 194},
    {23, 190, 207},
}};

// Plot area in units of the raster side: [4/64, 60/64].
constexpr double kMarginFrac = 4.0 / 64.0;
constexpr double kPlotFrac = 56.0 / 64.0;
constexpr double kBarPad = 0.15;
constexpr double kLineHalfWidth = 1.5;
constexpr double kMarkerRadius = 2.5;
constexpr double kPieRadiusFrac = 26.0 / 64.0;

struct Frame {
    double x0, y1, pw, ph;  // left edge, baseline, plot width, plot height
    double x_of(double v) const { return x0 + v * pw; }
    double y_of(double v) const { return y1 - v * ph; }
};

Frame frame_for(const Raster& r) {
    return Frame{r.width * kMarginFrac, r.height * (kMarginFrac + kPlotFrac), r.width * kPlotFrac,
                 r.height * kPlotFrac};
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax;
    const double dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

int slot_count(const ChartSpec& spec) {
    int n = 1;
    for (const auto& s : spec.series) {
        for (const auto& e : s.elements) {
            n = std::max(n, e.category + 1);
        }
    }
    return n;
}

void draw_bars(Raster& r, const Series& s, int slots) {
    const Frame f = frame_for(r);
    const double w = f.pw / slots;
    for (const auto& e : s.elements) {
        const double left = f.x0 + (e.category + kBarPad) * w;
        const double right = f.x0 + (e.category + 1 - kBarPad) * w;
        const double top = f.y_of(bin_value(e.values[0]));
        const Rgb c = palette(e.color);
        for (int y = 0; y < r.height; ++y) {
            const double cy = y + 0.5;
            if (cy < top || cy > f.y1) {
                continue;
            }
            for (int x = 0; x < r.width; ++x) {
                const double cx = x + 0.5;
                if (cx >= left && cx < right) {
                    r.paint(x, y, c);
                }
            }
        }
    }
}

void draw_polyline(Raster& r, const std::vector<std::pair<double, double>>& pts, double half_width, Rgb c) {
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
            const double cx = x + 0.5;
            const double cy = y + 0.5;
            bool hit = false;
            if (pts.size() == 1) {
                hit = std::hypot(cx - pts[0].first, cy - pts[0].second) <= half_width;
            }
            for (std::size_t i = 1; i < pts.size() && !hit; ++i) {
                hit = segment_distance(cx, cy, pts[i - 1].first, pts[i - 1].second, pts[i].first,
                                       pts[i].second) <= half_width;
            }
            if (hit) {
                r.paint(x, y, c);
            }
        }
    }
}

void draw_line(Raster& r, const Series& s, int slots) {
    const Frame f = frame_for(r);
    const double w = f.pw / slots;
    std::vector<Element> els = s.elements;
    std::stable_sort(els.begin(), els.end(), [](const Element& a, const Element& b) { return a.category < b.category; });
    std::vector<std::pair<double, double>> pts;
    for (const auto& e : els) {
        pts.emplace_back(f.x0 + (e.category + 0.5) * w, f.y_of(bin_value(e.values[0])));
    }
    // one stroke colour per series: the first element's
    draw_polyline(r, pts, kLineHalfWidth, palette(els.front().color));
}

void draw_scatter(Raster& r, const Series& s) {
    const Frame f = frame_for(r);
    for (const auto& e : s.elements) {
        draw_polyline(r, {{f.x_of(bin_value(e.values[0])), f.y_of(bin_value(e.values[1]))}}, kMarkerRadius,
                      palette(e.color));
    }
}

void draw_pie(Raster& r, const Series& s) {
    const double cx0 = r.width / 2.0;
    const double cy0 = r.height / 2.0;
    const double radius = kPieRadiusFrac * std::min(r.width, r.height);
    double total = 0.0;
    for (const auto& e : s.elements) {
        total += bin_value(e.values[0]);
    }
    // wedge boundaries as fractions of a turn, clockwise from 12 o'clock
    std::vector<double> bounds{0.0};
    for (const auto& e : s.elements) {
        bounds.push_back(bounds.back() + bin_value(e.values[0]) / total);
    }
    bounds.back() = 1.0;
    const double two_pi = 2.0 * std::numbers::pi;

    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
            const double dx = x + 0.5 - cx0;
            const double dy = y + 0.5 - cy0;
            if (std::hypot(dx, dy) > radius) {
                continue;
            }
            // screen y grows downward, so atan2(dx, -dy) runs clockwise from the top
            double turn = std::atan2(dx, -dy) / two_pi;
            if (turn < 0.0) {
                turn += 1.0;
            }
            std::size_t k = 0;
            while (k + 1 < s.elements.size() && turn >= bounds[k + 1]) {
                ++k;
            }
            bool separator = false;
            if (s.elements.size() > 1) {
                for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
                    const double a = bounds[b] * two_pi;
                    const double ux = std::sin(a);
                    const double uy = -std::cos(a);
                    const double along = dx * ux + dy * uy;
                    if (along > 0.0 && std::abs(dx * uy - dy * ux) < 0.5) {
                        separator = true;
                        break;
                    }
                }
            }
            if (!separator) {
                r.paint(x, y, palette(s.elements[k].color));
            }
        }
    }
}

}  // namespace

Rgb palette(int color) {
    require(color >= 0 && color < kColors, "palette: colour id out of range");
    return kPalette[static_cast<std::size_t>(color)];
}

Raster::Raster(int w, int h)
    : width(w), height(h), mask(static_cast<std::size_t>(w * h), 0), rgb(static_cast<std::size_t>(w * h) * 3, 255) {
    require(w > 0 && h > 0, "raster: dimensions must be positive");
}

std::size_t Raster::ink_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

void Raster::paint(int x, int y, Rgb c) {
    const auto i = static_cast<std::size_t>(y * width + x);
    mask[i] = 1;
    rgb[3 * i] = c.r;
    rgb[3 * i + 1] = c.g;
    rgb[3 * i + 2] = c.b;
}

void Raster::clear_to_background(int x, int y) {
    const auto i = static_cast<std::size_t>(y * width + x);
    mask[i] = 0;
    rgb[3 * i] = kBackground.r;
    rgb[3 * i + 1] = kBackground.g;
    rgb[3 * i + 2] = kBackground.b;
}

Raster rasterize(const ChartSpec& spec) {
    const std::string err = validate(spec);
    require(err.empty(), "rasterize: invalid spec (" + err + ")");
    Raster r(spec.width, spec.height);
    const int slots = slot_count(spec);
    // bars first so line and scatter marks stay visible on top
    std::vector<const Series*> order;
    for (const auto& s : spec.series) {
        order.push_back(&s);
    }
    std::stable_sort(order.begin(), order.end(), [](const Series* a, const Series* b) { return a->mark < b->mark; });
    for (const Series* s : order) {
        switch (s->mark) {
            case Mark::bar: draw_bars(r, *s, slots); break;
            case Mark::line: draw_line(r, *s, slots); break;
            case Mark::scatter: draw_scatter(r, *s); break;
            case Mark::pie: draw_pie(r, *s); break;
        }
    }
    return r;
}

ExecResult execute(const DSLProgram& program, int width, int height) {
    if (width <= 0 || height <= 0) {
        return ExecResult{std::nullopt, "non-positive raster size"};
    }
    auto parsed = parse_program(program, width, height);
    if (!parsed.ok()) {
        return ExecResult{std::nullopt, parsed.error};
    }
    return ExecResult{rasterize(*parsed.spec), {}};
}

double iou(const Raster& a, const Raster& b) {
    require(a.width == b.width && a.height == b.height, "iou: raster dimensions differ");
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < a.mask.size(); ++i) {
        const bool x = a.mask[i] != 0;
        const bool y = b.mask[i] != 0;
        inter += static_cast<std::size_t>(x && y);
        uni += static_cast<std::size_t>(x || y);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double success_rate(const std::vector<std::pair<Raster, DSLProgram>>& pairs, double tau) {
    require(!pairs.empty(), "success_rate: empty pair list");
    require(tau >= 0.75 && tau <= 0.90, "success_rate: tau must lie in [0.75, 0.90]");
    std::size_t ok = 0;
    for (const auto& [input, program] : pairs) {
        auto out = execute(program, input.width, input.height);
        if (out.ok() && iou(input, *out.raster) >= tau) {
            ++ok;
        }
    }
    return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

AugmentParams sample_augment(Rng& rng) {
    AugmentParams p;
    p.angle_deg = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);
    for (double& j : p.jitter) {
        j = rng.uniform(1.0 - kMaxJitter, 1.0 + kMaxJitter);
    }
    return p;
}

Raster augment_image(const Raster& r, const AugmentParams& params) {
    Raster out = r;
    if (params.angle_deg != 0.0) {
        const double a = params.angle_deg * std::numbers::pi / 180.0;
        const double ca = std::cos(a);
        const double sa = std::sin(a);
        const double cx = r.width / 2.0;
        const double cy = r.height / 2.0;
        auto channel = [&r](int x, int y, int ch) -> double {
            if (x < 0 || y < 0 || x >= r.width || y >= r.height) {
                return 255.0;
            }
            return r.rgb[3 * static_cast<std::size_t>(y * r.width + x) + static_cast<std::size_t>(ch)];
        };
        for (int y = 0; y < r.height; ++y) {
            for (int x = 0; x < r.width; ++x) {
                // inverse rotation of the output pixel centre into the source
                const double dx = x + 0.5 - cx;
                const double dy = y + 0.5 - cy;
                const double sx = cx + ca * dx + sa * dy;
                const double sy = cy - sa * dx + ca * dy;
                const auto i = static_cast<std::size_t>(y * r.width + x);

                const int nx = static_cast<int>(std::floor(sx));
                const int ny = static_cast<int>(std::floor(sy));
                const bool inside = nx >= 0 && ny >= 0 && nx < r.width && ny < r.height;
                out.mask[i] = inside ? r.mask[static_cast<std::size_t>(ny * r.width + nx)] : 0;

                const double fx = sx - 0.5;
                const double fy = sy - 0.5;
                const int x0 = static_cast<int>(std::floor(fx));
                const int y0 = static_cast<int>(std::floor(fy));
                const double tx = fx - x0;
                const double ty = fy - y0;
                for (int ch = 0; ch < 3; ++ch) {
                    const double v = (1 - tx) * (1 - ty) * channel(x0, y0, ch) + tx * (1 - ty) * channel(x0 + 1, y0, ch) +
                                     (1 - tx) * ty * channel(x0, y0 + 1, ch) + tx * ty * channel(x0 + 1, y0 + 1, ch);
                    out.rgb[3 * i + static_cast<std::size_t>(ch)] =
                        static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
                }
            }
        }
    }
    for (std::size_t i = 0; i < out.rgb.size(); ++i) {
        const double j = params.jitter[i % 3];
        if (j != 1.0) {
            out.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(out.rgb[i] * j), 0L, 255L));
        }
    }
    return out;
}

Raster augment_image(const Raster& r, Rng& rng) { return augment_image(r, sample_augment(rng)); }

}  // namespace c2d
