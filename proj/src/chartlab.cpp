// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "c2d/chartlab.hpp"
#include "c2d/errors.hpp"

namespace c2d {

std::string_view to_string(ChartType t) {
    switch (t) {
        case ChartType::bar: return "bar";
        case ChartType::line: return "line";
        case ChartType::scatter: return "scatter";
        case ChartType::pie: return "pie";
        case ChartType::complex: return "complex";
    }
    return "?";
}

std::optional<ChartType> parse_chart_type(std::string_view s) {
    for (auto t : kChartTypes) {
        if (to_string(t) == s) {
            return t;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Mark m) {
    switch (m) {
        case Mark::bar: return "bar";
        case Mark::line: return "line";
        case Mark::scatter: return "scatter";
        case Mark::pie: return "pie";
    }
    return "?";
}

std::optional<Mark> parse_mark(std::string_view s) {
    for (auto m : {Mark::bar, Mark::line, Mark::scatter, Mark::pie}) {
        if (to_string(m) == s) {
            return m;
        }
    }
    return std::nullopt;
}

double bin_value(int bin) { return static_cast<double>(bin + 1) / kValueBins; }

std::size_t ChartSpec::element_count() const {
    std::size_t n = 0;
    for (const auto& s : series) {
        n += s.elements.size();
    }
    return n;
}

bool ChartSpec::same_content(const ChartSpec& other) const {
    return type == other.type && series == other.series && width == other.width && height == other.height;
}

namespace {

std::size_t arity(Mark m) { return m == Mark::scatter ? 2 : 1; }

Mark mark_for(ChartType t) {
    switch (t) {
        case ChartType::line: return Mark::line;
        case ChartType::scatter: return Mark::scatter;
        case ChartType::pie: return Mark::pie;
        default: return Mark::bar;
    }
}

int mark_keyword(Mark m) {
    switch (m) {
        case Mark::bar: return tok::kw_bar;
        case Mark::line: return tok::kw_line;
        case Mark::scatter: return tok::kw_scatter;
        case Mark::pie: return tok::kw_pie;
    }
    return tok::kw_bar;
}

int type_keyword(ChartType t) {
    return t == ChartType::complex ? tok::kw_complex : mark_keyword(mark_for(t));
}

bool element_less(const Element& a, const Element& b) {
    if (a.category != b.category) {
        return a.category < b.category;
    }
    if (a.values != b.values) {
        return a.values < b.values;
    }
    return a.color < b.color;
}

bool series_less(const Series& a, const Series& b) {
    if (a.mark != b.mark) {
        return a.mark < b.mark;
    }
    return std::lexicographical_compare(a.elements.begin(), a.elements.end(), b.elements.begin(),
                                        b.elements.end(), element_less);
}

}  // namespace

std::string validate(const ChartSpec& spec) {
    if (spec.width <= 0 || spec.height <= 0) {
        return "non-positive raster size";
    }
    if (spec.series.empty()) {
        return "no series";
    }
    if (spec.type == ChartType::complex) {
        if (spec.series.size() < 2) {
            return "complex chart needs at least two series";
        }
        for (const auto& s : spec.series) {
            if (s.mark == Mark::pie) {
                return "pie series cannot be combined in a complex chart";
            }
        }
    } else {
        if (spec.series.size() != 1) {
            return "simple chart carries exactly one series";
        }
        if (spec.series[0].mark != mark_for(spec.type)) {
            return "series mark does not match chart type";
        }
    }
    const std::size_t n = spec.element_count();
    if (n < 1 || n > kMaxElements) {
        return "element count " + std::to_string(n) + " outside [1, 16]";
    }
    for (const auto& s : spec.series) {
        if (s.elements.empty()) {
            return "empty series";
        }
        for (const auto& e : s.elements) {
            if (e.values.size() != arity(s.mark)) {
                return "wrong value arity for " + std::string(to_string(s.mark));
            }
            for (int v : e.values) {
                if (v < 0 || v >= kValueBins) {
                    return "value bin out of range";
                }
            }
            if (e.category < 0 || e.category >= kCategories) {
                return "category out of range";
            }
            if (e.color < 0 || e.color >= kColors) {
                return "color out of range";
            }
        }
    }
    return {};
}

TypeMix default_type_mix() {
    TypeMix mix{31.3, 26.8, 17.9, 13.4, 8.9};
    const double total = std::accumulate(mix.begin(), mix.end(), 0.0);
    for (double& m : mix) {
        m /= total;
    }
    return mix;
}

ElementRange element_range(ChartType t) {
    switch (t) {
        case ChartType::bar: return {1, 8};
        case ChartType::line: return {2, 8};
        case ChartType::scatter: return {2, 8};
        case ChartType::pie: return {2, 6};
        case ChartType::complex: return {2, 6};
    }
    return {1, 1};
}

ChartSpec sample_spec(Rng& rng, const TypeMix& mix, int width, int height) {
    double total = 0.0;
    for (double m : mix) {
        require(m >= 0.0 && std::isfinite(m), "sample_spec: mix weights must be finite and non-negative");
        total += m;
    }
    require(std::abs(total - 1.0) <= 1e-6, "sample_spec: type mix must sum to 1");

    ChartSpec spec;
    spec.width = width;
    spec.height = height;
    spec.seed = rng.next_u64();

    const double u = rng.uniform() * total;
    double acc = 0.0;
    spec.type = ChartType::complex;
    for (std::size_t i = 0; i < kChartTypeCount; ++i) {
        acc += mix[i];
        if (u < acc && mix[i] > 0.0) {
            spec.type = kChartTypes[i];
            break;
        }
    }
    if (mix[static_cast<std::size_t>(spec.type)] <= 0.0) {
        // rounding pushed u past the last positive weight
        for (std::size_t i = kChartTypeCount; i-- > 0;) {
            if (mix[i] > 0.0) {
                spec.type = kChartTypes[i];
                break;
            }
        }
    }

    const auto range = element_range(spec.type);
    const int n = range.lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(range.hi - range.lo + 1)));
    auto bin = [&rng] { return static_cast<int>(rng.below(kValueBins)); };

    auto one_value_series = [&](Mark mark, int color) {
        Series s{mark, {}};
        for (int i = 0; i < n; ++i) {
            s.elements.push_back(Element{{bin()}, i, color});
        }
        return s;
    };

    switch (spec.type) {
        case ChartType::bar:
        case ChartType::line:
            spec.series.push_back(one_value_series(mark_for(spec.type), static_cast<int>(rng.below(kColors))));
            break;
        case ChartType::scatter: {
            const int color = static_cast<int>(rng.below(kColors));
            std::vector<std::pair<int, int>> pts;
            for (int i = 0; i < n; ++i) {
                const int x = bin();
                const int y = bin();
                pts.emplace_back(x, y);
            }
            std::sort(pts.begin(), pts.end());
            Series s{Mark::scatter, {}};
            for (int i = 0; i < n; ++i) {
                s.elements.push_back(Element{{pts[static_cast<std::size_t>(i)].first,
                                              pts[static_cast<std::size_t>(i)].second},
                                             i, color});
            }
            spec.series.push_back(std::move(s));
            break;
        }
        case ChartType::pie: {
            const int start = static_cast<int>(rng.below(kColors));
            Series s{Mark::pie, {}};
            for (int i = 0; i < n; ++i) {
                s.elements.push_back(Element{{bin()}, i, (start + i) % kColors});
            }
            spec.series.push_back(std::move(s));
            break;
        }
        case ChartType::complex: {
            const int c1 = static_cast<int>(rng.below(kColors));
            const int c2 = (c1 + 1 + static_cast<int>(rng.below(kColors - 1))) % kColors;
            spec.series.push_back(one_value_series(Mark::bar, c1));
            spec.series.push_back(one_value_series(Mark::line, c2));
            break;
        }
    }
    return spec;
}

// ------------------------------------------------------------------ DSL

std::string token_name(int id) {
    switch (id) {
        case tok::pad: return "<pad>";
        case tok::bos: return "<bos>";
        case tok::figure: return "figure";
        case tok::end: return "end";
        case tok::series: return "series";
        case tok::kw_bar: return "bar";
        case tok::kw_line: return "line";
        case tok::kw_scatter: return "scatter";
        case tok::kw_pie: return "pie";
        case tok::kw_complex: return "complex";
        default: break;
    }
    if (id >= tok::value0 && id < tok::category0) {
        return "v" + std::to_string(id - tok::value0);
    }
    if (id >= tok::category0 && id < tok::color0) {
        return "c" + std::to_string(id - tok::category0);
    }
    if (id >= tok::color0 && id < tok::vocab_size) {
        return "k" + std::to_string(id - tok::color0);
    }
    return "<unk:" + std::to_string(id) + ">";
}

std::string program_to_text(const DSLProgram& program) {
    std::string out;
    for (std::size_t i = 0; i < program.tokens.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += token_name(program.tokens[i]);
    }
    return out;
}

DSLProgram emit_code(const ChartSpec& spec) {
    const std::string err = validate(spec);
    require(err.empty(), "emit_code: invalid spec (" + err + ")");
    std::vector<Series> series = spec.series;
    for (auto& s : series) {
        std::sort(s.elements.begin(), s.elements.end(), element_less);
    }
    std::sort(series.begin(), series.end(), series_less);

    DSLProgram p;
    p.tokens.push_back(tok::figure);
    p.tokens.push_back(type_keyword(spec.type));
    for (const auto& s : series) {
        p.tokens.push_back(tok::series);
        if (spec.type == ChartType::complex) {
            p.tokens.push_back(mark_keyword(s.mark));
        }
        for (const auto& e : s.elements) {
            for (int v : e.values) {
                p.tokens.push_back(tok::value0 + v);
            }
            p.tokens.push_back(tok::category0 + e.category);
            p.tokens.push_back(tok::color0 + e.color);
        }
    }
    p.tokens.push_back(tok::end);
    return p;
}

ParseResult parse_program(const DSLProgram& program, int width, int height) {
    const auto& t = program.tokens;
    std::size_t i = 0;
    auto fail = [&](const std::string& why) {
        return ParseResult{std::nullopt, why + " at token " + std::to_string(i)};
    };
    auto is_value = [](int id) { return id >= tok::value0 && id < tok::category0; };
    auto is_category = [](int id) { return id >= tok::category0 && id < tok::color0; };
    auto is_color = [](int id) { return id >= tok::color0 && id < tok::vocab_size; };

    if (t.empty()) {
        return fail("empty program");
    }
    if (t[i] != tok::figure) {
        return fail("expected 'figure'");
    }
    ++i;
    if (i >= t.size()) {
        return fail("missing chart kind");
    }
    ChartSpec spec;
    spec.width = width;
    spec.height = height;
    switch (t[i]) {
        case tok::kw_bar: spec.type = ChartType::bar; break;
        case tok::kw_line: spec.type = ChartType::line; break;
        case tok::kw_scatter: spec.type = ChartType::scatter; break;
        case tok::kw_pie: spec.type = ChartType::pie; break;
        case tok::kw_complex: spec.type = ChartType::complex; break;
        default: return fail("expected chart kind");
    }
    ++i;
    const bool complex = spec.type == ChartType::complex;

    while (i < t.size() && t[i] == tok::series) {
        ++i;
        Series s;
        if (complex) {
            if (i >= t.size()) {
                return fail("missing series mark");
            }
            switch (t[i]) {
                case tok::kw_bar: s.mark = Mark::bar; break;
                case tok::kw_line: s.mark = Mark::line; break;
                case tok::kw_scatter: s.mark = Mark::scatter; break;
                default: return fail("expected series mark");
            }
            ++i;
        } else {
            s.mark = mark_for(spec.type);
        }
        const std::size_t k = arity(s.mark);
        while (i < t.size() && is_value(t[i])) {
            Element e;
            for (std::size_t a = 0; a < k; ++a) {
                if (i >= t.size() || !is_value(t[i])) {
                    return fail("expected value literal");
                }
                e.values.push_back(t[i] - tok::value0);
                ++i;
            }
            if (i >= t.size() || !is_category(t[i])) {
                return fail("expected category id");
            }
            e.category = t[i] - tok::category0;
            ++i;
            if (i >= t.size() || !is_color(t[i])) {
                return fail("expected color id");
            }
            e.color = t[i] - tok::color0;
            ++i;
            s.elements.push_back(std::move(e));
            if (spec.element_count() + s.elements.size() > kMaxElements) {
                return fail("too many elements");
            }
        }
        if (s.elements.empty()) {
            return fail("series without elements");
        }
        spec.series.push_back(std::move(s));
    }
    if (i >= t.size() || t[i] != tok::end) {
        return fail("expected 'series' or 'end'");
    }
    ++i;
    if (i != t.size()) {
        return fail("tokens after 'end'");
    }
    if (auto err = validate(spec); !err.empty()) {
        return ParseResult{std::nullopt, err};
    }
    return ParseResult{std::move(spec), {}};
}

}  // namespace c2d
