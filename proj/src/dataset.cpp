// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#include "c2d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "c2d/errors.hpp"
#include "c2d/image_io.hpp"

namespace c2d {

using nlohmann::json;

std::vector<Sample> generate_samples(std::size_t count, std::uint64_t seed, const TypeMix& mix, int side) {
    const Rng root = Rng(seed).split("data");
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        Sample s;
        char id[32];
        std::snprintf(id, sizeof id, "s%06zu", i);
        s.id = id;
        s.spec = sample_spec(rng, mix, side, side);
        s.program = emit_code(s.spec);
        s.raster = rasterize(s.spec);
        out.push_back(std::move(s));
    }
    return out;
}

std::array<std::size_t, 3> split_totals(std::size_t n) {
    const auto val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
    const auto test = val;
    require(2 * val <= n, "split_totals: sample count too small");
    return {n - val - test, val, test};
}

std::vector<Split> stratified_split(const std::vector<Sample>& samples) {
    const std::size_t n = samples.size();
    const auto totals = split_totals(n);
    std::array<std::size_t, kChartTypeCount> by_type{};
    for (const auto& s : samples) {
        ++by_type[static_cast<std::size_t>(s.spec.type)];
    }

    // Controlled rounding: start from floors of the proportional share, then
    // hand out the remaining units, largest fractional part first, without
    // exceeding any split total.
    std::array<std::array<std::size_t, 3>, kChartTypeCount> cell{};
    std::array<std::array<double, 3>, kChartTypeCount> frac{};
    std::array<std::size_t, 3> col{};
    for (std::size_t t = 0; t < kChartTypeCount; ++t) {
        for (std::size_t k = 0; k < 3; ++k) {
            const double share = n == 0 ? 0.0
                                        : static_cast<double>(by_type[t]) * static_cast<double>(totals[k]) /
                                              static_cast<double>(n);
            cell[t][k] = static_cast<std::size_t>(std::floor(share + 1e-9));
            frac[t][k] = share - static_cast<double>(cell[t][k]);
            col[k] += cell[t][k];
        }
    }
    struct Candidate {
        double frac;
        std::size_t t, k;
    };
    std::vector<Candidate> cands;
    for (std::size_t t = 0; t < kChartTypeCount; ++t) {
        for (std::size_t k = 0; k < 3; ++k) {
            cands.push_back({frac[t][k], t, k});
        }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.frac > b.frac; });
    auto row_sum = [&cell](std::size_t t) { return cell[t][0] + cell[t][1] + cell[t][2]; };
    for (int pass = 0; pass < 2; ++pass) {
        // second pass drops the positive-fraction requirement if the first got stuck
        for (const auto& c : cands) {
            if (row_sum(c.t) < by_type[c.t] && col[c.k] < totals[c.k] && (pass == 1 || c.frac > 1e-9)) {
                ++cell[c.t][c.k];
                ++col[c.k];
            }
        }
    }
    for (std::size_t t = 0; t < kChartTypeCount; ++t) {
        require(row_sum(t) == by_type[t], "stratified_split: rounding failed");
    }

    std::vector<Split> out(n, Split::train);
    std::array<std::array<std::size_t, 3>, kChartTypeCount> used{};
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = static_cast<std::size_t>(samples[i].spec.type);
        std::size_t k = 0;
        while (used[t][k] >= cell[t][k]) {
            ++k;
        }
        ++used[t][k];
        out[i] = static_cast<Split>(k);
    }
    return out;
}

json spec_to_json(const ChartSpec& spec) {
    json series = json::array();
    for (const auto& s : spec.series) {
        json els = json::array();
        for (const auto& e : s.elements) {
            els.push_back({{"values", e.values}, {"category", e.category}, {"color", e.color}});
        }
        series.push_back({{"mark", std::string(to_string(s.mark))}, {"elements", els}});
    }
    return {{"type", std::string(to_string(spec.type))},
            {"width", spec.width},
            {"height", spec.height},
            {"seed", spec.seed},
            {"series", series}};
}

ChartSpec spec_from_json(const json& j) {
    ChartSpec spec;
    const auto type = parse_chart_type(j.at("type").get<std::string>());
    require(type.has_value(), "spec: unknown chart type");
    spec.type = *type;
    spec.width = j.at("width").get<int>();
    spec.height = j.at("height").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& js : j.at("series")) {
        Series s;
        const auto mark = parse_mark(js.at("mark").get<std::string>());
        require(mark.has_value(), "spec: unknown mark");
        s.mark = *mark;
        for (const auto& je : js.at("elements")) {
            s.elements.push_back(Element{je.at("values").get<std::vector<int>>(), je.at("category").get<int>(),
                                         je.at("color").get<int>()});
        }
        spec.series.push_back(std::move(s));
    }
    const std::string err = validate(spec);
    require(err.empty(), "spec: " + err);
    return spec;
}

json sample_to_json(const Sample& s) {
    return {{"id", s.id},
            {"spec", spec_to_json(s.spec)},
            {"tokens", s.program.tokens},
            {"raster_png_b64", base64_encode(encode_png(s.raster))}};
}

Sample sample_from_json(const json& j) {
    Sample s;
    s.id = j.at("id").get<std::string>();
    s.spec = spec_from_json(j.at("spec"));
    s.program.tokens = j.at("tokens").get<std::vector<int>>();
    s.raster = decode_png(base64_decode(j.at("raster_png_b64").get<std::string>()));
    return s;
}

void write_jsonl(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write " + path);
    }
    for (const auto& s : samples) {
        f << sample_to_json(s).dump() << '\n';
    }
    if (!f) {
        throw std::runtime_error("write failed: " + path);
    }
}

std::vector<Sample> read_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot open " + path);
    std::vector<Sample> out;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) {
            out.push_back(sample_from_json(json::parse(line)));
        }
    }
    return out;
}

DatasetSummary write_dataset(const std::string& out_dir, std::size_t count, std::uint64_t seed, const TypeMix& mix,
                             int side) {
    require(count >= 10, "gen-data: count must be at least 10");
    auto samples = generate_samples(count, seed, mix, side);
    const auto assign = stratified_split(samples);
    std::array<std::vector<Sample>, 3> parts;
    DatasetSummary summary;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto k = static_cast<std::size_t>(assign[i]);
        ++summary.per_type[k][static_cast<std::size_t>(samples[i].spec.type)];
        parts[k].push_back(std::move(samples[i]));
    }
    std::filesystem::create_directories(out_dir);
    json js;
    js["count"] = count;
    js["seed"] = seed;
    for (std::size_t k = 0; k < 3; ++k) {
        summary.split_sizes[k] = parts[k].size();
        write_jsonl((std::filesystem::path(out_dir) / (std::string(kSplitNames[k]) + ".jsonl")).string(), parts[k]);
        json per;
        for (std::size_t t = 0; t < kChartTypeCount; ++t) {
            per[std::string(to_string(kChartTypes[t]))] = summary.per_type[k][t];
        }
        js["splits"][kSplitNames[k]] = {{"size", parts[k].size()}, {"per_type", per}};
    }
    std::ofstream f(std::filesystem::path(out_dir) / "summary.json", std::ios::binary);
    f << js.dump(2) << '\n';
    if (!f) {
        throw std::runtime_error("cannot write summary.json under " + out_dir);
    }
    return summary;
}

std::vector<Sample> load_split(const std::string& dir, Split split) {
    const auto path = std::filesystem::path(dir) / (std::string(kSplitNames[static_cast<std::size_t>(split)]) + ".jsonl");
    require(std::filesystem::exists(path), "missing split file " + path.string());
    return read_jsonl(path.string());
}

}  // namespace c2d
