// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic dataset generation, JSONL manifests and the stratified split.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2d/chartlab.hpp"

namespace c2d {

struct Sample {
    std::string id;
    ChartSpec spec;
    DSLProgram program;
    Raster raster;
};

/// `count` samples drawn from one root seed; sample i only depends on (seed, i).
std::vector<Sample> generate_samples(std::size_t count, std::uint64_t seed, const TypeMix& mix, int side = 64);

enum class Split : std::uint8_t { train = 0, val, test };
inline constexpr std::array<const char*, 3> kSplitNames{"train", "val", "test"};

/// Per-split totals for n samples: 15% val and 15% test (rounded), rest train.
std::array<std::size_t, 3> split_totals(std::size_t n);

/// Assigns every sample to a split. Each (type, split) cell holds the floor or
/// ceiling of its proportional share, and split totals equal split_totals(n).
std::vector<Split> stratified_split(const std::vector<Sample>& samples);

nlohmann::json spec_to_json(const ChartSpec& spec);
ChartSpec spec_from_json(const nlohmann::json& j);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

void write_jsonl(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> read_jsonl(const std::string& path);

struct DatasetSummary {
    std::array<std::size_t, 3> split_sizes{};
    std::array<std::array<std::size_t, kChartTypeCount>, 3> per_type{};
};

/// Generates, splits and writes train/val/test .jsonl plus summary.json under out_dir.
DatasetSummary write_dataset(const std::string& out_dir, std::size_t count, std::uint64_t seed, const TypeMix& mix,
                             int side = 64);

std::vector<Sample> load_split(const std::string& dir, Split split);

}  // namespace c2d
