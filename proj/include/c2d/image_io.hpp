// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "c2d/chartlab.hpp"

namespace c2d {

/// 8-bit RGB PNG. The ink mask is not stored; on decode every
/// non-background pixel counts as ink, which matches what rasterize draws.
std::vector<std::uint8_t> encode_png(const Raster& r);
Raster decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::string& path, const Raster& r);
Raster read_png(const std::string& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace c2d
