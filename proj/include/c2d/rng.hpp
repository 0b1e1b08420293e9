// Copyright (c) 2026 The chart2dsl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace c2d {

// Counter-based splittable generator. Every draw is splitmix64(key + counter),
// so a stream is fully described by (key, counter) and two streams split from
// the same parent with different tags never share state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x9E3779B97F4A7C15ULL)) {}

    [[nodiscard]] Rng split(std::uint64_t tag) const;
    [[nodiscard]] Rng split(std::string_view tag) const;

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal(double mean = 0.0, double stddev = 1.0);

    [[nodiscard]] std::uint64_t key() const { return key_; }
    [[nodiscard]] std::uint64_t counter() const { return counter_; }

    static std::uint64_t mix(std::uint64_t z);

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t fnv1a(std::string_view text);

}  // namespace c2d
