// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lth {

/// Seeded random stream. Wraps mt19937_64 with platform-independent
/// mappings to the distributions we need, so a seed reproduces the same
/// values with any standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t index(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }
    /// Standard normal via Box-Muller (one draw per call, no caching).
    double normal();

private:
    std::mt19937_64 engine_;
};

/// Named substreams used by an experiment.
enum class Stream { Init, Dropout, Sampler, Augmentation, Synth };

std::string_view stream_name(Stream s);

/// Keyed derivation of independent seeds from one master seed. A derived
/// seed depends only on (master seed, stream name, level, epoch), so
/// changing the work done at one level never shifts the streams of another.
class SeedStreams {
public:
    explicit SeedStreams(std::uint64_t master) : master_(master) {}

    std::uint64_t master() const noexcept { return master_; }
    std::uint64_t seed(Stream s, std::uint64_t level = 0, std::uint64_t epoch = 0) const;
    Rng rng(Stream s, std::uint64_t level = 0, std::uint64_t epoch = 0) const { return Rng(seed(s, level, epoch)); }

private:
    std::uint64_t master_;
};

inline SeedStreams seed_streams(std::uint64_t master_seed) { return SeedStreams(master_seed); }

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace lth
