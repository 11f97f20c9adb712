// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/rng.hpp"

#include <cmath>
#include <numbers>

#include "lth/error.hpp"

namespace lth {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

std::uint64_t Rng::index(std::uint64_t n) {
    if (n == 0) throw ParameterError("Rng::index requires n > 0");
    // Rejection sampling keeps the result exactly uniform.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string_view stream_name(Stream s) {
    switch (s) {
        case Stream::Init: return "init";
        case Stream::Dropout: return "dropout";
        case Stream::Sampler: return "sampler";
        case Stream::Augmentation: return "augmentation";
        case Stream::Synth: return "synth";
    }
    return "unknown";
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t SeedStreams::seed(Stream s, std::uint64_t level, std::uint64_t epoch) const {
    std::uint64_t h = splitmix64(master_);
    h = splitmix64(h ^ fnv1a64(stream_name(s)));
    h = splitmix64(h ^ level);
    h = splitmix64(h ^ (epoch * 0x2545f4914f6cdd1dULL));
    return h;
}

}  // namespace lth
