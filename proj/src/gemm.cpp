// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemm.hpp"

#include <algorithm>

namespace lth::detail {

namespace {

constexpr std::size_t kColBlock = 512;

#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
__attribute__((target_clones("avx2", "default")))
#endif
void gemm_block(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
                std::size_t j0, std::size_t jn, bool accumulate) {
    double acc[kColBlock];
    for (std::size_t i = 0; i < m; ++i) {
        float* crow = c + i * n + j0;
        if (accumulate) {
            for (std::size_t j = 0; j < jn; ++j) acc[j] = crow[j];
        } else {
            std::fill(acc, acc + jn, 0.0);
        }
        const float* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const float* brow = b + p * n + j0;
            for (std::size_t j = 0; j < jn; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        for (std::size_t j = 0; j < jn; ++j) crow[j] = static_cast<float>(acc[j]);
    }
}

}  // namespace

void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
    for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
        gemm_block(a, b, c, m, k, n, j0, std::min(kColBlock, n - j0), accumulate);
    }
}

void transpose(const float* in, float* out, std::size_t rows, std::size_t cols) {
    constexpr std::size_t kTile = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
        for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
            const std::size_t r1 = std::min(rows, r0 + kTile);
            const std::size_t c1 = std::min(cols, c0 + kTile);
            for (std::size_t r = r0; r < r1; ++r) {
                for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
            }
        }
    }
}

}  // namespace lth::detail
