// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace lth::detail {

/// c[m x n] (+)= a[m x k] * b[k x n], all row-major. Each output element is
/// reduced in double precision in a fixed order, so results are
/// deterministic for a given build and machine.
void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);

/// out[cols x rows] = in[rows x cols]^T
void transpose(const float* in, float* out, std::size_t rows, std::size_t cols);

}  // namespace lth::detail
