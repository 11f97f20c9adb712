// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used by the tests. They share no code with the
// library and favour obviousness over speed.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lth/tensor.hpp"

namespace oracle {

inline std::vector<double> widen(const lth::Tensor& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

inline lth::Tensor random_tensor(lth::Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    lth::Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<float>(dist(gen));
    return t;
}

// c[m x n] = a[m x k] * b[k x n]
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

struct ConvDims {
    std::size_t n, c, h, w, f, kh, kw, stride, pad;
    std::size_t ho() const { return (h + 2 * pad - kh) / stride + 1; }
    std::size_t wo() const { return (w + 2 * pad - kw) / stride + 1; }
};

// Cross-correlation, zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& k, const ConvDims& d) {
    const std::size_t ho = d.ho(), wo = d.wo();
    std::vector<double> y(d.n * d.f * ho * wo, 0.0);
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t f = 0; f < d.f; ++f)
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < d.c; ++c)
                        for (std::size_t ky = 0; ky < d.kh; ++ky)
                            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                                const auto iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.pad);
                                const auto ix = static_cast<long>(ox * d.stride + kx) - static_cast<long>(d.pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(d.h) || ix >= static_cast<long>(d.w))
                                    continue;
                                acc += x[((n * d.c + c) * d.h + static_cast<std::size_t>(iy)) * d.w +
                                         static_cast<std::size_t>(ix)] *
                                       k[((f * d.c + c) * d.kh + ky) * d.kw + kx];
                            }
                    y[((n * d.f + f) * ho + oy) * wo + ox] = acc;
                }
    return y;
}

inline std::vector<double> max_pool(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t h,
                                    std::size_t w, std::size_t size, std::size_t stride) {
    const std::size_t ho = (h - size) / stride + 1, wo = (w - size) / stride + 1;
    std::vector<double> y(n * c * ho * wo);
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double best = -INFINITY;
                for (std::size_t ky = 0; ky < size; ++ky)
                    for (std::size_t kx = 0; kx < size; ++kx)
                        best = std::max(best, x[(p * h + oy * stride + ky) * w + ox * stride + kx]);
                y[(p * ho + oy) * wo + ox] = best;
            }
    return y;
}

inline double cross_entropy(const std::vector<double>& logits, const std::vector<std::int32_t>& labels,
                            std::size_t classes) {
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double mx = -INFINITY;
        for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, logits[i * classes + c]);
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) s += std::exp(logits[i * classes + c] - mx);
        total += -(logits[i * classes + static_cast<std::size_t>(labels[i])] - mx - std::log(s));
    }
    return total / static_cast<double>(labels.size());
}

}  // namespace oracle
