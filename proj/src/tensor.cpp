// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "lth/error.hpp"

namespace lth {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
void check_dims(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
    }
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(shape_);
    if (data_.size() != numel(shape_)) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             to_string(shape_));
    }
}

Tensor::Tensor(Shape shape, std::initializer_list<float> data)
    : Tensor(std::move(shape), std::vector<float>(data)) {}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(Shape shape) {
    check_dims(shape);
    if (numel(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
    return a.shape() == b.shape() &&
           std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(float)) == 0;
}

}  // namespace lth
