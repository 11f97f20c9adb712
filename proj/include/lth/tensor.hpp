// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lth {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float32 array. The data length always equals the
/// product of the shape; an empty shape denotes a scalar with one element.
class Tensor {
public:
    Tensor() : data_(1, 0.0f) {}
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);
    Tensor(Shape shape, std::initializer_list<float> data);

    static Tensor scalar(float v) { return Tensor(Shape{}, {v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    float* ptr() noexcept { return data_.data(); }
    const float* ptr() const noexcept { return data_.data(); }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }
    float& at(std::size_t i) { return data_.at(i); }
    float at(std::size_t i) const { return data_.at(i); }

    void fill(float v);
    /// Changes the shape in place; the element count must be unchanged.
    void reshape(Shape shape);
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;

private:
    Shape shape_;
    std::vector<float> data_;
};

/// Bit-level equality of shape and contents (distinguishes -0.0 from 0.0).
bool bit_equal(const Tensor& a, const Tensor& b) noexcept;

}  // namespace lth
