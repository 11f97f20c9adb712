// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "lth/checkpoint.hpp"
#include "lth/parameter.hpp"

namespace lth {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;  // L2, added to the gradient
};

/// Adam with coupled L2 weight decay and mask absorption: after every step
/// the value and both moments are zero wherever the parameter's mask is 0.
/// Non-trainable parameters and their moments are never touched.
class Adam {
public:
    struct Moments {
        Tensor m;
        Tensor v;
    };

    explicit Adam(AdamConfig config = {}) : config_(config) {}

    void step(std::span<Parameter> params);
    /// Drops all moments and the step counter.
    void reset();

    const AdamConfig& config() const noexcept { return config_; }
    std::int64_t steps() const noexcept { return t_; }
    const Moments* moments(const std::string& name) const;

    // Serialized as "<param>.m", "<param>.v" and "adam.t".
    void export_state(TensorTable& table) const;
    void import_state(const TensorTable& table);

private:
    AdamConfig config_;
    std::int64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

/// Zeroes every gradient and marks it as not yet populated.
void zero_grads(std::span<Parameter> params);

}  // namespace lth
