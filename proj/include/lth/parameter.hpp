// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "lth/tensor.hpp"

namespace lth {

/// A named trainable tensor with its gradient, binary prune mask and
/// initial-weight snapshot. Invariant: value[i] == 0 wherever mask[i] == 0.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value, std::string block, bool prunable);

    std::string name;
    std::string block;  // "b1".."bn" for backbone blocks, "head" otherwise
    Tensor value;
    Tensor grad;
    Tensor mask;            // entries in {0, 1}
    Tensor init_snapshot;   // valid only when has_snapshot
    bool trainable = true;
    bool prunable = false;
    bool has_snapshot = false;
    bool grad_ready = false;  // set by backward, cleared by zero_grads

    std::size_t size() const noexcept { return value.size(); }
    std::size_t masked_count() const noexcept;
};

}  // namespace lth
