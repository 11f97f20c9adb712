// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lth/parameter.hpp"
#include "lth/rng.hpp"
#include "lth/tensor.hpp"

namespace lth {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended after their inputs, so the
/// recording order is a topological order and backward walks it in reverse,
/// visiting every node once.
///
/// Gradients of interior nodes are recomputed on every backward call;
/// gradients of leaves and parameters accumulate across calls until reset.
/// A tape is single-writer; distinct tapes may be used from distinct threads.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    /// With grad_enabled == false parameters bind as constants and no
    /// backward closures are kept.
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Input that never receives a gradient.
    Var constant(Tensor value);
    /// Input whose gradient is kept on the tape (see grad()).
    Var leaf(Tensor value);
    /// Binds a parameter by reference. Its gradient accumulates into
    /// p.grad when p.trainable; frozen parameters are treated as constants.
    Var parameter(Parameter& p);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    /// Accumulated gradient of a leaf (zeros if none has reached it).
    const Tensor& grad(Var v) const;

    void backward(Var loss);
    void zero_leaf_grads();

    std::size_t size() const noexcept { return nodes_.size(); }

    // Used by operation implementations.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);
    /// Mutable gradient buffer of an input, zero-initialized on first use.
    Tensor& grad_buffer(Var v);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_live = false;
        bool requires_grad = false;
        bool is_leaf = false;
        Parameter* param = nullptr;
        std::vector<Var> inputs;
        BackwardFn backward;
    };
    Node& node(Var v);
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

enum class Mode { Train, Eval };

// Differentiable operations. Every op records a node only when at least one
// input requires a gradient; otherwise it is a pure forward computation.

/// [m x k] * [k x n] -> [m x n]
Var matmul(Var a, Var b);
/// Adds a per-channel bias b[F] along axis 1 of x[N x F x ...].
Var add_bias(Var x, Var b);
/// Cross-correlation of x[N x C x H x W] with kernel[F x C x kh x kw].
Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t padding);
Var relu(Var x);
/// Max pooling over size x size windows; ties resolve to the first maximum.
Var max_pool2d(Var x, std::size_t size, std::size_t stride);
/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); eval mode is the identity.
Var dropout(Var x, double rate, Mode mode, Rng& rng);
/// [N x ...] -> [N x prod(...)]
Var flatten(Var x);
Var mul(Var a, Var b);
Var sum(Var x);
/// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> labels);

/// Output spatial extent of a convolution or pooling window.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);

}  // namespace lth
