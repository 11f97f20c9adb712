// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"
#include "lth/error.hpp"

namespace lth {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Tape::Node& Tape::node(Var v) {
    if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("variable does not belong to this tape");
    return nodes_[v.id()];
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("variable does not belong to this tape");
    return nodes_[v.id()];
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.grad = Tensor(value.shape(), 0.0f);
    n.value = std::move(value);
    n.is_leaf = true;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
    Node n;
    n.param = &p;
    n.is_leaf = true;
    n.requires_grad = grad_enabled_ && p.trainable;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
    const Node& n = node(v);
    return n.param ? n.param->value : n.value;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.param) return n.param->grad;
    if (!n.is_leaf) throw ContractError("grad() is only available for leaves");
    return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = node(v);
    if (n.param) {
        Parameter& p = *n.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0f);
        return p.grad;
    }
    if (!n.is_leaf && !n.grad_live) {
        if (n.grad.shape() == n.value.shape()) {
            n.grad.fill(0.0f);
        } else {
            n.grad = Tensor(n.value.shape(), 0.0f);
        }
        n.grad_live = true;
    }
    return n.grad;
}

void Tape::zero_leaf_grads() {
    for (auto& n : nodes_) {
        if (n.is_leaf && !n.param && n.requires_grad) n.grad.fill(0.0f);
    }
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [this](Var v) { return requires_grad(v); });
    if (n.requires_grad) {
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
    const Tensor& lv = value(loss);
    if (lv.size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + to_string(lv.shape()));
    }
    for (auto& n : nodes_) {
        if (!n.is_leaf) n.grad_live = false;
    }
    if (!requires_grad(loss)) return;
    grad_buffer(loss)[0] += 1.0f;

    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.is_leaf || !n.requires_grad || !n.grad_live) continue;
        n.backward(*this, n.grad);
    }
    for (auto& n : nodes_) {
        if (n.param && n.requires_grad) {
            grad_buffer(Var(this, static_cast<std::size_t>(&n - nodes_.data())));
            n.param->grad_ready = true;
        }
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace {

Tape& tape_of(Var a, Var b) {
    if (a.tape() == nullptr || a.tape() != b.tape()) throw ContractError("operands live on different tapes");
    return *a.tape();
}

}  // namespace

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw ParameterError("stride must be at least 1");
    if (kernel == 0 || kernel > input + 2 * padding) {
        throw DimensionError("window of " + std::to_string(kernel) + " exceeds padded extent " +
                             std::to_string(input + 2 * padding));
    }
    return (input + 2 * padding - kernel) / stride + 1;
}

Var matmul(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul shape mismatch: " + to_string(av.shape()) + " * " + to_string(bv.shape()));
    }
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out(Shape{m, n});
    detail::gemm(av.ptr(), bv.ptr(), out.ptr(), m, k, n, false);

    return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (t.requires_grad(a)) {
            std::vector<float> bt(k * n);
            detail::transpose(bv.ptr(), bt.data(), k, n);
            detail::gemm(g.ptr(), bt.data(), t.grad_buffer(a).ptr(), m, n, k, true);
        }
        if (t.requires_grad(b)) {
            std::vector<float> at(m * k);
            detail::transpose(av.ptr(), at.data(), m, k);
            detail::gemm(at.data(), g.ptr(), t.grad_buffer(b).ptr(), k, m, n, true);
        }
    });
}

Var add_bias(Var x, Var b) {
    Tape& tape = tape_of(x, b);
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.rank() < 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
        throw DimensionError("bias shape " + to_string(bv.shape()) + " does not match input " + to_string(xv.shape()));
    }
    const std::size_t batch = xv.dim(0), channels = xv.dim(1), inner = xv.size() / (batch * channels);
    Tensor out = xv;
    for (std::size_t nidx = 0; nidx < batch; ++nidx) {
        for (std::size_t c = 0; c < channels; ++c) {
            float* p = out.ptr() + (nidx * channels + c) * inner;
            const float bias = bv[c];
            for (std::size_t i = 0; i < inner; ++i) p[i] += bias;
        }
    }
    return tape.record(std::move(out), {x, b}, [x, b, batch, channels, inner](Tape& t, const Tensor& g) {
        if (t.requires_grad(x)) {
            Tensor& gx = t.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t c = 0; c < channels; ++c) {
                double acc = gb[c];
                for (std::size_t nidx = 0; nidx < batch; ++nidx) {
                    const float* p = g.ptr() + (nidx * channels + c) * inner;
                    for (std::size_t i = 0; i < inner; ++i) acc += p[i];
                }
                gb[c] = static_cast<float>(acc);
            }
        }
    });
}

namespace {

struct ConvGeometry {
    std::size_t n, c, h, w, f, kh, kw, stride, pad, ho, wo;
    std::size_t patch() const { return c * kh * kw; }
    std::size_t positions() const { return ho * wo; }
};

// col[(c*kh + i)*kw + j][s*P + oh*wo + ow] = x[s, c, oh*stride + i - pad, ow*stride + j - pad]
void im2col(const ConvGeometry& g, const float* x, float* col) {
    const std::size_t cols = g.n * g.positions();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                float* row = col + ((c * g.kh + i) * g.kw + j) * cols;
                for (std::size_t s = 0; s < g.n; ++s) {
                    const float* plane = x + (s * g.c + c) * g.h * g.w;
                    float* dst = row + s * g.positions();
                    for (std::size_t oh = 0; oh < g.ho; ++oh) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oh * g.stride + i) -
                                                 static_cast<std::ptrdiff_t>(g.pad);
                        float* out = dst + oh * g.wo;
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) {
                            std::fill(out, out + g.wo, 0.0f);
                            continue;
                        }
                        const float* src = plane + static_cast<std::size_t>(y) * g.w;
                        for (std::size_t ow = 0; ow < g.wo; ++ow) {
                            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ow * g.stride + j) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            out[ow] = (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0f : src[xx];
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const float* col, float* x) {
    const std::size_t cols = g.n * g.positions();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const float* row = col + ((c * g.kh + i) * g.kw + j) * cols;
                for (std::size_t s = 0; s < g.n; ++s) {
                    float* plane = x + (s * g.c + c) * g.h * g.w;
                    const float* src = row + s * g.positions();
                    for (std::size_t oh = 0; oh < g.ho; ++oh) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oh * g.stride + i) -
                                                 static_cast<std::ptrdiff_t>(g.pad);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
                        float* dst = plane + static_cast<std::size_t>(y) * g.w;
                        for (std::size_t ow = 0; ow < g.wo; ++ow) {
                            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ow * g.stride + j) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (xx >= 0 && xx < static_cast<std::ptrdiff_t>(g.w)) dst[xx] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t padding) {
    Tape& tape = tape_of(x, kernel);
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(1)) {
        throw DimensionError("conv2d shape mismatch: input " + to_string(xv.shape()) + ", kernel " +
                             to_string(kv.shape()));
    }
    if (stride == 0) throw ParameterError("conv2d stride must be at least 1");
    if (kv.dim(2) > xv.dim(2) + 2 * padding || kv.dim(3) > xv.dim(3) + 2 * padding) {
        throw DimensionError("conv2d kernel " + to_string(kv.shape()) + " larger than padded input " +
                             to_string(xv.shape()) + " with padding " + std::to_string(padding));
    }
    ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0), kv.dim(2), kv.dim(3), stride, padding,
                     0, 0};
    geo.ho = conv_output_extent(geo.h, geo.kh, stride, padding);
    geo.wo = conv_output_extent(geo.w, geo.kw, stride, padding);

    const std::size_t cols = geo.n * geo.positions();
    std::vector<float> col(geo.patch() * cols);
    im2col(geo, xv.ptr(), col.data());
    std::vector<float> out_perm(geo.f * cols);
    detail::gemm(kv.ptr(), col.data(), out_perm.data(), geo.f, geo.patch(), cols, false);

    Tensor out(Shape{geo.n, geo.f, geo.ho, geo.wo});
    for (std::size_t f = 0; f < geo.f; ++f) {
        for (std::size_t s = 0; s < geo.n; ++s) {
            std::copy_n(out_perm.data() + f * cols + s * geo.positions(), geo.positions(),
                        out.ptr() + (s * geo.f + f) * geo.positions());
        }
    }
    if (!kernel.requires_grad()) col.clear();

    return tape.record(std::move(out), {x, kernel}, [x, kernel, geo, col = std::move(col)](Tape& t, const Tensor& g) {
        const std::size_t cols = geo.n * geo.positions();
        std::vector<float> gperm(geo.f * cols);
        for (std::size_t f = 0; f < geo.f; ++f) {
            for (std::size_t s = 0; s < geo.n; ++s) {
                std::copy_n(g.ptr() + (s * geo.f + f) * geo.positions(), geo.positions(),
                            gperm.data() + f * cols + s * geo.positions());
            }
        }
        if (t.requires_grad(kernel)) {
            std::vector<float> colt(col.size());
            detail::transpose(col.data(), colt.data(), geo.patch(), cols);
            detail::gemm(gperm.data(), colt.data(), t.grad_buffer(kernel).ptr(), geo.f, cols, geo.patch(), true);
        }
        if (t.requires_grad(x)) {
            const Tensor& kv = t.value(kernel);
            std::vector<float> kt(kv.size());
            detail::transpose(kv.ptr(), kt.data(), geo.f, geo.patch());
            std::vector<float> gcol(geo.patch() * cols);
            detail::gemm(kt.data(), gperm.data(), gcol.data(), geo.patch(), geo.f, cols, false);
            col2im_add(geo, gcol.data(), t.grad_buffer(x).ptr());
        }
    });
}

Var relu(Var x) {
    Tape& tape = *x.tape();
    const Tensor& xv = x.value();
    Tensor out = xv;
    for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
    return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > 0.0f) gx[i] += g[i];
        }
    });
}

Var max_pool2d(Var x, std::size_t size, std::size_t stride) {
    Tape& tape = *x.tape();
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw DimensionError("max_pool2d expects a 4-d input, got " + to_string(xv.shape()));
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::size_t ho = conv_output_extent(h, size, stride, 0);
    const std::size_t wo = conv_output_extent(w, size, stride, 0);
    Tensor out(Shape{n, c, ho, wo});
    std::vector<std::uint32_t> argmax(out.size());
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const float* src = xv.ptr() + plane * h * w;
        for (std::size_t oh = 0; oh < ho; ++oh) {
            for (std::size_t ow = 0; ow < wo; ++ow) {
                std::size_t best = (oh * stride) * w + ow * stride;
                for (std::size_t i = 0; i < size; ++i) {
                    for (std::size_t j = 0; j < size; ++j) {
                        const std::size_t idx = (oh * stride + i) * w + ow * stride + j;
                        if (src[idx] > src[best]) best = idx;
                    }
                }
                const std::size_t o = plane * ho * wo + oh * wo + ow;
                out[o] = src[best];
                argmax[o] = static_cast<std::uint32_t>(plane * h * w + best);
            }
        }
    }
    return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
    });
}

Var dropout(Var x, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::Eval || rate == 0.0) return x;
    Tape& tape = *x.tape();
    const Tensor& xv = x.value();
    const float scale = static_cast<float>(1.0 / (1.0 - rate));
    std::vector<float> keep(xv.size());
    Tensor out = xv;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        keep[i] = rng.uniform() < rate ? 0.0f : scale;
        out[i] *= keep[i];
    }
    return tape.record(std::move(out), {x}, [x, keep = std::move(keep)](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
    });
}

Var flatten(Var x) {
    Tape& tape = *x.tape();
    const Tensor& xv = x.value();
    if (xv.rank() < 1) throw DimensionError("flatten requires a batch axis");
    const std::size_t n = xv.dim(0);
    Tensor out = xv.reshaped(Shape{n, xv.size() / n});
    return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var mul(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) {
        throw DimensionError("mul shape mismatch: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var sum(Var x) {
    Tape& tape = *x.tape();
    double acc = 0.0;
    for (float v : x.value().data()) acc += v;
    return tape.record(Tensor::scalar(static_cast<float>(acc)), {x}, [x](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        const float s = g[0];
        for (auto& v : gx.data()) v += s;
    });
}

Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> labels) {
    Tape& tape = *logits.tape();
    const Tensor& lv = logits.value();
    if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
        throw DimensionError("cross entropy expects logits [N x C] with N labels, got " + to_string(lv.shape()) +
                             " and " + std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = lv.dim(0), c = lv.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw IndexError("label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                             " outside [0, " + std::to_string(c) + ")");
        }
    }
    std::vector<float> probs(n * c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = lv.ptr() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        const double log_z = std::log(z) + mx;
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = static_cast<float>(std::exp(row[j] - log_z));
        total += log_z - row[labels[i]];
    }
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    return tape.record(Tensor::scalar(static_cast<float>(total / static_cast<double>(n))), {logits},
                       [logits, n, c, probs = std::move(probs), lab = std::move(lab)](Tape& t, const Tensor& g) {
                           Tensor& gl = t.grad_buffer(logits);
                           const double scale = static_cast<double>(g[0]) / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) {
                               for (std::size_t j = 0; j < c; ++j) {
                                   const double target = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                                   gl[i * c + j] += static_cast<float>((probs[i * c + j] - target) * scale);
                               }
                           }
                       });
}

}  // namespace lth
