// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lth/error.hpp"

namespace lth {

Parameter::Parameter(std::string name_, Tensor value_, std::string block_, bool prunable_)
    : name(std::move(name_)),
      block(std::move(block_)),
      value(std::move(value_)),
      grad(value.shape(), 0.0f),
      mask(value.shape(), 1.0f),
      prunable(prunable_) {}

std::size_t Parameter::masked_count() const noexcept {
    return static_cast<std::size_t>(std::count(mask.data().begin(), mask.data().end(), 0.0f));
}

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Linear: return "linear";
        case LayerKind::Relu: return "relu";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Pool: return "pool";
    }
    return "unknown";
}

LayerSpec LayerSpec::conv(std::string name, std::string block, std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride, std::size_t padding, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.name = std::move(name);
    s.block = std::move(block);
    s.in = in;
    s.out = out;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::linear(std::string name, std::string block, std::size_t in, std::size_t out, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::Linear;
    s.name = std::move(name);
    s.block = std::move(block);
    s.in = in;
    s.out = out;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::relu(std::string name, std::string block) {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    s.name = std::move(name);
    s.block = std::move(block);
    return s;
}

LayerSpec LayerSpec::pool(std::string name, std::string block, std::size_t size, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::Pool;
    s.name = std::move(name);
    s.block = std::move(block);
    s.kernel = size;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::dropout(std::string name, std::string block, double rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.name = std::move(name);
    s.block = std::move(block);
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::flatten(std::string name, std::string block) {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    s.name = std::move(name);
    s.block = std::move(block);
    return s;
}

std::vector<LayerSpec> default_layers(const ArchitectureConfig& config) {
    std::vector<LayerSpec> layers;
    std::size_t channels = config.channels;
    std::size_t extent = config.input_size;
    for (std::size_t b = 0; b < config.conv_channels.size(); ++b) {
        const std::string block = "b" + std::to_string(b + 1);
        const std::string prefix = "backbone." + block + ".";
        layers.push_back(LayerSpec::conv(prefix + "conv", block, channels, config.conv_channels[b], config.kernel, 1,
                                         config.kernel / 2, config.bias));
        layers.push_back(LayerSpec::relu(prefix + "relu", block));
        layers.push_back(LayerSpec::pool(prefix + "pool", block, config.pool, config.pool));
        channels = config.conv_channels[b];
        extent = extent / config.pool;
    }
    layers.push_back(LayerSpec::flatten("head.flatten", "head"));
    layers.push_back(LayerSpec::linear("head.fc1", "head", channels * extent * extent, config.head_hidden, config.bias));
    layers.push_back(LayerSpec::relu("head.relu", "head"));
    layers.push_back(LayerSpec::dropout("head.dropout", "head", config.dropout));
    layers.push_back(LayerSpec::linear("head.fc2", "head", config.head_hidden, config.classes, config.bias));
    return layers;
}

namespace {

std::string describe(const LayerSpec& s) { return "'" + s.name + "' (" + std::string(to_string(s.kind)) + ")"; }

[[noreturn]] void compose_error(const LayerSpec* prev, const LayerSpec& cur, const std::string& why) {
    std::string from = prev ? describe(*prev) : std::string("the input");
    throw BuildError("layer " + describe(cur) + " cannot follow " + from + ": " + why);
}

Tensor uniform_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace

Network build_network(const std::vector<LayerSpec>& layers, const Shape& input_chw, Rng& rng) {
    if (input_chw.size() != 3) throw BuildError("input shape must be [C x H x W], got " + to_string(input_chw));
    if (layers.empty()) throw BuildError("network has no layers");

    Network net;
    net.layers_ = layers;
    net.input_shape_ = input_chw;

    Shape cur = input_chw;  // per-sample shape
    const LayerSpec* prev = nullptr;
    for (const auto& s : layers) {
        Network::Binding bind;
        const bool spatial = cur.size() == 3;
        switch (s.kind) {
            case LayerKind::Conv: {
                if (!spatial) compose_error(prev, s, "expects a [C x H x W] input, got " + to_string(cur));
                if (cur[0] != s.in) {
                    compose_error(prev, s, "expects " + std::to_string(s.in) + " channels, got " + std::to_string(cur[0]));
                }
                if (s.out == 0 || s.kernel == 0 || s.stride == 0) compose_error(prev, s, "zero-sized convolution");
                if (s.kernel > cur[1] + 2 * s.padding || s.kernel > cur[2] + 2 * s.padding) {
                    compose_error(prev, s, "kernel larger than padded input " + to_string(cur));
                }
                const std::size_t fan_in = s.in * s.kernel * s.kernel;
                bind.weight = static_cast<int>(net.params_.size());
                net.params_.emplace_back(s.name + ".weight",
                                         uniform_init(Shape{s.out, s.in, s.kernel, s.kernel}, fan_in, rng), s.block,
                                         true);
                if (s.bias) {
                    bind.bias = static_cast<int>(net.params_.size());
                    net.params_.emplace_back(s.name + ".bias", Tensor(Shape{s.out}, 0.0f), s.block, false);
                }
                cur = {s.out, conv_output_extent(cur[1], s.kernel, s.stride, s.padding),
                       conv_output_extent(cur[2], s.kernel, s.stride, s.padding)};
                break;
            }
            case LayerKind::Pool: {
                if (!spatial) compose_error(prev, s, "expects a [C x H x W] input, got " + to_string(cur));
                if (s.kernel == 0 || s.stride == 0 || s.kernel > cur[1] || s.kernel > cur[2]) {
                    compose_error(prev, s, "pool window " + std::to_string(s.kernel) + " does not fit input " +
                                               to_string(cur));
                }
                cur = {cur[0], conv_output_extent(cur[1], s.kernel, s.stride, 0),
                       conv_output_extent(cur[2], s.kernel, s.stride, 0)};
                break;
            }
            case LayerKind::Flatten:
                cur = {numel(cur)};
                break;
            case LayerKind::Linear: {
                if (cur.size() != 1) compose_error(prev, s, "expects a flat input, got " + to_string(cur));
                if (cur[0] != s.in) {
                    compose_error(prev, s, "expects " + std::to_string(s.in) + " features, got " + std::to_string(cur[0]));
                }
                if (s.out == 0) compose_error(prev, s, "zero output features");
                bind.weight = static_cast<int>(net.params_.size());
                net.params_.emplace_back(s.name + ".weight", uniform_init(Shape{s.in, s.out}, s.in, rng), s.block, true);
                if (s.bias) {
                    bind.bias = static_cast<int>(net.params_.size());
                    net.params_.emplace_back(s.name + ".bias", Tensor(Shape{s.out}, 0.0f), s.block, false);
                }
                cur = {s.out};
                break;
            }
            case LayerKind::Dropout:
                if (!(s.rate >= 0.0 && s.rate < 1.0)) compose_error(prev, s, "dropout rate outside [0, 1)");
                break;
            case LayerKind::Relu:
                break;
        }
        net.bindings_.push_back(bind);
        if (s.block != "head" &&
            std::find(net.backbone_blocks_.begin(), net.backbone_blocks_.end(), s.block) == net.backbone_blocks_.end()) {
            net.backbone_blocks_.push_back(s.block);
        }
        prev = &s;
    }
    if (cur.size() != 1) throw BuildError("network output must be flat logits, got " + to_string(cur));
    if (cur[0] < 2) throw BuildError("class count must be at least 2, got " + std::to_string(cur[0]));
    net.classes_ = cur[0];

    for (std::size_t i = 0; i < net.params_.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (net.params_[i].name == net.params_[j].name) {
                throw BuildError("duplicate parameter name '" + net.params_[i].name + "'");
            }
        }
    }
    return net;
}

Network build_network(const ArchitectureConfig& config, Rng& rng) {
    if (config.classes < 2) throw BuildError("class count must be at least 2");
    return build_network(default_layers(config), Shape{config.channels, config.input_size, config.input_size}, rng);
}

Var Network::forward(Tape& tape, Var input, Mode mode, Rng& dropout_rng) {
    const Tensor& x = input.value();
    if (x.rank() != 4 || x.dim(1) != input_shape_[0] || x.dim(2) != input_shape_[1] || x.dim(3) != input_shape_[2]) {
        throw DimensionError("network expects input [N x " + std::to_string(input_shape_[0]) + " x " +
                             std::to_string(input_shape_[1]) + " x " + std::to_string(input_shape_[2]) + "], got " +
                             to_string(x.shape()));
    }
    Var v = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& s = layers_[i];
        const Binding& b = bindings_[i];
        switch (s.kind) {
            case LayerKind::Conv:
                v = conv2d(v, tape.parameter(params_[b.weight]), s.stride, s.padding);
                if (b.bias >= 0) v = add_bias(v, tape.parameter(params_[b.bias]));
                break;
            case LayerKind::Linear:
                v = matmul(v, tape.parameter(params_[b.weight]));
                if (b.bias >= 0) v = add_bias(v, tape.parameter(params_[b.bias]));
                break;
            case LayerKind::Relu: v = relu(v); break;
            case LayerKind::Pool: v = max_pool2d(v, s.kernel, s.stride); break;
            case LayerKind::Dropout: v = dropout(v, s.rate, mode, dropout_rng); break;
            case LayerKind::Flatten: v = flatten(v); break;
        }
    }
    return v;
}

Tensor Network::logits(const Tensor& batch) {
    Tape tape(/*grad_enabled=*/false);
    Rng unused(0);
    return forward(tape, tape.constant(batch), Mode::Eval, unused).value();
}

Parameter& Network::parameter(std::string_view name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw IndexError("no parameter named '" + std::string(name) + "'");
}

const Parameter& Network::parameter(std::string_view name) const {
    return const_cast<Network*>(this)->parameter(name);
}

std::size_t Network::prunable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.prunable) n += p.size();
    }
    return n;
}

void set_freeze_policy(Network& net, FreezePolicy policy) {
    const auto& blocks = net.backbone_blocks();
    const std::string last = blocks.empty() ? std::string() : blocks.back();
    for (auto& p : net.parameters()) {
        p.trainable = policy == FreezePolicy::Full || p.block == "head" || p.block == last;
    }
}

void snapshot_init(Network& net) {
    for (const auto& p : net.parameters()) {
        if (p.has_snapshot) throw ContractError("initial snapshot already taken for '" + p.name + "'");
    }
    for (auto& p : net.parameters()) {
        p.init_snapshot = p.value;
        p.has_snapshot = true;
    }
}

namespace {

std::vector<std::uint8_t> mask_bytes(const Tensor& mask) {
    std::vector<std::uint8_t> out(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] != 0.0f ? 1 : 0;
    return out;
}

bool is_parameter_value_entry(const TableEntry& e) {
    if (e.dtype != DType::F32) return false;
    if (e.name.rfind("meta.", 0) == 0 || e.name.rfind("adam.", 0) == 0) return false;
    for (std::string_view suffix : {".init", ".m", ".v"}) {
        if (e.name.size() > suffix.size() && e.name.compare(e.name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            return false;
        }
    }
    return true;
}

Shape entry_shape(const TableEntry& e) { return Shape(e.dims.begin(), e.dims.end()); }

}  // namespace

void export_parameters(const Network& net, TensorTable& table) {
    for (const auto& p : net.parameters()) {
        table.add_f32(p.name, p.value);
        table.add_u8(p.name + ".mask", p.value.shape(), mask_bytes(p.mask));
        if (p.has_snapshot) table.add_f32(p.name + ".init", p.init_snapshot);
        const std::uint8_t flag = p.trainable ? 1 : 0;
        table.add_u8(p.name + ".trainable", Shape{}, std::span(&flag, 1));
    }
}

void import_parameters(Network& net, const TensorTable& table) {
    std::vector<std::string> problems;
    auto check = [&](const std::string& name, DType dtype, const Shape& shape) {
        const TableEntry* e = table.find(name);
        if (!e) {
            problems.push_back("missing tensor '" + name + "'");
            return false;
        }
        if (e->dtype != dtype || entry_shape(*e) != shape) {
            problems.push_back("tensor '" + name + "' has shape " + to_string(entry_shape(*e)) + ", expected " +
                               to_string(shape));
            return false;
        }
        return true;
    };
    for (const auto& p : net.parameters()) {
        check(p.name, DType::F32, p.value.shape());
        check(p.name + ".mask", DType::U8, p.value.shape());
        check(p.name + ".trainable", DType::U8, Shape{});
        if (table.contains(p.name + ".init")) check(p.name + ".init", DType::F32, p.value.shape());
    }
    for (const auto& e : table.entries()) {
        if (!is_parameter_value_entry(e)) continue;
        const bool known = std::any_of(net.parameters().begin(), net.parameters().end(),
                                       [&](const Parameter& p) { return p.name == e.name; });
        if (!known) problems.push_back("unexpected tensor '" + e.name + "'");
    }
    if (!problems.empty()) {
        std::ostringstream os;
        os << "weight file does not match the network:";
        for (const auto& p : problems) os << "\n  " << p;
        throw LoadError(os.str());
    }

    for (auto& p : net.parameters()) {
        Tensor value = table.f32(p.name);
        const auto mask = table.u8(p.name + ".mask");
        Tensor m(p.value.shape());
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] > 1) throw LoadError("mask of '" + p.name + "' has a non-binary entry");
            m[i] = static_cast<float>(mask[i]);
            if (mask[i] == 0 && value[i] != 0.0f) {
                throw LoadError("'" + p.name + "' has a nonzero value at a masked position");
            }
        }
        p.value = std::move(value);
        p.mask = std::move(m);
        p.trainable = table.u8(p.name + ".trainable").at(0) != 0;
        p.has_snapshot = table.contains(p.name + ".init");
        p.init_snapshot = p.has_snapshot ? table.f32(p.name + ".init") : Tensor();
        p.grad = Tensor(p.value.shape(), 0.0f);
        p.grad_ready = false;
    }
}

void import_backbone(Network& net, const TensorTable& table) {
    std::vector<std::string> problems;
    for (const auto& p : net.parameters()) {
        if (p.block == "head") continue;
        const TableEntry* e = table.find(p.name);
        if (!e) {
            problems.push_back("missing tensor '" + p.name + "'");
        } else if (e->dtype != DType::F32 || entry_shape(*e) != p.value.shape()) {
            problems.push_back("tensor '" + p.name + "' has shape " + to_string(entry_shape(*e)) + ", expected " +
                               to_string(p.value.shape()));
        }
    }
    if (!problems.empty()) {
        std::ostringstream os;
        os << "backbone weights do not match the network:";
        for (const auto& p : problems) os << "\n  " << p;
        throw LoadError(os.str());
    }
    for (auto& p : net.parameters()) {
        if (p.block == "head") continue;
        p.value = table.f32(p.name);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            if (p.mask[i] == 0.0f) p.value[i] = 0.0f;
        }
    }
}

void save_weights(const Network& net, const std::filesystem::path& path) {
    TensorTable table;
    export_parameters(net, table);
    write_checkpoint(path, table);
}

void load_weights(Network& net, const std::filesystem::path& path) { import_parameters(net, read_checkpoint(path)); }

}  // namespace lth
