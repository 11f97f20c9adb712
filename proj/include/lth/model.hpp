// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lth/autograd.hpp"
#include "lth/checkpoint.hpp"
#include "lth/parameter.hpp"
#include "lth/rng.hpp"

namespace lth {

enum class LayerKind { Conv, Linear, Relu, Dropout, Flatten, Pool };

std::string_view to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::string name;   // parameters are registered as "<name>.weight" / "<name>.bias"
    std::string block;  // backbone block ("b1".."bn") or "head"
    std::size_t in = 0;       // conv: input channels, linear: input features
    std::size_t out = 0;      // conv: filters, linear: output features
    std::size_t kernel = 0;   // conv / pool window
    std::size_t stride = 1;
    std::size_t padding = 0;
    double rate = 0.0;        // dropout
    bool bias = true;

    static LayerSpec conv(std::string name, std::string block, std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride, std::size_t padding, bool bias = true);
    static LayerSpec linear(std::string name, std::string block, std::size_t in, std::size_t out, bool bias = true);
    static LayerSpec relu(std::string name, std::string block);
    static LayerSpec pool(std::string name, std::string block, std::size_t size, std::size_t stride);
    static LayerSpec dropout(std::string name, std::string block, double rate);
    static LayerSpec flatten(std::string name, std::string block);
};

/// Parametric description of the classifier: a plain conv backbone of
/// conv(3x3, pad 1) -> relu -> maxpool(2, stride 2) blocks, then
/// flatten -> linear(head_hidden) -> relu -> dropout -> linear(classes).
struct ArchitectureConfig {
    std::size_t channels = 3;
    std::size_t input_size = 32;
    std::vector<std::size_t> conv_channels{8, 16, 32};
    std::size_t kernel = 3;
    std::size_t pool = 2;
    std::size_t head_hidden = 256;
    double dropout = 0.4;
    std::size_t classes = 8;
    bool bias = true;
};

std::vector<LayerSpec> default_layers(const ArchitectureConfig& config);

class Network {
public:
    /// Logits for a batch [N x C x H x W]. Dropout draws from `dropout_rng`
    /// in train mode and is the identity in eval mode.
    Var forward(Tape& tape, Var input, Mode mode, Rng& dropout_rng);
    /// Eval-mode logits without keeping a tape.
    Tensor logits(const Tensor& batch);

    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    Parameter& parameter(std::string_view name);
    const Parameter& parameter(std::string_view name) const;

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    /// Backbone blocks in order; the head is not included.
    const std::vector<std::string>& backbone_blocks() const noexcept { return backbone_blocks_; }
    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t class_count() const noexcept { return classes_; }
    std::size_t prunable_count() const;

private:
    friend Network build_network(const std::vector<LayerSpec>&, const Shape&, Rng&);

    struct Binding {
        int weight = -1;
        int bias = -1;
    };

    std::vector<LayerSpec> layers_;
    std::vector<Binding> bindings_;
    std::vector<Parameter> params_;
    std::vector<std::string> backbone_blocks_;
    Shape input_shape_;
    std::size_t classes_ = 0;
};

/// Validates that consecutive layers compose for inputs of shape
/// `input_chw` and initializes weights uniformly in +-sqrt(1/fan_in)
/// (biases zero). Weights are prunable; biases are not.
Network build_network(const std::vector<LayerSpec>& layers, const Shape& input_chw, Rng& rng);
Network build_network(const ArchitectureConfig& config, Rng& rng);

enum class FreezePolicy {
    L0,    // only the last backbone block and the head train
    Full,  // everything trains
};

void set_freeze_policy(Network& net, FreezePolicy policy);

/// Records the current values as the rewind target. May be called once.
void snapshot_init(Network& net);

// Weight files use the checkpoint tensor table: "<param>" (value),
// "<param>.mask" (u8), "<param>.init" (snapshot, when taken) and
// "<param>.trainable" (u8 scalar).
void export_parameters(const Network& net, TensorTable& table);
void import_parameters(Network& net, const TensorTable& table);
/// Copies only backbone values from `table`, leaving masks, snapshots and
/// the head untouched. Used to start from a previously trained backbone.
void import_backbone(Network& net, const TensorTable& table);

void save_weights(const Network& net, const std::filesystem::path& path);
void load_weights(Network& net, const std::filesystem::path& path);

}  // namespace lth
