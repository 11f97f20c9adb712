// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lth/rng.hpp"
#include "lth/tensor.hpp"

namespace lth {

inline constexpr std::size_t kIsicClassCount = 8;

/// Label codes in class-index order.
inline constexpr std::array<std::string_view, kIsicClassCount> kClassCodes{"MEL", "NV", "BCC", "AK",
                                                                          "BK",  "DF", "VASC", "SCC"};
inline constexpr std::array<std::string_view, kIsicClassCount> kClassNames{
    "Melanoma",          "Melanocytic nevus", "Basal cell carcinoma", "Actinic keratosis",
    "Benign keratosis",  "Dermatofibroma",    "Vascular lesion",      "Squamous cell carcinoma"};

/// Index of a class code or full class name (case-insensitive).
std::optional<std::size_t> class_index(std::string_view label);

enum class Sex { Male, Female };
enum class Split { Train, Test };

std::string_view to_string(Sex s);
std::string_view to_string(Split s);

struct SampleRecord {
    std::string image_path;  // as written in the manifest
    Tensor image;            // [C x H x W], values in [0, 1]
    std::size_t label = 0;
    std::optional<int> age;
    std::optional<Sex> sex;
    Split split = Split::Train;
};

struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;
};

struct DatasetManifest {
    std::vector<SampleRecord> records;
    std::size_t class_count = kIsicClassCount;
    std::vector<std::size_t> class_counts;
    Normalization normalization;  // from the training split

    std::vector<std::size_t> indices(Split split) const;
};

/// Reads `image,label,age,sex,split` rows; image paths resolve against
/// `image_dir`. Empty age/sex cells are absent, not zero.
DatasetManifest load_manifest(const std::filesystem::path& csv_path, const std::filesystem::path& image_dir,
                              std::size_t class_count = kIsicClassCount);

/// Per-channel mean/std of the centre-cropped training images.
Normalization compute_normalization(const DatasetManifest& manifest, std::size_t target_size);

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t n = 1600;
    std::size_t class_count = kIsicClassCount;
    std::string imbalance = "uniform";   // uniform | isic-like
    std::string subgroups = "balanced";  // balanced | isic-like
    std::size_t image_size = 32;
    double test_fraction = 0.2;
};

/// Per-class sample counts for an imbalance profile (every class gets >= 1).
std::vector<std::size_t> class_allocation(const std::string& profile, std::size_t n, std::size_t class_count);

/// Writes `n` PPM images under out_dir/images and out_dir/manifest.csv.
/// Each class is a parametric blob family (hue, size, eccentricity, border
/// irregularity) over a jittered skin-tone background with noise.
DatasetManifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

enum class SamplingMode {
    Replacement,  // each draw picks a class uniformly, then a record uniformly
    Stratified,   // each batch holds batch/C records per class (remainder random)
};

/// Class-balanced sampler over one split. The classes it balances are the
/// classes present anywhere in the manifest; each must have a record in
/// the sampled split.
class BalancedSampler {
public:
    BalancedSampler(const DatasetManifest& manifest, Split split, SamplingMode mode = SamplingMode::Replacement);

    std::vector<std::size_t> next_batch(std::size_t batch_size, Rng& rng) const;
    const std::vector<std::size_t>& classes() const noexcept { return classes_; }

private:
    SamplingMode mode_;
    std::vector<std::size_t> classes_;
    std::vector<std::vector<std::size_t>> members_;  // parallel to classes_
};

std::vector<std::vector<std::size_t>> balanced_batches(const DatasetManifest& manifest, std::size_t batch_size,
                                                       std::size_t batches, Rng& rng,
                                                       SamplingMode mode = SamplingMode::Replacement);

/// Reverses the W axis of a [C x H x W] image.
Tensor hflip(const Tensor& image);
/// Flips with probability p. Always consumes exactly one draw.
Tensor augment_hflip(const Tensor& image, double p, Rng& rng);

/// Centre crop to target_size x target_size, then (x - mean) / std per channel.
Tensor preprocess(const Tensor& image, std::size_t target_size, const Normalization& norm);

struct Batch {
    Tensor images;  // [N x C x S x S]
    std::vector<std::int32_t> labels;
};

/// Assembles a preprocessed batch. With a non-null rng each image is
/// flipped with probability flip_p before preprocessing.
Batch make_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& indices, std::size_t target_size,
                 Rng* augmentation_rng = nullptr, double flip_p = 0.5);

}  // namespace lth
