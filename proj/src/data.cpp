// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lth/error.hpp"
#include "lth/pnm.hpp"

namespace lth {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

Tensor to_tensor(const PnmImage& img) {
    Tensor t(Shape{img.channels, img.height, img.width});
    const float scale = 1.0f / static_cast<float>(img.maxval);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) {
                t[(c * img.height + y) * img.width + x] =
                    static_cast<float>(img.samples[(y * img.width + x) * img.channels + c]) * scale;
            }
        }
    }
    return t;
}

}  // namespace

std::optional<std::size_t> class_index(std::string_view label) {
    const std::string l = lower(trim(label));
    for (std::size_t i = 0; i < kIsicClassCount; ++i) {
        if (l == lower(kClassCodes[i]) || l == lower(kClassNames[i])) return i;
    }
    return std::nullopt;
}

std::string_view to_string(Sex s) { return s == Sex::Male ? "male" : "female"; }
std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == split) out.push_back(i);
    }
    return out;
}

DatasetManifest load_manifest(const std::filesystem::path& csv_path, const std::filesystem::path& image_dir,
                              std::size_t class_count) {
    if (class_count < 2 || class_count > kIsicClassCount) {
        throw ParameterError("class count must lie in [2, 8], got " + std::to_string(class_count));
    }
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot read manifest " + csv_path.string());

    DatasetManifest m;
    m.class_count = class_count;
    m.class_counts.assign(class_count, 0);

    std::string line;
    if (!std::getline(in, line)) throw IngestionError(csv_path.string() + ": empty manifest");
    {
        const auto cols = split_commas(line);
        const std::vector<std::string_view> expected{"image", "label", "age", "sex", "split"};
        if (cols.size() != expected.size() || !std::equal(cols.begin(), cols.end(), expected.begin())) {
            throw IngestionError(csv_path.string() + ": header must be 'image,label,age,sex,split'");
        }
    }
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto cols = split_commas(line);
        auto fail = [&](const std::string& why) -> IngestionError {
            return IngestionError(csv_path.string() + " row " + std::to_string(row) + ": " + why);
        };
        if (cols.size() != 5) throw fail("expected 5 columns, got " + std::to_string(cols.size()));

        SampleRecord r;
        r.image_path = std::string(cols[0]);
        const auto label = class_index(cols[1]);
        if (!label || *label >= class_count) throw fail("unknown label '" + std::string(cols[1]) + "'");
        r.label = *label;
        if (!cols[2].empty()) {
            int age = 0;
            auto [ptr, ec] = std::from_chars(cols[2].data(), cols[2].data() + cols[2].size(), age);
            if (ec != std::errc() || ptr != cols[2].data() + cols[2].size() || age < 0) {
                throw fail("invalid age '" + std::string(cols[2]) + "'");
            }
            r.age = age;
        }
        if (!cols[3].empty()) {
            const std::string s = lower(cols[3]);
            if (s == "male" || s == "m") {
                r.sex = Sex::Male;
            } else if (s == "female" || s == "f") {
                r.sex = Sex::Female;
            } else {
                throw fail("invalid sex '" + std::string(cols[3]) + "'");
            }
        }
        const std::string split = lower(cols[4]);
        if (split == "train") {
            r.split = Split::Train;
        } else if (split == "test") {
            r.split = Split::Test;
        } else {
            throw fail("invalid split '" + std::string(cols[4]) + "'");
        }
        const auto path = image_dir / r.image_path;
        if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
        r.image = to_tensor(read_pnm(path));
        m.class_counts[r.label]++;
        m.records.push_back(std::move(r));
    }
    if (m.records.empty()) throw IngestionError(csv_path.string() + ": manifest has no records");
    const std::size_t channels = m.records.front().image.dim(0);
    std::size_t smallest = SIZE_MAX;
    for (const auto& r : m.records) {
        if (r.image.dim(0) != channels) throw IngestionError("image " + r.image_path + " has a different channel count");
        smallest = std::min({smallest, r.image.dim(1), r.image.dim(2)});
    }
    if (!m.indices(Split::Train).empty()) m.normalization = compute_normalization(m, smallest);
    return m;
}

namespace {

// [C x H x W] -> [C x s x s] centred window.
Tensor center_crop(const Tensor& image, std::size_t s) {
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (s > h || s > w) {
        throw DimensionError("crop " + std::to_string(s) + "x" + std::to_string(s) + " larger than image " +
                             to_string(image.shape()));
    }
    if (s == h && s == w) return image;
    const std::size_t oy = (h - s) / 2, ox = (w - s) / 2;
    Tensor out(Shape{c, s, s});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < s; ++y) {
            const float* src = image.ptr() + (ch * h + oy + y) * w + ox;
            std::copy_n(src, s, out.ptr() + (ch * s + y) * s);
        }
    }
    return out;
}

}  // namespace

Normalization compute_normalization(const DatasetManifest& manifest, std::size_t target_size) {
    const auto train = manifest.indices(Split::Train);
    if (train.empty()) throw IngestionError("no training records to compute normalization from");
    const std::size_t channels = manifest.records[train.front()].image.dim(0);
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    std::size_t per_channel = 0;
    for (auto i : train) {
        const Tensor crop = center_crop(manifest.records[i].image, target_size);
        const std::size_t plane = target_size * target_size;
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t k = 0; k < plane; ++k) {
                const double v = crop[c * plane + k];
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        per_channel += plane;
    }
    Normalization norm;
    for (std::size_t c = 0; c < channels; ++c) {
        const double mean = sum[c] / static_cast<double>(per_channel);
        const double var = std::max(0.0, sq[c] / static_cast<double>(per_channel) - mean * mean);
        norm.mean.push_back(mean);
        norm.stddev.push_back(var > 1e-12 ? std::sqrt(var) : 1.0);
    }
    return norm;
}

Tensor preprocess(const Tensor& image, std::size_t target_size, const Normalization& norm) {
    if (image.rank() != 3) throw DimensionError("preprocess expects [C x H x W], got " + to_string(image.shape()));
    const std::size_t c = image.dim(0);
    if (norm.mean.size() != c || norm.stddev.size() != c) {
        throw DimensionError("normalization has " + std::to_string(norm.mean.size()) + " channels, image has " +
                             std::to_string(c));
    }
    Tensor out = center_crop(image, target_size);
    const std::size_t plane = target_size * target_size;
    for (std::size_t ch = 0; ch < c; ++ch) {
        if (!(norm.stddev[ch] > 0.0)) throw ParameterError("normalization std must be positive");
        const double mean = norm.mean[ch], inv = 1.0 / norm.stddev[ch];
        float* p = out.ptr() + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - mean) * inv);
    }
    return out;
}

Tensor hflip(const Tensor& image) {
    if (image.rank() != 3) throw DimensionError("hflip expects [C x H x W], got " + to_string(image.shape()));
    const std::size_t rows = image.dim(0) * image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src = image.ptr() + r * w;
        float* dst = out.ptr() + r * w;
        for (std::size_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
    }
    return out;
}

Tensor augment_hflip(const Tensor& image, double p, Rng& rng) {
    const bool flip = rng.uniform() < p;
    return flip ? hflip(image) : image;
}

Batch make_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& indices, std::size_t target_size,
                 Rng* augmentation_rng, double flip_p) {
    if (indices.empty()) throw DimensionError("empty batch");
    const std::size_t channels = manifest.records.at(indices.front()).image.dim(0);
    const std::size_t per = channels * target_size * target_size;
    Batch b{Tensor(Shape{indices.size(), channels, target_size, target_size}), {}};
    b.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const SampleRecord& r = manifest.records.at(indices[i]);
        const Tensor img = augmentation_rng ? augment_hflip(r.image, flip_p, *augmentation_rng) : r.image;
        const Tensor x = preprocess(img, target_size, manifest.normalization);
        if (x.size() != per) throw DimensionError("record " + r.image_path + " has an unexpected channel count");
        std::copy_n(x.ptr(), per, b.images.ptr() + i * per);
        b.labels.push_back(static_cast<std::int32_t>(r.label));
    }
    return b;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

BalancedSampler::BalancedSampler(const DatasetManifest& manifest, Split split, SamplingMode mode) : mode_(mode) {
    std::vector<std::vector<std::size_t>> by_class(manifest.class_count);
    std::vector<bool> present(manifest.class_count, false);
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        present.at(r.label) = true;
        if (r.split == split) by_class[r.label].push_back(i);
    }
    for (std::size_t c = 0; c < manifest.class_count; ++c) {
        if (!present[c]) continue;
        if (by_class[c].empty()) {
            throw SamplerError("class " + std::string(kClassCodes.at(c)) + " has no " + std::string(to_string(split)) +
                               " records");
        }
        classes_.push_back(c);
        members_.push_back(std::move(by_class[c]));
    }
    if (classes_.empty()) throw SamplerError("manifest has no records");
}

std::vector<std::size_t> BalancedSampler::next_batch(std::size_t batch_size, Rng& rng) const {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    const std::size_t k = classes_.size();
    if (mode_ == SamplingMode::Replacement) {
        for (std::size_t i = 0; i < batch_size; ++i) {
            const auto& members = members_[rng.index(k)];
            batch.push_back(members[rng.index(members.size())]);
        }
        return batch;
    }
    std::vector<std::size_t> slots;
    for (std::size_t c = 0; c < k; ++c) slots.insert(slots.end(), batch_size / k, c);
    std::vector<std::size_t> order(k);
    for (std::size_t c = 0; c < k; ++c) order[c] = c;
    for (std::size_t i = k; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t r = 0; r < batch_size % k; ++r) slots.push_back(order[r]);
    for (auto c : slots) {
        const auto& members = members_[c];
        batch.push_back(members[rng.index(members.size())]);
    }
    return batch;
}

std::vector<std::vector<std::size_t>> balanced_batches(const DatasetManifest& manifest, std::size_t batch_size,
                                                       std::size_t batches, Rng& rng, SamplingMode mode) {
    BalancedSampler sampler(manifest, Split::Train, mode);
    std::vector<std::vector<std::size_t>> out;
    out.reserve(batches);
    for (std::size_t b = 0; b < batches; ++b) out.push_back(sampler.next_batch(batch_size, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

namespace {

// Relative ISIC 2019 training-set class frequencies in class-index order.
constexpr std::array<double, kIsicClassCount> kIsicFrequencies{4522, 12875, 3323, 867, 2624, 239, 253, 628};

struct BlobFamily {
    std::array<double, 3> color;
    double radius;        // pixels at 32x32
    double eccentricity;  // 0 = circle
    double irregularity;  // relative amplitude of border ripple
    double ripple;        // ripple frequency around the border
    double speckle;       // strength of internal texture
};

constexpr std::array<BlobFamily, kIsicClassCount> kFamilies{{
    {{0.22, 0.12, 0.10}, 10.0, 0.30, 0.22, 5.0, 0.10},  // MEL: dark, large, ragged
    {{0.55, 0.36, 0.24}, 7.0, 0.05, 0.02, 3.0, 0.00},   // NV: brown, round, smooth
    {{0.90, 0.66, 0.72}, 7.5, 0.15, 0.08, 4.0, 0.05},   // BCC: pearly pink
    {{0.78, 0.30, 0.26}, 9.0, 0.50, 0.10, 6.0, 0.08},   // AK: red, elongated
    {{0.66, 0.52, 0.20}, 11.0, 0.20, 0.05, 8.0, 0.12},  // BK: yellow-brown, large, warty
    {{0.48, 0.28, 0.34}, 4.5, 0.00, 0.02, 3.0, 0.00},   // DF: small, firm
    {{0.55, 0.08, 0.40}, 6.0, 0.30, 0.04, 2.0, 0.00},   // VASC: purple-red
    {{0.86, 0.80, 0.55}, 9.5, 0.55, 0.16, 3.0, 0.06},   // SCC: pale, elongated, scaly
}};

struct Metadata {
    std::optional<int> age;
    std::optional<Sex> sex;
};

Metadata draw_metadata(const std::string& profile, Rng& rng) {
    Metadata m;
    if (profile == "balanced") {
        m.age = static_cast<int>(1 + rng.index(90));
        m.sex = rng.bernoulli(0.5) ? Sex::Male : Sex::Female;
    } else {
        // Ages cluster in middle age and are reported in 5-year steps;
        // a few records lack metadata.
        if (!rng.bernoulli(0.02)) {
            const double a = std::clamp(std::round((55.0 + 18.0 * rng.normal()) / 5.0) * 5.0, 5.0, 90.0);
            m.age = static_cast<int>(a);
        }
        if (!rng.bernoulli(0.01)) m.sex = rng.bernoulli(0.52) ? Sex::Male : Sex::Female;
    }
    return m;
}

PnmImage render(const BlobFamily& fam, std::size_t size, double noise_sigma, Rng& rng) {
    const double scale = static_cast<double>(size) / 32.0;
    const std::array<double, 3> skin{0.86 + 0.08 * rng.uniform(-1, 1), 0.68 + 0.08 * rng.uniform(-1, 1),
                                     0.56 + 0.08 * rng.uniform(-1, 1)};
    std::array<double, 3> lesion;
    for (int c = 0; c < 3; ++c) lesion[c] = std::clamp(fam.color[c] + 0.05 * rng.uniform(-1, 1), 0.0, 1.0);
    const double cx = (static_cast<double>(size) - 1.0) / 2.0 + 3.0 * scale * rng.uniform(-1, 1);
    const double cy = (static_cast<double>(size) - 1.0) / 2.0 + 3.0 * scale * rng.uniform(-1, 1);
    const double radius = fam.radius * scale * (1.0 + 0.15 * rng.uniform(-1, 1));
    const double minor = 1.0 - fam.eccentricity * (0.8 + 0.4 * rng.uniform());
    const double angle = std::numbers::pi * rng.uniform();
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    const double ca = std::cos(angle), sa = std::sin(angle);

    PnmImage img;
    img.width = img.height = size;
    img.channels = 3;
    img.maxval = 255;
    img.samples.resize(size * size * 3);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double u = (ca * dx + sa * dy) / radius;
            const double v = (-sa * dx + ca * dy) / (radius * minor);
            const double theta = std::atan2(v, u);
            const double border = 1.0 + fam.irregularity * std::sin(fam.ripple * theta + phase);
            const double dist = std::sqrt(u * u + v * v) / border;
            // Soft edge roughly one pixel wide.
            const double inside = 1.0 / (1.0 + std::exp((dist - 1.0) * radius * 1.5));
            const double texture = fam.speckle * rng.uniform(-1, 1);
            for (std::size_t c = 0; c < 3; ++c) {
                const double lesion_c = lesion[c] * (1.0 + texture);
                double val = inside * lesion_c + (1.0 - inside) * skin[c] + noise_sigma * rng.normal();
                val = std::clamp(val, 0.0, 1.0);
                img.samples[(y * size + x) * 3 + c] = static_cast<std::uint16_t>(std::lround(val * 255.0));
            }
        }
    }
    return img;
}

}  // namespace

std::vector<std::size_t> class_allocation(const std::string& profile, std::size_t n, std::size_t class_count) {
    if (class_count < 2 || class_count > kIsicClassCount) {
        throw ParameterError("class count must lie in [2, 8], got " + std::to_string(class_count));
    }
    if (n < class_count) throw ParameterError("need at least one sample per class");
    std::vector<std::size_t> counts(class_count, 0);
    if (profile == "uniform") {
        for (std::size_t c = 0; c < class_count; ++c) counts[c] = n / class_count + (c < n % class_count ? 1 : 0);
        return counts;
    }
    if (profile != "isic-like") throw ParameterError("unknown imbalance profile '" + profile + "'");
    // One guaranteed sample per class, the rest by largest remainder.
    double total = 0.0;
    for (std::size_t c = 0; c < class_count; ++c) total += kIsicFrequencies[c];
    const std::size_t spare = n - class_count;
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < class_count; ++c) {
        const double share = static_cast<double>(spare) * kIsicFrequencies[c] / total;
        counts[c] = 1 + static_cast<std::size_t>(std::floor(share));
        assigned += counts[c] - 1;
        remainders.emplace_back(share - std::floor(share), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < spare; ++i, ++assigned) counts[remainders[i].second]++;
    return counts;
}

DatasetManifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
    if (config.subgroups != "balanced" && config.subgroups != "isic-like") {
        throw ParameterError("unknown subgroup profile '" + config.subgroups + "'");
    }
    if (config.image_size < 8) throw ParameterError("synthetic images must be at least 8x8");
    if (!(config.test_fraction >= 0.0 && config.test_fraction < 1.0)) {
        throw ParameterError("test fraction must lie in [0, 1)");
    }
    const auto counts = class_allocation(config.imbalance, config.n, config.class_count);

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

    Rng rng = SeedStreams(config.seed).rng(Stream::Synth);
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], c);
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.index(i)]);

    // Stratified split: the first round(fraction * count) samples of each
    // class (in shuffled order) go to test, keeping at least one for training.
    std::vector<std::size_t> test_quota(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        test_quota[c] = std::min(counts[c] - 1,
                                 static_cast<std::size_t>(std::lround(config.test_fraction * static_cast<double>(counts[c]))));
    }

    DatasetManifest m;
    m.class_count = config.class_count;
    m.class_counts = counts;
    std::ostringstream csv;
    csv << "image,label,age,sex,split\n";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        SampleRecord r;
        r.label = labels[i];
        const Metadata meta = draw_metadata(config.subgroups, rng);
        r.age = meta.age;
        r.sex = meta.sex;
        r.split = test_quota[r.label] > 0 ? Split::Test : Split::Train;
        if (test_quota[r.label] > 0) --test_quota[r.label];
        // Older skin renders with slightly more texture noise.
        const double noise = 0.03 + (config.subgroups == "isic-like" && r.age ? 0.0004 * *r.age : 0.0);
        const PnmImage img = render(kFamilies[r.label], config.image_size, noise, rng);

        char name[48];
        std::snprintf(name, sizeof(name), "images/img_%05zu.ppm", i);
        r.image_path = name;
        write_pnm(out_dir / r.image_path, img);
        r.image = to_tensor(img);

        csv << r.image_path << ',' << kClassCodes[r.label] << ',';
        if (r.age) csv << *r.age;
        csv << ',';
        if (r.sex) csv << to_string(*r.sex);
        csv << ',' << to_string(r.split) << '\n';
        m.records.push_back(std::move(r));
    }
    {
        std::ofstream out(out_dir / "manifest.csv", std::ios::trunc);
        if (!out) throw IoError("cannot write " + (out_dir / "manifest.csv").string());
        out << csv.str();
    }
    if (!m.indices(Split::Train).empty()) m.normalization = compute_normalization(m, config.image_size);
    return m;
}

}  // namespace lth
