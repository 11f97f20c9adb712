// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/pnm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "lth/error.hpp"

namespace lth {

namespace {

class HeaderParser {
public:
    HeaderParser(std::span<const std::uint8_t> bytes, std::size_t start) : bytes_(bytes), pos_(start) {}

    std::size_t pos() const { return pos_; }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const auto c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
            } else if (std::isspace(c)) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::uint64_t number(const char* field) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::uint64_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 0xFFFFFFFFULL) throw FormatError(std::string(field) + " too large at byte offset " + std::to_string(start));
            ++pos_;
        }
        if (pos_ == start) {
            throw FormatError(std::string("expected ") + field + " at byte offset " + std::to_string(start));
        }
        return v;
    }

    void single_whitespace() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw FormatError("expected whitespace before raster at byte offset " + std::to_string(pos_));
        }
        ++pos_;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

PnmImage decode_pnm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw FormatError("not a binary PGM/PPM file (magic must be P5 or P6) at byte offset 0");
    }
    PnmImage img;
    img.channels = bytes[1] == '6' ? 3 : 1;
    HeaderParser h(bytes, 2);
    const std::uint64_t w = h.number("width");
    const std::uint64_t ht = h.number("height");
    h.skip_space_and_comments();
    const std::size_t maxval_at = h.pos();
    const std::uint64_t mv = h.number("maxval");
    if (w == 0 || ht == 0) throw FormatError("zero image dimension at byte offset 2");
    if (mv == 0 || mv > 65535) throw FormatError("maxval out of range at byte offset " + std::to_string(maxval_at));
    h.single_whitespace();
    img.width = w;
    img.height = ht;
    img.maxval = static_cast<std::uint32_t>(mv);

    const std::size_t raster = h.pos();
    const std::size_t bps = mv > 255 ? 2 : 1;
    const std::size_t n = img.width * img.height * img.channels;
    if (bytes.size() - raster < n * bps) {
        throw FormatError("raster truncated at byte offset " + std::to_string(bytes.size()) + " (expected " +
                          std::to_string(raster + n * bps) + " bytes)");
    }
    img.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t s = bps == 1 ? bytes[raster + i]
                                   : static_cast<std::uint16_t>((bytes[raster + 2 * i] << 8) | bytes[raster + 2 * i + 1]);
        if (s > img.maxval) {
            throw FormatError("sample exceeds maxval at byte offset " + std::to_string(raster + i * bps));
        }
        img.samples[i] = s;
    }
    return img;
}

PnmImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read image " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_pnm(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_pnm(const PnmImage& image) {
    if (image.channels != 1 && image.channels != 3) throw FormatError("PNM images have 1 or 3 channels");
    if (image.samples.size() != image.width * image.height * image.channels) {
        throw DimensionError("sample count does not match image dimensions");
    }
    const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) +
                               " " + std::to_string(image.height) + "\n" + std::to_string(image.maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (auto s : image.samples) {
        if (image.maxval > 255) out.push_back(static_cast<std::uint8_t>(s >> 8));
        out.push_back(static_cast<std::uint8_t>(s & 0xFF));
    }
    return out;
}

void write_pnm(const std::filesystem::path& path, const PnmImage& image) {
    const auto bytes = encode_pnm(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace lth
