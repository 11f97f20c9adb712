// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace lth {

/// 8- or 16-bit interleaved image as stored in a binary PNM file.
struct PnmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;  // 1 (P5) or 3 (P6)
    std::uint32_t maxval = 255;
    std::vector<std::uint16_t> samples;  // row-major, channels interleaved
};

/// Parses binary PGM (P5) or PPM (P6). Errors name the byte offset.
PnmImage decode_pnm(std::span<const std::uint8_t> bytes);
PnmImage read_pnm(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_pnm(const PnmImage& image);
void write_pnm(const std::filesystem::path& path, const PnmImage& image);

}  // namespace lth
