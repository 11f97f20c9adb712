// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lth/tensor.hpp"

namespace lth {

// Checkpoint file layout (all integers little-endian):
//
//   "TFCK" | u16 version | payload | u32 crc32(payload)
//   payload = u32 entry_count, then per entry:
//     u32 name_len | name bytes | u8 dtype | u8 rank | rank x u64 dims | raw data
//
// Float entries hold raw IEEE-754 bits, so a round trip is bit-exact.

inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, U8 = 1, I64 = 2, F64 = 3 };

std::size_t dtype_size(DType t);

struct TableEntry {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::uint64_t> dims;
    std::vector<std::uint8_t> bytes;

    std::uint64_t count() const;
};

/// Ordered collection of named, typed arrays.
class TensorTable {
public:
    void add_f32(std::string name, const Tensor& t);
    void add_u8(std::string name, const Shape& shape, std::span<const std::uint8_t> data);
    void add_i64(std::string name, std::int64_t v);
    void add_f64(std::string name, std::span<const double> data);
    void add_string(std::string name, std::string_view s);

    bool contains(std::string_view name) const;
    const TableEntry& at(std::string_view name) const;
    const TableEntry* find(std::string_view name) const;

    Tensor f32(std::string_view name) const;
    std::vector<std::uint8_t> u8(std::string_view name) const;
    std::int64_t i64(std::string_view name) const;
    std::vector<double> f64(std::string_view name) const;
    std::string string(std::string_view name) const;

    const std::vector<TableEntry>& entries() const noexcept { return entries_; }
    void add(TableEntry e);

private:
    std::vector<TableEntry> entries_;
};

std::vector<std::uint8_t> encode_checkpoint(const TensorTable& table);
TensorTable decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes atomically (temporary file then rename).
void write_checkpoint(const std::filesystem::path& path, const TensorTable& table);
TensorTable read_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace lth
