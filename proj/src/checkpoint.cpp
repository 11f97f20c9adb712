// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lth/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace lth {

std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::F32: return 4;
        case DType::U8: return 1;
        case DType::I64: return 8;
        case DType::F64: return 8;
    }
    throw FormatError("unknown dtype tag " + std::to_string(static_cast<int>(t)));
}

std::uint64_t TableEntry::count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void TensorTable::add(TableEntry e) {
    if (contains(e.name)) throw ContractError("duplicate checkpoint entry '" + e.name + "'");
    entries_.push_back(std::move(e));
}

void TensorTable::add_f32(std::string name, const Tensor& t) {
    TableEntry e{std::move(name), DType::F32, {t.shape().begin(), t.shape().end()}, {}};
    e.bytes.resize(t.size() * sizeof(float));
    std::memcpy(e.bytes.data(), t.ptr(), e.bytes.size());
    add(std::move(e));
}

void TensorTable::add_u8(std::string name, const Shape& shape, std::span<const std::uint8_t> data) {
    TableEntry e{std::move(name), DType::U8, {shape.begin(), shape.end()}, {data.begin(), data.end()}};
    if (e.count() != data.size()) throw DimensionError("u8 entry '" + e.name + "' size does not match its shape");
    add(std::move(e));
}

void TensorTable::add_i64(std::string name, std::int64_t v) {
    TableEntry e{std::move(name), DType::I64, {}, std::vector<std::uint8_t>(8)};
    std::memcpy(e.bytes.data(), &v, 8);
    add(std::move(e));
}

void TensorTable::add_f64(std::string name, std::span<const double> data) {
    TableEntry e{std::move(name), DType::F64, {data.size()}, std::vector<std::uint8_t>(data.size() * 8)};
    if (!data.empty()) std::memcpy(e.bytes.data(), data.data(), e.bytes.size());
    add(std::move(e));
}

void TensorTable::add_string(std::string name, std::string_view s) {
    TableEntry e{std::move(name), DType::U8, {s.size()}, {s.begin(), s.end()}};
    add(std::move(e));
}

const TableEntry* TensorTable::find(std::string_view name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const TableEntry& e) { return e.name == name; });
    return it == entries_.end() ? nullptr : &*it;
}

bool TensorTable::contains(std::string_view name) const { return find(name) != nullptr; }

const TableEntry& TensorTable::at(std::string_view name) const {
    const TableEntry* e = find(name);
    if (!e) throw LoadError("checkpoint has no entry '" + std::string(name) + "'");
    return *e;
}

namespace {
const TableEntry& typed(const TensorTable& t, std::string_view name, DType want) {
    const TableEntry& e = t.at(name);
    if (e.dtype != want) throw LoadError("checkpoint entry '" + std::string(name) + "' has unexpected dtype");
    return e;
}
}  // namespace

Tensor TensorTable::f32(std::string_view name) const {
    const TableEntry& e = typed(*this, name, DType::F32);
    Shape shape(e.dims.begin(), e.dims.end());
    std::vector<float> data(e.count());
    std::memcpy(data.data(), e.bytes.data(), e.bytes.size());
    return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> TensorTable::u8(std::string_view name) const { return typed(*this, name, DType::U8).bytes; }

std::int64_t TensorTable::i64(std::string_view name) const {
    const TableEntry& e = typed(*this, name, DType::I64);
    if (e.count() != 1) throw LoadError("checkpoint entry '" + std::string(name) + "' is not a scalar");
    std::int64_t v;
    std::memcpy(&v, e.bytes.data(), 8);
    return v;
}

std::vector<double> TensorTable::f64(std::string_view name) const {
    const TableEntry& e = typed(*this, name, DType::F64);
    std::vector<double> out(e.count());
    if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
    return out;
}

std::string TensorTable::string(std::string_view name) const {
    const TableEntry& e = typed(*this, name, DType::U8);
    return std::string(e.bytes.begin(), e.bytes.end());
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(::crc32(c, bytes.data(), static_cast<uInt>(bytes.size())));
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated checkpoint reading ") + what + " at byte offset " +
                              std::to_string(pos_));
        }
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TensorTable& table) {
    std::vector<std::uint8_t> out{'T', 'F', 'C', 'K'};
    put<std::uint16_t>(out, kCheckpointVersion);
    const std::size_t payload_start = out.size();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(table.entries().size()));
    for (const auto& e : table.entries()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
        put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
        for (auto d : e.dims) put<std::uint64_t>(out, d);
        out.insert(out.end(), e.bytes.begin(), e.bytes.end());
    }
    const auto crc = crc32(std::span(out).subspan(payload_start));
    put<std::uint32_t>(out, crc);
    return out;
}

TensorTable decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "TFCK", 4) != 0) {
        throw FormatError("bad checkpoint magic at byte offset 0");
    }
    if (bytes.size() < 4 + 2 + 4 + 4) throw FormatError("checkpoint truncated at byte offset " + std::to_string(bytes.size()));
    Reader header(bytes.subspan(4, 2));
    const auto version = header.get<std::uint16_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at byte offset 4");
    }
    const auto payload = bytes.subspan(6, bytes.size() - 6 - 4);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (crc32(payload) != stored) {
        throw FormatError("checkpoint CRC mismatch at byte offset " + std::to_string(bytes.size() - 4));
    }

    Reader r(payload);
    TensorTable table;
    const auto count = r.get<std::uint32_t>("entry count");
    for (std::uint32_t i = 0; i < count; ++i) {
        TableEntry e;
        const auto name_len = r.get<std::uint32_t>("name length");
        auto name = r.take(name_len, "name");
        e.name.assign(name.begin(), name.end());
        const auto tag = r.get<std::uint8_t>("dtype");
        if (tag > static_cast<std::uint8_t>(DType::F64)) {
            throw FormatError("unknown dtype tag " + std::to_string(tag) + " at byte offset " +
                              std::to_string(6 + r.pos() - 1));
        }
        e.dtype = static_cast<DType>(tag);
        const auto rank = r.get<std::uint8_t>("rank");
        for (std::uint8_t d = 0; d < rank; ++d) e.dims.push_back(r.get<std::uint64_t>("dims"));
        auto data = r.take(e.count() * dtype_size(e.dtype), "tensor data");
        e.bytes.assign(data.begin(), data.end());
        table.add(std::move(e));
    }
    if (r.pos() != payload.size()) {
        throw FormatError("trailing bytes after tensor table at byte offset " + std::to_string(6 + r.pos()));
    }
    return table;
}

void write_checkpoint(const std::filesystem::path& path, const TensorTable& table) {
    const auto bytes = encode_checkpoint(table);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

TensorTable read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace lth
