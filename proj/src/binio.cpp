// SPDX-License-Identifier: Apache-2.0
#include "bae/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "bae/error.hpp"

namespace bae::binio {

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed) {
    uLong crc = seed;
    const Bytef* p = bytes.data();
    std::size_t left = bytes.size();
    while (left > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = ::crc32(crc, p, chunk);
        p += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void Writer::u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void Writer::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Writer::f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void Writer::bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

void Writer::text(std::string_view s) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
    buf_.insert(buf_.end(), p, p + s.size());
}

void Reader::need(std::size_t n) const {
    if (n > remaining())
        throw FormatError(FormatError::Kind::Truncated, "unexpected end of data");
}

std::uint16_t Reader::u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t Reader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

double Reader::f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
}

std::span<const std::uint8_t> Reader::bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

std::vector<std::uint8_t> pack(std::array<char, 4> magic, const nlohmann::json& header,
                               std::span<const std::uint8_t> payload) {
    const std::string text = header.dump();
    Writer w;
    w.text(std::string_view(magic.data(), magic.size()));
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.text(text);
    w.bytes(payload);
    w.u32(crc32(payload));
    return std::move(w.buffer());
}

namespace detail {

nlohmann::json read_header(std::span<const std::uint8_t> file, std::array<char, 4> magic, std::size_t& offset) {
    if (file.size() < 8) throw FormatError(FormatError::Kind::Truncated, "file too short for a header");
    if (std::memcmp(file.data(), magic.data(), 4) != 0)
        throw FormatError(FormatError::Kind::BadMagic,
                          "bad magic, expected '" + std::string(magic.data(), magic.size()) + "'");
    Reader r(file.subspan(4));
    const std::uint32_t len = r.u32();
    const auto text = r.bytes(len);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Schema, std::string("unreadable header: ") + e.what());
    }
    if (!header.is_object()) throw FormatError(FormatError::Kind::Schema, "header is not an object");
    offset = 4 + r.position();
    return header;
}

Unpacked finish(std::span<const std::uint8_t> file, nlohmann::json header, std::size_t offset,
                std::size_t payload_size) {
    const std::size_t have = file.size() - offset;
    if (have < payload_size + 4)
        throw FormatError(FormatError::Kind::Truncated,
                          "header promises " + std::to_string(payload_size) + " payload bytes, file holds " +
                              std::to_string(have >= 4 ? have - 4 : 0));
    if (have > payload_size + 4)
        throw FormatError(FormatError::Kind::Truncated, "trailing bytes after payload");
    auto payload = file.subspan(offset, payload_size);
    Reader tail(file.subspan(offset + payload_size));
    const std::uint32_t stored = tail.u32();
    if (stored != crc32(payload)) throw FormatError(FormatError::Kind::Checksum, "CRC32 mismatch");
    return {std::move(header), {payload.begin(), payload.end()}};
}

}  // namespace detail

}  // namespace bae::binio
