// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace bae::binio {

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed = 0);

/// Little-endian byte sink.
class Writer {
  public:
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);
    void f64(double v);
    void bytes(std::span<const std::uint8_t> b);
    void text(std::string_view s);

    std::vector<std::uint8_t>& buffer() { return buf_; }
    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

  private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian cursor; running past the end throws FormatError(Truncated).
class Reader {
  public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    double f64();
    std::span<const std::uint8_t> bytes(std::size_t n);

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

  private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Container used by every artifact file:
///   magic (4 bytes) | header length u32 | UTF-8 JSON header | payload | CRC32(payload)
/// `payload_size` tells the reader how many payload bytes the header promises.
std::vector<std::uint8_t> pack(std::array<char, 4> magic, const nlohmann::json& header,
                               std::span<const std::uint8_t> payload);

struct Unpacked {
    nlohmann::json header;
    std::vector<std::uint8_t> payload;
};

/// Validates magic, header, payload length and checksum. `payload_size` is evaluated
/// on the parsed header to determine the expected payload length.
template <typename SizeFn>
Unpacked unpack(std::span<const std::uint8_t> file, std::array<char, 4> magic, SizeFn&& payload_size);

namespace detail {
nlohmann::json read_header(std::span<const std::uint8_t> file, std::array<char, 4> magic, std::size_t& offset);
Unpacked finish(std::span<const std::uint8_t> file, nlohmann::json header, std::size_t offset,
                std::size_t payload_size);
}  // namespace detail

template <typename SizeFn>
Unpacked unpack(std::span<const std::uint8_t> file, std::array<char, 4> magic, SizeFn&& payload_size) {
    std::size_t offset = 0;
    auto header = detail::read_header(file, magic, offset);
    const std::size_t n = payload_size(header);
    return detail::finish(file, std::move(header), offset, n);
}

}  // namespace bae::binio
