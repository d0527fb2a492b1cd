#pragma once

// Little-endian byte buffers for the KGEB / KGIX / KGWT binary formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "kgrag/errors.hpp"

namespace kgrag::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    v = byteswap_if_big(v);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void put_floats(std::span<const float> vs) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const unsigned char*>(vs.data());
      bytes_.insert(bytes_.end(), p, p + vs.size_bytes());
    } else {
      for (float f : vs) put(f);
    }
  }

  const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

/// Bounds-checked reader. Every failure is a CorruptFile error carrying the
/// byte offset at which the read was attempted.
class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0)
      fail("bad magic, expected \"" + std::string(m) + "\"");
    pos_ += m.size();
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get(std::string_view what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return byteswap_if_big(v);
  }

  void get_floats(std::span<float> out, std::string_view what) {
    need(out.size_bytes(), what);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
      pos_ += out.size_bytes();
    } else {
      for (auto& f : out) f = get<float>(what);
    }
  }

  /// Throws unless at least `count * elem_size` bytes remain; guards
  /// allocations sized from untrusted header fields.
  void require(std::uint64_t count, std::uint64_t elem_size, std::string_view what) const {
    if (elem_size != 0 && count > remaining() / elem_size)
      fail("declared " + std::string(what) + " exceeds file size");
  }

  void expect_end() const {
    if (!at_end()) fail(std::to_string(remaining()) + " trailing bytes");
  }

  [[noreturn]] void fail(const std::string& reason) const { throw Error(Errc::CorruptFile, reason, std::nullopt, pos_); }

 private:
  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) fail("truncated while reading " + std::string(what));
  }

  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "write failed: " + path.string());
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace kgrag::io
