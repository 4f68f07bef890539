#pragma once

// Little-endian fixed-width field encoding shared by the UTB1, UTS1, UTM1 and
// UTN1 file formats.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace utaug::binio {

class Writer {
 public:
  void magic(std::string_view four_cc);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v);
  void f32(float v);
  void f64(double v);
  /// u16 length prefix followed by the raw bytes.
  void short_string(std::string_view s);
  /// u32 length prefix followed by the raw bytes.
  void long_string(std::string_view s);
  void u16_array(std::span<const std::uint16_t> v);
  void i32_array(std::span<const std::int32_t> v);
  void f32_array(std::span<const float> v);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked cursor over an in-memory byte buffer. Every read past the
/// end throws CorruptFileError.
class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes, std::string origin = {});
  static Reader open(const std::filesystem::path& path);

  /// Throws FormatError when the next four bytes are not `four_cc`.
  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::int32_t i32();
  float f32();
  double f64();
  std::string short_string();
  std::string long_string();
  void u16_array(std::span<std::uint16_t> out);
  void i32_array(std::span<std::int32_t> out);
  void f32_array(std::span<float> out);

  std::size_t remaining() const { return buf_.size() - pos_; }
  /// Throws CorruptFileError when unread bytes remain.
  void expect_end() const;
  const std::string& origin() const { return origin_; }

 private:
  const std::uint8_t* take(std::size_t n);

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace utaug::binio
