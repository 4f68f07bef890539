#include "utaug/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "utaug/errors.hpp"

namespace utaug::binio {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
  }
  return value;
}

}  // namespace

void Writer::magic(std::string_view four_cc) {
  buf_.insert(buf_.end(), four_cc.begin(), four_cc.end());
}
void Writer::u8(std::uint8_t v) { buf_.push_back(v); }
void Writer::u16(std::uint16_t v) { put_le(buf_, v); }
void Writer::u32(std::uint32_t v) { put_le(buf_, v); }
void Writer::i32(std::int32_t v) { put_le(buf_, static_cast<std::uint32_t>(v)); }
void Writer::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void Writer::short_string(std::string_view s) {
  if (s.size() > 0xFFFF) throw std::invalid_argument("string too long for u16 length field");
  u16(static_cast<std::uint16_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void Writer::long_string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void Writer::u16_array(std::span<const std::uint16_t> v) {
  buf_.reserve(buf_.size() + v.size() * 2);
  for (auto x : v) u16(x);
}
void Writer::i32_array(std::span<const std::int32_t> v) {
  buf_.reserve(buf_.size() + v.size() * 4);
  for (auto x : v) i32(x);
}
void Writer::f32_array(std::span<const float> v) {
  buf_.reserve(buf_.size() + v.size() * 4);
  for (auto x : v) f32(x);
}

void Writer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Reader::Reader(std::vector<std::uint8_t> bytes, std::string origin)
    : buf_(std::move(bytes)), origin_(std::move(origin)) {}

Reader Reader::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Reader(std::move(bytes), path.string());
}

const std::uint8_t* Reader::take(std::size_t n) {
  if (remaining() < n) {
    throw CorruptFileError("unexpected end of data in " + (origin_.empty() ? "buffer" : origin_));
  }
  const std::uint8_t* p = buf_.data() + pos_;
  pos_ += n;
  return p;
}

void Reader::expect_magic(std::string_view four_cc) {
  if (remaining() < four_cc.size()) {
    throw CorruptFileError("file too short for header: " + origin_);
  }
  if (std::memcmp(buf_.data() + pos_, four_cc.data(), four_cc.size()) != 0) {
    throw FormatError("bad magic, expected " + std::string(four_cc) + ": " + origin_);
  }
  pos_ += four_cc.size();
}

std::uint8_t Reader::u8() { return *take(1); }
std::uint16_t Reader::u16() { return get_le<std::uint16_t>(take(2)); }
std::uint32_t Reader::u32() { return get_le<std::uint32_t>(take(4)); }
std::int32_t Reader::i32() { return static_cast<std::int32_t>(get_le<std::uint32_t>(take(4))); }
float Reader::f32() { return std::bit_cast<float>(get_le<std::uint32_t>(take(4))); }
double Reader::f64() { return std::bit_cast<double>(get_le<std::uint64_t>(take(8))); }

std::string Reader::short_string() {
  const std::uint16_t n = u16();
  const auto* p = take(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}

std::string Reader::long_string() {
  const std::uint32_t n = u32();
  const auto* p = take(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}

void Reader::u16_array(std::span<std::uint16_t> out) {
  const auto* p = take(out.size() * 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<std::uint16_t>(p + 2 * i);
}

void Reader::i32_array(std::span<std::int32_t> out) {
  const auto* p = take(out.size() * 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::int32_t>(get_le<std::uint32_t>(p + 4 * i));
  }
}

void Reader::f32_array(std::span<float> out) {
  const auto* p = take(out.size() * 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
  }
}

void Reader::expect_end() const {
  if (remaining() != 0) {
    throw CorruptFileError(std::to_string(remaining()) + " trailing bytes in " + origin_);
  }
}

}  // namespace utaug::binio
