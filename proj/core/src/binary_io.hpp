#pragma once

// Little-endian encode/decode helpers shared by the TPFB and checkpoint codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace tpmil::detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

/// Cursor over a byte buffer. Reads past the end set `truncated()` and return 0.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& buf) : buf_(buf) {}

  bool take(void* out, std::size_t n) {
    if (remaining() < n) {
      truncated_ = true;
      pos_ = buf_.size();
      return false;
    }
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
    return true;
  }
  std::uint8_t u8() {
    unsigned char c = 0;
    take(&c, 1);
    return c;
  }
  std::uint32_t u32() {
    unsigned char c[4] = {};
    if (!take(c, 4)) return 0;
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | c[i];
    return v;
  }
  std::uint64_t u64() {
    unsigned char c[8] = {};
    if (!take(c, 8)) return 0;
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | c[i];
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t max_len = 1 << 16) {
    const std::uint32_t n = u32();
    if (n > max_len || n > remaining()) {
      truncated_ = true;
      pos_ = buf_.size();
      return {};
    }
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  bool truncated() const { return truncated_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
  bool truncated_ = false;
};

}  // namespace tpmil::detail
