#pragma once

// Byte-level primitives shared by commitments, signatures and transcripts.

#include <sodium.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vunlearn/error.hpp"

namespace vunlearn {

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  require(ok, Errc::Io, "libsodium failed to initialise");
}

inline Digest sha256(std::span<const std::uint8_t> data) {
  ensure_sodium();
  Digest out{};
  crypto_hash_sha256(out.data(), data.data(), data.size());
  return out;
}

inline Digest sha256(std::string_view s) {
  return sha256(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

/// Incremental SHA-256 for large serialisations (circuit matrices).
class Sha256 {
 public:
  Sha256() {
    ensure_sodium();
    crypto_hash_sha256_init(&st_);
  }
  Sha256& update(std::span<const std::uint8_t> d) {
    crypto_hash_sha256_update(&st_, d.data(), d.size());
    return *this;
  }
  Sha256& update(std::string_view s) {
    return update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  Sha256& update_u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return update(std::span<const std::uint8_t>(b, 8));
  }
  Digest finish() {
    Digest out{};
    crypto_hash_sha256_final(&st_, out.data());
    return out;
  }

 private:
  crypto_hash_sha256_state st_{};
};

inline std::array<std::uint8_t, 64> sha512(std::span<const std::uint8_t> data) {
  ensure_sodium();
  std::array<std::uint8_t, 64> out{};
  crypto_hash_sha512(out.data(), data.data(), data.size());
  return out;
}

inline std::string to_hex(std::span<const std::uint8_t> b) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (auto c : b) {
    s.push_back(digits[c >> 4]);
    s.push_back(digits[c & 0xF]);
  }
  return s;
}

inline Bytes from_hex(std::string_view s) {
  require(s.size() % 2 == 0, Errc::Parse, "odd-length hex string");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    fail(Errc::Parse, std::string("bad hex digit '") + c + "'");
  };
  Bytes out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nib(s[2 * i]) << 4 | nib(s[2 * i + 1]));
  }
  return out;
}

template <std::size_t N>
std::array<std::uint8_t, N> from_hex_fixed(std::string_view s) {
  Bytes b = from_hex(s);
  require(b.size() == N, Errc::Parse, "hex string has wrong length");
  std::array<std::uint8_t, N> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

/// Little-endian append helpers used by every binary record.
struct ByteWriter {
  Bytes buf;

  void u8(std::uint8_t v) { buf.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void raw(std::span<const std::uint8_t> d) {
    if (d.empty()) return;
    std::size_t at = buf.size();
    buf.resize(at + d.size());
    std::memcpy(buf.data() + at, d.data(), d.size());
  }
  void blob(std::span<const std::uint8_t> d) {
    u32(static_cast<std::uint32_t>(d.size()));
    raw(d);
  }
  void str(std::string_view s) {
    blob(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

struct ByteReader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::span<const std::uint8_t> raw(std::size_t n) {
    require(pos + n <= data.size(), Errc::Parse, "truncated record");
    auto s = data.subspan(pos, n);
    pos += n;
    return s;
  }
  Bytes blob() {
    auto n = u32();
    auto s = raw(n);
    return Bytes(s.begin(), s.end());
  }
  std::string str() {
    auto b = blob();
    return std::string(b.begin(), b.end());
  }
  bool done() const { return pos == data.size(); }

 private:
  std::uint64_t get(int n) {
    auto s = raw(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
  }
};

}  // namespace vunlearn
