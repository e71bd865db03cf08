#pragma once

// Prime-field arithmetic over 4x64-bit limbs in Montgomery form.
//
// The modulus is a compile-time parameter; it must be odd and below 2^254 so
// that lazy CIOS reduction never carries past the top limb.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>

#include "vunlearn/error.hpp"

namespace vunlearn {

using u64 = std::uint64_t;
using u128 = unsigned __int128;
using Limbs = std::array<u64, 4>;

namespace limbs {

constexpr bool geq(const Limbs& a, const Limbs& b) {
  for (int i = 3; i >= 0; --i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return true;
}

constexpr bool is_zero(const Limbs& a) { return (a[0] | a[1] | a[2] | a[3]) == 0; }

constexpr u64 sub_in_place(Limbs& a, const Limbs& b) {
  u64 borrow = 0;
  for (int i = 0; i < 4; ++i) {
    u128 d = static_cast<u128>(a[i]) - b[i] - borrow;
    a[i] = static_cast<u64>(d);
    borrow = static_cast<u64>(d >> 64) ? 1 : 0;
  }
  return borrow;
}

constexpr u64 add_in_place(Limbs& a, const Limbs& b) {
  u64 carry = 0;
  for (int i = 0; i < 4; ++i) {
    u128 s = static_cast<u128>(a[i]) + b[i] + carry;
    a[i] = static_cast<u64>(s);
    carry = static_cast<u64>(s >> 64);
  }
  return carry;
}

constexpr void shr1(Limbs& a) {
  for (int i = 0; i < 4; ++i) {
    a[i] >>= 1;
    if (i < 3) a[i] |= a[i + 1] << 63;
  }
}

constexpr int bit_length(const Limbs& a) {
  for (int i = 3; i >= 0; --i) {
    if (a[i] != 0) return i * 64 + (64 - __builtin_clzll(a[i]));
  }
  return 0;
}

/// Divides in place by a small divisor and returns the remainder.
constexpr u64 div_small(Limbs& a, u64 d) {
  u128 rem = 0;
  for (int i = 3; i >= 0; --i) {
    u128 cur = (rem << 64) | a[i];
    a[i] = static_cast<u64>(cur / d);
    rem = cur % d;
  }
  return static_cast<u64>(rem);
}

inline std::string to_decimal(Limbs a) {
  if (is_zero(a)) return "0";
  std::string out;
  while (!is_zero(a)) out.push_back(static_cast<char>('0' + div_small(a, 10)));
  std::reverse(out.begin(), out.end());
  return out;
}

inline std::string to_hex(const Limbs& a) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (int i = 3; i >= 0; --i) {
    for (int nib = 15; nib >= 0; --nib) out.push_back(digits[(a[i] >> (nib * 4)) & 0xF]);
  }
  return out;
}

/// -p^{-1} mod 2^64 by Newton iteration.
constexpr u64 mont_neg_inv(u64 p0) {
  u64 x = 1;
  for (int i = 0; i < 7; ++i) x *= 2 - p0 * x;
  return static_cast<u64>(0) - x;
}

/// 2^512 mod p, canonical.
constexpr Limbs r_squared(const Limbs& p) {
  Limbs r{1, 0, 0, 0};
  for (int i = 0; i < 512; ++i) {
    add_in_place(r, r);
    if (geq(r, p)) sub_in_place(r, p);
  }
  return r;
}

}  // namespace limbs

/// Scalar field of the BN254 pairing-friendly curve (254-bit prime).
struct Bn254FrParams {
  static constexpr Limbs modulus = {0x43e1f593f0000001ULL, 0x2833e84879b97091ULL,
                                    0xb85045b68181585dULL, 0x30644e72e131a029ULL};
  static constexpr const char* name = "bn254-fr";
};

template <class Params>
class PrimeField {
 public:
  static constexpr Limbs kModulus = Params::modulus;
  static constexpr u64 kInv = limbs::mont_neg_inv(kModulus[0]);
  static constexpr Limbs kR2 = limbs::r_squared(kModulus);

  constexpr PrimeField() = default;

  static constexpr PrimeField zero() { return PrimeField(); }
  static constexpr PrimeField one() { return from_u64(1); }

  static constexpr PrimeField from_u64(u64 v) {
    PrimeField f;
    f.m_ = Limbs{v, 0, 0, 0};
    f.m_ = mont_mul(f.m_, kR2);
    return f;
  }

  static constexpr PrimeField from_i64(std::int64_t v) {
    if (v >= 0) return from_u64(static_cast<u64>(v));
    // -(INT64_MIN) does not fit in int64; go through unsigned negation.
    return -from_u64(static_cast<u64>(0) - static_cast<u64>(v));
  }

  static PrimeField from_i128(__int128 v) {
    bool neg = v < 0;
    u128 mag = neg ? static_cast<u128>(0) - static_cast<u128>(v) : static_cast<u128>(v);
    PrimeField f = from_limbs(Limbs{static_cast<u64>(mag), static_cast<u64>(mag >> 64), 0, 0});
    return neg ? -f : f;
  }

  /// Canonical integer (any 256-bit value) reduced mod p.
  static constexpr PrimeField from_limbs(Limbs canonical) {
    while (limbs::geq(canonical, kModulus)) limbs::sub_in_place(canonical, kModulus);
    PrimeField f;
    f.m_ = mont_mul(canonical, kR2);
    return f;
  }

  /// Strict 32-byte little-endian decoding; rejects non-canonical encodings.
  static bool from_bytes(std::span<const std::uint8_t> in, PrimeField& out) {
    if (in.size() != 32) return false;
    Limbs l{};
    for (int i = 0; i < 4; ++i) {
      u64 w = 0;
      for (int b = 7; b >= 0; --b) w = (w << 8) | in[i * 8 + b];
      l[i] = w;
    }
    if (limbs::geq(l, kModulus)) return false;
    out = from_limbs(l);
    return true;
  }

  /// Reduces a 64-byte little-endian string mod p (near-uniform output).
  static PrimeField from_bytes_wide(std::span<const std::uint8_t> in) {
    require(in.size() == 64, Errc::LengthMismatch, "wide reduction needs 64 bytes");
    auto half = [&](std::size_t off) {
      Limbs l{};
      for (int i = 0; i < 4; ++i) {
        u64 w = 0;
        for (int b = 7; b >= 0; --b) w = (w << 8) | in[off + i * 8 + b];
        l[i] = w;
      }
      return from_limbs(l);
    };
    return half(0) + half(32) * two_pow_256();
  }

  constexpr Limbs to_limbs() const { return mont_mul(m_, Limbs{1, 0, 0, 0}); }

  std::array<std::uint8_t, 32> to_bytes() const {
    std::array<std::uint8_t, 32> out{};
    Limbs l = to_limbs();
    for (int i = 0; i < 4; ++i) {
      for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<std::uint8_t>(l[i] >> (8 * b));
    }
    return out;
  }

  constexpr bool is_zero() const { return limbs::is_zero(m_); }

  bool bit(unsigned i) const {
    if (i >= 256) return false;
    return (to_limbs()[i / 64] >> (i % 64)) & 1;
  }

  int bit_length() const { return limbs::bit_length(to_limbs()); }

  /// True when the canonical value exceeds (p-1)/2, i.e. it encodes a negative.
  bool is_negative() const { return limbs::geq(to_limbs(), half_modulus_plus_one()); }

  std::string to_string() const { return limbs::to_decimal(to_limbs()); }
  std::string to_hex() const { return limbs::to_hex(to_limbs()); }

  static std::string modulus_hex() { return limbs::to_hex(kModulus); }
  static std::string modulus_decimal() { return limbs::to_decimal(kModulus); }
  static const char* name() { return Params::name; }
  static int modulus_bits() { return limbs::bit_length(kModulus); }

  friend constexpr PrimeField operator+(PrimeField a, const PrimeField& b) { return a += b; }
  friend constexpr PrimeField operator-(PrimeField a, const PrimeField& b) { return a -= b; }
  friend constexpr PrimeField operator*(PrimeField a, const PrimeField& b) { return a *= b; }

  constexpr PrimeField operator-() const {
    if (is_zero()) return *this;
    PrimeField r;
    r.m_ = kModulus;
    limbs::sub_in_place(r.m_, m_);
    return r;
  }

  constexpr PrimeField& operator+=(const PrimeField& o) {
    limbs::add_in_place(m_, o.m_);
    if (limbs::geq(m_, kModulus)) limbs::sub_in_place(m_, kModulus);
    return *this;
  }

  constexpr PrimeField& operator-=(const PrimeField& o) {
    if (limbs::sub_in_place(m_, o.m_)) limbs::add_in_place(m_, kModulus);
    return *this;
  }

  constexpr PrimeField& operator*=(const PrimeField& o) {
    m_ = mont_mul(m_, o.m_);
    return *this;
  }

  friend constexpr bool operator==(const PrimeField& a, const PrimeField& b) { return a.m_ == b.m_; }
  friend constexpr bool operator!=(const PrimeField& a, const PrimeField& b) { return !(a == b); }

  PrimeField square() const { return *this * *this; }

  PrimeField pow(Limbs e) const {
    PrimeField acc = one();
    PrimeField base = *this;
    while (!limbs::is_zero(e)) {
      if (e[0] & 1) acc *= base;
      base *= base;
      limbs::shr1(e);
    }
    return acc;
  }

  PrimeField pow(u64 e) const { return pow(Limbs{e, 0, 0, 0}); }

  PrimeField inverse() const {
    require(!is_zero(), Errc::BadParams, "inverse of zero");
    Limbs e = kModulus;
    e[0] -= 2;
    return pow(e);
  }

  /// Raw Montgomery limbs; only meaningful for hashing/ordering within a process.
  const Limbs& raw() const { return m_; }

 private:

  static constexpr Limbs mont_mul(const Limbs& a, const Limbs& b) {
    u64 t[6] = {0, 0, 0, 0, 0, 0};
    for (int i = 0; i < 4; ++i) {
      u64 carry = 0;
      for (int j = 0; j < 4; ++j) {
        u128 s = static_cast<u128>(t[j]) + static_cast<u128>(a[j]) * b[i] + carry;
        t[j] = static_cast<u64>(s);
        carry = static_cast<u64>(s >> 64);
      }
      u128 s = static_cast<u128>(t[4]) + carry;
      t[4] = static_cast<u64>(s);
      t[5] = static_cast<u64>(s >> 64);

      u64 m = t[0] * kInv;
      s = static_cast<u128>(t[0]) + static_cast<u128>(m) * kModulus[0];
      carry = static_cast<u64>(s >> 64);
      for (int j = 1; j < 4; ++j) {
        s = static_cast<u128>(t[j]) + static_cast<u128>(m) * kModulus[j] + carry;
        t[j - 1] = static_cast<u64>(s);
        carry = static_cast<u64>(s >> 64);
      }
      s = static_cast<u128>(t[4]) + carry;
      t[3] = static_cast<u64>(s);
      t[4] = t[5] + static_cast<u64>(s >> 64);
    }
    Limbs r{t[0], t[1], t[2], t[3]};
    if (t[4] != 0 || limbs::geq(r, kModulus)) limbs::sub_in_place(r, kModulus);
    return r;
  }

  static Limbs half_modulus_plus_one() {
    Limbs h = kModulus;
    limbs::shr1(h);
    limbs::add_in_place(h, Limbs{1, 0, 0, 0});
    return h;
  }

  static PrimeField two_pow_256() {
    // 2^256 mod p == R mod p, whose canonical value is mont_mul(R2, 1).
    return from_limbs(mont_mul(kR2, Limbs{1, 0, 0, 0}));
  }

  Limbs m_{0, 0, 0, 0};
};

using Fr = PrimeField<Bn254FrParams>;

}  // namespace vunlearn
