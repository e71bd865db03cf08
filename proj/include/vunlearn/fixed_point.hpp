#pragma once

// Fixed-point encoding of reals into the prime field.
//
// A real x is represented by the integer round(x * 2^f); negatives live at
// p - |v|. Every value is kept within (-2^(R-1), 2^(R-1)) in raw units so a
// single product of two encoded values never wraps the field.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "vunlearn/error.hpp"
#include "vunlearn/field.hpp"

namespace vunlearn {

struct FixedConfig {
  unsigned scale_bits = 16;  // f
  unsigned range_bits = 64;  // R

  void validate() const {
    require(scale_bits >= 1 && scale_bits <= 32, Errc::BadParams, "scale_bits must be in [1, 32]");
    require(scale_bits < range_bits, Errc::BadParams, "scale_bits must be below range_bits");
    // Raw values must fit an int64; a product of two must stay far below p.
    require(range_bits <= 64, Errc::BadParams, "range_bits must be at most 64");
    require(static_cast<int>(2 * range_bits) < Fr::modulus_bits(), Errc::BadParams,
            "2^(2R) must be below the field modulus");
  }

  double ulp() const { return std::ldexp(1.0, -static_cast<int>(scale_bits)); }

  /// Exclusive bound on |raw|.
  __int128 raw_bound() const { return static_cast<__int128>(1) << (range_bits - 1); }

  bool in_range(__int128 raw) const { return raw < raw_bound() && raw > -raw_bound(); }

  friend bool operator==(const FixedConfig&, const FixedConfig&) = default;
};

namespace fixed {

inline std::int64_t check_raw(__int128 raw, const FixedConfig& cfg, const char* what) {
  if (!cfg.in_range(raw)) fail(Errc::RangeOverflow, std::string(what) + " outside fixed-point range");
  return static_cast<std::int64_t>(raw);
}

/// round(x * 2^f) as a raw signed integer.
inline std::int64_t to_raw(double x, const FixedConfig& cfg) {
  require(std::isfinite(x), Errc::RangeOverflow, "non-finite value");
  double bound = std::ldexp(1.0, static_cast<int>(cfg.range_bits - 1 - cfg.scale_bits));
  require(std::fabs(x) < bound, Errc::RangeOverflow, "value " + std::to_string(x) + " exceeds fixed-point range");
  double scaled = std::nearbyint(std::ldexp(x, static_cast<int>(cfg.scale_bits)));
  require(std::fabs(scaled) < std::ldexp(1.0, static_cast<int>(cfg.range_bits - 1)), Errc::RangeOverflow,
          "rounded value exceeds fixed-point range");
  return static_cast<std::int64_t>(scaled);
}

inline double from_raw(std::int64_t raw, const FixedConfig& cfg) {
  return std::ldexp(static_cast<double>(raw), -static_cast<int>(cfg.scale_bits));
}

/// floor(v / 2^k) for signed v (arithmetic shift is floor toward -inf).
inline __int128 floor_shift(__int128 v, unsigned k) { return v >> k; }

/// Signed reading of a field element as a 256-bit magnitude.
struct SignedLimbs {
  bool negative = false;
  Limbs magnitude{};
};

inline SignedLimbs to_signed(const Fr& v) {
  if (v.is_negative()) return {true, (-v).to_limbs()};
  return {false, v.to_limbs()};
}

/// Signed integer value of a field element; RangeOverflow if it does not fit R bits.
inline std::int64_t raw_of(const Fr& v, const FixedConfig& cfg) {
  auto s = to_signed(v);
  const auto& m = s.magnitude;
  require(m[1] == 0 && m[2] == 0 && m[3] == 0, Errc::RangeOverflow, "field value outside fixed-point range");
  __int128 raw = static_cast<__int128>(m[0]);
  if (s.negative) raw = -raw;
  return check_raw(raw, cfg, "field value");
}

inline Fr from_raw_field(std::int64_t raw) { return Fr::from_i64(raw); }

/// Splits a signed field value as v = q * 2^k + r with 0 <= r < 2^k, q in R-bit range.
inline std::pair<std::int64_t, u128> floor_shift_field(const Fr& v, unsigned k, const FixedConfig& cfg) {
  require(k <= 128, Errc::BadParams, "shift wider than 128 bits");
  auto s = to_signed(v);
  Limbs q = s.magnitude;
  u128 rem = 0;
  // rem = low k bits of magnitude, q = magnitude >> k.
  {
    u128 low = static_cast<u128>(q[0]) | (static_cast<u128>(q[1]) << 64);
    rem = k == 128 ? low : (low & ((static_cast<u128>(1) << k) - 1));
    unsigned words = k / 64, bits = k % 64;
    Limbs shifted{};
    for (unsigned i = 0; i + words < 4; ++i) {
      shifted[i] = q[i + words] >> bits;
      if (bits != 0 && i + words + 1 < 4) shifted[i] |= q[i + words + 1] << (64 - bits);
    }
    q = shifted;
  }
  require(q[1] == 0 && q[2] == 0 && q[3] == 0 && q[0] < (static_cast<u64>(1) << 63), Errc::RangeOverflow,
          "quotient outside fixed-point range");
  __int128 qv = static_cast<__int128>(q[0]);
  if (s.negative) {
    if (rem != 0) {
      qv = -(qv + 1);
      rem = (k == 128 ? static_cast<u128>(0) : (static_cast<u128>(1) << k)) - rem;
    } else {
      qv = -qv;
    }
  }
  return {check_raw(qv, cfg, "quotient"), rem};
}

}  // namespace fixed

/// encode(x) = round(x * 2^f) mapped into the field.
inline Fr encode(double x, const FixedConfig& cfg) { return Fr::from_i64(fixed::to_raw(x, cfg)); }

inline double decode(const Fr& v, const FixedConfig& cfg) { return fixed::from_raw(fixed::raw_of(v, cfg), cfg); }

/// floor(a*b / 2^f) on signed readings, re-encoded.
inline Fr mul_rescale(const Fr& a, const Fr& b, const FixedConfig& cfg) {
  __int128 prod = static_cast<__int128>(fixed::raw_of(a, cfg)) * fixed::raw_of(b, cfg);
  return Fr::from_i64(fixed::check_raw(fixed::floor_shift(prod, cfg.scale_bits), cfg, "product"));
}

}  // namespace vunlearn
