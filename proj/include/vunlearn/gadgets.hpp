#pragma once

// Boolean, decomposition and comparison gadgets.

#include <cstdint>
#include <type_traits>
#include <vector>

#include "vunlearn/error.hpp"
#include "vunlearn/r1cs.hpp"

namespace vunlearn {

// Non-deduced parameter type so Var and constants convert implicitly.
template <class F>
using LcArg = std::type_identity_t<LinearCombination<F>>;

template <class F>
F pow2(unsigned k) {
  return F::from_u64(2).pow(static_cast<u64>(k));
}

/// v * v = v.
template <class F>
void gadget_bool(Builder<F>& cs, Var v) {
  cs.enforce(v, v, v);
}

template <class F>
Var alloc_bit(Builder<F>& cs, bool bit) {
  Var v = cs.alloc([&] { return bit ? F::one() : F::zero(); });
  gadget_bool(cs, v);
  return v;
}

/// o = a * b (operands assumed boolean).
template <class F>
Var gadget_and(Builder<F>& cs, Var a, Var b) {
  Var o = cs.alloc([&] { return cs.value(a) * cs.value(b); });
  cs.enforce(a, b, o);
  return o;
}

/// o = a + b - a*b, as a*b = a + b - o.
template <class F>
Var gadget_or(Builder<F>& cs, Var a, Var b) {
  Var o = cs.alloc([&] {
    F x = cs.value(a), y = cs.value(b);
    return x + y - x * y;
  });
  using Lc = LinearCombination<F>;
  cs.enforce(a, b, Lc(a) + Lc(b) - Lc(o));
  return o;
}

/// o = a + b - 2ab, as (2a) * b = a + b - o.
template <class F>
Var gadget_xor(Builder<F>& cs, const LcArg<F>& a, const LcArg<F>& b) {
  Var o = cs.alloc([&] {
    F x = cs.eval(a), y = cs.eval(b);
    return x + y - F::from_u64(2) * x * y;
  });
  cs.enforce(a * F::from_u64(2), b, a + b - LinearCombination<F>(o));
  return o;
}

/// OR over a list of boolean variables, chained pairwise.
template <class F>
Var gadget_or_all(Builder<F>& cs, const std::vector<Var>& bits) {
  require(!bits.empty(), Errc::BadShape, "OR over an empty list");
  Var acc = bits[0];
  for (std::size_t i = 1; i < bits.size(); ++i) acc = gadget_or(cs, acc, bits[i]);
  return acc;
}

/// Product of two combinations in a fresh variable.
template <class F>
Var gadget_mul(Builder<F>& cs, const LcArg<F>& a, const LcArg<F>& b) {
  Var o = cs.alloc([&] { return cs.eval(a) * cs.eval(b); });
  cs.enforce(a, b, o);
  return o;
}

/// Sum of bits[i] * 2^i.
template <class F>
LinearCombination<F> pack_bits(const std::vector<Var>& bits, unsigned offset = 0) {
  LinearCombination<F> lc;
  F w = pow2<F>(offset);
  for (Var b : bits) {
    lc.add_term(b, w);
    w += w;
  }
  return lc;
}

/// Boolean bits with sum bits_i * 2^i = v. Unsatisfiable if v >= 2^nbits.
template <class F>
std::vector<Var> gadget_bit_decompose(Builder<F>& cs, const LcArg<F>& v, unsigned nbits) {
  F value = cs.eval(v);
  if (cs.has_values() && !cs.lenient()) {
    require(value.bit_length() <= static_cast<int>(nbits), Errc::Unsatisfiable,
            "value does not fit in " + std::to_string(nbits) + " bits");
  }
  std::vector<Var> bits;
  bits.reserve(nbits);
  for (unsigned i = 0; i < nbits; ++i) bits.push_back(alloc_bit(cs, cs.has_values() && value.bit(i)));
  cs.enforce(pack_bits<F>(bits), Builder<F>::one(), v);
  return bits;
}

/// flag = [a <= b] for a, b in [0, 2^nbits), via the bits of b - a + 2^nbits.
template <class F>
Var gadget_leq(Builder<F>& cs, const LcArg<F>& a, const LcArg<F>& b, unsigned nbits) {
  if (cs.has_values() && !cs.lenient()) {
    require(cs.eval(a).bit_length() <= static_cast<int>(nbits) && cs.eval(b).bit_length() <= static_cast<int>(nbits),
            Errc::RangeOverflow, "comparison operand outside [0, 2^" + std::to_string(nbits) + ")");
  }
  auto bits = gadget_bit_decompose(cs, b - a + LinearCombination<F>(pow2<F>(nbits)), nbits + 1);
  return bits.back();
}

/// z = [v == 0] using an inverse hint: v*inv = 1 - z, v*z = 0.
template <class F>
Var gadget_is_zero(Builder<F>& cs, const LcArg<F>& v) {
  F x = cs.eval(v);
  bool zero = !cs.has_values() || x.is_zero();
  Var inv = cs.alloc([&] { return zero ? F::zero() : x.inverse(); });
  Var z = cs.alloc([&] { return zero ? F::one() : F::zero(); });
  using Lc = LinearCombination<F>;
  cs.enforce(v, inv, Lc(F::one()) - Lc(z));
  cs.enforce(v, z, Lc());
  return z;
}

/// out = bit ? if1 : if0, as bit * (if1 - if0) = out - if0.
template <class F>
Var gadget_select(Builder<F>& cs, Var bit, const LcArg<F>& if0, const LcArg<F>& if1) {
  Var out = cs.alloc([&] { return cs.value(bit).is_zero() ? cs.eval(if0) : cs.eval(if1); });
  cs.enforce(bit, if1 - if0, LinearCombination<F>(out) - if0);
  return out;
}

/// a == b as a single linear constraint.
template <class F>
void enforce_equal(Builder<F>& cs, const LcArg<F>& a, const LcArg<F>& b) {
  cs.enforce(a - b, Builder<F>::one(), LinearCombination<F>());
}

}  // namespace vunlearn
