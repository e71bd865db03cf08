#pragma once

// Rank-1 constraint systems: <a,z> * <b,z> = <c,z> over a prime field.
//
// Variable 0 is the constant ONE; public inputs occupy indices
// 1..num_public; everything after is private. A Builder records constraints
// and/or assigns values, then freezes into an immutable ConstraintSystem.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vunlearn/crypto.hpp"
#include "vunlearn/error.hpp"
#include "vunlearn/field.hpp"

namespace vunlearn {

struct Var {
  std::uint32_t index = 0;
  friend bool operator==(Var, Var) = default;
};

template <class F>
class LinearCombination {
 public:
  using Term = std::pair<std::uint32_t, F>;

  LinearCombination() = default;
  LinearCombination(Var v) { terms_.emplace_back(v.index, F::one()); }  // NOLINT(implicit)
  LinearCombination(const F& constant) {                                  // NOLINT(implicit)
    if (!constant.is_zero()) terms_.emplace_back(0, constant);
  }

  static LinearCombination term(Var v, const F& coeff) {
    LinearCombination lc;
    lc.add_term(v, coeff);
    return lc;
  }

  void add_term(Var v, const F& coeff) {
    if (!coeff.is_zero()) terms_.emplace_back(v.index, coeff);
  }

  const std::vector<Term>& terms() const { return terms_; }

  LinearCombination& operator+=(const LinearCombination& o) {
    terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
    return *this;
  }
  LinearCombination& operator-=(const LinearCombination& o) {
    for (const auto& [v, c] : o.terms_) terms_.emplace_back(v, -c);
    return *this;
  }
  LinearCombination& operator*=(const F& k) {
    if (k.is_zero()) {
      terms_.clear();
      return *this;
    }
    for (auto& t : terms_) t.second *= k;
    return *this;
  }

  friend LinearCombination operator+(LinearCombination a, const LinearCombination& b) { return a += b; }
  friend LinearCombination operator-(LinearCombination a, const LinearCombination& b) { return a -= b; }
  friend LinearCombination operator*(LinearCombination a, const F& k) { return a *= k; }
  friend LinearCombination operator*(const F& k, LinearCombination a) { return a *= k; }
  LinearCombination operator-() const { return *this * -F::one(); }

 private:
  std::vector<Term> terms_;
};

template <class F>
struct Witness {
  std::vector<F> values;

  std::size_t size() const { return values.size(); }
  std::span<const F> public_inputs(std::size_t num_public) const {
    return std::span<const F>(values).subspan(1, num_public);
  }
};

template <class F>
class Builder;

template <class F>
class ConstraintSystem {
 public:
  struct Term {
    std::uint32_t var;
    std::uint32_t coeff;
  };

  std::size_t num_vars() const { return num_vars_; }
  std::size_t num_public() const { return num_public_; }
  std::size_t constraint_count() const { return offsets_.empty() ? 0 : (offsets_.size() - 1) / 3; }

  /// Matrix row `which` (0=A, 1=B, 2=C) of constraint i.
  std::span<const Term> row(std::size_t i, int which) const {
    std::size_t k = 3 * i + static_cast<std::size_t>(which);
    return std::span<const Term>(terms_).subspan(offsets_[k], offsets_[k + 1] - offsets_[k]);
  }

  const F& coeff(std::uint32_t id) const { return coeffs_[id]; }
  std::span<const F> coefficients() const { return coeffs_; }

  F eval_row(std::size_t i, int which, std::span<const F> z) const {
    F acc;
    for (const auto& t : row(i, which)) acc += coeffs_[t.coeff] * z[t.var];
    return acc;
  }

  bool constraint_holds(std::size_t i, std::span<const F> z) const {
    return eval_row(i, 0, z) * eval_row(i, 1, z) == eval_row(i, 2, z);
  }

  /// Index of the first violated constraint, or nullopt when satisfied.
  std::optional<std::size_t> first_violation(const Witness<F>& w) const {
    require(w.size() == num_vars_, Errc::LengthMismatch,
            "witness has " + std::to_string(w.size()) + " values, system has " + std::to_string(num_vars_));
    if (w.values[0] != F::one()) return std::size_t{0};
    std::span<const F> z(w.values);
    for (std::size_t i = 0; i < constraint_count(); ++i) {
      if (!constraint_holds(i, z)) return i;
    }
    return std::nullopt;
  }

  bool is_satisfied(const Witness<F>& w) const { return !first_violation(w).has_value(); }

  /// SHA-256 over the serialised (A, B, C) matrices and the variable layout.
  const Digest& digest() const { return digest_; }

 private:
  friend class Builder<F>;

  void compute_digest() {
    Sha256 h;
    h.update("vunlearn-r1cs-v1");
    h.update(F::name());
    h.update_u64(num_vars_).update_u64(num_public_).update_u64(constraint_count());
    std::vector<std::array<std::uint8_t, 32>> cbytes;
    cbytes.reserve(coeffs_.size());
    for (const auto& c : coeffs_) cbytes.push_back(c.to_bytes());
    for (std::size_t k = 0; k + 1 < offsets_.size(); ++k) {
      h.update_u64(offsets_[k + 1] - offsets_[k]);
      for (std::size_t t = offsets_[k]; t < offsets_[k + 1]; ++t) {
        h.update_u64(terms_[t].var);
        h.update(cbytes[terms_[t].coeff]);
      }
    }
    digest_ = h.finish();
  }

  std::size_t num_vars_ = 1;
  std::size_t num_public_ = 0;
  std::vector<F> coeffs_;
  std::vector<Term> terms_;
  std::vector<std::uint32_t> offsets_{0};
  Digest digest_{};
};

enum class BuildMode {
  Structure,  // constraints only
  Witness,    // values only
  Both,
};

template <class F>
class Builder {
 public:
  explicit Builder(BuildMode mode) : mode_(mode) {
    if (has_values()) values_.push_back(F::one());
  }

  bool has_values() const { return mode_ != BuildMode::Structure; }

  /// Lenient synthesis keeps going past out-of-range values, producing a
  /// witness that simply fails to satisfy. Used to build tampered witnesses.
  void set_lenient(bool on) { lenient_ = on; }
  bool lenient() const { return lenient_; }
  bool records() const { return mode_ != BuildMode::Witness; }

  static constexpr Var one() { return Var{0}; }

  Var alloc_public() {
    require(num_vars_ - 1 == num_public_, Errc::BadShape, "public inputs must precede private variables");
    ++num_public_;
    return push(F::zero());
  }

  Var alloc_public(const F& v) {
    Var x = alloc_public();
    set(x, v);
    return x;
  }

  /// Private variable whose value is produced lazily, only in witness mode.
  template <class Fn>
  Var alloc(Fn&& value_fn) {
    if (has_values()) return push(value_fn());
    return push(F::zero());
  }

  Var alloc() { return push(F::zero()); }

  void set(Var v, const F& value) {
    if (has_values()) values_[v.index] = value;
  }

  const F& value(Var v) const { return values_[v.index]; }

  F eval(const LinearCombination<F>& lc) const {
    F acc;
    if (!has_values()) return acc;
    for (const auto& [v, c] : lc.terms()) acc += c * values_[v];
    return acc;
  }

  void enforce(const LinearCombination<F>& a, const LinearCombination<F>& b, const LinearCombination<F>& c) {
    require(!finalized_, Errc::Finalized, "constraint system is frozen");
    ++num_constraints_;
    if (!records()) return;
    append_row(a);
    append_row(b);
    append_row(c);
  }

  std::size_t num_constraints() const { return num_constraints_; }
  std::size_t num_vars() const { return num_vars_; }
  std::size_t num_public() const { return num_public_; }

  /// Freezes the structure. Further enforce() calls throw Finalized.
  ConstraintSystem<F> finalize() {
    require(records(), Errc::BadShape, "builder did not record constraints");
    require(!finalized_, Errc::Finalized, "constraint system already frozen");
    finalized_ = true;
    cs_.num_vars_ = num_vars_;
    cs_.num_public_ = num_public_;
    cs_.compute_digest();
    coeff_index_.clear();
    return std::move(cs_);
  }

  Witness<F> take_witness() {
    require(has_values(), Errc::BadShape, "builder did not assign values");
    return Witness<F>{std::move(values_)};
  }

 private:
  struct LimbsHash {
    std::size_t operator()(const Limbs& l) const noexcept {
      return static_cast<std::size_t>(l[0] ^ (l[1] * 0x9e3779b97f4a7c15ULL) ^ (l[2] << 7) ^ (l[3] >> 3));
    }
  };

  Var push(const F& v) {
    Var x{static_cast<std::uint32_t>(num_vars_++)};
    if (has_values()) values_.push_back(v);
    return x;
  }

  std::uint32_t intern(const F& c) {
    auto [it, inserted] = coeff_index_.try_emplace(c.raw(), static_cast<std::uint32_t>(cs_.coeffs_.size()));
    if (inserted) cs_.coeffs_.push_back(c);
    return it->second;
  }

  void append_row(const LinearCombination<F>& lc) {
    // Merge duplicate variables so the serialised matrices are canonical.
    scratch_.assign(lc.terms().begin(), lc.terms().end());
    std::sort(scratch_.begin(), scratch_.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    std::size_t out = 0;
    for (std::size_t i = 0; i < scratch_.size();) {
      std::uint32_t v = scratch_[i].first;
      F acc;
      while (i < scratch_.size() && scratch_[i].first == v) acc += scratch_[i++].second;
      if (!acc.is_zero()) scratch_[out++] = {v, acc};
    }
    for (std::size_t i = 0; i < out; ++i) cs_.terms_.push_back({scratch_[i].first, intern(scratch_[i].second)});
    cs_.offsets_.push_back(static_cast<std::uint32_t>(cs_.terms_.size()));
  }

  BuildMode mode_;
  bool lenient_ = false;
  bool finalized_ = false;
  std::size_t num_vars_ = 1;
  std::size_t num_public_ = 0;
  std::size_t num_constraints_ = 0;
  std::vector<F> values_;
  ConstraintSystem<F> cs_;
  std::unordered_map<Limbs, std::uint32_t, LimbsHash> coeff_index_;
  std::vector<std::pair<std::uint32_t, F>> scratch_;
};

using Lc = LinearCombination<Fr>;

}  // namespace vunlearn
