#pragma once

// Algebraic hashing and Merkle vector commitments, natively and in-circuit.
//
// hash_field is a Miyaguchi-Preneel compression over the MiMC-x^5
// permutation: h <- E_h(m) + h + m per absorbed element, h0 = input count.
// Each absorption costs 110 rounds x 3 constraints in-circuit.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vunlearn/crypto.hpp"
#include "vunlearn/error.hpp"
#include "vunlearn/field.hpp"
#include "vunlearn/gadgets.hpp"
#include "vunlearn/r1cs.hpp"

namespace vunlearn {

namespace mimc {

inline constexpr unsigned kRounds = 110;  // ceil(254 / log2(5))

/// Round constants c_0 = 0, c_i = SHA-512("vunlearn-mimc5-<i>") mod p.
inline const std::array<Fr, kRounds>& round_constants() {
  static const std::array<Fr, kRounds> table = [] {
    std::array<Fr, kRounds> c{};
    for (unsigned i = 1; i < kRounds; ++i) {
      std::string tag = "vunlearn-mimc5-" + std::to_string(i);
      auto h = sha512(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(tag.data()), tag.size()));
      c[i] = Fr::from_bytes_wide(h);
    }
    return c;
  }();
  return table;
}

/// Keyed permutation E_k(x): x <- (x + k + c_i)^5 for every round, then + k.
inline Fr permute(Fr x, const Fr& key) {
  const auto& c = round_constants();
  for (unsigned i = 0; i < kRounds; ++i) {
    Fr t = x + key + c[i];
    Fr t2 = t * t;
    x = t2 * t2 * t;
  }
  return x + key;
}

}  // namespace mimc

inline Fr hash_field(std::span<const Fr> inputs) {
  Fr h = Fr::from_u64(inputs.size());
  for (const Fr& m : inputs) h = mimc::permute(m, h) + h + m;
  return h;
}

inline Fr hash_field(std::initializer_list<Fr> inputs) {
  return hash_field(std::span<const Fr>(inputs.begin(), inputs.size()));
}

/// In-circuit hash_field; returns the digest variable.
inline Var gadget_hash(Builder<Fr>& cs, const std::vector<Lc>& inputs) {
  const auto& c = mimc::round_constants();
  Lc h(Fr::from_u64(inputs.size()));
  Var out{};
  for (const Lc& m : inputs) {
    Lc x = m;
    for (unsigned i = 0; i < mimc::kRounds; ++i) {
      Lc t = x + h + Lc(c[i]);
      Var t2 = gadget_mul(cs, t, t);
      Var t4 = gadget_mul(cs, t2, t2);
      if (i + 1 < mimc::kRounds) {
        x = gadget_mul(cs, t4, t);
      } else {
        // Fuse the last round with the feed-forward: t4*t = h' - (key + h + m) where key = h.
        Lc feed = h + h + m;
        out = cs.alloc([&] { return cs.value(t4) * cs.eval(t) + cs.eval(feed); });
        cs.enforce(t4, t, Lc(out) - feed);
      }
    }
    h = out;
  }
  if (inputs.empty()) {
    out = cs.alloc([&] { return Fr::zero(); });
    enforce_equal(cs, Lc(out), h);
  }
  return out;
}

inline constexpr const char* kCommitSchemeId = "mimc5-mp-merkle2-v1";

struct Commitment {
  Fr root;
  std::string scheme_id = kCommitSchemeId;
  unsigned arity = 2;
  std::uint64_t leaf_count = 0;

  friend bool operator==(const Commitment&, const Commitment&) = default;
};

struct OpeningPath {
  std::uint64_t leaf_index = 0;
  std::vector<Fr> siblings;  // leaf level first
};

inline unsigned merkle_depth(std::uint64_t leaf_count) {
  unsigned d = 0;
  while ((std::uint64_t{1} << d) < leaf_count) ++d;
  return d;
}

inline Fr commitment_leaf(const Fr& value, const Fr& randomness, std::uint64_t index) {
  return hash_field({value, randomness, Fr::from_u64(index)});
}

/// Binary Merkle tree over hiding leaves; missing leaves at the right edge are zero.
class MerkleTree {
 public:
  MerkleTree(std::span<const Fr> values, const Fr& randomness) {
    require(!values.empty(), Errc::Empty, "cannot commit to an empty vector");
    leaf_count_ = values.size();
    unsigned depth = merkle_depth(leaf_count_);
    std::vector<Fr> level(std::size_t{1} << depth, Fr::zero());
    for (std::size_t i = 0; i < values.size(); ++i) level[i] = commitment_leaf(values[i], randomness, i);
    levels_.push_back(level);
    while (levels_.back().size() > 1) {
      const auto& prev = levels_.back();
      std::vector<Fr> next(prev.size() / 2);
      for (std::size_t i = 0; i < next.size(); ++i) next[i] = hash_field({prev[2 * i], prev[2 * i + 1]});
      levels_.push_back(std::move(next));
    }
  }

  Commitment commitment() const { return Commitment{levels_.back()[0], kCommitSchemeId, 2, leaf_count_}; }

  OpeningPath open(std::uint64_t index) const {
    require(index < leaf_count_, Errc::IndexOutOfRange, "opening index past leaf count");
    OpeningPath p{index, {}};
    std::uint64_t pos = index;
    for (std::size_t l = 0; l + 1 < levels_.size(); ++l) {
      p.siblings.push_back(levels_[l][pos ^ 1]);
      pos >>= 1;
    }
    return p;
  }

 private:
  std::uint64_t leaf_count_ = 0;
  std::vector<std::vector<Fr>> levels_;
};

inline Commitment commit_vector(std::span<const Fr> values, const Fr& randomness) {
  return MerkleTree(values, randomness).commitment();
}

inline bool verify_opening(const Commitment& com, std::uint64_t index, const Fr& value, const Fr& randomness,
                           const OpeningPath& path) {
  require(index < com.leaf_count, Errc::IndexOutOfRange, "opening index past leaf count");
  if (path.leaf_index != index || path.siblings.size() != merkle_depth(com.leaf_count)) return false;
  Fr cur = commitment_leaf(value, randomness, index);
  std::uint64_t pos = index;
  for (const Fr& sib : path.siblings) {
    cur = (pos & 1) ? hash_field({sib, cur}) : hash_field({cur, sib});
    pos >>= 1;
  }
  return cur == com.root;
}

/// Recomputes the whole tree over private values and pins it to `root`.
inline void commitment_gadget(Builder<Fr>& cs, Var root, const std::vector<Lc>& values, const Lc& randomness) {
  require(!values.empty(), Errc::Empty, "cannot commit to an empty vector");
  unsigned depth = merkle_depth(values.size());
  std::vector<Lc> level;
  level.reserve(std::size_t{1} << depth);
  for (std::size_t i = 0; i < values.size(); ++i) {
    level.emplace_back(gadget_hash(cs, {values[i], randomness, Lc(Fr::from_u64(i))}));
  }
  level.resize(std::size_t{1} << depth, Lc());
  while (level.size() > 1) {
    std::vector<Lc> next;
    next.reserve(level.size() / 2);
    for (std::size_t i = 0; i < level.size() / 2; ++i) {
      next.emplace_back(gadget_hash(cs, {level[2 * i], level[2 * i + 1]}));
    }
    level = std::move(next);
  }
  enforce_equal(cs, level[0], Lc(root));
}

/// Root reached from a leaf along a path selected by little-endian index bits.
inline Var merkle_path_gadget(Builder<Fr>& cs, const Lc& leaf, const std::vector<Var>& index_bits,
                              const std::vector<Var>& siblings) {
  require(index_bits.size() == siblings.size(), Errc::BadShape, "path bits and siblings differ in length");
  Lc cur = leaf;
  Var out{};
  for (std::size_t l = 0; l < siblings.size(); ++l) {
    // bit = 0: (cur, sib); bit = 1: (sib, cur).
    Var left = gadget_select(cs, index_bits[l], cur, Lc(siblings[l]));
    Lc right = cur + Lc(siblings[l]) - Lc(left);
    out = gadget_hash(cs, {Lc(left), right});
    cur = out;
  }
  if (siblings.empty()) {
    out = cs.alloc([&] { return cs.eval(leaf); });
    enforce_equal(cs, Lc(out), leaf);
  }
  return out;
}

}  // namespace vunlearn
