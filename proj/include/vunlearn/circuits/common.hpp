#pragma once

// Shared circuit plumbing: packed mask words, owner-composed dataset trees,
// fixed-point truncation, index multiplexers and tamper hooks.

#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "vunlearn/commitment.hpp"
#include "vunlearn/error.hpp"
#include "vunlearn/fixed_point.hpp"
#include "vunlearn/gadgets.hpp"
#include "vunlearn/masking.hpp"
#include "vunlearn/r1cs.hpp"
#include "vunlearn/training.hpp"

namespace vunlearn {

/// Deliberate deviations injected during witness synthesis. Each deviates the
/// witness at one point and continues consistently from there.
enum class Tamper {
  None,
  DatasetEntry,      // a private feature differs from the committed row
  MaskBit,           // a private mask bit differs from the committed mask
  StateRuleSkipped,  // next state copies the request instead of combining it
  WrongCount,        // effective count off by one
  WrongInverse,      // reciprocal off by one
  WrongEta,          // update multiplies by a learning rate other than the public one
  PerturbedOutput,   // one updated parameter moved by one ulp
  BatchIndex,        // a row other than the public index is used
  ClassFlip,         // a corrected label flipped without a class-mask bit
  FadFlag,           // a public detection flag inverted
};

inline constexpr Tamper kAllTampers[] = {
    Tamper::DatasetEntry, Tamper::MaskBit,  Tamper::StateRuleSkipped, Tamper::WrongCount, Tamper::WrongInverse,
    Tamper::WrongEta,     Tamper::PerturbedOutput, Tamper::BatchIndex, Tamper::ClassFlip, Tamper::FadFlag,
};

inline const char* to_string(Tamper t) {
  switch (t) {
    case Tamper::None: return "none";
    case Tamper::DatasetEntry: return "dataset-entry";
    case Tamper::MaskBit: return "mask-bit";
    case Tamper::StateRuleSkipped: return "state-rule-skipped";
    case Tamper::WrongCount: return "wrong-count";
    case Tamper::WrongInverse: return "wrong-inverse";
    case Tamper::WrongEta: return "wrong-eta";
    case Tamper::PerturbedOutput: return "perturbed-output";
    case Tamper::BatchIndex: return "batch-index";
    case Tamper::ClassFlip: return "class-flip";
    case Tamper::FadFlag: return "fad-flag";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Mask words. A row contributes [feature J][sample 1][class K] bits for the
// kinds a circuit family covers. Rows pack into 240-bit words that never
// straddle an owner boundary, so the global word list is the concatenation
// of the per-owner lists.

inline constexpr std::size_t kWordBits = 240;

struct MaskLayout {
  bool feature = false;
  bool sample = false;
  bool klass = false;
  std::size_t J = 0;
  std::size_t K = 0;

  static MaskLayout none() { return {}; }
  static MaskLayout for_model(const ModelShape& s) {
    bool nn = s.kind == ModelKind::NN;
    return MaskLayout{true, true, nn, s.J, nn ? s.K : 0};
  }

  bool masked() const { return feature || sample || klass; }
  std::size_t bits_per_row() const { return (feature ? J : 0) + (sample ? 1 : 0) + (klass ? K : 0); }
  std::size_t rows_per_word() const { return kWordBits / bits_per_row(); }
  std::size_t sample_bit() const { return feature ? J : 0; }
  std::size_t class_bit(std::size_t k) const { return (feature ? J : 0) + (sample ? 1 : 0) + k; }

  std::string name() const {
    if (!masked()) return "none";
    std::string s;
    if (feature) s += "f";
    if (sample) s += "s";
    if (klass) s += "c";
    return s;
  }

  friend bool operator==(const MaskLayout&, const MaskLayout&) = default;
};

inline std::vector<std::uint8_t> mask_row_bits(const MaskSet& m, const MaskLayout& ml, std::size_t row) {
  std::vector<std::uint8_t> out;
  if (ml.feature) {
    for (std::size_t j = 0; j < ml.J; ++j) out.push_back(m.feature(row, j));
  }
  if (ml.sample) out.push_back(m.sample(row, 0));
  if (ml.klass) {
    for (std::size_t k = 0; k < ml.K; ++k) out.push_back(m.klass(row, k));
  }
  return out;
}

inline std::vector<std::vector<std::uint8_t>> mask_bit_rows(const MaskSet& m, const MaskLayout& ml, std::size_t n) {
  std::vector<std::vector<std::uint8_t>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(mask_row_bits(m, ml, i));
  return rows;
}

struct WordMap {
  std::vector<std::size_t> word_of_row;
  std::vector<std::size_t> slot_of_row;
  std::size_t num_words = 0;
};

inline WordMap word_map(const DatasetLayout& layout, const MaskLayout& ml) {
  require(ml.masked(), Errc::BadShape, "unmasked layout has no words");
  require(ml.bits_per_row() <= kWordBits, Errc::BadShape, "mask row wider than a word");
  WordMap wm;
  wm.word_of_row.resize(layout.num_rows);
  wm.slot_of_row.resize(layout.num_rows);
  const std::size_t rpw = ml.rows_per_word();
  for (const auto& o : layout.owners) {
    for (std::size_t i = o.begin; i < o.end; ++i) {
      wm.word_of_row[i] = wm.num_words + (i - o.begin) / rpw;
      wm.slot_of_row[i] = (i - o.begin) % rpw;
    }
    wm.num_words += (o.size() + rpw - 1) / rpw;
  }
  return wm;
}

inline std::vector<Fr> pack_mask_words(const MaskSet& m, const MaskLayout& ml, const DatasetLayout& layout) {
  WordMap wm = word_map(layout, ml);
  std::vector<Fr> words(wm.num_words);
  const std::size_t bpr = ml.bits_per_row();
  for (std::size_t i = 0; i < layout.num_rows; ++i) {
    auto bits = mask_row_bits(m, ml, i);
    for (std::size_t t = 0; t < bpr; ++t) {
      if (bits[t]) words[wm.word_of_row[i]] += pow2<Fr>(static_cast<unsigned>(wm.slot_of_row[i] * bpr + t));
    }
  }
  return words;
}

inline Commitment mask_commitment(const MaskSet& m, const MaskLayout& ml, const DatasetLayout& layout,
                                  const Fr& randomness) {
  return commit_vector(pack_mask_words(m, ml, layout), randomness);
}

inline DatasetLayout owner_local_layout(const DatasetLayout& global, const OwnerRange& o) {
  return DatasetLayout{o.size(), global.num_features, global.num_labels, {OwnerRange{o.owner, 0, o.size()}}};
}

/// An owner's request as a mask set over its own rows; absent kinds are identities.
inline MaskSet owner_request_masks(const UnlearningRequest& req, const DatasetLayout& global, std::uint32_t round) {
  const OwnerRange& o = global.owner(req.owner);
  MaskSet m = MaskSet::identity(o.size(), global.num_features, global.num_labels, round);
  for (MaskKind kind : {MaskKind::Feature, MaskKind::Sample, MaskKind::Class}) {
    if (const auto& b = req.mask(kind)) {
      require(b->kind == kind, Errc::KindMismatch, "request mask kind mismatch");
      require(b->rows() == o.size() && b->cols() == global.cols_for(kind), Errc::DimMismatch,
              "request mask for '" + req.owner + "' has the wrong shape");
      m.get(kind) = *b;
      m.get(kind).round = round;
    }
  }
  return m;
}

/// Commitment an owner signs for its round request.
inline Commitment request_commitment(const MaskSet& owner_masks, const MaskLayout& ml, const DatasetLayout& global,
                                     const OwnerRange& o, const Fr& randomness) {
  return mask_commitment(owner_masks, ml, owner_local_layout(global, o), randomness);
}

// ---------------------------------------------------------------------------
// Dataset commitments. Each owner commits its rows (leaf = hash(digest,
// r_owner, local index)); owner roots are lifted to a common depth with zero
// right-siblings and joined by a plain binary tree. Row i sits at position
// owner * 2^owner_depth + local.

inline std::vector<Fr> row_fields(const FixedDataset& d, std::size_t i) {
  std::vector<Fr> v;
  for (std::size_t j = 0; j < d.x.cols; ++j) v.push_back(Fr::from_i64(d.x(i, j)));
  for (std::size_t k = 0; k < d.y.cols; ++k) v.push_back(Fr::from_i64(d.y(i, k)));
  return v;
}

inline Fr row_digest(const FixedDataset& d, std::size_t i) { return hash_field(row_fields(d, i)); }

inline unsigned owner_depth(const DatasetLayout& layout) {
  std::size_t widest = 1;
  for (const auto& o : layout.owners) widest = std::max(widest, o.size());
  return merkle_depth(widest);
}

inline unsigned dataset_depth(const DatasetLayout& layout) {
  return owner_depth(layout) + merkle_depth(layout.owners.size());
}

inline std::size_t owner_of_row(const DatasetLayout& layout, std::size_t row) {
  for (std::size_t o = 0; o < layout.owners.size(); ++o) {
    if (row >= layout.owners[o].begin && row < layout.owners[o].end) return o;
  }
  fail(Errc::IndexOutOfRange, "row " + std::to_string(row) + " belongs to no owner");
}

inline std::uint64_t row_position(const DatasetLayout& layout, std::size_t row) {
  std::size_t o = owner_of_row(layout, row);
  return (std::uint64_t{o} << owner_depth(layout)) + (row - layout.owners[o].begin);
}

namespace detail {

inline std::vector<std::vector<Fr>> top_levels(const std::vector<Commitment>& owners, unsigned depth) {
  std::vector<Fr> level;
  for (const auto& c : owners) {
    unsigned d = merkle_depth(c.leaf_count);
    require(d <= depth, Errc::BadShape, "owner tree deeper than the joint depth");
    Fr cur = c.root;
    for (unsigned l = d; l < depth; ++l) cur = hash_field({cur, Fr::zero()});
    level.push_back(cur);
  }
  level.resize(std::size_t{1} << merkle_depth(owners.size()), Fr::zero());
  std::vector<std::vector<Fr>> levels{level};
  while (levels.back().size() > 1) {
    const auto& prev = levels.back();
    std::vector<Fr> next(prev.size() / 2);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = hash_field({prev[2 * i], prev[2 * i + 1]});
    levels.push_back(std::move(next));
  }
  return levels;
}

}  // namespace detail

/// Root the verifier derives from the published owner commitments.
inline Fr joint_dataset_root(const std::vector<Commitment>& owners) {
  require(!owners.empty(), Errc::Empty, "no owner commitments");
  std::uint64_t widest = 1;
  for (const auto& c : owners) widest = std::max(widest, c.leaf_count);
  return detail::top_levels(owners, merkle_depth(widest)).back()[0];
}

class DatasetTree {
 public:
  DatasetTree(const FixedDataset& d, std::vector<Fr> owner_randomness)
      : layout_(d.layout), randomness_(std::move(owner_randomness)) {
    require(randomness_.size() == layout_.owners.size(), Errc::LengthMismatch, "one randomness value per owner");
    low_ = owner_depth(layout_);
    for (const auto& o : layout_.owners) {
      std::vector<Fr> digests;
      for (std::size_t i = o.begin; i < o.end; ++i) digests.push_back(row_digest(d, i));
      trees_.emplace_back(digests, randomness_[trees_.size()]);
      owner_commitments_.push_back(trees_.back().commitment());
    }
    top_ = detail::top_levels(owner_commitments_, low_);
  }

  Fr root() const { return top_.back()[0]; }
  const std::vector<Commitment>& owner_commitments() const { return owner_commitments_; }
  unsigned depth() const { return low_ + static_cast<unsigned>(top_.size() - 1); }
  const Fr& leaf_randomness(std::size_t row) const { return randomness_[owner_of_row(layout_, row)]; }

  /// Siblings from the leaf up to the joint root.
  std::vector<Fr> path(std::size_t row) const {
    std::size_t o = owner_of_row(layout_, row);
    std::vector<Fr> sibs = trees_[o].open(row - layout_.owners[o].begin).siblings;
    sibs.resize(low_, Fr::zero());
    std::size_t pos = o;
    for (std::size_t l = 0; l + 1 < top_.size(); ++l) {
      sibs.push_back(top_[l][pos ^ 1]);
      pos >>= 1;
    }
    return sibs;
  }

 private:
  DatasetLayout layout_;
  std::vector<Fr> randomness_;
  unsigned low_ = 0;
  std::vector<MerkleTree> trees_;
  std::vector<Commitment> owner_commitments_;
  std::vector<std::vector<Fr>> top_;
};

inline std::vector<Fr> param_fields(const Params<std::int64_t>& p) {
  std::vector<Fr> v;
  for (auto x : p.values) v.push_back(Fr::from_i64(x));
  return v;
}

inline Commitment model_commitment(const Params<std::int64_t>& p, const Fr& randomness) {
  return commit_vector(param_fields(p), randomness);
}

// ---------------------------------------------------------------------------
// Gadgets.

/// Bits needed to hold values in [0, x].
inline unsigned bits_for(std::uint64_t x) {
  unsigned b = 0;
  while (b < 64 && (x >> b) != 0) ++b;
  return b;
}

/// Bits of v + 2^(R-1), proving v in [-2^(R-1), 2^(R-1)); the top bit is [v >= 0]. Cost: R + 1.
inline std::vector<Var> gadget_signed_range(Builder<Fr>& cs, const Lc& v, const FixedConfig& cfg) {
  if (cs.has_values() && !cs.lenient()) fixed::raw_of(cs.eval(v), cfg);
  return gadget_bit_decompose(cs, v + Lc(pow2<Fr>(cfg.range_bits - 1)), cfg.range_bits);
}

/// q = floor(v / 2^k) with q in the signed R-bit range. Cost: k + R + 2.
inline Var gadget_floor_shift(Builder<Fr>& cs, const Lc& v, unsigned k, const FixedConfig& cfg) {
  const unsigned R = cfg.range_bits;
  std::int64_t q = 0;
  u128 r = 0;
  if (cs.has_values()) {
    try {
      std::tie(q, r) = fixed::floor_shift_field(cs.eval(v), k, cfg);
    } catch (const Error&) {
      if (!cs.lenient()) throw;
    }
  }
  Var qv = cs.alloc([&] { return Fr::from_i64(q); });
  std::vector<Var> rbits, qbits;
  for (unsigned i = 0; i < k; ++i) rbits.push_back(alloc_bit(cs, i < 128 && ((r >> i) & 1)));
  u128 shifted = static_cast<u128>(static_cast<__int128>(q) + (static_cast<__int128>(1) << (R - 1)));
  for (unsigned i = 0; i < R; ++i) qbits.push_back(alloc_bit(cs, (shifted >> i) & 1));
  cs.enforce(Lc(qv) * pow2<Fr>(k) + pack_bits<Fr>(rbits), Builder<Fr>::one(), v);
  cs.enforce(pack_bits<Fr>(qbits), Builder<Fr>::one(), Lc(qv) + Lc(pow2<Fr>(R - 1)));
  return qv;
}

/// items[index] for little-endian index bits; addresses past the list read zero.
inline Lc gadget_mux(Builder<Fr>& cs, const std::vector<Var>& index_bits, std::vector<Lc> items) {
  const std::size_t width = std::size_t{1} << index_bits.size();
  require(items.size() <= width, Errc::BadShape, "mux has more items than its index addresses");
  items.resize(width);
  for (Var bit : index_bits) {
    std::vector<Lc> next;
    next.reserve(items.size() / 2);
    for (std::size_t i = 0; i < items.size(); i += 2) {
      if (items[i].terms().empty() && items[i + 1].terms().empty()) {
        next.emplace_back();
      } else {
        next.emplace_back(gadget_select(cs, bit, items[i], items[i + 1]));
      }
    }
    items = std::move(next);
  }
  return items[0];
}

inline std::vector<Var> gadget_index_bits(Builder<Fr>& cs, const Lc& index, unsigned depth) {
  if (depth == 0) {
    enforce_equal(cs, index, Lc());
    return {};
  }
  return gadget_bit_decompose(cs, index, depth);
}

/// Boolean mask bits for every row.
struct MaskRows {
  std::vector<std::vector<Var>> bits;  // N x bits_per_row
  std::vector<Lc> words;               // per row, sum bit_t * 2^t
};

inline MaskRows gadget_alloc_mask_rows(Builder<Fr>& cs, const MaskLayout& ml, std::size_t rows,
                                       const std::vector<std::vector<std::uint8_t>>* values) {
  MaskRows out;
  const std::size_t bpr = ml.bits_per_row();
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<Var> bits;
    for (std::size_t t = 0; t < bpr; ++t) bits.push_back(alloc_bit(cs, values && (*values)[i][t]));
    out.words.push_back(pack_bits<Fr>(bits));
    out.bits.push_back(std::move(bits));
  }
  return out;
}

/// Packed words over rows [begin, end), which must be whole owners.
inline std::vector<Lc> pack_word_lcs(const std::vector<std::vector<Var>>& bits, const MaskLayout& ml,
                                     const WordMap& wm, std::size_t begin, std::size_t end) {
  const std::size_t bpr = ml.bits_per_row();
  const std::size_t w0 = wm.word_of_row[begin];
  std::vector<Lc> words(wm.word_of_row[end - 1] - w0 + 1);
  for (std::size_t i = begin; i < end; ++i) {
    words[wm.word_of_row[i] - w0] += pack_bits<Fr>(bits[i], static_cast<unsigned>(wm.slot_of_row[i] * bpr));
  }
  return words;
}

inline void gadget_bind_mask_rows(Builder<Fr>& cs, Var root, const MaskRows& rows, const MaskLayout& ml,
                                  const DatasetLayout& layout, const Lc& randomness) {
  WordMap wm = word_map(layout, ml);
  commitment_gadget(cs, root, pack_word_lcs(rows.bits, ml, wm, 0, layout.num_rows), randomness);
}

/// Row words laid out by dataset position, for multiplexing by position bits.
inline std::vector<Lc> words_by_position(const MaskRows& rows, const DatasetLayout& layout) {
  std::vector<Lc> out;
  for (std::size_t i = 0; i < layout.num_rows; ++i) {
    std::uint64_t pos = row_position(layout, i);
    if (out.size() <= pos) out.resize(pos + 1);
    out[pos] = rows.words[i];
  }
  return out;
}

/// Gate = sample bit AND OR(feature bits), over one row's bits.
inline Lc gadget_row_gate(Builder<Fr>& cs, const MaskLayout& ml, const std::vector<Var>& bits) {
  std::optional<Var> any;
  if (ml.feature) {
    std::vector<Var> f(bits.begin(), bits.begin() + static_cast<std::ptrdiff_t>(ml.J));
    any = gadget_or_all(cs, f);
  }
  if (ml.sample) {
    Var sb = bits[ml.sample_bit()];
    if (any) return Lc(gadget_and(cs, *any, sb));
    return Lc(sb);
  }
  if (any) return Lc(*any);
  return Lc(Fr::one());
}

/// Bits of the mask row at `position_bits`, re-decomposed after the mux.
inline std::vector<Var> gadget_select_mask_row(Builder<Fr>& cs, const MaskLayout& ml,
                                               const std::vector<Lc>& by_position,
                                               const std::vector<Var>& position_bits) {
  Lc word = gadget_mux(cs, position_bits, by_position);
  return gadget_bit_decompose(cs, word, static_cast<unsigned>(ml.bits_per_row()));
}

struct OpenedRow {
  std::vector<Var> x;
  std::vector<Var> y;
  std::vector<Var> position_bits;
};

/// Witness source for one opened row.
struct RowSource {
  const FixedDataset* data = nullptr;
  const DatasetTree* tree = nullptr;
  std::size_t row = 0;
  std::optional<std::size_t> bump_feature;  // tamper: add one to this feature
};

/// Opens the dataset row at `position` against the joint dataset root.
inline OpenedRow gadget_open_row(Builder<Fr>& cs, Var root, const Lc& position, const DatasetLayout& layout,
                                 const RowSource& src) {
  const unsigned low = owner_depth(layout);
  const unsigned depth = dataset_depth(layout);
  OpenedRow out;
  std::vector<Lc> fields;
  for (std::size_t j = 0; j < layout.num_features; ++j) {
    Var v = cs.alloc([&] { return Fr::from_i64(src.data->x(src.row, j) + (src.bump_feature == j ? 1 : 0)); });
    out.x.push_back(v);
    fields.emplace_back(v);
  }
  for (std::size_t k = 0; k < layout.num_labels; ++k) {
    Var v = cs.alloc([&] { return Fr::from_i64(src.data->y(src.row, k)); });
    out.y.push_back(v);
    fields.emplace_back(v);
  }
  Var digest = gadget_hash(cs, fields);
  out.position_bits = gadget_index_bits(cs, position, depth);
  std::vector<Var> local_bits(out.position_bits.begin(), out.position_bits.begin() + low);
  Var r = cs.alloc([&] { return src.tree->leaf_randomness(src.row); });
  Var leaf = gadget_hash(cs, {Lc(digest), Lc(r), pack_bits<Fr>(local_bits)});
  std::vector<Fr> path;
  if (cs.has_values()) path = src.tree->path(src.row);
  std::vector<Var> sibs;
  for (unsigned l = 0; l < depth; ++l) sibs.push_back(cs.alloc([&] { return path[l]; }));
  Var got = merkle_path_gadget(cs, Lc(leaf), out.position_bits, sibs);
  enforce_equal(cs, Lc(got), Lc(root));
  return out;
}

/// Private model parameters bound to `root`.
inline std::vector<Var> gadget_committed_params(Builder<Fr>& cs, Var root, const Params<std::int64_t>* p,
                                                std::size_t count, const Fr* randomness) {
  std::vector<Var> vars;
  std::vector<Lc> lcs;
  for (std::size_t i = 0; i < count; ++i) {
    Var v = cs.alloc([&] { return Fr::from_i64((*p)[i]); });
    vars.push_back(v);
    lcs.emplace_back(v);
  }
  Var r = cs.alloc([&] { return *randomness; });
  commitment_gadget(cs, root, lcs, Lc(r));
  return vars;
}

}  // namespace vunlearn
