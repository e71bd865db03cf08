#pragma once

// Unlearning bit matrices at feature (N x J), sample (N x 1) and class (N x K)
// granularity, their algebra, and their evolution across unlearning rounds.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vunlearn/crypto.hpp"
#include "vunlearn/error.hpp"
#include "vunlearn/matrix.hpp"

namespace vunlearn {

enum class MaskKind : std::uint8_t { Feature = 1, Sample = 2, Class = 3 };

inline const char* to_string(MaskKind k) {
  switch (k) {
    case MaskKind::Feature: return "feature";
    case MaskKind::Sample: return "sample";
    case MaskKind::Class: return "class";
  }
  return "?";
}

inline MaskKind parse_mask_kind(const std::string& s) {
  if (s == "feature") return MaskKind::Feature;
  if (s == "sample") return MaskKind::Sample;
  if (s == "class") return MaskKind::Class;
  fail(Errc::Parse, "unknown mask kind '" + s + "'");
}

struct BitMatrix {
  MaskKind kind = MaskKind::Feature;
  Matrix<std::uint8_t> bits;
  std::uint32_t round = 0;

  std::size_t rows() const { return bits.rows; }
  std::size_t cols() const { return bits.cols; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits(r, c); }

  /// All-ones for Feature/Sample (AND identity), all-zeros for Class (XOR identity).
  static BitMatrix identity(MaskKind kind, std::size_t rows, std::size_t cols, std::uint32_t round = 0) {
    require(kind != MaskKind::Sample || cols == 1, Errc::DimMismatch, "sample masks have one column");
    std::uint8_t fill = kind == MaskKind::Class ? 0 : 1;
    return BitMatrix{kind, Matrix<std::uint8_t>(rows, cols, fill), round};
  }

  static BitMatrix from_rows(MaskKind kind, const std::vector<std::vector<int>>& rows, std::uint32_t round = 0) {
    BitMatrix m{kind, Matrix<std::uint8_t>(rows.size(), rows.empty() ? 0 : rows[0].size()), round};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      require(rows[r].size() == m.cols(), Errc::DimMismatch, "ragged bit matrix");
      for (std::size_t c = 0; c < m.cols(); ++c) {
        require(rows[r][c] == 0 || rows[r][c] == 1, Errc::Parse, "bit matrix entries must be 0 or 1");
        m.bits(r, c) = static_cast<std::uint8_t>(rows[r][c]);
      }
    }
    require(kind != MaskKind::Sample || m.cols() == 1, Errc::DimMismatch, "sample masks have one column");
    return m;
  }

  bool is_identity() const {
    std::uint8_t fill = kind == MaskKind::Class ? 0 : 1;
    return std::all_of(bits.data.begin(), bits.data.end(), [&](std::uint8_t b) { return b == fill; });
  }

  friend bool operator==(const BitMatrix&, const BitMatrix&) = default;
};

/// x o b: entries under a zero bit become zero.
template <class T>
Matrix<T> apply_feature_mask(const Matrix<T>& x, const BitMatrix& b) {
  require(b.kind == MaskKind::Feature, Errc::KindMismatch, "feature mask expected");
  require(x.same_shape(b.bits), Errc::DimMismatch, "feature matrix and mask differ in shape");
  Matrix<T> out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (!b.bits.data[i]) out.data[i] = T{};
  }
  return out;
}

/// b_i = OR over row i; zero only when the whole sample is removed.
inline std::vector<std::uint8_t> flatten_sample_bits(const BitMatrix& b) {
  require(b.kind == MaskKind::Feature, Errc::KindMismatch, "only feature masks are flattened");
  std::vector<std::uint8_t> out(b.rows(), 0);
  for (std::size_t r = 0; r < b.rows(); ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) out[r] |= b(r, c);
  }
  return out;
}

inline std::vector<std::uint8_t> sample_column(const BitMatrix& b) {
  require(b.kind == MaskKind::Sample, Errc::KindMismatch, "sample mask expected");
  return b.bits.data;
}

inline std::size_t effective_count(const std::vector<std::uint8_t>& bits) {
  std::size_t n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

/// State-preserving update b_new = b_prev & b_cur; zero bits are absorbing.
inline BitMatrix update_state(const BitMatrix& prev, const BitMatrix& cur) {
  require(prev.kind == cur.kind, Errc::KindMismatch, "state update across mask kinds");
  require(cur.kind != MaskKind::Class, Errc::KindMismatch, "class corrections do not carry irrecoverable state");
  require(prev.bits.same_shape(cur.bits), Errc::DimMismatch, "state update across shapes");
  require(prev.round + 1 == cur.round, Errc::RoundSkew,
          "previous mask is round " + std::to_string(prev.round) + ", current is " + std::to_string(cur.round));
  BitMatrix out = cur;
  for (std::size_t i = 0; i < out.bits.data.size(); ++i) out.bits.data[i] &= prev.bits.data[i];
  return out;
}

/// Cumulative label correction: y_t = y_0 ^ s_t with s_t = s_{t-1} ^ b_t.
inline BitMatrix accumulate_class(const BitMatrix& prev, const BitMatrix& cur) {
  require(prev.kind == MaskKind::Class && cur.kind == MaskKind::Class, Errc::KindMismatch, "class masks expected");
  require(prev.bits.same_shape(cur.bits), Errc::DimMismatch, "class masks differ in shape");
  require(prev.round + 1 == cur.round, Errc::RoundSkew, "class accumulation round skew");
  BitMatrix out = cur;
  for (std::size_t i = 0; i < out.bits.data.size(); ++i) out.bits.data[i] ^= prev.bits.data[i];
  return out;
}

/// y' = y XOR b over binary labels.
inline Matrix<std::uint8_t> apply_class_mask(const Matrix<std::uint8_t>& y, const BitMatrix& b) {
  require(b.kind == MaskKind::Class, Errc::KindMismatch, "class mask expected");
  require(y.same_shape(b.bits), Errc::DimMismatch, "label matrix and mask differ in shape");
  Matrix<std::uint8_t> out = y;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    require(out.data[i] <= 1, Errc::NonBinaryLabel, "labels must be 0 or 1");
    out.data[i] ^= b.bits.data[i];
  }
  return out;
}

/// Row ranges [begin, end) owned by each data owner.
struct OwnerRange {
  std::string owner;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
};

struct DatasetLayout {
  std::size_t num_rows = 0;
  std::size_t num_features = 0;
  std::size_t num_labels = 0;
  std::vector<OwnerRange> owners;

  /// Disjoint ranges that exactly cover [0, num_rows).
  void validate() const {
    std::vector<OwnerRange> sorted = owners;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.begin < b.begin; });
    std::size_t cursor = 0;
    std::map<std::string, int> seen;
    for (const auto& o : sorted) {
      require(++seen[o.owner] == 1, Errc::OverlappingRows, "owner '" + o.owner + "' registered twice");
      require(o.begin < o.end, Errc::OverlappingRows, "owner '" + o.owner + "' has an empty row range");
      require(o.begin == cursor, Errc::OverlappingRows,
              o.begin < cursor ? "owner row ranges overlap" : "owner row ranges leave a gap");
      cursor = o.end;
    }
    require(cursor == num_rows, Errc::OverlappingRows, "owner row ranges do not cover the dataset");
  }

  const OwnerRange& owner(const std::string& id) const {
    for (const auto& o : owners) {
      if (o.owner == id) return o;
    }
    fail(Errc::UnknownOwner, "owner '" + id + "' is not registered");
  }

  std::size_t cols_for(MaskKind k) const {
    switch (k) {
      case MaskKind::Feature: return num_features;
      case MaskKind::Sample: return 1;
      case MaskKind::Class: return num_labels;
    }
    return 0;
  }
};

struct UnlearningRequest {
  std::string owner;
  std::optional<BitMatrix> feature;
  std::optional<BitMatrix> sample;
  std::optional<BitMatrix> klass;
  Bytes signature;  // owner signature over the mask commitment digest

  const std::optional<BitMatrix>& mask(MaskKind k) const {
    switch (k) {
      case MaskKind::Feature: return feature;
      case MaskKind::Sample: return sample;
      default: return klass;
    }
  }
  std::optional<BitMatrix>& mask(MaskKind k) {
    return const_cast<std::optional<BitMatrix>&>(static_cast<const UnlearningRequest&>(*this).mask(k));
  }
};

/// One global matrix per kind. Feature -> Sample -> Class is the application order.
struct MaskSet {
  BitMatrix feature;
  BitMatrix sample;
  BitMatrix klass;

  static MaskSet identity(std::size_t n, std::size_t j, std::size_t k, std::uint32_t round = 0) {
    return MaskSet{BitMatrix::identity(MaskKind::Feature, n, j, round),
                   BitMatrix::identity(MaskKind::Sample, n, 1, round),
                   BitMatrix::identity(MaskKind::Class, n, k, round)};
  }

  const BitMatrix& get(MaskKind k) const {
    switch (k) {
      case MaskKind::Feature: return feature;
      case MaskKind::Sample: return sample;
      default: return klass;
    }
  }
  BitMatrix& get(MaskKind k) { return const_cast<BitMatrix&>(static_cast<const MaskSet&>(*this).get(k)); }

  /// Per-row gate: sample bit AND OR(feature row).
  std::vector<std::uint8_t> row_gate() const {
    auto f = flatten_sample_bits(feature);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] &= sample.bits.data[i];
    return f;
  }

  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

/// Feature/Sample chain by AND, Class chain by XOR.
inline MaskSet advance_state(const MaskSet& prev, const MaskSet& request) {
  return MaskSet{update_state(prev.feature, request.feature), update_state(prev.sample, request.sample),
                 accumulate_class(prev.klass, request.klass)};
}

/// Block-stacks per-owner masks into global matrices for the given round.
inline MaskSet merge_requests(const std::vector<UnlearningRequest>& requests, const DatasetLayout& layout,
                              std::uint32_t round) {
  layout.validate();
  MaskSet out = MaskSet::identity(layout.num_rows, layout.num_features, layout.num_labels, round);
  std::map<std::string, int> seen;
  for (const auto& req : requests) {
    const OwnerRange& range = layout.owner(req.owner);
    require(++seen[req.owner] == 1, Errc::OverlappingRows, "two requests for owner '" + req.owner + "' in one round");
    for (MaskKind k : {MaskKind::Feature, MaskKind::Sample, MaskKind::Class}) {
      const auto& m = req.mask(k);
      if (!m) continue;
      require(m->kind == k, Errc::KindMismatch, "request mask kind mismatch");
      require(m->rows() == range.size() && m->cols() == layout.cols_for(k), Errc::DimMismatch,
              "mask for owner '" + req.owner + "' has shape " + std::to_string(m->rows()) + "x" +
                  std::to_string(m->cols()));
      BitMatrix& g = out.get(k);
      for (std::size_t r = 0; r < range.size(); ++r) {
        for (std::size_t c = 0; c < m->cols(); ++c) g.bits(range.begin + r, c) = (*m)(r, c);
      }
    }
  }
  return out;
}

/// Packed bitstring: kind u8, rows u32, cols u32, round u32, then LSB-first row-major bits.
inline Bytes serialize_mask(const BitMatrix& m) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.u32(m.round);
  Bytes packed((m.bits.data.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < m.bits.data.size(); ++i) {
    if (m.bits.data[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  w.raw(packed);
  return w.buf;
}

inline BitMatrix deserialize_mask(std::span<const std::uint8_t> bytes) {
  ByteReader r{bytes};
  auto kind = r.u8();
  require(kind >= 1 && kind <= 3, Errc::Parse, "bad mask kind");
  BitMatrix m;
  m.kind = static_cast<MaskKind>(kind);
  std::size_t rows = r.u32(), cols = r.u32();
  m.round = r.u32();
  m.bits = Matrix<std::uint8_t>(rows, cols);
  auto packed = r.raw((rows * cols + 7) / 8);
  for (std::size_t i = 0; i < rows * cols; ++i) m.bits.data[i] = (packed[i / 8] >> (i % 8)) & 1;
  require(r.done(), Errc::Parse, "trailing bytes after mask");
  return m;
}

}  // namespace vunlearn
