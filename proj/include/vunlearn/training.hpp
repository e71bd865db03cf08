#pragma once

// Masked losses, gradients and optimizer steps for linear regression and a
// one-hidden-layer ReLU network, in two independent arithmetics:
//
//   * double precision, the real-valued reference;
//   * fixed point over int64/int128, bit-exact with the step circuits.
//
// Residuals are prediction minus observation and every gradient is the
// (1/N_eff) mean of per-sample terms of the half-MSE loss. A row takes part
// only when its sample bit and at least one of its feature bits are set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vunlearn/error.hpp"
#include "vunlearn/field.hpp"
#include "vunlearn/fixed_point.hpp"
#include "vunlearn/masking.hpp"
#include "vunlearn/matrix.hpp"

namespace vunlearn {

enum class ModelKind : std::uint8_t { LR = 1, NN = 2 };

inline const char* to_string(ModelKind k) { return k == ModelKind::LR ? "lr" : "nn"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "lr") return ModelKind::LR;
  if (s == "nn") return ModelKind::NN;
  fail(Errc::Parse, "unknown model '" + s + "'");
}

/// LR: J inputs, one real output. NN: J-H-K with ReLU hidden layer and linear output.
struct ModelShape {
  ModelKind kind = ModelKind::LR;
  std::size_t J = 4;
  std::size_t H = 0;
  std::size_t K = 1;

  static ModelShape lr(std::size_t j) { return {ModelKind::LR, j, 0, 1}; }
  static ModelShape nn(std::size_t j, std::size_t h, std::size_t k) { return {ModelKind::NN, j, h, k}; }

  void validate() const {
    require(J >= 1, Errc::BadShape, "at least one feature is required");
    if (kind == ModelKind::LR) {
      require(K == 1 && H == 0, Errc::BadShape, "linear regression has one output and no hidden layer");
    } else {
      require(H >= 1 && K >= 1, Errc::BadShape, "network needs hidden and output units");
    }
  }

  std::size_t label_cols() const { return K; }

  // Flat layout. LR: [w_0..w_{J-1}, bias]. NN: [W1 (JxH), b1 (H), W2 (HxK), b2 (K)].
  std::size_t param_count() const { return kind == ModelKind::LR ? J + 1 : J * H + H + H * K + K; }
  std::size_t w(std::size_t j) const { return j; }
  std::size_t bias() const { return J; }
  std::size_t w1(std::size_t j, std::size_t h) const { return j * H + h; }
  std::size_t b1(std::size_t h) const { return J * H + h; }
  std::size_t w2(std::size_t h, std::size_t k) const { return J * H + H + h * K + k; }
  std::size_t b2(std::size_t k) const { return J * H + H + H * K + k; }

  /// Biases accumulate at scale f, weights at scale 2f.
  bool is_bias(std::size_t idx) const {
    if (kind == ModelKind::LR) return idx == J;
    return (idx >= J * H && idx < J * H + H) || idx >= J * H + H + H * K;
  }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

template <class T>
struct Params {
  ModelShape shape;
  std::vector<T> values;

  static Params zeros(const ModelShape& s) { return Params{s, std::vector<T>(s.param_count(), T{})}; }

  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }

  friend bool operator==(const Params&, const Params&) = default;
};

/// Real-valued training data. Labels: N x 1 real (LR) or N x K binary (NN).
struct Dataset {
  Matrix<double> x;
  Matrix<double> y;

  std::size_t rows() const { return x.rows; }
};

/// Fixed-point training data. Features are raw signed integers at scale f;
/// LR labels likewise, NN labels are plain 0/1 bits.
struct FixedDataset {
  FixedConfig cfg;
  ModelKind kind = ModelKind::LR;
  Matrix<std::int64_t> x;
  Matrix<std::int64_t> y;
  DatasetLayout layout;

  std::size_t rows() const { return x.rows; }

  void validate() const {
    cfg.validate();
    require(x.rows == y.rows, Errc::DimMismatch, "feature and label row counts differ");
    for (auto v : x.data) fixed::check_raw(v, cfg, "feature");
    if (kind == ModelKind::NN) {
      for (auto v : y.data) require(v == 0 || v == 1, Errc::NonBinaryLabel, "labels must be 0 or 1");
    } else {
      require(y.cols == 1, Errc::DimMismatch, "regression labels have one column");
      for (auto v : y.data) fixed::check_raw(v, cfg, "label");
    }
    require(layout.num_rows == x.rows && layout.num_features == x.cols && layout.num_labels == y.cols,
            Errc::DimMismatch, "layout does not match the data");
    layout.validate();
  }
};

inline DatasetLayout single_owner_layout(std::size_t n, std::size_t j, std::size_t k, const std::string& owner = "owner-0") {
  return DatasetLayout{n, j, k, {OwnerRange{owner, 0, n}}};
}

inline FixedDataset to_fixed(const Dataset& d, const FixedConfig& cfg, ModelKind kind,
                             std::optional<DatasetLayout> layout = std::nullopt) {
  cfg.validate();
  require(d.x.rows == d.y.rows, Errc::DimMismatch, "feature and label row counts differ");
  FixedDataset out;
  out.cfg = cfg;
  out.kind = kind;
  out.x = Matrix<std::int64_t>(d.x.rows, d.x.cols);
  out.y = Matrix<std::int64_t>(d.y.rows, d.y.cols);
  for (std::size_t i = 0; i < d.x.data.size(); ++i) out.x.data[i] = fixed::to_raw(d.x.data[i], cfg);
  for (std::size_t i = 0; i < d.y.data.size(); ++i) {
    if (kind == ModelKind::NN) {
      double v = d.y.data[i];
      require(v == 0.0 || v == 1.0, Errc::NonBinaryLabel, "labels must be 0 or 1");
      out.y.data[i] = static_cast<std::int64_t>(v);
    } else {
      out.y.data[i] = fixed::to_raw(d.y.data[i], cfg);
    }
  }
  out.layout = layout ? *layout : single_owner_layout(d.x.rows, d.x.cols, d.y.cols);
  out.validate();
  return out;
}

inline Dataset to_double(const FixedDataset& d) {
  Dataset out{Matrix<double>(d.x.rows, d.x.cols), Matrix<double>(d.y.rows, d.y.cols)};
  for (std::size_t i = 0; i < d.x.data.size(); ++i) out.x.data[i] = fixed::from_raw(d.x.data[i], d.cfg);
  for (std::size_t i = 0; i < d.y.data.size(); ++i) {
    out.y.data[i] = d.kind == ModelKind::NN ? static_cast<double>(d.y.data[i]) : fixed::from_raw(d.y.data[i], d.cfg);
  }
  return out;
}

inline Params<std::int64_t> to_fixed(const Params<double>& p, const FixedConfig& cfg) {
  Params<std::int64_t> out{p.shape, {}};
  for (double v : p.values) out.values.push_back(fixed::to_raw(v, cfg));
  return out;
}

inline Params<double> to_double(const Params<std::int64_t>& p, const FixedConfig& cfg) {
  Params<double> out{p.shape, {}};
  for (auto v : p.values) out.values.push_back(fixed::from_raw(v, cfg));
  return out;
}

/// All rows of the dataset in index order (the BGD batch).
inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

inline void check_masks(const MaskSet& m, std::size_t n, std::size_t j, std::size_t k) {
  require(m.feature.kind == MaskKind::Feature && m.sample.kind == MaskKind::Sample && m.klass.kind == MaskKind::Class,
          Errc::KindMismatch, "mask set kinds out of place");
  require(m.feature.rows() == n && m.feature.cols() == j, Errc::DimMismatch, "feature mask shape");
  require(m.sample.rows() == n && m.sample.cols() == 1, Errc::DimMismatch, "sample mask shape");
  require(m.klass.rows() == n && m.klass.cols() == k, Errc::DimMismatch, "class mask shape");
}

// ---------------------------------------------------------------------------
// Double-precision reference.

inline double predict_lr(const Params<double>& p, std::span<const double> x) {
  require(p.shape.kind == ModelKind::LR, Errc::KindMismatch, "linear model expected");
  require(x.size() == p.shape.J, Errc::DimMismatch, "feature row has wrong length");
  double acc = p[p.shape.bias()];
  for (std::size_t j = 0; j < x.size(); ++j) acc += x[j] * p[p.shape.w(j)];
  return acc;
}

struct NnForward {
  std::vector<double> z1, a1, z2;
};

inline NnForward nn_forward(const Params<double>& p, std::span<const double> x) {
  const auto& s = p.shape;
  require(s.kind == ModelKind::NN, Errc::KindMismatch, "network expected");
  require(x.size() == s.J, Errc::DimMismatch, "feature row has wrong length");
  NnForward f{std::vector<double>(s.H), std::vector<double>(s.H), std::vector<double>(s.K)};
  for (std::size_t h = 0; h < s.H; ++h) {
    double z = p[s.b1(h)];
    for (std::size_t j = 0; j < s.J; ++j) z += x[j] * p[s.w1(j, h)];
    f.z1[h] = z;
    f.a1[h] = z >= 0 ? z : 0.0;
  }
  for (std::size_t k = 0; k < s.K; ++k) {
    double z = p[s.b2(k)];
    for (std::size_t h = 0; h < s.H; ++h) z += f.a1[h] * p[s.w2(h, k)];
    f.z2[k] = z;
  }
  return f;
}

/// Per-sample half-MSE gradient; `g` is accumulated into.
inline void add_sample_gradient(const Params<double>& p, std::span<const double> x, std::span<const double> y,
                                std::vector<double>& g) {
  const auto& s = p.shape;
  if (s.kind == ModelKind::LR) {
    double res = predict_lr(p, x) - y[0];
    for (std::size_t j = 0; j < s.J; ++j) g[s.w(j)] += x[j] * res;
    g[s.bias()] += res;
    return;
  }
  NnForward f = nn_forward(p, x);
  std::vector<double> e(s.K);
  for (std::size_t k = 0; k < s.K; ++k) e[k] = f.z2[k] - y[k];
  for (std::size_t h = 0; h < s.H; ++h) {
    double back = 0;
    for (std::size_t k = 0; k < s.K; ++k) {
      g[s.w2(h, k)] += f.a1[h] * e[k];
      back += p[s.w2(h, k)] * e[k];
    }
    double d1 = f.z1[h] >= 0 ? back : 0.0;
    for (std::size_t j = 0; j < s.J; ++j) g[s.w1(j, h)] += x[j] * d1;
    g[s.b1(h)] += d1;
  }
  for (std::size_t k = 0; k < s.K; ++k) g[s.b2(k)] += e[k];
}

struct GradSum {
  std::vector<double> sum;
  std::size_t count = 0;  // effective rows
};

/// Summed gradient over `rows` with masks applied in Feature -> Sample -> Class order.
inline GradSum grad_sum(const Params<double>& p, const Dataset& d, const MaskSet* masks,
                        std::span<const std::size_t> rows) {
  const auto& s = p.shape;
  require(d.x.cols == s.J && d.y.cols == s.label_cols(), Errc::DimMismatch, "dataset does not match model shape");
  if (masks) check_masks(*masks, d.rows(), s.J, s.kind == ModelKind::NN ? s.K : 1);
  GradSum out{std::vector<double>(s.param_count(), 0.0), 0};
  std::vector<double> xr(s.J), yr(d.y.cols);
  for (std::size_t i : rows) {
    require(i < d.rows(), Errc::IndexOutOfRange, "batch index past dataset");
    bool gate = true;
    if (masks) {
      bool any = false;
      for (std::size_t j = 0; j < s.J; ++j) any = any || masks->feature(i, j);
      gate = any && masks->sample(i, 0);
    }
    if (!gate) continue;
    for (std::size_t j = 0; j < s.J; ++j) xr[j] = (masks && !masks->feature(i, j)) ? 0.0 : d.x(i, j);
    for (std::size_t k = 0; k < d.y.cols; ++k) {
      double v = d.y(i, k);
      if (masks && s.kind == ModelKind::NN) {
        require(v == 0.0 || v == 1.0, Errc::NonBinaryLabel, "labels must be 0 or 1");
        if (masks->klass(i, k)) v = 1.0 - v;
      }
      yr[k] = v;
    }
    add_sample_gradient(p, xr, yr, out.sum);
    ++out.count;
  }
  return out;
}

inline std::vector<double> mean_gradient(const GradSum& g) {
  require(g.count >= 1, Errc::EmptyEffectiveSet, "no effective samples remain after masking");
  std::vector<double> out = g.sum;
  for (auto& v : out) v /= static_cast<double>(g.count);
  return out;
}

/// Unmasked mean gradient over the whole dataset.
inline std::vector<double> grad_full(const Params<double>& p, const Dataset& d) {
  auto rows = all_rows(d.rows());
  return mean_gradient(grad_sum(p, d, nullptr, rows));
}

inline std::vector<double> grad_lr_feature_masked(const Params<double>& p, const Dataset& d, const BitMatrix& b) {
  require(p.shape.kind == ModelKind::LR, Errc::KindMismatch, "linear model expected");
  require(b.kind == MaskKind::Feature, Errc::KindMismatch, "feature mask expected");
  MaskSet m = MaskSet::identity(d.rows(), p.shape.J, 1);
  m.feature = b;
  auto rows = all_rows(d.rows());
  return mean_gradient(grad_sum(p, d, &m, rows));
}

inline std::vector<double> grad_lr_sample_masked(const Params<double>& p, const Dataset& d, const BitMatrix& b) {
  require(p.shape.kind == ModelKind::LR, Errc::KindMismatch, "linear model expected");
  require(b.kind == MaskKind::Sample, Errc::KindMismatch, "sample mask expected");
  MaskSet m = MaskSet::identity(d.rows(), p.shape.J, 1);
  m.sample = b;
  auto rows = all_rows(d.rows());
  return mean_gradient(grad_sum(p, d, &m, rows));
}

inline std::vector<double> grad_nn_masked(const Params<double>& p, const Dataset& d, const BitMatrix& feature,
                                          const BitMatrix& klass) {
  require(p.shape.kind == ModelKind::NN, Errc::KindMismatch, "network expected");
  MaskSet m = MaskSet::identity(d.rows(), p.shape.J, p.shape.K);
  require(feature.kind == MaskKind::Feature && klass.kind == MaskKind::Class, Errc::KindMismatch,
          "feature and class masks expected");
  m.feature = feature;
  m.klass = klass;
  auto rows = all_rows(d.rows());
  return mean_gradient(grad_sum(p, d, &m, rows));
}

/// Half-MSE averaged over effective rows; the objective whose gradient grad_sum/count is.
inline double loss(const Params<double>& p, const Dataset& d, const MaskSet* masks = nullptr) {
  const auto& s = p.shape;
  double acc = 0;
  std::size_t n = 0;
  std::vector<double> xr(s.J);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    bool gate = true;
    if (masks) {
      bool any = false;
      for (std::size_t j = 0; j < s.J; ++j) any = any || masks->feature(i, j);
      gate = any && masks->sample(i, 0);
    }
    if (!gate) continue;
    for (std::size_t j = 0; j < s.J; ++j) xr[j] = (masks && !masks->feature(i, j)) ? 0.0 : d.x(i, j);
    if (s.kind == ModelKind::LR) {
      double r = predict_lr(p, xr) - d.y(i, 0);
      acc += 0.5 * r * r;
    } else {
      auto f = nn_forward(p, xr);
      for (std::size_t k = 0; k < s.K; ++k) {
        double y = d.y(i, k);
        if (masks && masks->klass(i, k)) y = 1.0 - y;
        double r = f.z2[k] - y;
        acc += 0.5 * r * r;
      }
    }
    ++n;
  }
  require(n >= 1, Errc::EmptyEffectiveSet, "no effective samples remain after masking");
  return acc / static_cast<double>(n);
}

/// params - (eta / divisor) * summed_gradient.
inline Params<double> step(const Params<double>& p, std::span<const double> summed_gradient, double eta,
                           std::size_t divisor) {
  require(divisor >= 1, Errc::EmptyEffectiveSet, "step divisor must be at least one");
  require(summed_gradient.size() == p.size(), Errc::DimMismatch, "gradient and parameters differ in size");
  Params<double> out = p;
  for (std::size_t i = 0; i < p.size(); ++i) out[i] -= eta * summed_gradient[i] / static_cast<double>(divisor);
  return out;
}

inline double grad_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), Errc::DimMismatch, "gradients differ in length");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

/// Softmax cross-entropy reference: loss = -sum y_k log softmax(z)_k. Not used by circuits.
inline double cross_entropy(std::span<const double> logits, std::span<const double> labels) {
  require(logits.size() == labels.size() && !logits.empty(), Errc::DimMismatch, "logits and labels differ");
  double m = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double l : logits) z += std::exp(l - m);
  double lse = m + std::log(z);
  double acc = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) acc -= labels[k] * (logits[k] - lse);
  return acc;
}

/// d/dz of cross_entropy: softmax(z) * sum(y) - y.
inline std::vector<double> cross_entropy_grad(std::span<const double> logits, std::span<const double> labels) {
  require(logits.size() == labels.size() && !logits.empty(), Errc::DimMismatch, "logits and labels differ");
  double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) z += (p[k] = std::exp(logits[k] - m));
  double ysum = 0;
  for (double y : labels) ysum += y;
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = p[k] / z * ysum - labels[k];
  return p;
}

/// The explicitly updated dataset: masked entries zeroed, labels corrected,
/// gated-out rows deleted. Also returns the surviving original row indices.
template <class T>
std::pair<std::pair<Matrix<T>, Matrix<T>>, std::vector<std::size_t>> reduce_dataset(const Matrix<T>& x,
                                                                                    const Matrix<T>& y,
                                                                                    const MaskSet& m,
                                                                                    bool classification) {
  check_masks(m, x.rows, x.cols, classification ? y.cols : 1);
  auto gate = m.row_gate();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (gate[i]) keep.push_back(i);
  }
  Matrix<T> rx(keep.size(), x.cols), ry(keep.size(), y.cols);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    std::size_t i = keep[r];
    for (std::size_t j = 0; j < x.cols; ++j) rx(r, j) = m.feature(i, j) ? x(i, j) : T{};
    for (std::size_t k = 0; k < y.cols; ++k) {
      T v = y(i, k);
      if (classification && m.klass(i, k)) v = static_cast<T>(1) - v;
      ry(r, k) = v;
    }
  }
  return {{std::move(rx), std::move(ry)}, std::move(keep)};
}

// ---------------------------------------------------------------------------
// Fixed point. Every quotient is floor division; intermediate products are
// exact int128 with overflow checks.

namespace fixed {

/// Extra fractional bits carried by the reciprocal of the effective count.
inline constexpr unsigned kInvExtraBits = 32;

inline __int128 mul128(__int128 a, __int128 b) {
  __int128 r;
  require(!__builtin_mul_overflow(a, b, &r), Errc::RangeOverflow, "intermediate product overflows 128 bits");
  return r;
}

inline __int128 add128(__int128 a, __int128 b) {
  __int128 r;
  require(!__builtin_add_overflow(a, b, &r), Errc::RangeOverflow, "intermediate sum overflows 128 bits");
  return r;
}

/// floor(v / 2^k) checked into the R-bit range.
inline std::int64_t trunc(__int128 v, unsigned k, const FixedConfig& cfg, const char* what) {
  return check_raw(floor_shift(v, k), cfg, what);
}

}  // namespace fixed

/// Everything a step circuit witnesses, in the same order of operations.
struct FixedStepTrace {
  std::vector<std::uint8_t> gate;       // per batch row
  std::int64_t n_eff = 0;               // sum of gates
  std::int64_t divisor = 0;             // n_eff, or 1 when the batch is fully masked
  std::int64_t inv = 0;                 // floor(2^(f+32) / divisor)
  std::int64_t rem = 0;
  std::vector<__int128> grad_sum;       // weights at scale 2f, biases at scale f
  std::vector<std::int64_t> mean;       // scale f
  std::vector<std::int64_t> delta;      // floor(eta * mean / 2^f)
  Params<std::int64_t> next;
};

/// Per-row forward/backward in fixed point; adds the gated row contribution into `g`.
/// xm: masked features (raw), y: raw regression label or corrected label bits.
inline void fixed_row_gradient(const Params<std::int64_t>& p, std::span<const std::int64_t> xm,
                               std::span<const std::int64_t> y, bool gate, const FixedConfig& cfg,
                               std::vector<__int128>& g) {
  using fixed::add128;
  using fixed::mul128;
  const auto& s = p.shape;
  const unsigned f = cfg.scale_bits;
  if (s.kind == ModelKind::LR) {
    __int128 dot = 0;
    for (std::size_t j = 0; j < s.J; ++j) dot = add128(dot, mul128(xm[j], p[s.w(j)]));
    std::int64_t pred = fixed::check_raw(static_cast<__int128>(fixed::trunc(dot, f, cfg, "dot product")) + p[s.bias()], cfg, "prediction");
    std::int64_t res = gate ? fixed::check_raw(static_cast<__int128>(pred) - y[0], cfg, "residual") : 0;
    for (std::size_t j = 0; j < s.J; ++j) g[s.w(j)] = add128(g[s.w(j)], mul128(xm[j], res));
    g[s.bias()] = add128(g[s.bias()], res);
    return;
  }
  std::vector<std::int64_t> z1(s.H), a1(s.H), e(s.K);
  std::vector<std::uint8_t> on(s.H);
  for (std::size_t h = 0; h < s.H; ++h) {
    __int128 dot = 0;
    for (std::size_t j = 0; j < s.J; ++j) dot = add128(dot, mul128(xm[j], p[s.w1(j, h)]));
    z1[h] = fixed::check_raw(static_cast<__int128>(fixed::trunc(dot, f, cfg, "dot product")) + p[s.b1(h)], cfg, "hidden pre-activation");
    on[h] = z1[h] >= 0;
    a1[h] = on[h] ? z1[h] : 0;
  }
  const std::int64_t one = std::int64_t{1} << f;
  for (std::size_t k = 0; k < s.K; ++k) {
    __int128 dot = 0;
    for (std::size_t h = 0; h < s.H; ++h) dot = add128(dot, mul128(a1[h], p[s.w2(h, k)]));
    std::int64_t z2 = fixed::check_raw(static_cast<__int128>(fixed::trunc(dot, f, cfg, "dot product")) + p[s.b2(k)], cfg, "output");
    e[k] = gate ? fixed::check_raw(static_cast<__int128>(z2) - y[k] * one, cfg, "output error") : 0;
  }
  for (std::size_t h = 0; h < s.H; ++h) {
    __int128 back = 0;
    for (std::size_t k = 0; k < s.K; ++k) {
      g[s.w2(h, k)] = add128(g[s.w2(h, k)], mul128(a1[h], e[k]));
      back = add128(back, mul128(p[s.w2(h, k)], e[k]));
    }
    std::int64_t d1 = on[h] ? fixed::trunc(back, f, cfg, "hidden error") : 0;
    for (std::size_t j = 0; j < s.J; ++j) g[s.w1(j, h)] = add128(g[s.w1(j, h)], mul128(xm[j], d1));
    g[s.b1(h)] = add128(g[s.b1(h)], d1);
  }
  for (std::size_t k = 0; k < s.K; ++k) g[s.b2(k)] = add128(g[s.b2(k)], e[k]);
}

/// One optimizer step over `batch` (BGD: all rows; SGD: one; MSGD: a minibatch).
/// masks == nullptr is the unmasked baseline whose divisor is the batch size.
/// An all-masked batch is a no-op update unless require_nonempty is set.
inline FixedStepTrace fixed_step(const FixedDataset& d, const MaskSet* masks, const Params<std::int64_t>& p,
                                 std::int64_t eta_raw, std::span<const std::size_t> batch,
                                 bool require_nonempty = true) {
  using fixed::add128;
  using fixed::mul128;
  const auto& s = p.shape;
  const FixedConfig& cfg = d.cfg;
  const unsigned f = cfg.scale_bits;
  require(d.kind == s.kind && d.x.cols == s.J && d.y.cols == s.label_cols(), Errc::DimMismatch,
          "dataset does not match model shape");
  require(!batch.empty(), Errc::BadBatchSize, "empty batch");
  require(p.size() == s.param_count(), Errc::DimMismatch, "parameter vector has wrong length");
  fixed::check_raw(eta_raw, cfg, "learning rate");
  for (auto v : p.values) fixed::check_raw(v, cfg, "parameter");
  if (masks) check_masks(*masks, d.rows(), s.J, s.kind == ModelKind::NN ? s.K : 1);

  FixedStepTrace t;
  t.grad_sum.assign(s.param_count(), 0);
  std::vector<std::int64_t> xm(s.J), y(d.y.cols);
  for (std::size_t i : batch) {
    require(i < d.rows(), Errc::IndexOutOfRange, "batch index past dataset");
    bool gate = true;
    if (masks) {
      bool any = false;
      for (std::size_t j = 0; j < s.J; ++j) any = any || masks->feature(i, j);
      gate = any && masks->sample(i, 0);
    }
    for (std::size_t j = 0; j < s.J; ++j) xm[j] = (masks && !masks->feature(i, j)) ? 0 : d.x(i, j);
    for (std::size_t k = 0; k < d.y.cols; ++k) {
      y[k] = d.y(i, k);
      if (masks && s.kind == ModelKind::NN && masks->klass(i, k)) y[k] ^= 1;
    }
    fixed_row_gradient(p, xm, y, gate, cfg, t.grad_sum);
    t.gate.push_back(gate);
    t.n_eff += gate;
  }
  if (require_nonempty) require(t.n_eff >= 1, Errc::EmptyEffectiveSet, "no effective samples remain in the batch");
  t.divisor = masks ? (t.n_eff == 0 ? 1 : t.n_eff) : static_cast<std::int64_t>(batch.size());
  const __int128 scaled_one = static_cast<__int128>(1) << (f + fixed::kInvExtraBits);
  t.inv = static_cast<std::int64_t>(scaled_one / t.divisor);
  t.rem = static_cast<std::int64_t>(scaled_one % t.divisor);

  t.next = p;
  for (std::size_t idx = 0; idx < s.param_count(); ++idx) {
    unsigned sc = s.is_bias(idx) ? f : 2 * f;
    std::int64_t mean = fixed::trunc(mul128(t.grad_sum[idx], t.inv), sc + fixed::kInvExtraBits, cfg, "mean gradient");
    std::int64_t delta = fixed::trunc(mul128(eta_raw, mean), f, cfg, "update");
    t.mean.push_back(mean);
    t.delta.push_back(delta);
    t.next[idx] = fixed::check_raw(static_cast<__int128>(p[idx]) - delta, cfg, "updated parameter");
  }
  return t;
}

/// Per-sample gradient at scale f on the raw (unmasked) row; the FAD quantity.
inline std::vector<std::int64_t> fixed_sample_gradient(const FixedDataset& d, const Params<std::int64_t>& p,
                                                       std::size_t row) {
  using fixed::add128;
  using fixed::mul128;
  const auto& s = p.shape;
  const unsigned f = d.cfg.scale_bits;
  const auto& cfg = d.cfg;
  require(row < d.rows(), Errc::IndexOutOfRange, "row past dataset");
  std::vector<std::int64_t> g(s.param_count(), 0);
  if (s.kind == ModelKind::LR) {
    __int128 dot = 0;
    for (std::size_t j = 0; j < s.J; ++j) dot = add128(dot, mul128(d.x(row, j), p[s.w(j)]));
    std::int64_t res = fixed::check_raw(static_cast<__int128>(fixed::trunc(dot, f, cfg, "dot product")) + p[s.bias()] - d.y(row, 0), cfg, "residual");
    for (std::size_t j = 0; j < s.J; ++j) g[s.w(j)] = fixed::trunc(mul128(d.x(row, j), res), f, cfg, "sample gradient");
    g[s.bias()] = res;
    return g;
  }
  std::vector<std::int64_t> z1(s.H), a1(s.H), e(s.K);
  for (std::size_t h = 0; h < s.H; ++h) {
    __int128 dot = 0;
    for (std::size_t j = 0; j < s.J; ++j) dot = add128(dot, mul128(d.x(row, j), p[s.w1(j, h)]));
    z1[h] = fixed::check_raw(static_cast<__int128>(fixed::trunc(dot, f, cfg, "dot product")) + p[s.b1(h)], cfg, "hidden pre-activation");
    a1[h] = z1[h] >= 0 ? z1[h] : 0;
  }
  const std::int64_t one = std::int64_t{1} << f;
  for (std::size_t k = 0; k < s.K; ++k) {
    __int128 dot = 0;
    for (std::size_t h = 0; h < s.H; ++h) dot = add128(dot, mul128(a1[h], p[s.w2(h, k)]));
    std::int64_t z2 = fixed::check_raw(static_cast<__int128>(fixed::trunc(dot, f, cfg, "dot product")) + p[s.b2(k)], cfg, "output");
    e[k] = fixed::check_raw(static_cast<__int128>(z2) - d.y(row, k) * one, cfg, "output error");
    g[s.b2(k)] = e[k];
  }
  for (std::size_t h = 0; h < s.H; ++h) {
    __int128 back = 0;
    for (std::size_t k = 0; k < s.K; ++k) {
      g[s.w2(h, k)] = fixed::trunc(mul128(a1[h], e[k]), f, cfg, "sample gradient");
      back = add128(back, mul128(p[s.w2(h, k)], e[k]));
    }
    std::int64_t d1 = z1[h] >= 0 ? fixed::trunc(back, f, cfg, "hidden error") : 0;
    for (std::size_t j = 0; j < s.J; ++j) g[s.w1(j, h)] = fixed::trunc(mul128(d.x(row, j), d1), f, cfg, "sample gradient");
    g[s.b1(h)] = d1;
  }
  return g;
}

/// Squared Euclidean distance at scale 2f; RangeOverflow past 128 bits.
inline u128 fixed_distance_sq(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  require(a.size() == b.size(), Errc::DimMismatch, "gradients differ in length");
  u128 acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    __int128 diff = static_cast<__int128>(a[i]) - b[i];
    u128 mag = static_cast<u128>(diff < 0 ? -diff : diff);
    u128 sq;
    require(!__builtin_mul_overflow(mag, mag, &sq), Errc::RangeOverflow, "squared distance overflows");
    require(!__builtin_add_overflow(acc, sq, &acc), Errc::RangeOverflow, "squared distance overflows");
  }
  return acc;
}

// ---------------------------------------------------------------------------
// CSV ingest: header names columns; "y*" or "label*" columns are labels, an
// optional "owner" column assigns contiguous row ranges, the rest are features.

struct CsvTable {
  Dataset data;
  DatasetLayout layout;
};

inline CsvTable read_csv(std::istream& in) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      auto b = cell.find_first_not_of(" \t\r");
      auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    return cells;
  };
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::Parse, "CSV has no header row");
  auto header = split(line);
  std::vector<std::size_t> fcols, lcols;
  std::optional<std::size_t> owner_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == "owner") owner_col = c;
    else if (h.rfind("y", 0) == 0 || h.rfind("label", 0) == 0) lcols.push_back(c);
    else fcols.push_back(c);
  }
  require(!fcols.empty() && !lcols.empty(), Errc::Parse, "CSV needs feature and label columns");
  std::vector<std::vector<double>> xs, ys;
  std::vector<std::string> owners;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split(line);
    require(cells.size() == header.size(), Errc::Parse, "CSV line " + std::to_string(lineno) + " has wrong arity");
    auto num = [&](std::size_t c) {
      try {
        std::size_t used = 0;
        double v = std::stod(cells[c], &used);
        require(used == cells[c].size(), Errc::Parse, "");
        return v;
      } catch (const std::exception&) {
        fail(Errc::Parse, "CSV line " + std::to_string(lineno) + ": '" + cells[c] + "' is not a number");
      }
    };
    std::vector<double> xr, yr;
    for (auto c : fcols) xr.push_back(num(c));
    for (auto c : lcols) yr.push_back(num(c));
    xs.push_back(std::move(xr));
    ys.push_back(std::move(yr));
    owners.push_back(owner_col ? cells[*owner_col] : "owner-0");
  }
  require(!xs.empty(), Errc::Empty, "CSV has no data rows");
  CsvTable t{Dataset{matrix_from_rows(xs), matrix_from_rows(ys)}, {}};
  t.layout = DatasetLayout{xs.size(), fcols.size(), lcols.size(), {}};
  for (std::size_t i = 0; i < owners.size(); ++i) {
    if (t.layout.owners.empty() || t.layout.owners.back().owner != owners[i]) {
      t.layout.owners.push_back(OwnerRange{owners[i], i, i + 1});
    } else {
      t.layout.owners.back().end = i + 1;
    }
  }
  t.layout.validate();
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::Io, "cannot open " + path);
  return read_csv(in);
}

}  // namespace vunlearn
