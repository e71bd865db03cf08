#pragma once

// Forgery game: attacks that look for a minibatch free of unlearned rows whose
// update mimics one that contains them, the replica detector, and the
// search-space / collision analytics.

#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vunlearn/error.hpp"
#include "vunlearn/training.hpp"

namespace vunlearn {

using BigInt = boost::multiprecision::cpp_int;

/// Base-10 scientific rendering with `digits` significant figures, trailing
/// mantissa zeros dropped: 2.7E+17, 9E+307.
inline std::string sci(const BigInt& v, int digits = 2) {
  require(digits >= 1, Errc::BadParams, "need at least one significant figure");
  require(v >= 0, Errc::BadParams, "negative values are not rendered");
  std::string s = v.str();
  if (s == "0") return "0E+0";
  int exp = static_cast<int>(s.size()) - 1;
  std::string mant = s.substr(0, std::min<std::size_t>(s.size(), static_cast<std::size_t>(digits)));
  mant.resize(static_cast<std::size_t>(digits), '0');
  // Round half up on the first dropped digit.
  if (s.size() > static_cast<std::size_t>(digits) && s[static_cast<std::size_t>(digits)] >= '5') {
    int i = digits - 1;
    while (i >= 0 && mant[static_cast<std::size_t>(i)] == '9') mant[static_cast<std::size_t>(i--)] = '0';
    if (i < 0) {
      mant.insert(mant.begin(), '1');
      mant.pop_back();
      ++exp;
    } else {
      ++mant[static_cast<std::size_t>(i)];
    }
  }
  while (mant.size() > 1 && mant.back() == '0') mant.pop_back();
  std::string out(1, mant[0]);
  if (mant.size() > 1) out += "." + mant.substr(1);
  return out + "E+" + std::to_string(exp);
}

inline BigInt binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  BigInt r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

struct SearchSpaceReport {
  std::uint64_t dataset = 0;
  std::uint64_t unlearned = 0;
  std::uint64_t batch = 0;
  BigInt forging;  // C(|D|-|U|, |d~|)
  BigInt target;   // 2^(|D|-|U|)
  BigInt reduced;  // ceil(|D| / |d~|) under verifiable sampling

  std::string forging_sci() const { return sci(forging); }
  std::string target_sci() const { return sci(target); }
  std::string reduced_sci() const { return sci(reduced); }
};

inline SearchSpaceReport search_space_sizes(std::uint64_t dataset, std::uint64_t unlearned, std::uint64_t batch) {
  require(unlearned < dataset, Errc::BadParams, "|U| must be below |D|");
  require(batch >= 1 && batch <= dataset - unlearned, Errc::BadParams, "|d~| must be in [1, |D| - |U|]");
  SearchSpaceReport r{dataset, unlearned, batch, binomial(dataset - unlearned, batch), BigInt(1), BigInt(0)};
  r.target <<= static_cast<unsigned>(dataset - unlearned);
  r.reduced = (dataset + batch - 1) / batch;
  return r;
}

/// 1 - (1 - p)^trials, evaluated stably.
inline double collision_success_probability(double p, double trials) {
  require(p > 0 && p < 1, Errc::BadParams, "p must be in (0, 1)");
  require(trials >= 1, Errc::BadParams, "at least one trial");
  return -std::expm1(trials * std::log1p(-p));
}

inline double collision_success_probability(double p, const BigInt& trials) {
  require(trials >= 1, Errc::BadParams, "at least one trial");
  return collision_success_probability(p, trials.convert_to<double>());
}

// ---------------------------------------------------------------------------
// Attacks (double precision).

struct ForgeryInstance {
  std::vector<std::size_t> unlearned;
  std::vector<std::size_t> target;   // d, meets U
  std::vector<std::size_t> forging;  // d~, disjoint from U
  double epsilon = 0;
};

struct AttackReport {
  ForgeryInstance best;
  std::vector<double> trace;  // epsilon per candidate, draw order
};

inline std::vector<double> minibatch_gradient(const Dataset& d, const Params<double>& p,
                                              std::span<const std::size_t> rows) {
  return mean_gradient(grad_sum(p, d, nullptr, rows));
}

inline std::vector<double> sample_gradient(const Dataset& d, const Params<double>& p, std::size_t row) {
  std::size_t r[1] = {row};
  return minibatch_gradient(d, p, r);
}

namespace detail {

inline std::vector<std::uint8_t> membership(std::size_t n, std::span<const std::size_t> rows) {
  std::vector<std::uint8_t> in(n, 0);
  for (auto i : rows) {
    require(i < n, Errc::IndexOutOfRange, "row index past dataset");
    in[i] = 1;
  }
  return in;
}

inline void check_target(std::size_t n, std::span<const std::size_t> unlearned, std::span<const std::size_t> target) {
  require(!target.empty(), Errc::BadBatchSize, "target minibatch is empty");
  auto in_u = membership(n, unlearned);
  bool meets = false;
  for (auto i : target) {
    require(i < n, Errc::IndexOutOfRange, "target row past dataset");
    meets = meets || in_u[i];
  }
  require(meets, Errc::BadParams, "target minibatch contains no unlearned row");
}

}  // namespace detail

/// Best of `budget` uniformly drawn minibatches from D \ U.
inline AttackReport attack_random_sampling(const Dataset& d, const Params<double>& p,
                                           std::span<const std::size_t> unlearned,
                                           std::span<const std::size_t> target, std::size_t size,
                                           std::size_t budget, std::mt19937_64& rng) {
  require(budget >= 1, Errc::BadParams, "budget must be at least one");
  require(size >= 1, Errc::BadBatchSize, "forging minibatch size must be at least one");
  detail::check_target(d.rows(), unlearned, target);
  auto in_u = detail::membership(d.rows(), unlearned);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    if (!in_u[i]) pool.push_back(i);
  }
  require(pool.size() >= size, Errc::NoCandidates, "fewer retained rows than the forging minibatch size");
  auto want = minibatch_gradient(d, p, target);
  AttackReport r;
  r.best.unlearned.assign(unlearned.begin(), unlearned.end());
  r.best.target.assign(target.begin(), target.end());
  r.best.epsilon = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> cand;
  for (std::size_t t = 0; t < budget; ++t) {
    cand.clear();
    std::sample(pool.begin(), pool.end(), std::back_inserter(cand), static_cast<std::ptrdiff_t>(size), rng);
    double eps = grad_distance(want, minibatch_gradient(d, p, cand));
    r.trace.push_back(eps);
    if (eps < r.best.epsilon) {
      r.best.epsilon = eps;
      r.best.forging = cand;
    }
  }
  return r;
}

/// Rows sharing a class with `row`: equal label vectors for networks; one class for regression.
inline bool same_class(const Dataset& d, ModelKind kind, std::size_t a, std::size_t b) {
  if (kind == ModelKind::LR) return true;
  for (std::size_t k = 0; k < d.y.cols; ++k) {
    if (d.y(a, k) != d.y(b, k)) return false;
  }
  return true;
}

/// Nearest same-class retained row by feature distance; ties go to the smaller index.
inline std::size_t nearest_class_neighbor(const Dataset& d, ModelKind kind, std::span<const std::size_t> unlearned,
                                          std::size_t u) {
  auto in_u = detail::membership(d.rows(), unlearned);
  std::size_t best = d.rows();
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.rows(); ++i) {
    if (in_u[i] || i == u || !same_class(d, kind, i, u)) continue;
    double acc = 0;
    for (std::size_t j = 0; j < d.x.cols; ++j) acc += (d.x(i, j) - d.x(u, j)) * (d.x(i, j) - d.x(u, j));
    if (acc < best_dist) {
      best_dist = acc;
      best = i;
    }
  }
  require(best < d.rows(), Errc::NoSameClassNeighbor, "no retained row shares the class of row " + std::to_string(u));
  return best;
}

/// Swaps every unlearned row of `target` for its nearest same-class neighbour.
inline ForgeryInstance attack_neighbor_replacement(const Dataset& d, const Params<double>& p,
                                                   std::span<const std::size_t> unlearned,
                                                   std::span<const std::size_t> target) {
  detail::check_target(d.rows(), unlearned, target);
  auto in_u = detail::membership(d.rows(), unlearned);
  ForgeryInstance f;
  f.unlearned.assign(unlearned.begin(), unlearned.end());
  f.target.assign(target.begin(), target.end());
  for (auto i : target) f.forging.push_back(in_u[i] ? nearest_class_neighbor(d, p.shape.kind, unlearned, i) : i);
  f.epsilon = grad_distance(minibatch_gradient(d, p, f.target), minibatch_gradient(d, p, f.forging));
  return f;
}

// ---------------------------------------------------------------------------
// Replica detection.

/// flag_m = [||g_m - g_u|| <= xi] with double-precision per-sample gradients.
inline std::vector<std::uint8_t> detect_replicas(const Dataset& d, std::span<const std::size_t> batch, std::size_t u,
                                                 double xi, const Params<double>& p) {
  require(xi >= 0, Errc::BadParams, "threshold must be non-negative");
  auto gu = sample_gradient(d, p, u);
  std::vector<std::uint8_t> flags;
  for (auto m : batch) flags.push_back(grad_distance(sample_gradient(d, p, m), gu) <= xi);
  return flags;
}

/// Fixed-point form: flag_m = [||g_m - g_u||^2 <= xi_sq] at scale 2f, as in the detection circuit.
inline std::vector<std::uint8_t> detect_replicas(const FixedDataset& d, std::span<const std::size_t> batch,
                                                 std::size_t u, u128 xi_sq, const Params<std::int64_t>& p) {
  auto gu = fixed_sample_gradient(d, p, u);
  std::vector<std::uint8_t> flags;
  for (auto m : batch) flags.push_back(fixed_distance_sq(fixed_sample_gradient(d, p, m), gu) <= xi_sq);
  return flags;
}

/// Squared fixed-point threshold for a real-valued xi at scale f.
inline u128 fixed_threshold_sq(double xi, const FixedConfig& cfg) {
  require(xi >= 0, Errc::BadParams, "threshold must be non-negative");
  double raw = std::floor(std::ldexp(xi, static_cast<int>(cfg.scale_bits)));
  require(raw < 1.8e19, Errc::RangeOverflow, "threshold too large");
  auto r = static_cast<u128>(raw);
  return r * r;
}

}  // namespace vunlearn
