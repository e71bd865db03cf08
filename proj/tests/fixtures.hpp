#pragma once

// Shared random instances for circuit, protocol and acceptance tests.

#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "vunlearn/circuits.hpp"
#include "vunlearn/training.hpp"

namespace vunlearn::testing {

inline DatasetLayout split_layout(const std::vector<std::size_t>& sizes, std::size_t j, std::size_t k) {
  DatasetLayout l;
  l.num_features = j;
  l.num_labels = k;
  std::size_t at = 0;
  for (std::size_t o = 0; o < sizes.size(); ++o) {
    l.owners.push_back(OwnerRange{"owner-" + std::to_string(o), at, at + sizes[o]});
    at += sizes[o];
  }
  l.num_rows = at;
  return l;
}

inline Dataset random_dataset(std::mt19937_64& rng, const ModelShape& s, std::size_t n, double span = 2.0) {
  std::uniform_real_distribution<double> u(-span, span);
  std::bernoulli_distribution bit(0.5);
  Dataset d{Matrix<double>(n, s.J), Matrix<double>(n, s.label_cols())};
  for (auto& v : d.x.data) v = u(rng);
  for (auto& v : d.y.data) v = s.kind == ModelKind::NN ? static_cast<double>(bit(rng)) : u(rng);
  return d;
}

inline Params<std::int64_t> random_fixed_params(std::mt19937_64& rng, const ModelShape& s, const FixedConfig& cfg,
                                                double span = 1.0) {
  std::uniform_real_distribution<double> u(-span, span);
  auto p = Params<double>::zeros(s);
  for (auto& v : p.values) v = u(rng);
  return to_fixed(p, cfg);
}

inline Fr random_fr(std::mt19937_64& rng) {
  return Fr::from_limbs(Limbs{rng(), rng(), rng(), rng() >> 4});
}

/// Masks with a few features, samples and (for networks) classes removed.
inline MaskSet random_masks(std::mt19937_64& rng, const ModelShape& s, std::size_t n, double p_feature = 0.1,
                            double p_sample = 0.15, double p_class = 0.15) {
  MaskSet m = MaskSet::identity(n, s.J, s.label_cols());
  std::bernoulli_distribution f(p_feature), smp(p_sample), c(p_class);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < s.J; ++j) m.feature.bits(i, j) = !f(rng);
    m.sample.bits(i, 0) = !smp(rng);
    if (s.kind == ModelKind::NN) {
      for (std::size_t k = 0; k < s.K; ++k) m.klass.bits(i, k) = c(rng);
    }
  }
  return m;
}

inline MaskSet& set_round(MaskSet& m, std::uint32_t round) {
  m.feature.round = m.sample.round = m.klass.round = round;
  return m;
}

struct Instance {
  FixedConfig cfg;
  ModelShape shape;
  FixedDataset data;
  std::vector<Fr> owner_randomness;
  DatasetTree tree;
  Params<std::int64_t> params;
  MaskSet masks;
  Fr mask_randomness;
  Fr model_randomness;
  Fr next_randomness;

  Instance(std::mt19937_64& rng, const ModelShape& s, const std::vector<std::size_t>& owner_sizes,
           const FixedConfig& c = {})
      : cfg(c),
        shape(s),
        data(make_data(rng, s, owner_sizes, c)),
        owner_randomness(randomness(rng, owner_sizes.size())),
        tree(data, owner_randomness),
        params(random_fixed_params(rng, s, c)),
        masks(random_masks(rng, s, data.rows())),
        mask_randomness(random_fr(rng)),
        model_randomness(random_fr(rng)),
        next_randomness(random_fr(rng)) {}

 private:
  static FixedDataset make_data(std::mt19937_64& rng, const ModelShape& s, const std::vector<std::size_t>& sizes,
                                const FixedConfig& c) {
    auto layout = split_layout(sizes, s.J, s.label_cols());
    return to_fixed(random_dataset(rng, s, layout.num_rows), c, s.kind, layout);
  }
  static std::vector<Fr> randomness(std::mt19937_64& rng, std::size_t n) {
    std::vector<Fr> r;
    for (std::size_t i = 0; i < n; ++i) r.push_back(random_fr(rng));
    return r;
  }
};

inline std::vector<std::size_t> random_batch(std::mt19937_64& rng, std::size_t n, std::size_t b) {
  std::vector<std::size_t> rows = all_rows(n);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(b);
  return rows;
}

template <class Fn>
void expect_errc(Fn&& fn, Errc want) {
  try {
    fn();
    ADD_FAILURE() << "expected " << to_string(want) << ", nothing thrown";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), want) << e.what();
  }
}

}  // namespace vunlearn::testing
