#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "vunlearn/training.hpp"

using namespace vunlearn;

namespace {

// Independent oracles: straightforward half-MSE gradients over explicit row lists.
std::vector<double> oracle_lr_grad(const std::vector<std::vector<double>>& xs, const std::vector<double>& ys,
                                   const std::vector<double>& w, double bias) {
  std::vector<double> g(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double pred = bias;
    for (std::size_t j = 0; j < w.size(); ++j) pred += xs[i][j] * w[j];
    double r = pred - ys[i];
    for (std::size_t j = 0; j < w.size(); ++j) g[j] += xs[i][j] * r / xs.size();
    g[w.size()] += r / xs.size();
  }
  return g;
}

std::vector<double> oracle_nn_grad(const std::vector<std::vector<double>>& xs, const std::vector<std::vector<double>>& ys,
                                   const Params<double>& p) {
  const auto& s = p.shape;
  std::vector<double> g(s.param_count(), 0.0);
  double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> z1(s.H), a1(s.H), e(s.K);
    for (std::size_t h = 0; h < s.H; ++h) {
      z1[h] = p[s.b1(h)];
      for (std::size_t j = 0; j < s.J; ++j) z1[h] += xs[i][j] * p[s.w1(j, h)];
      a1[h] = std::max(0.0, z1[h]);
    }
    for (std::size_t k = 0; k < s.K; ++k) {
      double z2 = p[s.b2(k)];
      for (std::size_t h = 0; h < s.H; ++h) z2 += a1[h] * p[s.w2(h, k)];
      e[k] = z2 - ys[i][k];
      g[s.b2(k)] += e[k] / n;
      for (std::size_t h = 0; h < s.H; ++h) g[s.w2(h, k)] += a1[h] * e[k] / n;
    }
    for (std::size_t h = 0; h < s.H; ++h) {
      if (z1[h] < 0) continue;
      double d = 0;
      for (std::size_t k = 0; k < s.K; ++k) d += p[s.w2(h, k)] * e[k];
      g[s.b1(h)] += d / n;
      for (std::size_t j = 0; j < s.J; ++j) g[s.w1(j, h)] += xs[i][j] * d / n;
    }
  }
  return g;
}

Dataset random_lr_data(std::mt19937_64& rng, std::size_t n, std::size_t j) {
  std::uniform_real_distribution<double> u(-2, 2);
  Dataset d{Matrix<double>(n, j), Matrix<double>(n, 1)};
  for (auto& v : d.x.data) v = u(rng);
  for (auto& v : d.y.data) v = u(rng);
  return d;
}

Dataset random_nn_data(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-2, 2);
  std::bernoulli_distribution bit(0.5);
  Dataset d{Matrix<double>(n, 4), Matrix<double>(n, 4)};
  for (auto& v : d.x.data) v = u(rng);
  for (auto& v : d.y.data) v = bit(rng);
  return d;
}

Params<double> random_params(std::mt19937_64& rng, const ModelShape& s) {
  std::uniform_real_distribution<double> u(-1, 1);
  auto p = Params<double>::zeros(s);
  for (auto& v : p.values) v = u(rng);
  return p;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double rel) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE(std::fabs(a[i] - b[i]), rel * std::max(1.0, std::fabs(b[i]))) << "index " << i;
  }
}

Dataset two_row() {
  return Dataset{matrix_from_rows<double>({{2}, {4}}), matrix_from_rows<double>({{5}, {9}})};
}

}  // namespace

TEST(Training, PredictLr) {
  auto p = Params<double>::zeros(ModelShape::lr(2));
  std::vector<double> x{1, 2};
  EXPECT_EQ(predict_lr(p, x), 0.0);
  p.values = {0.5, 0.25, 1.0};
  EXPECT_DOUBLE_EQ(predict_lr(p, x), 2.0);
  auto q = Params<double>::zeros(ModelShape::lr(1));
  q.values = {1, 0};
  std::vector<double> x2{2};
  EXPECT_EQ(predict_lr(q, x2), 2.0);
  EXPECT_THROW(predict_lr(p, x2), Error);
}

TEST(Training, WorkedLrGradients) {
  auto d = two_row();
  auto p = Params<double>::zeros(ModelShape::lr(1));
  p.values = {1, 0};
  auto sample = BitMatrix::from_rows(MaskKind::Sample, {{1}, {0}});
  EXPECT_DOUBLE_EQ(grad_lr_sample_masked(p, d, sample)[0], oracle_lr_grad({{2}}, {5}, {1}, 0)[0]);
  EXPECT_DOUBLE_EQ(grad_lr_sample_masked(p, d, sample)[0], -6.0);
  EXPECT_DOUBLE_EQ(grad_lr_feature_masked(p, d, BitMatrix::from_rows(MaskKind::Feature, {{1}, {0}}))[0], -6.0);
  EXPECT_DOUBLE_EQ(grad_full(p, d)[0], -13.0);
  auto g = grad_sum(p, d, nullptr, all_rows(2));
  EXPECT_DOUBLE_EQ(step(p, g.sum, 0.1, g.count)[0], 2.3);
}

TEST(Training, EmptyEffectiveSetRejected) {
  auto d = two_row();
  auto p = Params<double>::zeros(ModelShape::lr(1));
  try {
    grad_lr_sample_masked(p, d, BitMatrix::from_rows(MaskKind::Sample, {{0}, {0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyEffectiveSet);
  }
  std::vector<double> g{0, 0};
  EXPECT_THROW(step(p, g, 0.1, 0), Error);
}

TEST(Training, IdentityMasksEqualUnmasked) {
  std::mt19937_64 rng(1);
  auto d = random_lr_data(rng, 12, 3);
  auto p = random_params(rng, ModelShape::lr(3));
  expect_close(grad_lr_feature_masked(p, d, BitMatrix::identity(MaskKind::Feature, 12, 3)), grad_full(p, d), 1e-15);
  expect_close(grad_lr_sample_masked(p, d, BitMatrix::identity(MaskKind::Sample, 12, 1)), grad_full(p, d), 1e-15);
  auto dn = random_nn_data(rng, 9);
  auto pn = random_params(rng, ModelShape::nn(4, 4, 4));
  expect_close(grad_nn_masked(pn, dn, BitMatrix::identity(MaskKind::Feature, 9, 4), BitMatrix::identity(MaskKind::Class, 9, 4)),
               grad_full(pn, dn), 1e-15);
}

TEST(Training, SingleRowSampleMaskGivesThatRowsGradient) {
  std::mt19937_64 rng(2);
  auto d = random_lr_data(rng, 6, 2);
  auto p = random_params(rng, ModelShape::lr(2));
  BitMatrix b = BitMatrix::identity(MaskKind::Sample, 6, 1);
  std::fill(b.bits.data.begin(), b.bits.data.end(), 0);
  b.bits(4, 0) = 1;
  auto expect = oracle_lr_grad({{d.x(4, 0), d.x(4, 1)}}, {d.y(4, 0)}, {p[0], p[1]}, p[2]);
  expect_close(grad_lr_sample_masked(p, d, b), expect, 1e-15);
}

TEST(Training, SampleMaskEqualsDeletion) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 2 + rng() % 30, j = 1 + rng() % 6;
    auto d = random_lr_data(rng, n, j);
    auto p = random_params(rng, ModelShape::lr(j));
    BitMatrix b = BitMatrix::identity(MaskKind::Sample, n, 1);
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < n; ++i) {
      b.bits(i, 0) = (rng() % 3) != 0 || i == 0;
      if (b.bits(i, 0)) {
        xs.emplace_back(d.x.data.begin() + i * j, d.x.data.begin() + (i + 1) * j);
        ys.push_back(d.y(i, 0));
      }
    }
    std::vector<double> w(p.values.begin(), p.values.end() - 1);
    expect_close(grad_lr_sample_masked(p, d, b), oracle_lr_grad(xs, ys, w, p.values.back()), 1e-12);
  }
}

TEST(Training, NnClassFlipMatchesCorrectedDataset) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t n = 3 + rng() % 10;
    auto d = random_nn_data(rng, n);
    auto p = random_params(rng, ModelShape::nn(4, 4, 4));
    auto cls = BitMatrix::identity(MaskKind::Class, n, 4);
    std::size_t row = rng() % n, col = rng() % 4;
    cls.bits(row, col) = 1;
    std::vector<std::vector<double>> xs, ys;
    for (std::size_t i = 0; i < n; ++i) {
      xs.emplace_back(d.x.data.begin() + i * 4, d.x.data.begin() + (i + 1) * 4);
      ys.emplace_back(d.y.data.begin() + i * 4, d.y.data.begin() + (i + 1) * 4);
    }
    ys[row][col] = 1 - ys[row][col];
    auto got = grad_nn_masked(p, d, BitMatrix::identity(MaskKind::Feature, n, 4), cls);
    expect_close(got, oracle_nn_grad(xs, ys, p), 1e-12);
    // Only terms reachable from the flipped row move: here every parameter can, so compare against the delta.
    auto base = grad_full(p, d);
    std::vector<std::vector<double>> one_x{xs[row]};
    auto ys_orig = ys;
    ys_orig[row][col] = 1 - ys_orig[row][col];
    auto row_new = oracle_nn_grad(one_x, {ys[row]}, p), row_old = oracle_nn_grad(one_x, {ys_orig[row]}, p);
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i] - base[i], (row_new[i] - row_old[i]) / static_cast<double>(n), 1e-12);
    }
  }
}

TEST(Training, DeadReluUnitsGetNoGradient) {
  auto s = ModelShape::nn(4, 4, 4);
  auto p = Params<double>::zeros(s);
  for (std::size_t h = 0; h < 4; ++h) p[s.b1(h)] = -1.0;  // every hidden unit dead
  Dataset d{Matrix<double>(3, 4, 0.0), Matrix<double>(3, 4, 1.0)};
  auto g = grad_full(p, d);
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(g[s.w2(h, k)], 0.0);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(g[s.w1(j, h)], 0.0);
  }
}

TEST(Training, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    for (auto shape : {ModelShape::lr(3), ModelShape::nn(4, 4, 4)}) {
      Dataset d = shape.kind == ModelKind::LR ? random_lr_data(rng, 8, 3) : random_nn_data(rng, 8);
      auto p = random_params(rng, shape);
      MaskSet m = MaskSet::identity(8, shape.J, shape.K);
      m.feature.bits(1, 0) = 0;
      m.sample.bits(2, 0) = 0;
      if (shape.kind == ModelKind::NN) m.klass.bits(3, 1) = 1;
      auto g = mean_gradient(grad_sum(p, d, &m, all_rows(8)));
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double h = 1e-6;
        auto hi = p, lo = p;
        hi[i] += h;
        lo[i] -= h;
        double fd = (loss(hi, d, &m) - loss(lo, d, &m)) / (2 * h);
        EXPECT_LE(std::fabs(fd - g[i]), 1e-5 * std::max(1.0, std::fabs(g[i]))) << "param " << i;
      }
    }
  }
}

TEST(Training, CrossEntropyReference) {
  std::vector<double> z{0.3, -1.2, 2.0}, y{0, 0, 1};
  double expect = -(2.0 - std::log(std::exp(0.3) + std::exp(-1.2) + std::exp(2.0)));
  EXPECT_NEAR(cross_entropy(z, y), expect, 1e-12);
  auto g = cross_entropy_grad(z, y);
  for (std::size_t k = 0; k < 3; ++k) {
    auto hi = z, lo = z;
    hi[k] += 1e-6;
    lo[k] -= 1e-6;
    EXPECT_NEAR(g[k], (cross_entropy(hi, y) - cross_entropy(lo, y)) / 2e-6, 1e-6);
  }
}

TEST(Training, StepBasicsAndPermutationInvariance) {
  std::mt19937_64 rng(6);
  auto d = random_lr_data(rng, 10, 2);
  auto p = random_params(rng, ModelShape::lr(2));
  std::vector<double> zero(3, 0.0);
  EXPECT_EQ(step(p, zero, 0.5, 3), p);
  auto g = grad_sum(p, d, nullptr, all_rows(10));
  EXPECT_EQ(step(p, g.sum, 0.0, g.count), p);

  FixedConfig cfg;
  auto fd = to_fixed(d, cfg, ModelKind::LR);
  auto fp = to_fixed(p, cfg);
  auto rows = all_rows(10);
  auto base = fixed_step(fd, nullptr, fp, fixed::to_raw(0.1, cfg), rows).next;
  std::shuffle(rows.begin(), rows.end(), rng);
  EXPECT_EQ(fixed_step(fd, nullptr, fp, fixed::to_raw(0.1, cfg), rows).next, base);
}

TEST(Training, GradDistanceIsAMetric) {
  std::vector<double> a{3, 4}, o{0, 0};
  EXPECT_EQ(grad_distance(a, o), 5.0);
  EXPECT_EQ(grad_distance(a, a), 0.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(5), y(5), z(5);
    for (int k = 0; k < 5; ++k) x[k] = n(rng), y[k] = n(rng), z[k] = n(rng);
    EXPECT_DOUBLE_EQ(grad_distance(x, y), grad_distance(y, x));
    EXPECT_LE(grad_distance(x, z), grad_distance(x, y) + grad_distance(y, z) + 1e-12);
    EXPECT_GT(grad_distance(x, y), 0.0);
  }
  std::vector<double> s(3);
  EXPECT_THROW(grad_distance(a, s), Error);
}

TEST(Training, DuplicateRowsHaveIdenticalGradients) {
  FixedConfig cfg;
  Dataset d{matrix_from_rows<double>({{1.5, -0.25}, {0.5, 2}, {1.5, -0.25}}), matrix_from_rows<double>({{1}, {2}, {1}})};
  auto fd = to_fixed(d, cfg, ModelKind::LR);
  auto fp = to_fixed(Params<double>{ModelShape::lr(2), {0.3, -0.7, 0.1}}, cfg);
  EXPECT_EQ(fixed_distance_sq(fixed_sample_gradient(fd, fp, 0), fixed_sample_gradient(fd, fp, 2)), 0u);
  EXPECT_GT(fixed_distance_sq(fixed_sample_gradient(fd, fp, 0), fixed_sample_gradient(fd, fp, 1)), 0u);
}

TEST(Training, FixedStepTracksDoubleStep) {
  std::mt19937_64 rng(8);
  FixedConfig cfg;
  for (int trial = 0; trial < 40; ++trial) {
    auto shape = trial % 2 ? ModelShape::nn(4, 4, 4) : ModelShape::lr(1 + rng() % 6);
    std::size_t n = 5 + rng() % 40;
    Dataset d = shape.kind == ModelKind::LR ? random_lr_data(rng, n, shape.J) : random_nn_data(rng, n);
    auto fd = to_fixed(d, cfg, shape.kind);
    auto fp = to_fixed(random_params(rng, shape), cfg);
    auto p = to_double(fp, cfg);
    auto dd = to_double(fd);
    MaskSet m = MaskSet::identity(n, shape.J, shape.K);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng() % 5 == 0) m.sample.bits(i, 0) = 0;
      if (rng() % 7 == 0) m.feature.bits(i, rng() % shape.J) = 0;
      if (shape.kind == ModelKind::NN && rng() % 6 == 0) m.klass.bits(i, rng() % 4) = 1;
    }
    m.sample.bits(0, 0) = 1;
    m.feature.bits(0, 0) = 1;
    const double eta = 0.05;
    auto t = fixed_step(fd, &m, fp, fixed::to_raw(eta, cfg), all_rows(n));
    auto g = grad_sum(p, dd, &m, all_rows(n));
    EXPECT_EQ(static_cast<std::size_t>(t.n_eff), g.count);
    auto ref = step(p, g.sum, eta, g.count);
    double wnorm = 0;
    for (double v : p.values) wnorm += v * v;
    double tol = std::ldexp(1.0, -static_cast<int>(cfg.scale_bits) + 2) * (1 + std::sqrt(wnorm));
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_LE(std::fabs(fixed::from_raw(t.next[i], cfg) - ref[i]), tol);
  }
}

TEST(Training, FullyMaskedMinibatchIsANoOpWhenAllowed) {
  FixedConfig cfg;
  auto d = to_fixed(two_row(), cfg, ModelKind::LR);
  auto p = to_fixed(Params<double>{ModelShape::lr(1), {1, 0}}, cfg);
  MaskSet m = MaskSet::identity(2, 1, 1);
  m.sample.bits(1, 0) = 0;
  std::vector<std::size_t> batch{1};
  EXPECT_THROW(fixed_step(d, &m, p, 6554, batch), Error);
  auto t = fixed_step(d, &m, p, 6554, batch, false);
  EXPECT_EQ(t.next, p);
  EXPECT_EQ(t.divisor, 1);
}

TEST(Training, CsvIngest) {
  std::istringstream in("x1,x2,y,owner\n1,2,3,alice\n4,5,6,alice\n7,8,9,bob\n");
  auto t = read_csv(in);
  EXPECT_EQ(t.data.x, matrix_from_rows<double>({{1, 2}, {4, 5}, {7, 8}}));
  EXPECT_EQ(t.data.y, matrix_from_rows<double>({{3}, {6}, {9}}));
  ASSERT_EQ(t.layout.owners.size(), 2u);
  EXPECT_EQ(t.layout.owners[1].begin, 2u);
  std::istringstream bad("x1,y\n1,zz\n");
  EXPECT_THROW(read_csv(bad), Error);
  std::istringstream split("x,y,owner\n1,1,a\n2,2,b\n3,3,a\n");
  EXPECT_THROW(read_csv(split), Error);
}
