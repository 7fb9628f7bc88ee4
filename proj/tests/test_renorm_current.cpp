#include <gtest/gtest.h>

#include "disorder_hydro/renorm_current.hpp"

using namespace disorder_hydro;

namespace {

configuration random_config(rng& g, std::size_t n) {
  configuration c(n);
  for (auto& v : c.occ) v = g.bernoulli(0.5);
  c.recount();
  return c;
}

std::vector<double> random_alpha(rng& g, std::size_t n) {
  std::vector<double> a(n);
  for (auto& v : a) v = g.uniform(-1, 1);
  return a;
}

}  // namespace

TEST(Renorm, XiZeta) {
  const std::vector<double> a{0.4, -0.7};
  configuration c(std::vector<std::uint8_t>{1, 0});
  const auto xz = xi_zeta(c, a);
  EXPECT_EQ(xz[0].first, 0.0);
  EXPECT_DOUBLE_EQ(xz[0].second, std::exp(-0.4));
  EXPECT_DOUBLE_EQ(xz[1].first, std::exp(-0.7));
  EXPECT_EQ(xz[1].second, 0.0);
}

TEST(Renorm, DecompositionIdentity) {
  rng g(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_alpha(g, 6);
    const auto c = random_config(g, 6);
    for (site_t x = 0; x < 6; ++x)
      for (site_t y = 0; y < 6; ++y)
        EXPECT_NEAR(pair_current(c, a, x, y), pair_current_decomposed(c, a, x, y), 1e-14);
  }
}

TEST(Renorm, BlockFormulaExamples) {
  const box b(1, 8);
  const auto p = block_pair::standard(b, {0}, 3, 0);
  const std::vector<double> zero(8, 0.0);
  configuration c(8);
  for (int x = 0; x < 3; ++x) c.occ[x] = 1;
  EXPECT_DOUBLE_EQ(avg_current(c, zero, p), -2.0);
  configuration same(std::vector<std::uint8_t>(8, 1));
  EXPECT_DOUBLE_EQ(avg_current(same, zero, p), 0.0);
}

TEST(Renorm, BlockFormulaMatchesBruteForce) {
  rng g(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const int ell = 1 + trial % 4;
    const int d = 1 + trial % 2;
    const box b(d, 2 * ell);
    const auto a = random_alpha(g, b.size());
    const auto c = random_config(g, b.size());
    const auto p = block_pair::standard(b, coord_t(d, 0), ell, trial % d);
    EXPECT_NEAR(avg_current(c, a, p), avg_current_bruteforce(c, a, p), 1e-14);
  }
}

TEST(Renorm, LongJumpCurrent) {
  rng g(3);
  const auto f = gen_field(field_spec::iid(field_law::iid_uniform, 1, 8, 1.0, 4));
  const auto c = random_config(g, 8);
  EXPECT_NEAR(long_jump_current(c, f, 1, 0), pair_current(c, f.values(), 0, 1), 1e-15);
  configuration fe(8);
  for (int x = 0; x < 4; ++x) fe.occ[x] = 1;
  const auto flat = gen_field(field_spec::constant(1, 8, 0.0));
  EXPECT_DOUBLE_EQ(long_jump_current(fe, flat, 4, 0), -2.0 / 4);
  const auto p = block_pair::standard(f.lattice(), {1}, 3, 0);
  EXPECT_NEAR(long_jump_current(c, f, 3, 0, {1}), avg_current(c, f.values(), p) / 3, 1e-15);
  EXPECT_THROW(long_jump_current(c, f, 5, 0), error);
}

TEST(Renorm, CorrectedCurrentSymmetricCase) {
  // alpha = 0 and equal block densities: the counterterms cancel exactly.
  const box b(1, 8);
  const auto p = block_pair::standard(b, {0}, 4, 0);
  const std::vector<double> zero(8, 0.0);
  configuration c(std::vector<std::uint8_t>{1, 0, 1, 0, 0, 1, 1, 0});
  const auto w = corrected_current(c, zero, p, 0.5, 0.0);
  ASSERT_FALSE(w.degenerate);
  EXPECT_NEAR(w.value, avg_current(c, zero, p), 1e-15);
  EXPECT_NEAR(w.value, 0.0, 1e-15);
}

TEST(Renorm, CorrectedCurrentSingleSiteHandExpansion) {
  // One-site blocks are degenerate unless... each block holds 0 or 1 particle,
  // so the empirical potential is undefined: flagged.
  const std::vector<double> a{0.3, -0.5};
  const box b(1, 2, false);
  const auto p = block_pair::standard(b, {0}, 1, 0);
  configuration c(std::vector<std::uint8_t>{1, 0});
  EXPECT_TRUE(corrected_current(c, a, p, 0.5, 0.0).degenerate);
}

TEST(Renorm, CorrectedCurrentTwoSiteHandExpansion) {
  // Blocks {0,1} and {2,3} with one particle each: closed-form lambda_hat.
  const std::vector<double> a{0.3, -0.5, 0.8, 0.1};
  configuration c(std::vector<std::uint8_t>{1, 0, 0, 1});
  const double m = 0.5, lam = 0.2;
  auto gamma = [&](double a1, double a2, int e1, int e2) {
    // Av logistic(a + l) = 1/2  <=>  l = -(a1 + a2)/2
    const double lh = -(a1 + a2) / 2;
    const double eta = (e1 + e2) / 2.0;
    const double xib = ((1 - e1) * std::exp(a1) + (1 - e2) * std::exp(a2)) / 2;
    const double zb = (e1 * std::exp(-a1) + e2 * std::exp(-a2)) / 2;
    return 2 * m * (1 - m) * lh + m * std::exp(-lam) * (zb - std::exp(lh) * (1 - eta)) -
           (1 - m) * std::exp(lam) * (xib - std::exp(-lh) * eta);
  };
  double wbar = 0;
  for (int x = 0; x < 2; ++x)
    for (int y = 2; y < 4; ++y) wbar += pair_current(c, a, x, y) / 4;
  const double expected = wbar - (gamma(a[2], a[3], 0, 1) - gamma(a[0], a[1], 1, 0));
  const box b(1, 4, false);
  const auto w = corrected_current(c, a, block_pair::standard(b, {0}, 2, 0), m, lam);
  EXPECT_NEAR(w.value, expected, 1e-12);
  EXPECT_THROW(corrected_current(c, a, block_pair::standard(b, {0}, 2, 0), 1.0, lam), error);
}

TEST(Renorm, WeightsSmallM) {
  const auto r1 = renorm_weights(1);
  ASSERT_EQ(r1.size(), 2u);
  EXPECT_DOUBLE_EQ(r1[0], 2.0);
  EXPECT_DOUBLE_EQ(r1[1], 0.0);
  const auto r2 = renorm_weights(2);
  const std::vector<double> expect2{1, 2, 1, 0};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(r2[i], expect2[i], 1e-15);
}

TEST(Renorm, WeightsAverageAndTelescoping) {
  rng g(5);
  for (std::int64_t M = 1; M <= 64; ++M) {
    const auto r = renorm_weights(M);
    double s = 0;
    for (double v : r) s += v;
    EXPECT_NEAR(s / (2 * M), 1.0, 1e-13);
    for (int trial = 0; trial < (M == 2 ? 100 : 3); ++trial) {
      std::vector<double> A(2 * M + 1);
      for (auto& v : A) v = g.normal();
      EXPECT_NEAR(telescoping_residual(r, A), 0.0, 1e-13);
    }
  }
}

TEST(Renorm, WeightsSatisfyDefiningRelation) {
  rng g(6);
  for (std::int64_t M : {1, 3, 8, 64}) {
    const auto r = renorm_weights(M);
    std::vector<double> a(2 * M);
    for (auto& v : a) v = g.normal();
    double lhs = 0;
    for (std::int64_t i = 1; i <= M; ++i)
      for (std::int64_t j = M + 1; j <= 2 * M; ++j)
        for (std::int64_t k = i; k <= j - 1; ++k) lhs += a[k - 1];
    lhs /= double(M) * M * M;
    double rhs = 0;
    for (std::int64_t k = 0; k < 2 * M; ++k) rhs += r[k] * a[k];
    rhs /= 2.0 * M;
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(Renorm, Theta) {
  const auto f = gen_field(field_spec::iid(field_law::iid_uniform, 1, 8, 1.0, 3));
  const auto sigma = [](double m) { return 4 * m * (1 - m); };
  EXPECT_EQ(theta(configuration(8), f, 2, 0, sigma).value, 0.0);
  EXPECT_FALSE(theta(configuration(8), f, 2, 0, sigma).degenerate);
  rng g(9);
  const auto c = random_config(g, 8);
  const auto p = block_pair::standard(f.lattice(), {0}, 3, 0);
  const double eta = averages(c, f.values(), p.sites()).eta;
  if (eta > 0 && eta < 1) {
    EXPECT_NEAR(theta(c, f, 3, 0, sigma).value, 4 * long_jump_current(c, f, 3, 0), 1e-14);
  }
}

TEST(Renorm, CurrentScalingMeanZeroAndDecay) {
  const auto spec = field_spec::iid(field_law::iid_two_point, 1, 8, 1.0, 42);
  const auto st = current_scaling(spec, 0.5, {4, 8, 16}, 20000);
  for (const auto& p : st.points) EXPECT_NEAR(p.mean, 0.0, 4 * p.mean_stderr) << p.ell;
  EXPECT_LT(st.fit.slope, -1.7);
}
