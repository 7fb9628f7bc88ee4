#include <gtest/gtest.h>

#include <map>

#include "disorder_hydro/gibbs.hpp"

using namespace disorder_hydro;

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Closed forms for alpha uniform on [-B, B].
double uniform_mean_density(double B, double lam) {
  return (softplus(B + lam) - softplus(-B + lam)) / (2 * B);
}
double uniform_mean_variance(double B, double lam) {
  auto p = [](double x) { return 1 / (1 + std::exp(-x)); };
  return (p(B + lam) - p(-B + lam)) / (2 * B);
}

double oracle_uniform_lambda(double B, double m) {
  double lo = -60, hi = 60;
  for (int i = 0; i < 300; ++i) {
    const double mid = 0.5 * (lo + hi);
    (uniform_mean_density(B, mid) < m ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(Gibbs, HomogeneousLambda) {
  const auto r = lambda_of_m(site_law::constant(0), 0.75);
  EXPECT_NEAR(r.lambda, std::log(3.0), 1e-11);
  EXPECT_LE(std::abs(r.residual), 1e-12);
}

TEST(Gibbs, SymmetricTwoPointHalfFilling) {
  EXPECT_NEAR(lambda_of_m(site_law::two_point(1.3), 0.5).lambda, 0.0, 1e-11);
}

TEST(Gibbs, UniformLawMatchesClosedForm) {
  const auto law = site_law::uniform(1.0);
  const double lam = lambda_of_m(law, 0.3).lambda;
  EXPECT_NEAR(lam, oracle_uniform_lambda(1.0, 0.3), 1e-10);
  // empirical cross-check on a large sample
  const auto f = gen_field(field_spec::iid(field_law::iid_uniform, 1, 1 << 20, 1.0, 8));
  const double lam_emp = empirical_lambda(f.values(), 0.3).lambda;
  EXPECT_NEAR(lam_emp, lam, 5e-3);
}

TEST(Gibbs, LambdaPrime) {
  EXPECT_NEAR(lambda_prime(site_law::constant(0), 0.5), 4.0, 1e-9);
  EXPECT_NEAR(lambda_prime(site_law::constant(0), 0.2), 1 / (0.2 * 0.8), 1e-8);
  const double b = 0.9;
  const double pb = logistic(b);
  EXPECT_NEAR(lambda_prime(site_law::two_point(b), 0.5), 1 / (pb * (1 - pb)), 1e-9);

  const auto law = site_law::uniform(1.0);
  const double m = 0.3, h = 1e-5;
  const double fd = (lambda_of_m(law, m + h).lambda - lambda_of_m(law, m - h).lambda) / (2 * h);
  const double lp = lambda_prime(law, m);
  EXPECT_NEAR(lp / fd, 1.0, 1e-6);
  EXPECT_NEAR(lp, 1 / uniform_mean_variance(1.0, oracle_uniform_lambda(1.0, m)), 1e-8);
}

TEST(Gibbs, DomainErrors) {
  EXPECT_THROW(lambda_of_m(site_law::constant(0), 0.0), error);
  EXPECT_THROW(lambda_of_m(site_law::constant(0), 1.0), error);
  const std::vector<double> a{0.1, 0.2};
  EXPECT_THROW(empirical_lambda(a, 1.0), error);
}

TEST(Gibbs, EmpiricalLambda) {
  const std::vector<double> c(5, 0.4);
  EXPECT_NEAR(empirical_lambda(c, 0.3).lambda, logit(0.3) - 0.4, 1e-11);
  const std::vector<double> pm{0.8, -0.8};
  EXPECT_NEAR(empirical_lambda(pm, 0.5).lambda, 0.0, 1e-11);

  rng gen(3);
  std::vector<double> a(8);
  for (auto& v : a) v = gen.uniform(-1, 1);
  const auto r = empirical_lambda(a, 0.4);
  double avg = 0;
  for (double v : a) avg += logistic(v + r.lambda);
  EXPECT_LT(std::abs(avg / 8 - 0.4), 1e-12);
}

TEST(Gibbs, MonotoneAndDual) {
  const auto law = site_law::uniform(1.5);
  const std::vector<double> block{0.3, -1.2, 0.9, 1.4, -0.1};
  double prev = -1e9, prev_emp = -1e9;
  for (double m = 0.05; m < 0.96; m += 0.05) {
    const double l = lambda_of_m(law, m).lambda;
    const double le = empirical_lambda(block, m).lambda;
    EXPECT_GT(l, prev);
    EXPECT_GT(le, prev_emp);
    prev = l;
    prev_emp = le;
    EXPECT_NEAR(lambda_of_m(law.negated(), 1 - m).lambda, -l, 1e-10);
  }
  const site_law asym = site_law::discrete({-1, 0.2, 0.7}, {0.2, 0.5, 0.3});
  for (double m : {0.1, 0.35, 0.8})
    EXPECT_NEAR(lambda_of_m(asym.negated(), 1 - m).lambda, -lambda_of_m(asym, m).lambda, 1e-10);
}

TEST(Gibbs, GrandCanonicalSampling) {
  rng gen(1);
  const std::vector<double> zero(20, 0.0);
  EXPECT_EQ(sample_grand(zero, -50, gen).particles, 0);

  std::int64_t total = 0;
  const int reps = 5000;
  for (int i = 0; i < reps; ++i) total += sample_grand(zero, 0, gen).particles;
  const double freq = static_cast<double>(total) / (20.0 * reps);
  EXPECT_NEAR(freq, 0.5, 4 * std::sqrt(0.25 / (20.0 * reps)));

  const auto spec = field_spec::iid(field_law::iid_two_point, 1, 200, 1.0, 4);
  const auto f = gen_field(spec);
  const double lam = lambda_of_m(site_law::of(spec), 0.3).lambda;
  double dens = 0;
  for (int i = 0; i < 2000; ++i) dens += sample_grand(f.values(), lam, gen).density();
  EXPECT_NEAR(dens / 2000, 0.3, 0.02);
}

TEST(Gibbs, GrandSiteFrequencies) {
  const std::vector<double> a{-1.0, 0.0, 0.5, 1.0};
  const double lam = 0.2;
  rng gen(77);
  const int reps = 100000;
  std::vector<int> hits(4, 0);
  for (int i = 0; i < reps; ++i) {
    const auto c = sample_grand(a, lam, gen);
    for (int x = 0; x < 4; ++x) hits[x] += c[x];
  }
  for (int x = 0; x < 4; ++x) {
    const double p = logistic(a[x] + lam);
    EXPECT_NEAR(hits[x] / double(reps), p, 4 * std::sqrt(p * (1 - p) / reps));
  }
}

TEST(Gibbs, CanonicalDegenerateSectors) {
  rng gen(5);
  const std::vector<double> a{0.3, -0.2, 0.9};
  EXPECT_EQ(sample_canonical(a, 0, gen).particles, 0);
  const auto full = sample_canonical(a, 3, gen);
  EXPECT_EQ(full.particles, 3);
  for (auto v : full.occ) EXPECT_EQ(v, 1);
  EXPECT_THROW(sample_canonical(a, 4, gen), error);
}

TEST(Gibbs, CanonicalUniformChiSquare) {
  const std::vector<double> a(6, 0.0);
  rng gen(2024);
  std::map<std::uint32_t, int> counts;
  const int reps = 100000;
  for (int i = 0; i < reps; ++i) {
    const auto c = sample_canonical(a, 3, gen);
    ASSERT_EQ(c.particles, 3);
    std::uint32_t key = 0;
    for (int x = 0; x < 6; ++x) key |= std::uint32_t(c[x]) << x;
    ++counts[key];
  }
  ASSERT_EQ(counts.size(), 20u);
  const double expected = reps / 20.0;
  double chi2 = 0;
  for (auto [k, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  EXPECT_LT(chi2, chi_square_quantile(19, 2.326));
}

TEST(Gibbs, CanonicalMatchesExactWeights) {
  const std::vector<double> a{0.9, -0.4, 0.2, -1.0};
  rng gen(99);
  std::map<std::uint32_t, int> counts;
  const int reps = 100000;
  for (int i = 0; i < reps; ++i) {
    const auto c = sample_canonical(a, 2, gen);
    std::uint32_t key = 0;
    for (int x = 0; x < 4; ++x) key |= std::uint32_t(c[x]) << x;
    ++counts[key];
  }
  std::map<std::uint32_t, double> w;
  double z = 0;
  for (std::uint32_t s = 0; s < 16; ++s) {
    if (__builtin_popcount(s) != 2) continue;
    double e = 0;
    for (int x = 0; x < 4; ++x)
      if (s >> x & 1) e += a[x];
    z += (w[s] = std::exp(e));
  }
  ASSERT_EQ(w.size(), 6u);
  for (auto [s, ws] : w) {
    const double p = ws / z;
    EXPECT_NEAR(counts[s] / double(reps), p, 4 * std::sqrt(p * (1 - p) / reps)) << s;
  }
}

TEST(Gibbs, DeviationScalingConstantField) {
  const auto spec = field_spec::constant(1, 8, 0.3);
  const auto st = lambda_deviation_scaling(spec, 0.4, {8, 16}, 2.0, 10);
  for (const auto& p : st.points) EXPECT_LT(p.estimate, 1e-24);
}

TEST(Gibbs, DeviationScalingSlopes) {
  const auto spec = field_spec::iid(field_law::iid_two_point, 1, 8, 1.0, 31);
  const auto s2 = lambda_deviation_scaling(spec, 0.5, {8, 16, 32, 64}, 2.0, 4000);
  EXPECT_NEAR(s2.fit.slope, -1.0, 0.15);
  const auto s4 = lambda_deviation_scaling(spec, 0.5, {8, 16, 32, 64}, 4.0, 4000);
  EXPECT_NEAR(s4.fit.slope, -2.0, 0.3);
}
