#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

#include "disorder_hydro/pde.hpp"
#include "disorder_hydro/rng.hpp"

using namespace disorder_hydro;

namespace {

constexpr double kPi = std::numbers::pi;

diffusion_table table_of(const std::function<double(double)>& D, std::size_t points = 41) {
  diffusion_table t;
  for (std::size_t i = 0; i < points; ++i) {
    const double m = static_cast<double>(i) / static_cast<double>(points - 1);
    t.rows.push_back({m, 0, 0.0, 0.0, D(m), 0.0, "test"});
  }
  return t;
}

double cos_amplitude(const std::vector<double>& m) {
  double s = 0;
  const double n = static_cast<double>(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) s += (m[i] - 0.5) * std::cos(2 * kPi * (i + 0.5) / n);
  return 2 * s / n;
}

}  // namespace

TEST(Pde, ConstantIsFixedPoint) {
  pde_options opt;
  opt.n = 32;
  opt.T = 0.02;
  const auto tr = solve(std::vector<double>(32, 0.3), table_of([](double m) { return 1 + m; }), opt);
  for (double v : tr.final_state()) EXPECT_NEAR(v, 0.3, 1e-15);
}

TEST(Pde, HeatEquationFourierDecay) {
  const auto table = diffusion_table::constant(4.0);
  pde_options opt;
  opt.n = 256;
  opt.T = 0.01;
  const auto m0 = sample_profile([](const std::vector<double>& th) { return 0.5 + 0.1 * std::cos(2 * kPi * th[0]); }, 1, 256);
  for (double theta : {0.0, 1.0}) {
    opt.theta = theta;
    const auto tr = solve(m0, table, opt);
    const double expected = 0.1 * std::exp(-4 * 4 * kPi * kPi * 0.01);
    EXPECT_NEAR(cos_amplitude(tr.final_state()) / expected, 1.0, 1e-3);
    EXPECT_LE(tr.max_mass_drift, 1e-12);
  }
}

TEST(Pde, MassAndBoundsTwoDimensions) {
  rng g(5);
  pde_options opt;
  opt.dim = 2;
  opt.n = 24;
  opt.T = 0.005;
  std::vector<double> m0(24 * 24);
  for (auto& v : m0) v = g.uniform(0.05, 0.95);
  const auto lo = *std::min_element(m0.begin(), m0.end()), hi = *std::max_element(m0.begin(), m0.end());
  const auto tr = solve(m0, table_of([](double m) { return 2 + std::sin(3 * m); }), opt);
  EXPECT_LE(tr.max_mass_drift, 1e-12);
  for (const auto& s : tr.states)
    for (double v : s) {
      EXPECT_GE(v, lo - 1e-14);
      EXPECT_LE(v, hi + 1e-14);
    }
}

TEST(Pde, CflViolationAndTableGap) {
  pde_options opt;
  opt.n = 16;
  opt.dt = 1.0;
  EXPECT_THROW(solve(std::vector<double>(16, 0.5), diffusion_table::constant(1.0), opt), error);
  diffusion_table half;
  half.rows = {{0.0, 0, 0, 0, 1, 0, "x"}, {0.5, 0, 0, 0, 1, 0, "x"}};
  opt.dt = 0;
  EXPECT_THROW(solve(std::vector<double>(16, 0.5), half, opt), error);
}

TEST(Pde, LOneContraction) {
  const diffusivity D(table_of([](double m) { return 2 + m; }), 1);
  const std::int64_t n = 64;
  for (int pair = 0; pair < 100; ++pair) {
    rng g(hash_key(17, {static_cast<std::uint64_t>(pair)}));
    std::vector<double> u(n), v(n);
    for (std::int64_t i = 0; i < n; ++i) {
      u[i] = g.uniform(0.0, 0.8);
      v[i] = std::min(1.0, u[i] + g.uniform(0.0, 0.2));
    }
    pde_options opt;
    opt.n = n;
    opt.dt = 0.5 * stability_bound(n, 1, 3.0);
    opt.T = 30 * opt.dt;
    opt.snapshots = 31;
    const auto a = solve(u, D, opt), b = solve(v, D, opt);
    double prev = 1e300;
    for (std::size_t k = 0; k < a.states.size(); ++k) {
      const double d = l1_distance(a.states[k], n, b.states[k], n, 1);
      EXPECT_LE(d, prev + 1e-15);
      prev = d;
    }
  }
}

TEST(Pde, WeakEnergyMatchesClosedForm) {
  const double k = 4 * 4 * kPi * kPi, T = 0.01;
  // Reference by fine quadrature of the analytic integrand.
  auto spatial = [&](double A) {
    const int q = 4096;
    double s = 0;
    for (int i = 0; i < q; ++i) {
      const double th = (i + 0.5) / q;
      const double sn = 2 * kPi * A * std::sin(2 * kPi * th), cs = A * std::cos(2 * kPi * th);
      s += sn * sn / (0.25 - cs * cs);
    }
    return s / q;
  };
  const int nt = 2000;
  double ref = 0;
  for (int i = 0; i <= nt; ++i) {
    const double t = T * i / nt, w = (i == 0 || i == nt) ? 1 : (i % 2 ? 4 : 2);
    ref += w * spatial(0.1 * std::exp(-k * t));
  }
  ref *= T / (3 * nt);

  pde_options opt;
  opt.n = 256;
  opt.T = T;
  opt.snapshots = 401;
  const auto tr = solve(sample_profile([](const std::vector<double>& th) { return 0.5 + 0.1 * std::cos(2 * kPi * th[0]); }, 1, 256),
                        diffusion_table::constant(4.0), opt);
  const auto e = weak_energy(tr);
  EXPECT_FALSE(e.clipped);
  EXPECT_NEAR(e.value / ref, 1.0, 0.01);

  trajectory flat = tr;
  for (auto& s : flat.states) std::fill(s.begin(), s.end(), 0.4);
  EXPECT_EQ(weak_energy(flat).value, 0.0);
  for (auto& s : flat.states) s[3] = 1.0, s[4] = 1.0;
  EXPECT_TRUE(weak_energy(flat).clipped);
}

TEST(Pde, RefinementAndSchemeAgreement) {
  const auto table = table_of([](double m) { return 1 + 3 * m * m; });
  const auto m0 = [](const std::vector<double>& th) { return 0.5 + 0.3 * std::sin(2 * kPi * th[0]) + 0.1 * std::cos(6 * kPi * th[0]); };
  const auto rep = refinement_uniqueness_check(m0, table, 0.01, {64, 128, 256});
  ASSERT_EQ(rep.distances.size(), 2u);
  EXPECT_TRUE(rep.monotone);
  EXPECT_GE(rep.ratios[0], 3.0);
  EXPECT_LT(rep.scheme_distance, 1e-3);
  const auto again = refinement_uniqueness_check(m0, table, 0.01, {64, 128, 256});
  EXPECT_EQ(again.distances, rep.distances);
}

TEST(Pde, CsvRoundTrip) {
  std::stringstream ss;
  write_profile_csv(ss, {0.1, 0.25, 0.7});
  const auto back = read_profile_csv(ss);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_DOUBLE_EQ(back[1], 0.25);
  pde_options opt;
  opt.n = 3;
  opt.T = 0.001;
  opt.snapshots = 2;
  const auto tr = solve(back, diffusion_table::constant(1.0), opt);
  std::stringstream out;
  write_trajectory_csv(out, tr);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "t,cell0,cell1,cell2");
}
