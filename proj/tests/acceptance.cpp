// End-to-end acceptance run. One PASS/FAIL line per criterion; exit status 1
// if any fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "disorder_hydro/disorder_hydro.hpp"

using namespace disorder_hydro;

namespace {

struct outcome {
  bool pass = false;
  std::string detail;
};

struct criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const std::vector<feature_kind> kPlain{feature_kind::constant, feature_kind::exp_plus, feature_kind::exp_minus};

local_basis basis1d(int s, int order, std::vector<feature_kind> f = kPlain) { return {1, s, order, std::move(f)}; }

double var_D(const field_spec& spec, double m, const local_basis& b, field_average mode) {
  return sigma_variational(spec, m, b, {1.0}, mode).sigma * lambda_prime(site_law::of(spec), m);
}

// 1
outcome detailed_balance() {
  rng g(101);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    site_graph graph;
    switch (i % 4) {
      case 0: graph = site_graph::chain(2 + static_cast<std::int64_t>(g.below(7))); break;
      case 1: graph = site_graph::chain(3 + static_cast<std::int64_t>(g.below(6)), true); break;
      case 2: graph = site_graph::lattice(2, 2, geometry::open_box); break;
      default: graph = site_graph::lattice(2, 2, geometry::torus); break;
    }
    const double B = g.uniform(0.2, 3.0);
    std::vector<double> a(static_cast<std::size_t>(graph.n_sites));
    for (auto& v : a) v = g.uniform(-B, B);
    const auto n = 1 + static_cast<std::int64_t>(g.below(static_cast<std::uint64_t>(graph.n_sites - 1)));
    worst = std::max(worst, check_detailed_balance(sector_generator(a, graph, n)));
  }
  return {worst < 1e-13, fmt("max relative violation %.2e over 200 sectors", worst)};
}

// 2
outcome moving_particle() {
  double worst = 0;
  int count = 0;
  for (std::int64_t k = 2; k <= 6; ++k)
    for (int i = 0; i < 100; ++i) {
      rng g(hash_key(202, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i)}));
      std::vector<double> rho(static_cast<std::size_t>(k - 1));
      double s = 0;
      for (auto& r : rho) s += (r = g.exponential(1.0));
      for (auto& r : rho) r /= s;
      const std::int64_t L = k + static_cast<std::int64_t>(g.below(3));
      const std::int64_t n = 1 + static_cast<std::int64_t>(g.below(static_cast<std::uint64_t>(L - 1)));
      worst = std::max(worst, moving_particle_sharpness(std::vector<double>(L, 0.0), L, n, k, rho).quotient);
      ++count;
    }
  return {worst <= 1 + 1e-10, fmt("max quotient %.15f over %d weight vectors, k = 2..6", worst, count)};
}

// 3
outcome gap_scaling() {
  const auto spec = field_spec::iid(field_law::iid_uniform, 1, 12, 1.0, 303);
  const auto st = gap_scaling_study(spec, {4, 5, 6, 7, 8, 9, 10, 11, 12}, 0.5, 30);
  std::vector<double> ls, mins;
  double lowest = 1e300;
  for (const auto& l : st.levels) {
    ls.push_back(static_cast<double>(l.L));
    mins.push_back(l.min_gap_L2);
    lowest = std::min(lowest, l.min_gap_L2);
  }
  const auto trend = fit_loglog(ls, mins);
  const bool ok = st.fit.slope >= -2.4 && st.fit.slope <= -1.6 && lowest > 0 && trend.slope > -0.3;
  return {ok, fmt("slope %.3f +- %.3f, min gap*L^2 %.3f, trend of min gap*L^2 %.3f", st.fit.slope,
                  st.fit.slope_stderr, lowest, trend.slope)};
}

// 4
outcome rs_series_criterion() {
  struct inst {
    site_graph g;
    std::int64_t n;
    site_t x, y;
  };
  const std::vector<inst> cases{{site_graph::chain(6), 3, 2, 3},
                                {site_graph::chain(8), 4, 3, 4},
                                {site_graph::chain(9), 4, 4, 5},
                                {site_graph::chain(10), 3, 4, 5},
                                {site_graph::lattice(2, 3, geometry::open_box), 4, 3, 4}};
  double worst_ratio = 0, worst_err = 0, worst_first = 0;
  std::size_t max_states = 0;
  int count = 0;
  for (std::size_t c = 0; c < cases.size(); ++c)
    for (int s = 0; s < 4; ++s) {
      rng g(hash_key(404, {c, static_cast<std::uint64_t>(s)}));
      std::vector<double> a(static_cast<std::size_t>(cases[c].g.n_sites));
      for (auto& v : a) v = g.uniform(-1, 1);
      const sector_generator gen(a, cases[c].g, cases[c].n);
      max_states = std::max(max_states, gen.dim());
      const Eigen::VectorXd w = gen.observable([&](state_t st) {
        configuration cf(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) cf.occ[j] = (st >> j) & 1u;
        return pair_current(cf, a, cases[c].x, cases[c].y);
      });
      const double K = std::ceil(1.0 / std::sqrt(spectral_gap(gen)));
      const int d = c == cases.size() - 1 ? 2 : 1;
      const auto r = rs_series_check(gen, w, 0, K, d, 40, 0.5);
      worst_ratio = std::max(worst_ratio, r.series.decay_ratio);
      worst_err = std::max(worst_err, r.series.final_error());
      worst_first = std::max(worst_first, std::abs(r.series.terms[0]));
      ++count;
    }
  const bool ok = max_states <= 200 && worst_ratio <= 0.55 && worst_err < 1e-8 && worst_first < 1e-12;
  return {ok, fmt("%d sectors (<= %zu states) at 5a/2 = 0.5: max ratio %.3f, max error %.1e, max |E1| %.1e", count,
                  max_states, worst_ratio, worst_err, worst_first)};
}

// 5
outcome identity_audits() {
  rng g(505);
  double worst_pair = 0, worst_block = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 4 + g.below(29);
    configuration c(n);
    for (auto& v : c.occ) v = g.bernoulli(0.5);
    c.recount();
    std::vector<double> a(n);
    for (auto& v : a) v = g.uniform(-2, 2);
    const auto x = static_cast<site_t>(g.below(n)), y = static_cast<site_t>(g.below(n));
    worst_pair = std::max(worst_pair, std::abs(pair_current(c, a, x, y) - pair_current_decomposed(c, a, x, y)));
    const auto ell = 1 + static_cast<std::int64_t>(g.below(n / 2));
    const box b(1, static_cast<std::int64_t>(n), true);
    const auto p = block_pair::standard(b, {static_cast<std::int64_t>(g.below(n))}, ell, 0);
    worst_block = std::max(worst_block, std::abs(avg_current(c, a, p) - avg_current_bruteforce(c, a, p)));
  }
  double worst_avg = 0, worst_tel = 0;
  for (std::int64_t M = 1; M <= 64; ++M) {
    const auto r = renorm_weights(M);
    double s = 0;
    for (double v : r) s += v;
    worst_avg = std::max(worst_avg, std::abs(s / (2.0 * M) - 1));
    for (int t = 0; t < 5; ++t) {
      std::vector<double> A(static_cast<std::size_t>(2 * M + 1));
      for (auto& v : A) v = g.normal();
      worst_tel = std::max(worst_tel, std::abs(telescoping_residual(r, A)));
    }
  }
  const bool ok = worst_pair <= 1e-14 && worst_block <= 1e-14 && worst_avg <= 1e-14 && worst_tel <= 1e-13;
  return {ok, fmt("decomposition %.1e, block formula %.1e, weight average %.1e, telescoping %.1e", worst_pair,
                  worst_block, worst_avg, worst_tel)};
}

// 6
outcome current_scaling_criterion() {
  const auto spec = field_spec::iid(field_law::iid_two_point, 1, 64, 1.0, 9);
  const auto st = current_scaling(spec, 0.5, {2, 4, 8, 16}, 50000);
  std::ostringstream pts;
  for (const auto& p : st.points) pts << " " << p.ell << ":" << p.mean_sq;
  return {st.fit.slope <= -1.7, fmt("slope %.3f +- %.3f;", st.fit.slope, st.fit.slope_stderr) + pts.str()};
}

// 7
outcome lambda_scaling_criterion() {
  const auto spec = field_spec::iid(field_law::iid_uniform, 1, 64, 1.0, 10);
  const auto st = lambda_deviation_scaling(spec, 0.5, {8, 16, 32, 64}, 2.0, 4000);
  return {st.fit.slope >= -1.3 && st.fit.slope <= -0.7, fmt("slope %.3f +- %.3f", st.fit.slope, st.fit.slope_stderr)};
}

// 8
outcome d0_concordance() {
  std::string detail;
  bool ok = true;
  const std::vector<std::pair<std::string, field_spec>> cases{
      {"zero", field_spec::constant(1, 64, 0.0)}, {"period-2", field_spec::periodic_pattern(1, 64, {1.0, -1.0}, 1.0)}};
  for (const auto& [name, spec] : cases) {
    const field f = gen_field(spec);
    const double h = D0_homogenization(f, {1.0}).D;
    const auto msd = single_particle_msd(f, 50.0, 200000, 808);
    const double rel = std::abs(msd.D[0].value / h - 1);
    ok = ok && rel <= 0.03;
    detail += fmt("%s: homogenization %.4f, msd %.4f +- %.4f (%.2f%%); ", name.c_str(), h, msd.D[0].value,
                  msd.D[0].stderr_, 100 * rel);
  }
  return {ok, detail};
}

// 9
outcome density_independence() {
  std::string detail;
  bool ok = true;
  const field_spec zero = field_spec::constant(1, 32, 0.0);
  const field_spec p2 = field_spec::periodic_pattern(1, 32, {1.0, -1.0}, 1.0);
  const auto b = basis1d(3, 3);
  // calibration of the Green-Kubo normalization on the zero field at m = 1/2
  const auto cal = green_kubo_sigma(gen_field(zero), 0.5, 50.0, 4000, 4, 909);
  const double c_gk = 1.0 / cal.axes[0].raw;
  for (const auto& [name, spec, tol] : {std::tuple{"zero", zero, 0.02}, std::tuple{"period-2", p2, 0.05}}) {
    double lo = 1e300, hi = 0, worst_gk = 0;
    for (double m : {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}) {
      const double D = var_D(spec, m, b, field_average::automatic);
      lo = std::min(lo, D);
      hi = std::max(hi, D);
    }
    const field f = gen_field(spec);
    for (std::size_t i = 0; i < 5; ++i) {
      const double m = 0.2 + 0.15 * static_cast<double>(i);
      const auto gk = green_kubo_sigma(f, m, 50.0, 4000, 4, hash_key(910, {i}), c_gk, true);
      const double Dg = gk.axes[0].sigma * lambda_prime(site_law::of(spec), m);
      const double Dv = var_D(spec, m, b, field_average::automatic);
      worst_gk = std::max(worst_gk, std::abs(Dg / Dv - 1));
    }
    const bool flat = hi / lo - 1 <= tol;
    ok = ok && flat && worst_gk <= 0.05;
    detail += fmt("%s: variational spread %.2e, worst GK deviation %.2f%%; ", name, hi / lo - 1, 100 * worst_gk);
  }
  return {ok, detail + fmt("c_gk %.4f", c_gk)};
}

// 10
outcome nonconstancy() {
  const auto spec = field_spec::iid(field_law::iid_two_point, 1, 64, 1.0, 1010);
  std::vector<double> grid{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  table_options opt;
  opt.basis = basis1d(3, 3);
  opt.mode = field_average::monte_carlo;
  opt.field_samples = 2000;
  opt.seed = 1011;
  const auto t = D_of_m_table(spec, grid, opt);
  double lo = 1e300, hi = 0, se2 = 0;
  for (const auto& r : t.rows) {
    lo = std::min(lo, r.D);
    hi = std::max(hi, r.D);
    se2 += r.stderr_ * r.stderr_;
  }
  const double pooled = std::sqrt(se2 / static_cast<double>(t.rows.size()));
  return {hi - lo > 3 * pooled && pooled > 0,
          fmt("D ranges %.4f..%.4f, pooled stderr %.2e, ratio %.1f", lo, hi, pooled, (hi - lo) / pooled)};
}

// 11
outcome holder_diagnostic() {
  const auto spec = field_spec::iid(field_law::iid_two_point, 1, 64, 1.0, 1111);
  table_options opt;
  opt.basis = basis1d(3, 3);
  opt.mode = field_average::iid_exact;
  opt.homogenization_side = 1 << 18;
  std::vector<double> coarse, fine;
  for (int i = 0; i <= 10; ++i) coarse.push_back(i / 10.0);
  for (int i = 0; i <= 20; ++i) fine.push_back(i / 20.0);
  const auto tc = D_of_m_table(spec, coarse, opt);
  const auto tf = D_of_m_table(spec, fine, opt);
  const double c1 = regularity_diagnostics(tc).C_hat, c2 = regularity_diagnostics(tf).C_hat;
  double d0 = 0, d05 = 0, d2 = 0;
  for (const auto& r : tf.rows) {
    if (r.m == 0) d0 = r.D;
    if (std::abs(r.m - 0.05) < 1e-12) d05 = r.D;
    if (std::abs(r.m - 0.2) < 1e-12) d2 = r.D;
  }
  const double ratio = c2 / c1;
  const bool ok = ratio >= 0.5 && ratio <= 2 && std::abs(d05 - d0) < std::abs(d2 - d0);
  return {ok, fmt("C_hat %.4f -> %.4f (x%.3f); |D(0.05)-D(0)| %.4f, |D(0.2)-D(0)| %.4f", c1, c2, ratio,
                  std::abs(d05 - d0), std::abs(d2 - d0))};
}

// 12
outcome pde_criterion() {
  constexpr double pi = std::numbers::pi;
  pde_options opt;
  opt.n = 256;
  opt.T = 0.01;
  opt.snapshots = 1;
  const auto m0 = sample_profile([](const std::vector<double>& th) { return 0.5 + 0.1 * std::cos(2 * pi * th[0]); }, 1, 256);
  const auto tr = solve(m0, diffusion_table::constant(4.0), opt);
  double amp = 0;
  for (std::size_t i = 0; i < 256; ++i) amp += (tr.final_state()[i] - 0.5) * std::cos(2 * pi * (i + 0.5) / 256);
  amp *= 2.0 / 256;
  const double rel = std::abs(amp / (0.1 * std::exp(-4 * 4 * pi * pi * 0.01)) - 1);
  double drift = tr.max_mass_drift;
  int violations = 0;
  for (int run = 0; run < 100; ++run) {
    rng g(hash_key(1212, {static_cast<std::uint64_t>(run)}));
    const double a = g.uniform(0.2, 3), b = g.uniform(-0.15, 0.15) * a, c = g.uniform(0, 2);
    diffusion_table t;
    for (int i = 0; i <= 20; ++i) {
      const double m = i / 20.0;
      t.rows.push_back({m, 0, 0, 0, a + b * std::sin(7 * m) + c * m * m, 0, "random"});
    }
    std::vector<double> init(64);
    for (auto& v : init) v = g.uniform(0.0, 1.0);
    pde_options o;
    o.n = 64;
    o.T = 0.002;
    o.snapshots = 21;
    const auto r = solve(init, t, o);
    drift = std::max(drift, r.max_mass_drift);
    const double lo = *std::min_element(init.begin(), init.end()), hi = *std::max_element(init.begin(), init.end());
    for (const auto& s : r.states)
      for (double v : s)
        if (v < lo - 1e-14 || v > hi + 1e-14) ++violations;
  }
  return {rel <= 1e-3 && drift <= 1e-12 && violations == 0,
          fmt("Fourier relative error %.1e, max mass drift %.1e, bound violations %d", rel, drift, violations)};
}

// 13
outcome hydro_criterion() {
  std::string detail;
  bool ok = true;
  table_options topt;
  topt.basis = basis1d(2, 2);
  const std::vector<std::pair<std::string, field_spec>> cases{
      {"zero", field_spec::constant(1, 128, 0.0)}, {"period-2", field_spec::periodic_pattern(1, 128, {1.0, -1.0}, 1.0)}};
  for (const auto& [name, spec] : cases) {
    hydro_options o;
    o.spec = spec;
    o.epsilons = {1.0 / 128, 1.0 / 256, 1.0 / 512};
    o.times = {0.05};
    o.replicas = 15;
    o.table = D_of_m_table(spec, default_m_grid(), topt);
    o.seed = name == "zero" ? 1313 : 1314;
    const auto r = hydro_experiment(o);
    ok = ok && r.pass();
    detail += fmt("%s: median L1 %.4f, %.4f, %.4f; ", name.c_str(), r.final_medians[0], r.final_medians[1],
                  r.final_medians[2]);
  }
  return {ok, detail};
}

// 14
outcome nested_bases() {
  const std::vector<local_basis> chain{
      basis1d(1, 1, {feature_kind::constant}), basis1d(2, 2, {feature_kind::constant}), basis1d(2, 2, kPlain),
      basis1d(3, 3, {feature_kind::constant, feature_kind::exp_plus, feature_kind::exp_minus, feature_kind::difference})};
  const std::vector<field_spec> specs{field_spec::iid(field_law::iid_two_point, 1, 64, 1.0, 1),
                                      field_spec::iid(field_law::iid_two_point, 1, 64, 2.0, 1),
                                      field_spec::periodic_pattern(1, 63, {1.0, -0.5, 0.2}, 1.0)};
  double worst = -1e300;
  int count = 0;
  for (const auto& spec : specs)
    for (double m : {0.1, 0.3, 0.5, 0.8}) {
      double prev = 1e300;
      for (const auto& b : chain) {
        const double s = sigma_variational(spec, m, b, {1.0}).sigma;
        if (prev < 1e300) worst = std::max(worst, s - prev);
        prev = s;
        ++count;
      }
    }
  return {worst <= 1e-9, fmt("largest increase along the chain %.2e over %d estimates", worst, count)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<criterion> all{
      {1, "detailed balance", 10, detailed_balance},
      {2, "moving particle exact constant", 60, moving_particle},
      {3, "spectral gap scaling", 300, gap_scaling},
      {4, "perturbation series", 60, rs_series_criterion},
      {5, "identity audits", 10, identity_audits},
      {6, "corrected current scaling", 600, current_scaling_criterion},
      {7, "chemical potential deviation scaling", 120, lambda_scaling_criterion},
      {8, "single particle concordance", 300, d0_concordance},
      {9, "density independence", 1800, density_independence},
      {10, "nonconstant D", 1800, nonconstancy},
      {11, "Holder diagnostic", 600, holder_diagnostic},
      {12, "PDE solver", 60, pde_criterion},
      {13, "hydrodynamic limit", 7200, hydro_criterion},
      {14, "variational monotonicity", 60, nested_bases},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s %2d %s: %s [%.1f s of %.0f s]\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(),
                secs, c.budget_s);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
