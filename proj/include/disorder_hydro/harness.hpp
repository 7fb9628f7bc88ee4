#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "dcoef.hpp"
#include "error.hpp"
#include "exact_gen.hpp"
#include "field.hpp"
#include "gibbs.hpp"
#include "kmc.hpp"
#include "parallel.hpp"
#include "pde.hpp"
#include "renorm_current.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace disorder_hydro {

inline constexpr const char* library_version = "0.1.0";

using json = nlohmann::ordered_json;

inline const config_schema& default_schema() {
  static const config_schema s{
      {"", {"seed"}},
      {"field", {"dim", "side", "bound", "law", "pattern", "block", "patterns", "seed"}},
      {"mixing", {"gamma", "K", "samples", "calibration"}},
      {"dynamics", {"epsilon", "T_macro", "replicas", "c0"}},
      {"dcoef", {"m_grid", "window", "max_order", "features", "mode", "field_samples", "homogenization_side",
                 "flat_tol"}},
      {"pde", {"n", "dt", "scheme", "T", "snapshots", "table", "profile", "m0", "D"}},
      {"hydro", {"delta", "m0", "times", "table", "d_scale", "pde_n", "threshold"}},
      {"output", {"dir", "formats"}},
      {"gap", {"L", "m", "samples", "cap", "slope_lo", "slope_hi"}},
      {"mpl", {"L", "N", "k", "weights", "homogeneous", "cap"}},
      {"rs", {"L", "N", "samples", "n_terms", "target", "ratio_max"}},
      {"gk", {"m", "T", "replicas", "blocks", "side", "calibrate"}},
      {"current", {"m", "ell", "samples", "burn_in", "slope_max"}},
      {"lambda", {"m", "K", "gamma", "samples", "slope_lo", "slope_hi"}},
  };
  return s;
}

/// [field] section. Patterns for block laws are ';'-separated lists.
inline field_spec field_from_config(const config& c, std::uint64_t seed) {
  const std::string s = "field";
  field_spec f;
  f.dim = static_cast<int>(c.integer(s, "dim", 1));
  f.side = c.integer(s, "side", 64);
  f.bound = c.number(s, "bound", 1.0);
  f.law = parse_field_law(c.str(s, "law", "iid-uniform"));
  f.seed = static_cast<std::uint64_t>(c.integer(s, "seed", static_cast<std::int64_t>(seed & 0x3fffffffffffffULL)));
  if (c.has(s, "pattern")) f.pattern = c.numbers(s, "pattern");
  f.block = c.integer(s, "block", 1);
  if (c.has(s, "patterns")) {
    std::stringstream ss(c.str(s, "patterns"));
    std::string part;
    while (std::getline(ss, part, ';')) {
      std::vector<double> p;
      for (const auto& w : config::words(part)) p.push_back(config::to_number(w, "patterns"));
      if (!p.empty()) f.patterns.push_back(p);
    }
  }
  validate(f);
  return f;
}

inline local_basis basis_from_config(const config& c, int dim) {
  local_basis b;
  b.dim = dim;
  b.window = static_cast<int>(c.integer("dcoef", "window", 2));
  b.max_order = static_cast<int>(c.integer("dcoef", "max_order", 2));
  b.features.clear();
  for (const auto& f : c.strings("dcoef", "features", {"const", "exp+", "exp-"})) b.features.push_back(parse_feature(f));
  return b;
}

inline std::vector<double> default_m_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 20; ++i) g.push_back(i / 20.0);
  return g;
}

inline table_options table_options_from_config(const config& c, std::uint64_t seed, int dim) {
  table_options o;
  o.basis = basis_from_config(c, dim);
  o.mode = parse_field_average(c.str("dcoef", "mode", "automatic"));
  o.field_samples = static_cast<std::size_t>(c.integer("dcoef", "field_samples", 2000));
  o.homogenization_side = c.integer("dcoef", "homogenization_side", 0);
  o.seed = seed;
  return o;
}

/// Block side for reporting, K = c0 eps^{-2/(d+2)}.
inline double block_scale(double c0, double eps, int dim) { return c0 * std::pow(eps, -2.0 / (dim + 2)); }

// ---------------------------------------------------------------------------
// End-to-end hydrodynamic comparison

struct hydro_options {
  field_spec spec;
  std::vector<double> epsilons;
  std::vector<double> times;
  std::size_t replicas = 15;
  double delta = 0.25;
  std::string m0_text = "0.5 + 0.2*sin(2*pi*x)";
  diffusion_table table;
  double d_scale = 0.5;   ///< PDE coefficient = d_scale * tabulated D
  std::int64_t pde_n = 256;
  double threshold = 0.05;
  std::uint64_t seed = 0;
};

struct hydro_cell {
  double epsilon = 0.0;
  double t = 0.0;
  std::vector<double> errors;  ///< per replica
  double median = 0.0;
};

struct hydro_report {
  std::vector<hydro_cell> cells;           ///< epsilon-major, then time
  std::vector<double> final_medians;       ///< per epsilon at the last time
  bool decreasing = false;
  bool below_threshold = false;
  bool pass() const { return decreasing && below_threshold; }
};

inline std::vector<double> coarse_pde(const std::vector<double>& fine, std::int64_t n, std::int64_t cells, int dim) {
  std::vector<double> out(static_cast<std::size_t>(std::pow(cells, dim)), 0.0);
  const box bf(dim, n, true), bc(dim, cells, true);
  const std::int64_t k = n / cells;
  const double w = 1.0 / std::pow(static_cast<double>(k), dim);
  for (site_t s = 0; s < bf.size(); ++s) {
    auto c = bf.coords(s);
    for (auto& v : c) v /= k;
    out[bc.index(c)] += w * fine[s];
  }
  return out;
}

inline hydro_report hydro_experiment(const hydro_options& o) {
  require(o.epsilons.size() >= 3, error_kind::invalid_spec, "need at least three epsilon values");
  require(o.replicas >= 1, error_kind::insufficient_samples, "need at least one replica");
  require(!o.times.empty(), error_kind::invalid_spec, "need report times");
  const int d = o.spec.dim;
  const auto m0 = expression::compile(o.m0_text);
  const auto cells = static_cast<std::int64_t>(std::llround(1.0 / o.delta));
  require(std::abs(cells * o.delta - 1.0) < 1e-9 && o.pde_n % cells == 0, error_kind::invalid_spec,
          "delta must divide the unit torus and the PDE grid");
  std::vector<double> times = o.times;
  std::sort(times.begin(), times.end());

  // PDE reference at each report time.
  diffusion_table scaled = o.table;
  for (auto& r : scaled.rows) r.D *= o.d_scale;
  const diffusivity D(scaled, d);
  const auto init = sample_profile(m0, d, o.pde_n);
  std::vector<std::vector<double>> reference;
  for (double t : times) {
    pde_options po;
    po.dim = d;
    po.n = o.pde_n;
    po.T = t;
    po.snapshots = 1;
    reference.push_back(coarse_pde(solve(init, D, po).final_state(), o.pde_n, cells, d));
  }

  hydro_report rep;
  const std::size_t ne = o.epsilons.size(), nr = o.replicas;
  std::vector<std::vector<double>> err(ne * times.size(), std::vector<double>(nr));
  parallel_for(ne * nr, [&](std::size_t job) {
    const std::size_t ei = job / nr, r = job % nr;
    const auto side = static_cast<std::int64_t>(std::llround(1.0 / o.epsilons[ei]));
    const auto key = hash_key(o.seed, {0x4d, ei, r});
    const field f = gen_field(o.spec.with_side(side).with_seed(hash_key(o.spec.seed, {0x4e, ei, r})));
    rng g(key);
    kmc_sim sim(f, init_local_equilibrium(f, m0, g), hash_key(key, {1}));
    double now = 0;
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      sim.run(times[ti] - now);
      now = times[ti];
      const auto prof = coarse_density(sim.config(), f.lattice(), o.delta, now);
      double l1 = 0;
      for (std::size_t c = 0; c < prof.values.size(); ++c) l1 += std::abs(prof.values[c] - reference[ti][c]);
      err[ei * times.size() + ti][r] = l1 / static_cast<double>(prof.values.size());
    }
  });
  for (std::size_t ei = 0; ei < ne; ++ei)
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      hydro_cell c;
      c.epsilon = o.epsilons[ei];
      c.t = times[ti];
      c.errors = err[ei * times.size() + ti];
      c.median = median(c.errors);
      rep.cells.push_back(c);
      if (ti + 1 == times.size()) rep.final_medians.push_back(c.median);
    }
  // order by decreasing epsilon for the trend
  std::vector<std::size_t> order(ne);
  for (std::size_t i = 0; i < ne; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return o.epsilons[a] > o.epsilons[b]; });
  rep.decreasing = true;
  for (std::size_t i = 1; i < ne; ++i)
    if (!(rep.final_medians[order[i]] < rep.final_medians[order[i - 1]])) rep.decreasing = false;
  rep.below_threshold = rep.final_medians[order.back()] < o.threshold;
  return rep;
}

// ---------------------------------------------------------------------------
// Subcommand runner

struct output_record {
  std::string file, module, op;
  std::uint64_t seed = 0;
};

class run_context {
 public:
  run_context(std::string subcommand, config cfg, std::filesystem::path out_root, std::uint64_t seed,
              bool dry_run, std::ostream& log)
      : sub_(std::move(subcommand)), cfg_(std::move(cfg)), root_(std::move(out_root)), seed_(seed),
        dry_(dry_run), log_(log) {}

  const std::string& subcommand() const { return sub_; }
  const config& cfg() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  bool dry_run() const { return dry_; }
  std::ostream& log() { return log_; }
  std::filesystem::path dir() const { return root_ / sub_; }
  const std::filesystem::path& root() const { return root_; }

  /// Opens dir()/name for writing and records its provenance.
  std::ofstream open(const std::string& name, const std::string& module, const std::string& op,
                     std::uint64_t seed) {
    std::filesystem::create_directories(dir());
    std::ofstream os(dir() / name);
    require(static_cast<bool>(os), error_kind::io, "cannot write " + (dir() / name).string());
    os << std::setprecision(17);
    outputs_.push_back({name, module, op, seed});
    return os;
  }

  void check(const std::string& name, bool pass, json detail = json::object()) {
    checks_.push_back({{"name", name}, {"pass", pass}, {"detail", std::move(detail)}});
  }
  void value(const std::string& key, json v) { values_[key] = std::move(v); }

  void write_manifest_and_summary() {
    std::filesystem::create_directories(dir());
    json cfg = json::object();
    for (const auto& [sec, kv] : cfg_.sections()) {
      json s = json::object();
      for (const auto& [k, v] : kv) s[k] = v;
      cfg[sec.empty() ? "global" : sec] = s;
    }
    json outs = json::array();
    for (const auto& o : outputs_)
      outs.push_back({{"file", o.file}, {"module", o.module}, {"op", o.op}, {"seed", o.seed}});
    json manifest{{"tool", "disorder-hydro"}, {"version", library_version}, {"subcommand", sub_},
                  {"seed", seed_}, {"config", cfg}, {"outputs", outs}};
    std::ofstream(dir() / "manifest.json") << manifest.dump(2) << '\n';
    bool all = true;
    for (const auto& c : checks_) all = all && c["pass"].get<bool>();
    json summary{{"subcommand", sub_}, {"values", values_}, {"checks", checks_}, {"all_pass", all}};
    std::ofstream(dir() / "summary.json") << summary.dump(2) << '\n';
  }

 private:
  std::string sub_;
  config cfg_;
  std::filesystem::path root_;
  std::uint64_t seed_;
  bool dry_;
  std::ostream& log_;
  std::vector<output_record> outputs_;
  json checks_ = json::array();
  json values_ = json::object();
};

namespace detail {

inline double finite_or_zero(double v) { return std::isfinite(v) ? v : 0.0; }

inline void run_field(run_context& ctx) {
  const auto& c = ctx.cfg();
  const field_spec spec = field_from_config(c, ctx.seed());
  const auto gammas = c.numbers("mixing", "gamma", {2, 4});
  const auto Ks = c.integers("mixing", "K", {8, 16, 32});
  const auto samples = static_cast<std::size_t>(c.integer("mixing", "samples", 400));
  const auto calib = static_cast<std::size_t>(c.integer("mixing", "calibration", 16));
  if (ctx.dry_run()) return;
  const field f = gen_field(spec);
  {
    auto os = ctx.open("field.csv", "field-env", "gen_field", spec.seed);
    write_field_csv(os, f);
  }
  ctx.value("max_abs_alpha", f.max_abs());
  ctx.check("bounded", f.max_abs() <= spec.bound, {{"max_abs", f.max_abs()}, {"bound", spec.bound}});
  const std::int64_t kmax = *std::max_element(Ks.begin(), Ks.end());
  const field_spec big = spec.with_side(std::max(spec.side, 2 * kmax));
  auto os = ctx.open("mixing.csv", "field-env", "mixing_diagnostic", spec.seed);
  csv::writer w(os);
  w.row("gamma", "K", "ratio", "stderr", "samples");
  for (double g : gammas) {
    std::vector<double> ratios;
    for (auto K : Ks) {
      const auto r = mixing_diagnostic(big, local_statistic::site_value(), g, K, samples, calib);
      w.row(g, static_cast<long long>(K), r.ratio, r.stderr_, static_cast<unsigned long long>(r.samples));
      ratios.push_back(r.ratio);
    }
    const double lo = *std::min_element(ratios.begin(), ratios.end());
    const double hi = *std::max_element(ratios.begin(), ratios.end());
    ctx.check("mixing_stable_gamma" + csv::format(g), lo > 0 ? hi / lo <= 3 : hi == 0, {{"min", lo}, {"max", hi}});
  }
}

inline void run_gap(run_context& ctx) {
  const auto& c = ctx.cfg();
  const field_spec spec = field_from_config(c, ctx.seed());
  const auto Ls = c.integers("gap", "L", {4, 5, 6, 7, 8, 9, 10, 11, 12});
  const double m = c.number("gap", "m", 0.5);
  const auto n = static_cast<std::size_t>(c.integer("gap", "samples", 30));
  const auto cap = static_cast<std::size_t>(c.integer("gap", "cap", static_cast<std::int64_t>(sector_generator::default_cap)));
  const double lo = c.number("gap", "slope_lo", -2.4), hi = c.number("gap", "slope_hi", -1.6);
  if (ctx.dry_run()) return;
  const auto st = gap_scaling_study(spec, Ls, m, n, cap);
  {
    auto os = ctx.open("gap.csv", "exact-gen", "spectral_gap", spec.seed);
    csv::writer w(os);
    w.row("L", "seed", "gap", "gap_L2");
    for (const auto& s : st.samples) w.row(static_cast<long long>(s.L), static_cast<unsigned long long>(s.seed), s.gap, s.gap_L2);
  }
  {
    auto os = ctx.open("gap_levels.csv", "exact-gen", "gap_scaling_study", spec.seed);
    csv::writer w(os);
    w.row("L", "mean_gap", "stderr", "min_gap_L2", "max_gap_L2");
    for (const auto& l : st.levels) w.row(static_cast<long long>(l.L), l.mean_gap, l.stderr_, l.min_gap_L2, l.max_gap_L2);
  }
  double min_l2 = 1e300;
  for (const auto& l : st.levels) min_l2 = std::min(min_l2, l.min_gap_L2);
  ctx.value("slope", st.fit.slope);
  ctx.value("slope_stderr", st.fit.slope_stderr);
  ctx.value("min_gap_L2", min_l2);
  ctx.check("gap_exponent", st.fit.slope >= lo && st.fit.slope <= hi, {{"slope", st.fit.slope}, {"lo", lo}, {"hi", hi}});
  ctx.check("gap_L2_positive", min_l2 > 0, {{"min_gap_L2", min_l2}});
}

inline void run_mpl(run_context& ctx) {
  const auto& c = ctx.cfg();
  const field_spec spec = field_from_config(c, ctx.seed());
  const auto L = c.integer("mpl", "L", 8);
  const auto N = c.integer("mpl", "N", L / 2);
  const auto ks = c.integers("mpl", "k", {2, 3, 4, 5, 6});
  const auto n = static_cast<std::size_t>(c.integer("mpl", "weights", 100));
  const bool homogeneous = c.flag("mpl", "homogeneous", true);
  const auto cap = static_cast<std::size_t>(c.integer("mpl", "cap", 5000));
  if (ctx.dry_run()) return;
  const field f = gen_field(spec.with_side(L));
  std::vector<double> alpha = homogeneous ? std::vector<double>(static_cast<std::size_t>(L), 0.0) : f.values();
  auto os = ctx.open("mpl.csv", "exact-gen", "moving_particle_sharpness", ctx.seed());
  csv::writer w(os);
  w.row("k", "sample", "quotient", "unweighted", "bound");
  double worst = 0, worst_ratio = 0;
  for (auto k : ks) {
    std::vector<moving_particle_result> res(n);
    parallel_for(n, [&](std::size_t i) {
      rng g(hash_key(ctx.seed(), {0x3a, static_cast<std::uint64_t>(k), i}));
      std::vector<double> rho(static_cast<std::size_t>(k - 1));
      double sum = 0;
      for (auto& r : rho) sum += (r = g.uniform(0.05, 1.0));
      for (auto& r : rho) r /= sum;
      res[i] = moving_particle_sharpness(alpha, L, N, k, rho, cap);
    });
    for (std::size_t i = 0; i < n; ++i) {
      w.row(static_cast<long long>(k), static_cast<unsigned long long>(i), res[i].quotient, res[i].unweighted, res[i].lemma52_bound);
      worst = std::max(worst, res[i].quotient);
      worst_ratio = std::max(worst_ratio, res[i].quotient / res[i].lemma52_bound);
    }
  }
  ctx.value("max_quotient", worst);
  if (homogeneous)
    ctx.check("moving_particle_exact_constant", worst <= 1 + 1e-10, {{"max_quotient", worst}});
  else
    ctx.check("moving_particle_disordered_bound", worst_ratio <= 1, {{"max_quotient_over_bound", worst_ratio}});
}

inline void run_rs(run_context& ctx) {
  const auto& c = ctx.cfg();
  const field_spec spec = field_from_config(c, ctx.seed());
  const auto L = c.integer("rs", "L", 6);
  const auto N = c.integer("rs", "N", L / 2);
  const auto n = static_cast<std::size_t>(c.integer("rs", "samples", 10));
  const int terms = static_cast<int>(c.integer("rs", "n_terms", 40));
  const double target = c.number("rs", "target", 0.5);
  const double ratio_max = c.number("rs", "ratio_max", 0.55);
  require(spec.dim == 1, error_kind::invalid_spec, "rs runs on chains");
  if (ctx.dry_run()) return;
  std::vector<rs_check> res(n);
  parallel_for(n, [&](std::size_t i) {
    const field f = gen_field(spec.with_side(L).with_seed(hash_key(spec.seed, {0x75, i})));
    const auto& a = f.values();
    const sector_generator g(a, site_graph::chain(L), N);
    const site_t x = L / 2 - 1, y = L / 2;
    const Eigen::VectorXd wv = g.observable([&](state_t s) {
      configuration cf(static_cast<std::size_t>(L));
      for (std::int64_t j = 0; j < L; ++j) cf.occ[j] = (s >> j) & 1u;
      return pair_current(cf, a, x, y);
    });
    const double K = std::ceil(1.0 / std::sqrt(spectral_gap(g)));
    res[i] = rs_series_check(g, wv, 0, K, 1, terms, target);
  });
  auto os = ctx.open("rs.csv", "exact-gen", "rs_series", spec.seed);
  csv::writer w(os);
  w.row("sample", "n", "term", "partial_sum", "bound", "exact");
  double worst_ratio = 0, worst_err = 0, worst_first = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = res[i].series;
    for (std::size_t k = 0; k < s.terms.size(); ++k)
      w.row(static_cast<unsigned long long>(i), static_cast<unsigned long long>(k + 1), s.terms[k], s.partial_sums[k], s.term_bounds[k], s.exact);
    worst_ratio = std::max(worst_ratio, s.decay_ratio);
    worst_err = std::max(worst_err, s.final_error());
    worst_first = std::max(worst_first, std::abs(s.terms.empty() ? 0.0 : s.terms[0]));
  }
  ctx.value("max_decay_ratio", worst_ratio);
  ctx.value("max_final_error", worst_err);
  ctx.check("rs_decay", worst_ratio <= ratio_max, {{"max_ratio", worst_ratio}});
  ctx.check("rs_convergence", worst_err < 1e-8, {{"max_error", worst_err}});
  ctx.check("rs_first_order_zero", worst_first < 1e-12, {{"max_first", worst_first}});
}

inline void run_dcoef(run_context& ctx) {
  const auto& c = ctx.cfg();
  const field_spec spec = field_from_config(c, ctx.seed());
  const auto grid = c.numbers("dcoef", "m_grid", default_m_grid());
  const auto opt = table_options_from_config(c, ctx.seed(), spec.dim);
  if (ctx.dry_run()) return;
  const auto t = D_of_m_table(spec, grid, opt);
  {
    auto os = ctx.open("dcoef.csv", "dcoef", "D_of_m_table", ctx.seed());
    t.write_csv(os);
  }
  double lo = 1e300, hi = 0, se2 = 0;
  std::size_t interior = 0;
  for (const auto& r : t.rows) {
    if (r.m <= 0 || r.m >= 1) continue;
    lo = std::min(lo, r.D);
    hi = std::max(hi, r.D);
    se2 += r.stderr_ * r.stderr_;
    ++interior;
  }
  const auto reg = regularity_diagnostics(t);
  ctx.value("D_min", lo);
  ctx.value("D_max", hi);
  ctx.value("pooled_stderr", interior ? std::sqrt(se2 / interior) : 0.0);
  ctx.value("C_hat", reg.C_hat);
  if (c.has("dcoef", "flat_tol")) {
    const double tol = c.number("dcoef", "flat_tol");
    double flo = 1e300, fhi = 0;
    for (const auto& r : t.rows)
      if (r.m >= 0.2 - 1e-12 && r.m <= 0.8 + 1e-12) {
        flo = std::min(flo, r.D);
        fhi = std::max(fhi, r.D);
      }
    ctx.check("dcoef_flat", fhi / flo - 1 <= tol, {{"min", flo}, {"max", fhi}, {"tol", tol}});
  }
  ctx.check("dcoef_positive", lo > 0 && std::isfinite(hi), {{"min", lo}});
}

inline void run_gk(run_context& ctx) {
  const auto& c = ctx.cfg();
  const field_spec spec = field_from_config(c, ctx.seed());
  const auto ms = c.numbers("gk", "m", {0.2, 0.35, 0.5, 0.65, 0.8});
  const double T = c.number("gk", "T", 50);
  const auto reps = static_cast<std::size_t>(c.integer("gk", "replicas", 200));
  const auto blocks = static_cast<std::size_t>(c.integer("gk", "blocks", 4));
  const auto side = c.integer("gk", "side", 32);
  const bool calibrate = c.flag("gk", "calibrate", true);
  if (ctx.dry_run()) return;
  double c_gk = 1.0;
  if (calibrate) {
    const field zero = gen_field(field_spec::constant(spec.dim, side, 0.0));
    const auto cal = green_kubo_sigma(zero, 0.5, T, reps, blocks, hash_key(ctx.seed(), {0xca1}));
    c_gk = 1.0 / cal.axes[0].raw;  // 4 m (1-m) at m = 1/2
  }
  const field f = gen_field(spec.with_side(side));
  const site_law law = site_law::of(spec);
  std::vector<gk_result> rows;
  diffusion_table t;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    rows.push_back(green_kubo_sigma(f, ms[i], T, reps, blocks, hash_key(ctx.seed(), {0x6b, i}), c_gk, calibrate));
    const double lp = lambda_prime(law, ms[i]);
    for (const auto& a : rows.back().axes)
      t.rows.push_back({ms[i], a.axis, a.sigma, lp, a.sigma * lp, a.stderr_ * lp, "green-kubo"});
  }
  {
    auto os = ctx.open("gk.csv", "kmc-sim", "green_kubo_sigma", ctx.seed());
    write_gk_csv(os, rows);
  }
  {
    auto os = ctx.open("gk_D.csv", "kmc-sim", "green_kubo_sigma", ctx.seed());
    t.write_csv(os);
  }
  ctx.value("c_gk", c_gk);
  ctx.value("calibrated", calibrate);
  ctx.check("gk_finite", std::all_of(t.rows.begin(), t.rows.end(), [](const auto& r) { return std::isfinite(r.D) && r.D > 0; }));
}

inline void run_current(run_context& ctx) {
  const auto& c = ctx.cfg();
  const field_spec spec = field_from_config(c, ctx.seed());
  const double m = c.number("current", "m", 0.5);
  const auto ells = c.integers("current", "ell", {2, 4, 8, 16});
  const auto n = static_cast<std::size_t>(c.integer("current", "samples", 10000));
  const int burn = static_cast<int>(c.integer("current", "burn_in", 50));
  const double smax = c.number("current", "slope_max", -1.7);
  if (ctx.dry_run()) return;
  const auto st = current_scaling(spec, m, ells, n, burn);
  {
    auto os = ctx.open("current_scaling.csv", "renorm-current", "current_scaling", spec.seed);
    write_current_scaling_csv(os, st);
  }
  ctx.value("slope", st.fit.slope);
  ctx.check("current_scaling_slope", st.fit.slope <= smax, {{"slope", st.fit.slope}, {"max", smax}});
}

inline void run_lambda(run_context& ctx) {
  const auto& c = ctx.cfg();
  const field_spec spec = field_from_config(c, ctx.seed());
  const double m = c.number("lambda", "m", 0.5);
  const auto Ks = c.integers("lambda", "K", {8, 16, 32, 64});
  const double gamma = c.number("lambda", "gamma", 2);
  const auto n = static_cast<std::size_t>(c.integer("lambda", "samples", 4000));
  const double lo = c.number("lambda", "slope_lo", -1.3), hi = c.number("lambda", "slope_hi", -0.7);
  if (ctx.dry_run()) return;
  const auto st = lambda_deviation_scaling(spec, m, Ks, gamma, n);
  {
    auto os = ctx.open("lambda_scaling.csv", "gibbs", "lambda_deviation_scaling", spec.seed);
    csv::writer w(os);
    w.row("K", "estimate", "stderr", "n");
    for (const auto& p : st.points) w.row(static_cast<long long>(p.K), p.estimate, p.stderr_, static_cast<unsigned long long>(p.n));
  }
  ctx.value("slope", st.fit.slope);
  ctx.check("lambda_scaling_slope", st.fit.slope >= lo && st.fit.slope <= hi, {{"slope", st.fit.slope}, {"lo", lo}, {"hi", hi}});
}

inline diffusion_table load_table(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), error_kind::io, "cannot open table " + path);
  return diffusion_table::read_csv(is);
}

inline void run_pde(run_context& ctx) {
  const auto& c = ctx.cfg();
  const int dim = static_cast<int>(c.integer("field", "dim", 1));
  pde_options po;
  po.dim = dim;
  po.n = c.integer("pde", "n", 256);
  po.T = c.number("pde", "T", 0.05);
  po.dt = c.number("pde", "dt", 0.0);
  po.snapshots = static_cast<std::size_t>(c.integer("pde", "snapshots", 11));
  const auto scheme = c.str("pde", "scheme", "explicit");
  require(scheme == "explicit" || scheme == "implicit", error_kind::invalid_spec, "scheme must be explicit or implicit");
  po.theta = scheme == "implicit" ? 1.0 : 0.0;
  const diffusion_table table = c.has("pde", "table") ? load_table(c.str("pde", "table"))
                                                      : diffusion_table::constant(c.number("pde", "D", 4.0), dim);
  std::vector<double> m0;
  if (c.has("pde", "profile")) {
    std::ifstream is(c.str("pde", "profile"));
    require(static_cast<bool>(is), error_kind::io, "cannot open profile");
    m0 = read_profile_csv(is);
  } else {
    m0 = sample_profile(expression::compile(c.str("pde", "m0", "0.5 + 0.1*cos(2*pi*x)")), dim, po.n);
  }
  if (ctx.dry_run()) return;
  const auto tr = solve(m0, table, po);
  {
    auto os = ctx.open("trajectory.csv", "pde-solver", "solve", 0);
    write_trajectory_csv(os, tr);
  }
  const auto e = weak_energy(tr);
  const double lo = *std::min_element(m0.begin(), m0.end()), hi = *std::max_element(m0.begin(), m0.end());
  bool bounded = true;
  for (const auto& s : tr.states)
    for (double v : s) bounded = bounded && v >= lo - 1e-12 && v <= hi + 1e-12;
  ctx.value("weak_energy", e.value);
  ctx.value("energy_clipped", e.clipped);
  ctx.value("steps", tr.steps);
  ctx.check("pde_mass", tr.max_mass_drift <= 1e-12, {{"max_drift", tr.max_mass_drift}});
  ctx.check("pde_max_principle", bounded);
}

inline hydro_options hydro_from_config(const config& c, std::uint64_t seed) {
  hydro_options o;
  o.spec = field_from_config(c, seed);
  o.epsilons = c.numbers("dynamics", "epsilon", {1.0 / 128, 1.0 / 256, 1.0 / 512});
  const double T = c.number("dynamics", "T_macro", 0.05);
  o.times = c.numbers("hydro", "times", {T});
  o.replicas = static_cast<std::size_t>(c.integer("dynamics", "replicas", 15));
  o.delta = c.number("hydro", "delta", 0.25);
  o.m0_text = c.str("hydro", "m0", o.m0_text);
  o.d_scale = c.number("hydro", "d_scale", 0.5);
  o.pde_n = c.integer("hydro", "pde_n", 256);
  o.threshold = c.number("hydro", "threshold", 0.05);
  o.seed = seed;
  for (double e : o.epsilons) {
    const double side = 1.0 / e;
    require(e > 0 && std::abs(side - std::round(side)) < 1e-9, error_kind::invalid_spec,
            "epsilon must be the inverse of an integer");
  }
  return o;
}

inline void run_hydro(run_context& ctx) {
  const auto& c = ctx.cfg();
  hydro_options o = hydro_from_config(c, ctx.seed());
  const double c0 = c.number("dynamics", "c0", 1.0);
  if (ctx.dry_run()) {
    expression::compile(o.m0_text);
    for (double e : o.epsilons)
      ctx.log() << "epsilon " << e << "  K = " << block_scale(c0, e, o.spec.dim) << '\n';
    return;
  }
  if (c.has("hydro", "table"))
    o.table = load_table(c.str("hydro", "table"));
  else
    o.table = D_of_m_table(o.spec, default_m_grid(), table_options_from_config(c, ctx.seed(), o.spec.dim));
  {
    auto os = ctx.open("d_table.csv", "dcoef", "D_of_m_table", ctx.seed());
    o.table.write_csv(os);
  }
  const auto rep = hydro_experiment(o);
  {
    auto os = ctx.open("hydro.csv", "harness-cli", "hydro_experiment", ctx.seed());
    csv::writer w(os);
    w.row("epsilon", "t", "replica", "l1");
    for (const auto& cell : rep.cells)
      for (std::size_t r = 0; r < cell.errors.size(); ++r) w.row(cell.epsilon, cell.t, static_cast<unsigned long long>(r), cell.errors[r]);
  }
  {
    auto os = ctx.open("hydro_median.csv", "harness-cli", "hydro_experiment", ctx.seed());
    csv::writer w(os);
    w.row("epsilon", "t", "median_l1", "K");
    for (const auto& cell : rep.cells) w.row(cell.epsilon, cell.t, cell.median, block_scale(c0, cell.epsilon, o.spec.dim));
  }
  ctx.value("final_medians", rep.final_medians);
  ctx.check("hydro_decreasing", rep.decreasing, {{"medians", rep.final_medians}});
  ctx.check("hydro_threshold", rep.below_threshold, {{"threshold", o.threshold}});
}

}  // namespace detail

/// Aggregates every <root>/<sub>/summary.json into <root>/report.json.
inline json write_report(const std::filesystem::path& root) {
  require(std::filesystem::is_directory(root), error_kind::io, "no output directory " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "summary.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  json checks = json::array();
  bool all = true;
  for (const auto& d : dirs) {
    std::ifstream is(d / "summary.json");
    const json s = json::parse(is);
    for (const auto& c : s["checks"]) {
      json row = c;
      row["subcommand"] = s["subcommand"];
      all = all && c["pass"].get<bool>();
      checks.push_back(row);
    }
  }
  json rep{{"version", library_version}, {"checks", checks}, {"all_pass", all}};
  std::ofstream(root / "report.json") << rep.dump(2) << '\n';
  return rep;
}

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"field", "gap", "mpl", "rs", "dcoef", "gk", "current-scaling",
                                          "lambda-scaling", "pde", "hydro", "report"};
  return s;
}

/// Runs one subcommand; returns the process exit code.
inline int run_subcommand(const std::string& sub, const config& cfg, const std::filesystem::path& out,
                          std::uint64_t seed, bool dry_run, std::ostream& log, std::ostream& err) {
  try {
    if (sub == "report") {
      const auto rep = write_report(out);
      log << (rep["all_pass"].get<bool>() ? "all checks pass" : "some checks fail") << '\n';
      return 0;
    }
    if (const auto& fmts = cfg.strings("output", "formats", {"csv", "json"}); !fmts.empty())
      for (const auto& f : fmts) require(f == "csv" || f == "json", error_kind::invalid_spec, "unknown output format " + f);
    run_context ctx(sub, cfg, out, seed, dry_run, log);
    if (sub == "field") detail::run_field(ctx);
    else if (sub == "gap") detail::run_gap(ctx);
    else if (sub == "mpl") detail::run_mpl(ctx);
    else if (sub == "rs") detail::run_rs(ctx);
    else if (sub == "dcoef") detail::run_dcoef(ctx);
    else if (sub == "gk") detail::run_gk(ctx);
    else if (sub == "current-scaling") detail::run_current(ctx);
    else if (sub == "lambda-scaling") detail::run_lambda(ctx);
    else if (sub == "pde") detail::run_pde(ctx);
    else if (sub == "hydro") detail::run_hydro(ctx);
    else fail(error_kind::invalid_spec, "unknown subcommand " + sub);
    if (!dry_run) ctx.write_manifest_and_summary();
    return 0;
  } catch (const error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace disorder_hydro
