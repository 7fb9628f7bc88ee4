#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "csv.hpp"
#include "dcoef.hpp"
#include "error.hpp"
#include "lattice.hpp"

namespace disorder_hydro {

/// Per-axis D(m) lookups built from a table. Axes beyond the table reuse axis 0.
class diffusivity {
 public:
  diffusivity() = default;
  diffusivity(const diffusion_table& t, int dim) {
    const int have = t.dim();
    require(have >= 1, error_kind::invalid_spec, "empty diffusion table");
    for (int a = 0; a < dim; ++a) axes_.push_back(t.interpolant(a < have ? a : 0));
  }

  double operator()(int axis, double m) const { return axes_[axis](std::clamp(m, 0.0, 1.0)); }
  double max_value() const {
    double v = 0;
    for (const auto& p : axes_) v = std::max(v, p.max_value());
    return v;
  }

 private:
  std::vector<pchip> axes_;
};

struct pde_options {
  int dim = 1;
  std::int64_t n = 128;
  double T = 0.01;
  double dt = 0.0;       ///< 0 picks 0.9 of the stability bound
  double theta = 0.0;    ///< 0 explicit, 1 implicit (lagged-D Picard)
  std::size_t snapshots = 11;
  double picard_tol = 1e-10;
  int picard_max = 200;
};

struct trajectory {
  int dim = 1;
  std::int64_t n = 0;
  std::vector<double> times;
  std::vector<std::vector<double>> states;
  double dt = 0.0;
  std::size_t steps = 0;
  double max_mass_drift = 0.0;  ///< worst per-step relative change of total mass
  int max_picard = 0;

  const std::vector<double>& final_state() const { return states.back(); }
};

inline double stability_bound(std::int64_t n, int dim, double max_D) {
  const double h = 1.0 / static_cast<double>(n);
  return h * h / (2.0 * dim * max_D);
}

/// Cell-centred samples of m0 on the unit torus.
inline std::vector<double> sample_profile(const std::function<double(const std::vector<double>&)>& m0,
                                          int dim, std::int64_t n) {
  const box b(dim, n, true);
  std::vector<double> out(static_cast<std::size_t>(b.size()));
  std::vector<double> theta(dim);
  for (site_t s = 0; s < b.size(); ++s) {
    const auto c = b.coords(s);
    for (int a = 0; a < dim; ++a) theta[a] = (static_cast<double>(c[a]) + 0.5) / static_cast<double>(n);
    out[s] = m0(theta);
  }
  return out;
}

namespace detail {

inline double total(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s;
}

inline void explicit_step(const box& b, const diffusivity& D, const std::vector<double>& m, double r,
                          std::vector<double>& out) {
  out = m;
  for (site_t s = 0; s < b.size(); ++s)
    for (int a = 0; a < b.dim(); ++a) {
      const site_t t = b.neighbor(s, a, +1);
      const double flux = D(a, 0.5 * (m[s] + m[t])) * (m[t] - m[s]);
      out[s] += r * flux;
      out[t] -= r * flux;
    }
}

inline void implicit_step(const box& b, const diffusivity& D, const std::vector<double>& m, double r,
                          const pde_options& opt, std::vector<double>& out, int& picard) {
  const auto n = static_cast<Eigen::Index>(b.size());
  Eigen::Map<const Eigen::VectorXd> rhs(m.data(), n);
  Eigen::VectorXd cur = rhs;
  std::vector<Eigen::Triplet<double>> trip;
  for (picard = 1; picard <= opt.picard_max; ++picard) {
    trip.clear();
    for (site_t s = 0; s < b.size(); ++s) {
      trip.emplace_back(s, s, 1.0);
      for (int a = 0; a < b.dim(); ++a) {
        const site_t t = b.neighbor(s, a, +1);
        const double c = r * D(a, 0.5 * (cur[s] + cur[t]));
        trip.emplace_back(s, s, c);
        trip.emplace_back(t, t, c);
        trip.emplace_back(s, t, -c);
        trip.emplace_back(t, s, -c);
      }
    }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
    require(solver.info() == Eigen::Success, error_kind::non_convergence, "implicit step factorization failed");
    const Eigen::VectorXd next = solver.solve(rhs);
    const double change = (next - cur).lpNorm<Eigen::Infinity>();
    cur = next;
    if (change < opt.picard_tol) break;
  }
  require(picard <= opt.picard_max, error_kind::non_convergence, "Picard iteration did not converge");
  out.assign(cur.data(), cur.data() + n);
}

}  // namespace detail

/// Finite-volume solution of dm/dt = div(D(m) grad m) on the unit torus.
inline trajectory solve(const std::vector<double>& m0, const diffusivity& D, const pde_options& opt) {
  const box b(opt.dim, opt.n, true);
  require(static_cast<std::int64_t>(m0.size()) == b.size(), error_kind::invalid_spec,
          "initial profile has wrong size");
  require(opt.T >= 0 && opt.snapshots >= 1, error_kind::invalid_spec, "bad time horizon");
  require(opt.theta == 0.0 || opt.theta == 1.0, error_kind::invalid_spec, "theta must be 0 or 1");
  for (double v : m0) require(v >= 0 && v <= 1, error_kind::domain, "initial density outside [0,1]");
  const double h = 1.0 / static_cast<double>(opt.n);
  const double bound = stability_bound(opt.n, opt.dim, D.max_value());
  double dt = opt.dt > 0 ? opt.dt : 0.9 * bound;
  if (opt.theta == 0.0)
    require(dt <= bound * (1 + 1e-12), error_kind::domain, "time step violates the stability bound");

  trajectory out;
  out.dim = opt.dim;
  out.n = opt.n;
  std::vector<double> targets;
  for (std::size_t k = 0; k < opt.snapshots; ++k)
    targets.push_back(opt.snapshots == 1 ? opt.T : opt.T * static_cast<double>(k) / static_cast<double>(opt.snapshots - 1));
  const auto steps = static_cast<std::size_t>(std::ceil(opt.T / dt - 1e-9));
  dt = steps > 0 ? opt.T / static_cast<double>(steps) : 0.0;
  out.dt = dt;
  out.steps = steps;
  const double r = dt / (h * h);

  std::vector<double> m = m0, next;
  std::size_t target = 0;
  auto record = [&](double t) {
    while (target < targets.size() && targets[target] <= t + 1e-12 * std::max(1.0, opt.T)) {
      out.times.push_back(targets[target]);
      out.states.push_back(m);
      ++target;
    }
  };
  record(0.0);
  const double mass0 = detail::total(m);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double before = detail::total(m);
    if (opt.theta == 0.0) {
      detail::explicit_step(b, D, m, r, next);
    } else {
      int picard = 0;
      detail::implicit_step(b, D, m, r, opt, next, picard);
      out.max_picard = std::max(out.max_picard, picard);
    }
    m.swap(next);
    out.max_mass_drift = std::max(out.max_mass_drift, std::abs(detail::total(m) - before) / std::max(mass0, 1e-300));
    record(static_cast<double>(k) * dt);
  }
  record(opt.T);
  return out;
}

inline trajectory solve(const std::vector<double>& m0, const diffusion_table& table, const pde_options& opt) {
  return solve(m0, diffusivity(table, opt.dim), opt);
}

struct energy_result {
  double value = 0.0;
  bool clipped = false;
};

/// int_0^T int |grad m|^2 / (m(1-m)) over stored snapshots (trapezoid in time,
/// face differences in space, denominator clipped at 1e-8).
inline energy_result weak_energy(const trajectory& tr) {
  energy_result out;
  if (tr.states.empty()) return out;
  const box b(tr.dim, tr.n, true);
  const double h = 1.0 / static_cast<double>(tr.n);
  const double cell = std::pow(h, tr.dim);
  std::vector<double> inst;
  for (const auto& m : tr.states) {
    double s = 0;
    for (site_t x = 0; x < b.size(); ++x)
      for (int a = 0; a < tr.dim; ++a) {
        const site_t y = b.neighbor(x, a, +1);
        const double mf = 0.5 * (m[x] + m[y]);
        double den = mf * (1 - mf);
        if (den < 1e-8) {
          den = 1e-8;
          out.clipped = true;
        }
        const double g = (m[y] - m[x]) / h;
        s += g * g / den * cell;
      }
    inst.push_back(s);
  }
  for (std::size_t k = 1; k < inst.size(); ++k)
    out.value += 0.5 * (inst[k] + inst[k - 1]) * (tr.times[k] - tr.times[k - 1]);
  return out;
}

/// L1 distance on the unit torus between a coarse grid and a finer one of an
/// integer multiple resolution (fine cells are averaged onto the coarse ones).
inline double l1_distance(const std::vector<double>& coarse, std::int64_t nc, const std::vector<double>& fine,
                          std::int64_t nf, int dim) {
  require(nf % nc == 0, error_kind::invalid_spec, "grids are not nested");
  const std::int64_t k = nf / nc;
  const box bc(dim, nc, true), bf(dim, nf, true);
  std::vector<double> avg(coarse.size(), 0.0);
  const double w = 1.0 / std::pow(static_cast<double>(k), dim);
  for (site_t s = 0; s < bf.size(); ++s) {
    auto c = bf.coords(s);
    for (auto& v : c) v /= k;
    avg[bc.index(c)] += w * fine[s];
  }
  double d = 0;
  for (std::size_t i = 0; i < avg.size(); ++i) d += std::abs(avg[i] - coarse[i]);
  return d / static_cast<double>(coarse.size());
}

struct refinement_report {
  std::vector<std::int64_t> n;
  std::vector<double> distances;  ///< between consecutive grids at time T
  std::vector<double> ratios;
  bool monotone = true;
  double scheme_distance = 0.0;   ///< explicit vs implicit on the finest grid
};

inline refinement_report refinement_uniqueness_check(const std::function<double(const std::vector<double>&)>& m0,
                                                     const diffusion_table& table, double T,
                                                     std::vector<std::int64_t> n_list, int dim = 1) {
  require(n_list.size() >= 2, error_kind::invalid_spec, "need at least two grids");
  std::sort(n_list.begin(), n_list.end());
  const diffusivity D(table, dim);
  refinement_report rep;
  rep.n = n_list;
  std::vector<std::vector<double>> finals;
  for (auto n : n_list) {
    pde_options opt;
    opt.dim = dim;
    opt.n = n;
    opt.T = T;
    opt.snapshots = 1;
    finals.push_back(solve(sample_profile(m0, dim, n), D, opt).final_state());
  }
  for (std::size_t i = 0; i + 1 < n_list.size(); ++i)
    rep.distances.push_back(l1_distance(finals[i], n_list[i], finals[i + 1], n_list[i + 1], dim));
  for (std::size_t i = 0; i + 1 < rep.distances.size(); ++i) {
    rep.ratios.push_back(rep.distances[i] / std::max(rep.distances[i + 1], 1e-300));
    if (rep.distances[i + 1] > rep.distances[i]) rep.monotone = false;
  }
  pde_options imp;
  imp.dim = dim;
  imp.n = n_list.back();
  imp.T = T;
  imp.theta = 1.0;
  imp.snapshots = 1;
  const auto f = solve(sample_profile(m0, dim, imp.n), D, imp).final_state();
  rep.scheme_distance = l1_distance(finals.back(), imp.n, f, imp.n, dim);
  return rep;
}

inline std::vector<double> read_profile_csv(std::istream& is) {
  const auto t = csv::read(is);
  const int c = t.column("cell"), v = t.column("m0");
  require(c >= 0 && v >= 0, error_kind::io, "profile CSV needs columns cell,m0");
  std::vector<double> out(t.rows.size());
  for (const auto& row : t.rows) {
    const auto i = static_cast<std::size_t>(csv::to_double(row.at(c)));
    require(i < out.size(), error_kind::io, "profile cell index out of range");
    out[i] = csv::to_double(row.at(v));
  }
  return out;
}

inline void write_profile_csv(std::ostream& os, const std::vector<double>& m) {
  csv::writer w(os);
  w.row("cell", "m0");
  for (std::size_t i = 0; i < m.size(); ++i) w.row(i, m[i]);
}

inline void write_trajectory_csv(std::ostream& os, const trajectory& tr) {
  csv::writer w(os);
  std::vector<std::string> head{"t"};
  const std::size_t cells = tr.states.empty() ? 0 : tr.states.front().size();
  for (std::size_t i = 0; i < cells; ++i) head.push_back("cell" + std::to_string(i));
  w.row(head);
  for (std::size_t k = 0; k < tr.states.size(); ++k) {
    std::vector<std::string> r{csv::format(tr.times[k])};
    for (double v : tr.states[k]) r.push_back(csv::format(v));
    w.row(r);
  }
}

}  // namespace disorder_hydro
