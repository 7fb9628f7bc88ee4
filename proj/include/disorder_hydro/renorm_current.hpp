#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "field.hpp"
#include "gibbs.hpp"
#include "lattice.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace disorder_hydro {

inline double xi(std::uint8_t eta, double alpha) { return eta ? 0.0 : std::exp(alpha); }
inline double zeta(std::uint8_t eta, double alpha) { return eta ? std::exp(-alpha) : 0.0; }

inline std::vector<std::pair<double, double>> xi_zeta(const configuration& c,
                                                      std::span<const double> alpha) {
  std::vector<std::pair<double, double>> out(c.size());
  for (std::size_t x = 0; x < c.size(); ++x) out[x] = {xi(c[x], alpha[x]), zeta(c[x], alpha[x])};
  return out;
}

/// w_xy = a_xy(eta) (eta_y - eta_x) for any pair of sites.
inline double pair_current(const configuration& c, std::span<const double> alpha, site_t x, site_t y) {
  const int ex = c[x], ey = c[y];
  if (ex == ey) return 0.0;
  return (1.0 + std::exp(-(alpha[y] - alpha[x]) * (ey - ex))) * (ey - ex);
}

/// Same current through the xi/zeta decomposition.
inline double pair_current_decomposed(const configuration& c, std::span<const double> alpha,
                                      site_t x, site_t y) {
  return (c[y] - c[x]) + xi(c[x], alpha[x]) * zeta(c[y], alpha[y]) -
         zeta(c[x], alpha[x]) * xi(c[y], alpha[y]);
}

struct block_pair {
  std::vector<site_t> first, second;
  int axis = 0;

  /// Lambda1 = origin + [0, ell)^d, Lambda2 = Lambda1 shifted by ell along axis.
  static block_pair standard(const box& b, const coord_t& origin, std::int64_t ell, int axis) {
    require(ell >= 1 && (2 * ell <= b.side()), error_kind::invalid_spec, "blocks exceed the lattice");
    block_pair p;
    p.axis = axis;
    const box cube(b.dim(), ell, false);
    for (site_t s = 0; s < cube.size(); ++s) {
      coord_t x = cube.coords(s);
      for (int i = 0; i < b.dim(); ++i) x[i] += origin[i];
      p.first.push_back(b.index(x));
      x[axis] += ell;
      p.second.push_back(b.index(x));
    }
    return p;
  }

  std::vector<site_t> sites() const {
    std::vector<site_t> all(first);
    all.insert(all.end(), second.begin(), second.end());
    return all;
  }
};

struct block_averages {
  double eta = 0, xi = 0, zeta = 0;
};

inline block_averages averages(const configuration& c, std::span<const double> alpha,
                               const std::vector<site_t>& sites) {
  block_averages a;
  for (site_t x : sites) {
    a.eta += c[x];
    a.xi += xi(c[x], alpha[x]);
    a.zeta += zeta(c[x], alpha[x]);
  }
  const double n = static_cast<double>(sites.size());
  a.eta /= n;
  a.xi /= n;
  a.zeta /= n;
  return a;
}

/// Av_{x in Lambda1, y in Lambda2} w_xy via block averages.
inline double avg_current(const configuration& c, std::span<const double> alpha, const block_pair& p) {
  const auto a = averages(c, alpha, p.first), b = averages(c, alpha, p.second);
  return b.eta - a.eta + a.xi * b.zeta - a.zeta * b.xi;
}

inline double avg_current_bruteforce(const configuration& c, std::span<const double> alpha,
                                     const block_pair& p) {
  double s = 0;
  for (site_t x : p.first)
    for (site_t y : p.second) s += pair_current(c, alpha, x, y);
  return s / static_cast<double>(p.first.size() * p.second.size());
}

/// W_ell^e: standard-layout block current divided by ell.
inline double long_jump_current(const configuration& c, const field& f, std::int64_t ell, int axis,
                                const coord_t& origin = {}) {
  const box& b = f.lattice();
  const coord_t o = origin.empty() ? coord_t(b.dim(), 0) : origin;
  return avg_current(c, f.values(), block_pair::standard(b, o, ell, axis)) / static_cast<double>(ell);
}

struct flagged_value {
  double value = 0.0;
  bool degenerate = false;  ///< a block was empty or full; excluded from statistics
};

/// gamma_Lambda = 2m(1-m) lambda_hat + m e^{-lambda} (zeta - <zeta>) - (1-m) e^{lambda} (xi - <xi>)
inline flagged_value chemical_counterterm(const configuration& c, std::span<const double> alpha,
                                          const std::vector<site_t>& sites, double m, double lambda_m) {
  const auto a = averages(c, alpha, sites);
  if (a.eta <= 0 || a.eta >= 1) return {0.0, true};
  std::vector<double> local;
  local.reserve(sites.size());
  for (site_t x : sites) local.push_back(alpha[x]);
  const double lh = empirical_lambda(local, a.eta).lambda;
  const double xi_mean = std::exp(-lh) * a.eta;
  const double zeta_mean = std::exp(lh) * (1 - a.eta);
  return {2 * m * (1 - m) * lh + m * std::exp(-lambda_m) * (a.zeta - zeta_mean) -
              (1 - m) * std::exp(lambda_m) * (a.xi - xi_mean),
          false};
}

/// w_hat = w_bar - (gamma_{Lambda2} - gamma_{Lambda1}); lambda_m is the
/// field-law chemical potential at the conditioned density m.
inline flagged_value corrected_current(const configuration& c, std::span<const double> alpha,
                                       const block_pair& p, double m, double lambda_m) {
  require(m > 0 && m < 1, error_kind::domain, "density must lie in (0,1)");
  const auto g1 = chemical_counterterm(c, alpha, p.first, m, lambda_m);
  const auto g2 = chemical_counterterm(c, alpha, p.second, m, lambda_m);
  if (g1.degenerate || g2.degenerate) return {0.0, true};
  return {avg_current(c, alpha, p) - (g2.value - g1.value), false};
}

/// Weights r_1..r_{2M} with (1/M) Av_i Av_j sum_{k=i}^{j-1} a_k = Av_k r_k a_k,
/// i over {1..M}, j over {M+1..2M}; obtained by inserting unit vectors.
inline std::vector<double> renorm_weights(std::int64_t M) {
  require(M >= 1, error_kind::invalid_spec, "M must be >= 1");
  std::vector<double> r(static_cast<std::size_t>(2 * M), 0.0);
  const double mm = static_cast<double>(M);
  for (std::int64_t k = 1; k <= 2 * M; ++k) {
    std::int64_t pairs = 0;
    for (std::int64_t i = 1; i <= M; ++i)
      for (std::int64_t j = M + 1; j <= 2 * M; ++j)
        if (i <= k && k <= j - 1) ++pairs;
    const double lhs = static_cast<double>(pairs) / (mm * mm * mm);
    r[k - 1] = lhs * 2.0 * mm;  // Av over 2M entries
  }
  return r;
}

/// Av_x r_x (A_{x+1} - A_x) - M^{-1} (Av_{2nd half} A - Av_{1st half} A) for
/// A of length 2M + 1 (the last entry only meets the zero weight r_{2M}).
inline double telescoping_residual(const std::vector<double>& r, const std::vector<double>& A) {
  const auto n = r.size();
  const auto M = n / 2;
  require(A.size() == n + 1, error_kind::invalid_spec, "A must have 2M+1 entries");
  double lhs = 0;
  for (std::size_t x = 0; x < n; ++x) lhs += r[x] * (A[x + 1] - A[x]);
  lhs /= static_cast<double>(n);
  double a1 = 0, a2 = 0;
  for (std::size_t x = 0; x < M; ++x) {
    a1 += A[x];
    a2 += A[x + M];
  }
  const double rhs = (a2 / M - a1 / M) / static_cast<double>(M);
  return lhs - rhs;
}

/// Theta_K^e = nu(eta_bar) W_K^e with nu(m) = sigma(m) / (m(1-m)); the density
/// is taken over both blocks. Empty or full pairs give 0.
inline flagged_value theta(const configuration& c, const field& f, std::int64_t K, int axis,
                           const std::function<double(double)>& sigma, const coord_t& origin = {}) {
  const box& b = f.lattice();
  const coord_t o = origin.empty() ? coord_t(b.dim(), 0) : origin;
  const auto p = block_pair::standard(b, o, K, axis);
  const double eta = averages(c, f.values(), p.sites()).eta;
  const double w = avg_current(c, f.values(), p) / static_cast<double>(K);
  if (eta <= 0 || eta >= 1) return {0.0, w != 0};
  return {sigma(eta) / (eta * (1 - eta)) * w, false};
}

struct current_scaling_point {
  std::int64_t ell = 0;
  double mean_sq = 0.0;
  double stderr_ = 0.0;
  double mean = 0.0;
  double mean_stderr = 0.0;
  std::size_t n = 0;
  std::size_t degenerate = 0;
};

struct current_scaling_study {
  std::vector<current_scaling_point> points;
  linear_fit fit;
};

/// E[w_hat^2 | eta_bar_Omega = m] with the field drawn outside and the
/// configuration from the canonical measure on Omega = Lambda1 u Lambda2.
inline current_scaling_study current_scaling(const field_spec& spec, double m,
                                             const std::vector<std::int64_t>& ells,
                                             std::size_t n_samples, int burn_in = 50) {
  require(m > 0 && m < 1, error_kind::domain, "density must lie in (0,1)");
  const double lambda_m = lambda_of_m(site_law::of(spec), m).lambda;
  current_scaling_study out;
  std::vector<double> xs, ys;
  for (std::int64_t ell : ells) {
    const box b(spec.dim, 2 * ell, false);
    const auto pair = block_pair::standard(b, coord_t(spec.dim, 0), ell, 0);
    const auto omega = pair.sites();
    const double n_particles_real = m * static_cast<double>(omega.size());
    const auto n_particles = static_cast<std::int64_t>(std::llround(n_particles_real));
    require(std::abs(n_particles_real - static_cast<double>(n_particles)) < 1e-9,
            error_kind::invalid_spec, "m |Omega| must be an integer");
    std::vector<flagged_value> vals(n_samples);
    parallel_for(n_samples, [&](std::size_t i) {
      const field f = gen_field(spec.with_side(2 * ell).with_seed(
          hash_key(spec.seed, {0x91, static_cast<std::uint64_t>(ell), i})));
      std::vector<double> a_omega;
      for (site_t s : omega) a_omega.push_back(f[s]);
      rng gen(hash_key(spec.seed, {0x92, static_cast<std::uint64_t>(ell), i}));
      const configuration local = sample_canonical(a_omega, n_particles, gen, burn_in);
      configuration full(static_cast<std::size_t>(b.size()));
      for (std::size_t k = 0; k < omega.size(); ++k) full.occ[omega[k]] = local[k];
      vals[i] = corrected_current(full, f.values(), pair, m, lambda_m);
    });
    running_stats sq, mean;
    std::size_t degenerate = 0;
    for (const auto& v : vals) {
      if (v.degenerate) {
        ++degenerate;
        continue;
      }
      sq.add(v.value * v.value);
      mean.add(v.value);
    }
    require(sq.count() >= 2, error_kind::insufficient_samples, "all samples degenerate");
    out.points.push_back({ell, sq.mean(), sq.stderr_of_mean(), mean.mean(), mean.stderr_of_mean(),
                          sq.count(), degenerate});
    xs.push_back(static_cast<double>(ell));
    ys.push_back(sq.mean());
  }
  out.fit = fit_loglog(xs, ys);
  return out;
}

inline void write_current_scaling_csv(std::ostream& os, const current_scaling_study& st) {
  csv::writer w(os);
  w.row("ell", "mean_sq", "stderr", "n");
  for (const auto& p : st.points)
    w.row(static_cast<long long>(p.ell), p.mean_sq, p.stderr_, static_cast<unsigned long long>(p.n));
}

}  // namespace disorder_hydro
