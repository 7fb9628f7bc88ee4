#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "csv.hpp"
#include "error.hpp"
#include "field.hpp"
#include "gibbs.hpp"
#include "lattice.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace disorder_hydro {

using state_t = std::uint64_t;

enum class geometry { open_box, torus, complete };

/// Finite site set with an exchange bond list.
struct site_graph {
  std::int64_t n_sites = 0;
  std::vector<std::pair<site_t, site_t>> bonds;

  static site_graph lattice(int dim, std::int64_t side, geometry g) {
    site_graph s;
    const box b(dim, side, g == geometry::torus);
    s.n_sites = b.size();
    if (g == geometry::complete) {
      for (site_t x = 0; x < s.n_sites; ++x)
        for (site_t y = x + 1; y < s.n_sites; ++y) s.bonds.emplace_back(x, y);
    } else {
      s.bonds = b.bonds();
    }
    return s;
  }

  static site_graph chain(std::int64_t length, bool periodic = false) {
    return lattice(1, length, periodic ? geometry::torus : geometry::open_box);
  }

  bool connected() const {
    std::vector<site_t> parent(static_cast<std::size_t>(n_sites));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<site_t(site_t)> find = [&](site_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    std::int64_t components = n_sites;
    for (auto [x, y] : bonds) {
      const site_t a = find(x), b = find(y);
      if (a != b) {
        parent[a] = b;
        --components;
      }
    }
    return components <= 1;
  }
};

/// Exchange rate a_xy for moving the content of x to y and vice versa in
/// configuration `s`; zero when both sites agree.
inline double exchange_rate(std::span<const double> alpha, state_t s, site_t x, site_t y) {
  const int ex = static_cast<int>((s >> x) & 1u), ey = static_cast<int>((s >> y) & 1u);
  if (ex == ey) return 0.0;
  return 1.0 + std::exp(-(alpha[y] - alpha[x]) * (ey - ex));
}

inline state_t swap_bits(state_t s, site_t x, site_t y) {
  if (((s >> x) & 1u) != ((s >> y) & 1u)) s ^= (state_t{1} << x) | (state_t{1} << y);
  return s;
}

/// Reversible exchange generator restricted to the N-particle sector. Stores
/// rates (not multiplied by any time scale) in compressed rows.
class sector_generator {
 public:
  static constexpr std::size_t default_cap = 2'000'000;

  sector_generator(std::span<const double> alpha, site_graph graph, std::int64_t n_particles,
                   std::size_t cap = default_cap)
      : alpha_(alpha.begin(), alpha.end()), graph_(std::move(graph)), n_(n_particles) {
    const std::int64_t sites = graph_.n_sites;
    require(static_cast<std::int64_t>(alpha_.size()) == sites, error_kind::invalid_spec,
            "field does not cover the lattice");
    require(sites <= 62, error_kind::state_space_too_large, "too many sites for bit states");
    require(n_ >= 0 && n_ <= sites, error_kind::invalid_spec, "particle number out of range");
    const double count = binomial(sites, n_);
    require(count <= static_cast<double>(cap), error_kind::state_space_too_large,
            "sector has " + csv::format(count) + " states, cap is " + std::to_string(cap));
    if (n_ > 0 && n_ < sites)
      require(graph_.connected(), error_kind::disconnected_lattice, "lattice is not connected");

    states_.reserve(static_cast<std::size_t>(count));
    if (n_ == 0) {
      states_.push_back(0);
    } else {
      state_t s = (state_t{1} << n_) - 1;
      const state_t limit = state_t{1} << sites;
      while (s < limit) {
        states_.push_back(s);
        const state_t c = s & (~s + 1);
        const state_t r = s + c;
        s = (((r ^ s) >> 2) / c) | r;  // Gosper: next larger with equal popcount
      }
    }
    log_w_.resize(states_.size());
    for (std::size_t i = 0; i < states_.size(); ++i) {
      double lw = 0;
      for (site_t x = 0; x < sites; ++x)
        if ((states_[i] >> x) & 1u) lw += alpha_[x];
      log_w_[i] = lw;
    }
    row_ptr_.push_back(0);
    diag_.assign(states_.size(), 0.0);
    for (std::size_t i = 0; i < states_.size(); ++i) {
      for (auto [x, y] : graph_.bonds) {
        const double r = exchange_rate(alpha_, states_[i], x, y);
        if (r == 0) continue;
        col_.push_back(static_cast<std::int64_t>(index_of(swap_bits(states_[i], x, y))));
        val_.push_back(r);
        diag_[i] -= r;
      }
      row_ptr_.push_back(static_cast<std::int64_t>(col_.size()));
    }
    double lmax = *std::max_element(log_w_.begin(), log_w_.end());
    pi_.resize(states_.size());
    double z = 0;
    for (std::size_t i = 0; i < states_.size(); ++i) z += (pi_[i] = std::exp(log_w_[i] - lmax));
    for (auto& p : pi_) p /= z;
  }

  static double binomial(std::int64_t n, std::int64_t k) {
    if (k < 0 || k > n) return 0;
    double r = 1;
    for (std::int64_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return std::round(r);
  }

  std::size_t dim() const noexcept { return states_.size(); }
  std::int64_t particles() const noexcept { return n_; }
  const site_graph& graph() const noexcept { return graph_; }
  const std::vector<double>& alpha() const noexcept { return alpha_; }
  const std::vector<state_t>& states() const noexcept { return states_; }
  state_t state(std::size_t i) const noexcept { return states_[i]; }
  std::size_t index_of(state_t s) const {
    auto it = std::lower_bound(states_.begin(), states_.end(), s);
    require(it != states_.end() && *it == s, error_kind::invalid_spec, "state outside the sector");
    return static_cast<std::size_t>(it - states_.begin());
  }
  /// Unnormalized stationary weight exp(sum alpha_x eta_x).
  double weight(std::size_t i) const noexcept { return std::exp(log_w_[i]); }
  double log_weight(std::size_t i) const noexcept { return log_w_[i]; }
  /// Normalized stationary probabilities.
  const std::vector<double>& pi() const noexcept { return pi_; }

  template <class F>
  void for_each_edge(F&& f) const {
    for (std::size_t i = 0; i < dim(); ++i)
      for (auto k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        f(i, static_cast<std::size_t>(col_[k]), val_[k]);
  }

  double row_sum(std::size_t i) const noexcept {
    double s = diag_[i];
    for (auto k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) s += val_[k];
    return s;
  }

  /// (L f)(eta) = sum_eta' r(eta, eta') (f(eta') - f(eta)).
  Eigen::VectorXd apply(const Eigen::VectorXd& f) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < dim(); ++i) {
      double s = 0;
      for (auto k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) s += val_[k] * (f[col_[k]] - f[i]);
      out[i] = s;
    }
    return out;
  }

  /// Symmetrized generator S = P^{1/2} L P^{-1/2} applied to v.
  Eigen::VectorXd apply_symmetric(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < dim(); ++i) {
      double s = diag_[i] * v[i];
      for (auto k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        s += val_[k] * std::exp(0.5 * (log_w_[i] - log_w_[col_[k]])) * v[col_[k]];
      out[i] = s;
    }
    return out;
  }

  Eigen::MatrixXd dense_symmetric() const {
    const auto n = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < dim(); ++i) {
      m(i, i) = diag_[i];
      for (auto k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        m(i, col_[k]) = val_[k] * std::exp(0.5 * (log_w_[i] - log_w_[col_[k]]));
    }
    return 0.5 * (m + m.transpose());
  }

  /// Ground state of -S: sqrt of the normalized stationary law.
  Eigen::VectorXd ground_state() const {
    Eigen::VectorXd g(static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < dim(); ++i) g[i] = std::sqrt(pi_[i]);
    return g;
  }

  /// Observable vector f(eta) over the sector's states.
  template <class F>
  Eigen::VectorXd observable(F&& f) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < dim(); ++i) v[i] = f(states_[i]);
    return v;
  }

  double expect(const Eigen::VectorXd& f) const {
    double s = 0;
    for (std::size_t i = 0; i < dim(); ++i) s += pi_[i] * f[i];
    return s;
  }

  double inner(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const {
    double s = 0;
    for (std::size_t i = 0; i < dim(); ++i) s += pi_[i] * f[i] * g[i];
    return s;
  }

  /// <f, (-L) f> in the stationary inner product.
  double dirichlet_form(const Eigen::VectorXd& f) const { return -inner(f, apply(f)); }

  void write_coo(std::ostream& os) const {
    csv::writer w(os);
    w.row("row", "col", "value");
    for (std::size_t i = 0; i < dim(); ++i) {
      std::vector<std::pair<std::int64_t, double>> entries{{static_cast<std::int64_t>(i), diag_[i]}};
      for (auto k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) entries.emplace_back(col_[k], val_[k]);
      std::sort(entries.begin(), entries.end());
      for (auto [j, v] : entries) w.row(static_cast<long long>(i), static_cast<long long>(j), v);
    }
  }

 private:
  std::vector<double> alpha_;
  site_graph graph_;
  std::int64_t n_ = 0;
  std::vector<state_t> states_;
  std::vector<double> log_w_, pi_, diag_, val_;
  std::vector<std::int64_t> row_ptr_, col_;
};

inline sector_generator build_generator(std::span<const double> alpha, const site_graph& graph,
                                        std::int64_t n_particles,
                                        std::size_t cap = sector_generator::default_cap) {
  return sector_generator(alpha, graph, n_particles, cap);
}

/// max over edges |w r - w' r'| / max(1, w r).
inline double check_detailed_balance(const sector_generator& gen) {
  double worst = 0;
  gen.for_each_edge([&](std::size_t i, std::size_t j, double r) {
    const state_t si = gen.state(i), sj = gen.state(j);
    const state_t diff = si ^ sj;
    const auto x = static_cast<site_t>(std::countr_zero(diff));
    const auto y = static_cast<site_t>(63 - std::countl_zero(diff));
    const double back = exchange_rate(gen.alpha(), sj, x, y);
    const double f = gen.weight(i) * r, b = gen.weight(j) * back;
    worst = std::max(worst, std::abs(f - b) / std::max(1.0, f));
  });
  return worst;
}

namespace detail {

/// Smallest eigenvalue of a symmetric operator on the complement of `deflate`
/// (unit vector) by explicitly restarted Lanczos with full reorthogonalization.
inline double lanczos_smallest(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& op,
                               Eigen::Index n, const Eigen::VectorXd& deflate, double tol = 1e-10,
                               int krylov = 120, int max_restarts = 400) {
  rng gen(0x1a2c05);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = gen.normal();
  auto project = [&](Eigen::VectorXd& x) { x -= deflate.dot(x) * deflate; };
  project(v);
  v.normalize();
  const int m = static_cast<int>(std::min<Eigen::Index>(krylov, n - 1));
  double theta = 0;
  for (int restart = 0; restart < max_restarts; ++restart) {
    Eigen::MatrixXd q(n, m);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(m), b = Eigen::VectorXd::Zero(m);
    q.col(0) = v;
    int used = m;
    for (int j = 0; j < m; ++j) {
      Eigen::VectorXd w = op(q.col(j));
      a[j] = q.col(j).dot(w);
      for (int pass = 0; pass < 2; ++pass) {
        project(w);
        w -= q.leftCols(j + 1) * (q.leftCols(j + 1).transpose() * w);
      }
      if (j + 1 == m) break;
      b[j] = w.norm();
      if (b[j] < 1e-14) {
        used = j + 1;
        break;
      }
      q.col(j + 1) = w / b[j];
    }
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(used, used);
    for (int j = 0; j < used; ++j) {
      t(j, j) = a[j];
      if (j + 1 < used) t(j, j + 1) = t(j + 1, j) = b[j];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    theta = es.eigenvalues()[0];
    v = q.leftCols(used) * es.eigenvectors().col(0);
    project(v);
    v.normalize();
    const double res = (op(v) - theta * v).norm();
    if (res <= tol * std::max(1.0, std::abs(theta))) return theta;
  }
  fail(error_kind::non_convergence, "Lanczos did not converge");
}

}  // namespace detail

/// Smallest nonzero eigenvalue of -L (dense below `dense_limit` states).
inline double spectral_gap(const sector_generator& gen, std::size_t dense_limit = 4000) {
  require(gen.dim() >= 2, error_kind::invalid_spec, "single-state sector has no gap");
  if (gen.dim() < dense_limit) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-gen.dense_symmetric(),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues()[1];
  }
  const Eigen::VectorXd g = gen.ground_state().normalized();
  return detail::lanczos_smallest([&](const Eigen::VectorXd& x) { return Eigen::VectorXd(-gen.apply_symmetric(x)); },
                                  static_cast<Eigen::Index>(gen.dim()), g);
}

struct gap_sample {
  std::int64_t L = 0;
  std::uint64_t seed = 0;
  double gap = 0.0;
  double gap_L2 = 0.0;
};

struct gap_level {
  std::int64_t L = 0;
  double mean_gap = 0.0;
  double stderr_ = 0.0;
  double min_gap_L2 = 0.0;
  double max_gap_L2 = 0.0;
};

struct gap_study {
  std::vector<gap_sample> samples;
  std::vector<gap_level> levels;
  linear_fit fit;  ///< log mean gap vs log L
  double slope_lo = 0.0, slope_hi = 0.0;  ///< slope +- 2 standard errors
};

/// Open boxes of side L with N = round(m L^d) particles, field drawn from
/// `spec` (side replaced by L) for each disorder sample.
inline gap_study gap_scaling_study(const field_spec& spec, const std::vector<std::int64_t>& L_list,
                                   double m, std::size_t n_samples,
                                   std::size_t cap = sector_generator::default_cap) {
  gap_study out;
  std::vector<double> ls, gs;
  for (std::int64_t L : L_list) {
    const site_graph g = site_graph::lattice(spec.dim, L, geometry::open_box);
    const auto n = static_cast<std::int64_t>(std::llround(m * static_cast<double>(g.n_sites)));
    std::vector<gap_sample> level(n_samples);
    parallel_for(n_samples, [&](std::size_t i) {
      const std::uint64_t seed = hash_key(spec.seed, {0x9a9, static_cast<std::uint64_t>(L), i});
      const field f = gen_field(spec.with_side(L).with_seed(seed));
      const sector_generator gen(f.values(), g, n, cap);
      const double gap = spectral_gap(gen);
      level[i] = {L, seed, gap, gap * static_cast<double>(L * L)};
    });
    running_stats st;
    gap_level lv{L, 0, 0, 1e300, 0};
    for (const auto& s : level) {
      st.add(s.gap);
      lv.min_gap_L2 = std::min(lv.min_gap_L2, s.gap_L2);
      lv.max_gap_L2 = std::max(lv.max_gap_L2, s.gap_L2);
      out.samples.push_back(s);
    }
    lv.mean_gap = st.mean();
    lv.stderr_ = st.stderr_of_mean();
    out.levels.push_back(lv);
    ls.push_back(static_cast<double>(L));
    gs.push_back(lv.mean_gap);
  }
  out.fit = fit_loglog(ls, gs);
  out.slope_lo = out.fit.slope - 2 * out.fit.slope_stderr;
  out.slope_hi = out.fit.slope + 2 * out.fit.slope_stderr;
  return out;
}

/// Matrix of the form f -> sum_eta pi(eta) (f(T eta) - f(eta))^2 for a
/// transposition T of two sites.
inline Eigen::MatrixXd swap_form(const sector_generator& gen, site_t x, site_t y) {
  const auto n = static_cast<Eigen::Index>(gen.dim());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < gen.dim(); ++i) {
    const state_t t = swap_bits(gen.state(i), x, y);
    if (t == gen.state(i)) continue;
    const auto j = static_cast<Eigen::Index>(gen.index_of(t));
    const double p = gen.pi()[i];
    m(i, i) += p;
    m(j, j) += p;
    m(i, j) -= p;
    m(j, i) -= p;
  }
  return m;
}

/// max_f A(f) / B(f) over f outside the null space of B.
inline double max_generalized_quotient(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                       double rel_tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b);
  const auto& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (top == 0) return 0.0;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev[i] > rel_tol * top) keep.push_back(i);
  if (keep.empty()) return 0.0;
  Eigen::MatrixXd q(b.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k)
    q.col(static_cast<Eigen::Index>(k)) = es.eigenvectors().col(keep[k]) / std::sqrt(ev[keep[k]]);
  const Eigen::MatrixXd c = q.transpose() * a * q;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> cs(0.5 * (c + c.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return cs.eigenvalues().maxCoeff();
}

struct moving_particle_result {
  double quotient = 0.0;         ///< max A / sum rho^{-1} B_x
  double unweighted = 0.0;       ///< max A / sum B_x
  double lemma52_bound = 0.0;    ///< e^{13 B} k
  double max_abs_alpha = 0.0;
};

/// Sharpness of the moving-particle inequality on an open chain of length L
/// with N particles, endpoints 0 and k-1, bond weights rho (k-1 entries).
inline moving_particle_result moving_particle_sharpness(std::span<const double> alpha, std::int64_t L,
                                                        std::int64_t n_particles, std::int64_t k,
                                                        std::span<const double> rho,
                                                        std::size_t cap = 5000) {
  require(k >= 2 && k <= L, error_kind::invalid_spec, "need 2 <= k <= L");
  require(static_cast<std::int64_t>(rho.size()) == k - 1, error_kind::invalid_spec,
          "need k-1 weights");
  double total = 0;
  for (double r : rho) {
    require(r > 0, error_kind::invalid_spec, "weights must be positive");
    total += r;
  }
  require(std::abs(total - 1.0) < 1e-12, error_kind::invalid_spec, "weights must sum to one");
  const sector_generator gen(alpha, site_graph::chain(L), n_particles, cap);
  const Eigen::MatrixXd a = swap_form(gen, 0, k - 1);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  Eigen::MatrixXd plain = b;
  for (std::int64_t x = 0; x + 1 < k; ++x) {
    const Eigen::MatrixXd bx = swap_form(gen, x, x + 1);
    b += bx / rho[x];
    plain += bx;
  }
  moving_particle_result r;
  r.quotient = max_generalized_quotient(a, b);
  r.unweighted = max_generalized_quotient(a, plain);
  for (double v : alpha) r.max_abs_alpha = std::max(r.max_abs_alpha, std::abs(v));
  r.lemma52_bound = std::exp(13.0 * r.max_abs_alpha) * static_cast<double>(k);
  return r;
}

struct resolvent_result {
  double value = 0.0;        ///< <V, (-L)^{-1} V>
  double certificate = 0.0;  ///< sup_f 2<V,f> - <f,(-L)f> by steepest ascent
  double relative_gap = 0.0;
  int cg_iterations = 0;
  int ascent_iterations = 0;
};

/// <V, (-L)^{-1} V> in the stationary inner product. Conjugate gradients on
/// the mean-zero subspace, plus an independent variational certificate.
inline resolvent_result resolvent_variance(const sector_generator& gen, Eigen::VectorXd v,
                                           double tol = 1e-12, bool certify = true) {
  const double mean = gen.expect(v);
  const double second = gen.inner(v, v);
  require(mean * mean <= 1e-8 * second + 1e-300, error_kind::non_mean_zero,
          "observable is not mean zero in the sector");
  v.array() -= mean;
  resolvent_result out;
  if (gen.inner(v, v) == 0) return out;

  auto neg_l = [&](const Eigen::VectorXd& f) { return Eigen::VectorXd(-gen.apply(f)); };
  auto center = [&](Eigen::VectorXd& f) { f.array() -= gen.expect(f); };

  Eigen::VectorXd u = Eigen::VectorXd::Zero(v.size()), r = v, p = r;
  double rr = gen.inner(r, r);
  const double target = tol * tol * gen.inner(v, v);
  const int max_iter = static_cast<int>(std::max<std::size_t>(1000, 20 * gen.dim()));
  int it = 0;
  for (; it < max_iter && rr > target; ++it) {
    Eigen::VectorXd ap = neg_l(p);
    const double alpha = rr / gen.inner(p, ap);
    u += alpha * p;
    r -= alpha * ap;
    center(r);
    const double rr_new = gen.inner(r, r);
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  require(rr <= target * 1e4, error_kind::non_convergence, "resolvent CG did not converge");
  center(u);
  out.value = gen.inner(v, u);
  out.cg_iterations = it;

  if (certify) {
    // Steepest ascent with exact line search on phi(f) = 2<V,f> - <f,(-L)f>.
    Eigen::VectorXd f = Eigen::VectorXd::Zero(v.size());
    double phi = 0;
    int k = 0;
    for (; k < 200000; ++k) {
      Eigen::VectorXd g = v - neg_l(f);
      center(g);
      const double gg = gen.inner(g, g);
      if (gg <= 1e-20 * gen.inner(v, v)) break;
      const double curv = gen.inner(g, neg_l(g));
      const double t = gg / curv;
      f += t * g;
      phi += t * gg;  // exact increase for the optimal step
      if (k % 64 == 0) {
        phi = 2 * gen.inner(v, f) - gen.inner(f, neg_l(f));
        if (std::abs(out.value - phi) <= 1e-4 * std::abs(out.value)) break;
      }
    }
    out.certificate = 2 * gen.inner(v, f) - gen.inner(f, neg_l(f));
    out.ascent_iterations = k;
    out.relative_gap = std::abs(out.value - out.certificate) / std::max(1e-300, std::abs(out.value));
  }
  return out;
}

struct rs_result {
  double alpha = 0.0;              ///< ||(H0+1/4)^{-1/2} V (H0+1/4)^{-1/2}||
  double ground_unperturbed = 0.0; ///< E_0
  std::vector<double> terms;       ///< E_1, E_2, ...
  std::vector<double> partial_sums;
  std::vector<double> term_bounds; ///< 5 (5 alpha / 2)^n
  double exact = 0.0;              ///< smallest eigenvalue of H0 + V
  double decay_ratio = 0.0;        ///< max_n (|E_n| / |E_2|)^{1/(n-2)}
  bool guaranteed = false;         ///< 5 alpha / 2 < 1 and alpha <= 2/5
  double final_error() const { return partial_sums.empty() ? 0 : std::abs(partial_sums.back() - exact); }
};

/// Rayleigh-Schrodinger series for the lowest eigenvalue of H0 + V, where H0
/// is symmetric with a simple lowest eigenvalue.
inline rs_result rs_series(const Eigen::MatrixXd& h0, const Eigen::MatrixXd& v, int n_terms) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h0);
  const auto& ev = es.eigenvalues();
  const Eigen::MatrixXd& q = es.eigenvectors();
  require(ev.size() >= 2 && ev[1] - ev[0] > 1e-9, error_kind::invalid_spec,
          "unperturbed ground state is not simple");
  const auto n = ev.size();
  rs_result out;
  out.ground_unperturbed = ev[0];

  Eigen::VectorXd shifted = (ev.array() - ev[0] + 0.25).rsqrt();
  const Eigen::MatrixXd half = q * shifted.asDiagonal() * q.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> vs(half * v * half, Eigen::EigenvaluesOnly);
  out.alpha = vs.eigenvalues().cwiseAbs().maxCoeff();
  out.guaranteed = out.alpha <= 0.4;

  Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 1; i < n; ++i) inv[i] = 1.0 / (ev[i] - ev[0]);
  auto reduced = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(q * inv.asDiagonal() * (q.transpose() * x));
  };
  const Eigen::VectorXd psi0 = q.col(0);
  std::vector<Eigen::VectorXd> psi{psi0};
  double sum = ev[0];
  for (int k = 1; k <= n_terms; ++k) {
    const Eigen::VectorXd vpsi = v * psi[k - 1];
    const double ek = psi0.dot(vpsi);
    out.terms.push_back(ek);
    sum += ek;
    out.partial_sums.push_back(sum);
    out.term_bounds.push_back(5 * std::pow(2.5 * out.alpha, k));
    Eigen::VectorXd rhs = -vpsi;
    for (int j = 1; j < k; ++j) rhs += out.terms[j - 1] * psi[k - j];
    psi.push_back(reduced(rhs));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> hs(h0 + v, Eigen::EigenvaluesOnly);
  out.exact = hs.eigenvalues()[0];
  if (out.terms.size() >= 3 && out.terms[1] != 0) {
    const double e2 = std::abs(out.terms[1]);
    for (std::size_t i = 2; i < out.terms.size(); ++i) {
      const double ratio = std::abs(out.terms[i]) / e2;
      if (ratio < 1e-300) continue;
      // skip terms already at rounding level
      if (std::abs(out.terms[i]) < 1e-15 * std::abs(out.exact) + 1e-300) continue;
      out.decay_ratio = std::max(out.decay_ratio, std::pow(ratio, 1.0 / static_cast<double>(i - 1)));
    }
  }
  return out;
}

struct rs_check {
  rs_result series;
  double epsilon = 0.0;
  double scale = 0.0;          ///< K^2
  double coupling = 0.0;       ///< epsilon K^{d+2}
  double second_order_expected = 0.0;  ///< -eps^2 K^{2(d+2)} <W,(-K^2 L)^{-1} W>
};

/// H = -K^2 L + eps K^{d+2} W on the symmetrized sector. If eps <= 0 it is
/// chosen so that 5 alpha / 2 = target.
inline rs_check rs_series_check(const sector_generator& gen, const Eigen::VectorXd& w, double eps,
                                double K, int d, int n_terms, double target = 0.5) {
  require(gen.dim() >= 2, error_kind::invalid_spec, "need at least two states");
  const Eigen::MatrixXd h0 = -(K * K) * gen.dense_symmetric();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h0, Eigen::EigenvaluesOnly);
  require(es.eigenvalues()[1] >= 1 - 1e-12, error_kind::domain, "scaled gap is below one");
  const double kd2 = std::pow(K, d + 2);
  Eigen::MatrixXd vdiag = Eigen::MatrixXd(w.asDiagonal()) * kd2;
  rs_check out;
  if (eps <= 0) {
    const rs_result probe = rs_series(h0, vdiag, 1);
    require(probe.alpha > 0, error_kind::invalid_spec, "potential vanishes");
    eps = target / (2.5 * probe.alpha);
  }
  out.epsilon = eps;
  out.scale = K * K;
  out.coupling = eps * kd2;
  out.series = rs_series(h0, eps * vdiag, n_terms);
  if (gen.inner(w, w) > 0) {
    const auto rv = resolvent_variance(gen, w, 1e-13, false);
    out.second_order_expected = -eps * eps * kd2 * kd2 * rv.value / (K * K);
  }
  return out;
}

}  // namespace disorder_hydro
