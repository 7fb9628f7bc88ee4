#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csv.hpp"
#include "error.hpp"
#include "exact_gen.hpp"
#include "field.hpp"
#include "gibbs.hpp"
#include "lattice.hpp"
#include "parallel.hpp"
#include "renorm_current.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace disorder_hydro {

enum class feature_kind { constant, exp_plus, exp_minus, difference };

inline feature_kind parse_feature(const std::string& s) {
  if (s == "const") return feature_kind::constant;
  if (s == "exp+") return feature_kind::exp_plus;
  if (s == "exp-") return feature_kind::exp_minus;
  if (s == "diff") return feature_kind::difference;
  fail(error_kind::invalid_spec, "unknown basis feature '" + s + "'");
}

inline std::string to_string(feature_kind f) {
  switch (f) {
    case feature_kind::constant: return "const";
    case feature_kind::exp_plus: return "exp+";
    case feature_kind::exp_minus: return "exp-";
    case feature_kind::difference: return "diff";
  }
  return "?";
}

/// Local functions g(eta, alpha) = feature(alpha_W) * prod_{a in A} (eta_a - p_a)
/// over nonempty A in the window W = {0..window-1}^d with |A| <= max_order,
/// p_a = logistic(alpha_a + lambda(m)). Features: 1, e^{alpha_y}, e^{-alpha_y},
/// alpha_y - alpha_z (y < z in W).
struct local_basis {
  int dim = 1;
  int window = 2;
  int max_order = 2;
  std::vector<feature_kind> features{feature_kind::constant};

  static local_basis empty(int dim = 1) { return {dim, 0, 0, {}}; }

  std::vector<coord_t> window_sites() const {
    std::vector<coord_t> out;
    if (window <= 0) return out;
    const box b(dim, window, false);
    for (site_t s = 0; s < b.size(); ++s) out.push_back(b.coords(s));
    return out;
  }
};

struct basis_term {
  std::vector<int> subset;    ///< indices into window_sites()
  feature_kind feature = feature_kind::constant;
  int y = -1, z = -1;         ///< feature sites
};

inline std::vector<basis_term> enumerate_terms(const local_basis& basis) {
  std::vector<basis_term> out;
  const auto w = static_cast<int>(basis.window_sites().size());
  require(w <= 16, error_kind::invalid_spec, "basis window too large");
  std::vector<std::vector<int>> subsets;
  for (std::uint32_t mask = 1; mask < (1u << w); ++mask) {
    if (std::popcount(mask) > basis.max_order) continue;
    std::vector<int> s;
    for (int i = 0; i < w; ++i)
      if (mask >> i & 1u) s.push_back(i);
    subsets.push_back(s);
  }
  std::sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  for (const auto& s : subsets)
    for (auto f : basis.features) {
      switch (f) {
        case feature_kind::constant: out.push_back({s, f}); break;
        case feature_kind::exp_plus:
        case feature_kind::exp_minus:
          for (int y = 0; y < w; ++y) out.push_back({s, f, y});
          break;
        case feature_kind::difference:
          for (int y = 0; y < w; ++y)
            for (int z = y + 1; z < w; ++z) out.push_back({s, f, y, z});
          break;
      }
    }
  return out;
}

enum class field_average { automatic, periodic_exact, iid_exact, monte_carlo };

inline std::string to_string(field_average a) {
  switch (a) {
    case field_average::automatic: return "automatic";
    case field_average::periodic_exact: return "periodic-exact";
    case field_average::iid_exact: return "iid-exact";
    case field_average::monte_carlo: return "monte-carlo";
  }
  return "?";
}

inline field_average parse_field_average(const std::string& s) {
  if (s == "automatic") return field_average::automatic;
  if (s == "periodic-exact") return field_average::periodic_exact;
  if (s == "iid-exact") return field_average::iid_exact;
  if (s == "monte-carlo") return field_average::monte_carlo;
  fail(error_kind::invalid_spec, "unknown field averaging mode '" + s + "'");
}

struct sigma_estimate {
  double sigma = 0.0;     ///< (beta, sigma beta) upper bound
  double stderr_ = 0.0;   ///< jackknife over field batches (0 for exact modes)
  double g0_value = 0.0;  ///< value with g = 0
  std::size_t basis_size = 0;
  std::size_t field_samples = 0;
  field_average mode = field_average::automatic;
};

namespace detail {

struct quad_accumulator {
  Eigen::MatrixXd G;
  Eigen::VectorXd b;
  double c0 = 0.0;
  double weight = 0.0;

  explicit quad_accumulator(Eigen::Index n = 0)
      : G(Eigen::MatrixXd::Zero(n, n)), b(Eigen::VectorXd::Zero(n)) {}

  void add(const quad_accumulator& o) {
    G += o.G;
    b += o.b;
    c0 += o.c0;
    weight += o.weight;
  }

  double minimum() const {
    const double scale = weight > 0 ? weight : 1.0;
    if (G.rows() == 0) return c0 / scale;
    Eigen::MatrixXd g = G.selfadjointView<Eigen::Lower>();
    g /= scale;
    const Eigen::VectorXd bb = b / scale;
    const double tr = g.trace();
    g.diagonal().array() += 1e-12 * (tr > 0 ? tr / static_cast<double>(g.rows()) : 1.0);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(g);
    require(ldlt.info() == Eigen::Success, error_kind::non_convergence, "Gram matrix solve failed");
    const Eigen::VectorXd c = ldlt.solve(bb);
    return c0 / scale - bb.dot(c);
  }
};

struct variational_geometry {
  std::vector<coord_t> region;                 // union of all per-axis regions
  std::vector<std::vector<int>> axis_sites;    // region indices enumerated per axis
  std::vector<int> origin_index, e_index;      // per axis: region index of 0 and e
  std::vector<std::vector<std::vector<int>>> shift_sites;  // [axis][shift][window site] -> region index
};

inline variational_geometry make_geometry(const local_basis& basis, int dim) {
  variational_geometry g;
  std::map<coord_t, int> index;
  auto intern = [&](const coord_t& c) {
    auto it = index.find(c);
    if (it != index.end()) return it->second;
    const int k = static_cast<int>(g.region.size());
    g.region.push_back(c);
    index.emplace(c, k);
    return k;
  };
  const auto w = basis.window_sites();
  for (int e = 0; e < dim; ++e) {
    coord_t zero(dim, 0), unit(dim, 0);
    unit[e] = 1;
    std::vector<coord_t> shifts;
    for (const auto& y : w) {
      coord_t a(dim), b(dim);
      for (int i = 0; i < dim; ++i) {
        a[i] = -y[i];
        b[i] = unit[i] - y[i];
      }
      shifts.push_back(a);
      shifts.push_back(b);
    }
    std::sort(shifts.begin(), shifts.end());
    shifts.erase(std::unique(shifts.begin(), shifts.end()), shifts.end());
    std::vector<int> sites{intern(zero), intern(unit)};
    g.origin_index.push_back(sites[0]);
    g.e_index.push_back(sites[1]);
    std::vector<std::vector<int>> per_shift;
    for (const auto& x : shifts) {
      std::vector<int> ids;
      for (const auto& y : w) {
        coord_t c(dim);
        for (int i = 0; i < dim; ++i) c[i] = x[i] + y[i];
        ids.push_back(intern(c));
        sites.push_back(ids.back());
      }
      per_shift.push_back(ids);
    }
    std::sort(sites.begin(), sites.end());
    sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
    require(sites.size() <= 22, error_kind::invalid_spec, "variational window overflow");
    g.axis_sites.push_back(sites);
    g.shift_sites.push_back(per_shift);
  }
  return g;
}

/// Adds the contribution of one field sample (alpha over the region).
inline void accumulate_sample(quad_accumulator& acc, const variational_geometry& geo,
                              const std::vector<basis_term>& terms, std::span<const double> alpha,
                              double lambda, std::span<const double> beta, double weight) {
  const auto n_terms = static_cast<Eigen::Index>(terms.size());
  const int dim = static_cast<int>(geo.axis_sites.size());
  std::vector<double> p(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) p[i] = logistic(alpha[i] + lambda);
  Eigen::VectorXd xi(n_terms);
  Eigen::MatrixXd local_g = Eigen::MatrixXd::Zero(n_terms, n_terms);
  Eigen::VectorXd local_b = Eigen::VectorXd::Zero(n_terms);
  double local_c = 0;
  for (int e = 0; e < dim; ++e) {
    const auto& sites = geo.axis_sites[e];
    const auto& shifts = geo.shift_sites[e];
    // feature values per (shift, term)
    std::vector<std::vector<double>> feat(shifts.size(), std::vector<double>(terms.size()));
    for (std::size_t x = 0; x < shifts.size(); ++x)
      for (std::size_t j = 0; j < terms.size(); ++j) {
        const auto& t = terms[j];
        switch (t.feature) {
          case feature_kind::constant: feat[x][j] = 1.0; break;
          case feature_kind::exp_plus: feat[x][j] = std::exp(alpha[shifts[x][t.y]]); break;
          case feature_kind::exp_minus: feat[x][j] = std::exp(-alpha[shifts[x][t.y]]); break;
          case feature_kind::difference:
            feat[x][j] = alpha[shifts[x][t.y]] - alpha[shifts[x][t.z]];
            break;
        }
      }
    const auto n_sites = sites.size();
    std::vector<int> pos_in_axis(alpha.size(), -1);
    for (std::size_t k = 0; k < n_sites; ++k) pos_in_axis[sites[k]] = static_cast<int>(k);
    const int k0 = pos_in_axis[geo.origin_index[e]], ke = pos_in_axis[geo.e_index[e]];
    std::vector<double> eta(alpha.size(), 0.0), swapped(alpha.size(), 0.0);
    for (std::uint32_t mask = 0; mask < (1u << n_sites); ++mask) {
      const int e0 = mask >> k0 & 1u, ee = mask >> ke & 1u;
      if (e0 == ee) continue;  // exchange is trivial
      double w = weight;
      for (std::size_t k = 0; k < n_sites; ++k) {
        const int s = sites[k];
        const int v = mask >> k & 1u;
        w *= v ? p[s] : 1 - p[s];
        eta[s] = v - p[s];
      }
      swapped = eta;
      swapped[geo.origin_index[e]] = ee - p[geo.origin_index[e]];
      swapped[geo.e_index[e]] = e0 - p[geo.e_index[e]];
      xi.setZero();
      for (std::size_t x = 0; x < shifts.size(); ++x)
        for (Eigen::Index j = 0; j < n_terms; ++j) {
          double a = 1, b = 1;
          for (int idx : terms[j].subset) {
            a *= swapped[shifts[x][idx]];
            b *= eta[shifts[x][idx]];
          }
          if (a != b) xi[j] += feat[x][j] * (a - b);
        }
      const double t = ee - e0;
      local_g.selfadjointView<Eigen::Lower>().rankUpdate(xi, w);
      local_b += (w * beta[e] * t) * xi;
      local_c += w * beta[e] * beta[e] * t * t;
    }
  }
  acc.G += local_g;
  acc.b += local_b;
  acc.c0 += local_c;
  acc.weight += weight;
}

inline std::int64_t positive_mod(std::int64_t a, std::int64_t p) {
  const std::int64_t r = a % p;
  return r < 0 ? r + p : r;
}

}  // namespace detail

/// Upper bound on (beta, sigma(m) beta) from the variational formula
/// restricted to the span of `basis`.
inline sigma_estimate sigma_variational(const field_spec& spec, double m, const local_basis& basis,
                                        const std::vector<double>& beta,
                                        field_average mode = field_average::automatic,
                                        std::size_t n_field_samples = 2000,
                                        std::uint64_t seed = 0) {
  validate(spec);
  require(m > 0 && m < 1, error_kind::domain, "density must lie in (0,1)");
  require(static_cast<int>(beta.size()) == spec.dim, error_kind::invalid_spec,
          "direction has wrong dimension");
  local_basis b = basis;
  b.dim = spec.dim;
  const auto terms = enumerate_terms(b);
  const auto geo = detail::make_geometry(b, spec.dim);
  const double lambda = lambda_of_m(site_law::of(spec), m).lambda;
  const auto n_region = geo.region.size();

  if (mode == field_average::automatic) {
    if (spec.law == field_law::periodic)
      mode = field_average::periodic_exact;
    else if (spec.law == field_law::iid_two_point && n_region <= 12)
      mode = field_average::iid_exact;
    else
      mode = field_average::monte_carlo;
  }

  sigma_estimate out;
  out.basis_size = terms.size();
  out.mode = mode;
  const auto nt = static_cast<Eigen::Index>(terms.size());
  std::vector<double> alpha(n_region);

  if (mode == field_average::periodic_exact || mode == field_average::iid_exact) {
    detail::quad_accumulator acc(nt);
    if (mode == field_average::periodic_exact) {
      require(spec.law == field_law::periodic, error_kind::invalid_spec,
              "periodic averaging needs a periodic law");
      const auto period = static_cast<std::int64_t>(spec.pattern.size());
      for (std::int64_t s = 0; s < period; ++s) {
        for (std::size_t i = 0; i < n_region; ++i) {
          std::int64_t sum = s;
          for (auto c : geo.region[i]) sum += c;
          alpha[i] = spec.pattern[static_cast<std::size_t>(detail::positive_mod(sum, period))];
        }
        detail::accumulate_sample(acc, geo, terms, alpha, lambda, beta, 1.0 / period);
      }
      out.field_samples = static_cast<std::size_t>(period);
    } else {
      require(spec.law == field_law::iid_two_point, error_kind::invalid_spec,
              "exact iid averaging needs the two-point law");
      require(n_region <= 16, error_kind::invalid_spec, "region too large for exact averaging");
      const std::uint32_t count = 1u << n_region;
      std::vector<detail::quad_accumulator> parts(count, detail::quad_accumulator(0));
      parallel_for(count, [&](std::size_t mask) {
        std::vector<double> a(n_region);
        for (std::size_t i = 0; i < n_region; ++i) a[i] = (mask >> i & 1u) ? spec.bound : -spec.bound;
        parts[mask] = detail::quad_accumulator(nt);
        detail::accumulate_sample(parts[mask], geo, terms, a, lambda, beta, 1.0 / count);
      });
      for (const auto& p : parts) acc.add(p);
      out.field_samples = count;
    }
    out.sigma = 2 * acc.minimum();
    out.g0_value = 2 * acc.c0 / acc.weight;
    return out;
  }

  // Monte Carlo over field windows: a torus realization read at a random origin.
  require(n_field_samples >= 20, error_kind::insufficient_samples, "need at least 20 field samples");
  std::int64_t extent = 0;
  for (const auto& c : geo.region)
    for (auto v : c) extent = std::max<std::int64_t>(extent, std::abs(v) + 1);
  std::int64_t period = 1;
  if (spec.law == field_law::periodic) period = static_cast<std::int64_t>(spec.pattern.size());
  if (spec.law == field_law::block_pattern) period = spec.block;
  const std::int64_t side = period * ((4 * extent + period - 1) / period);
  const std::size_t batches = 10;
  std::vector<detail::quad_accumulator> parts(n_field_samples, detail::quad_accumulator(0));
  parallel_for(n_field_samples, [&](std::size_t i) {
    const field f = gen_field(spec.with_side(side).with_seed(hash_key(spec.seed ^ seed, {0x5e, i})));
    rng g(hash_key(seed, {0x5f, i}));
    coord_t origin(spec.dim);
    for (auto& o : origin) o = static_cast<std::int64_t>(g.below(static_cast<std::uint64_t>(side)));
    std::vector<double> a(n_region);
    for (std::size_t k = 0; k < n_region; ++k) {
      coord_t c = geo.region[k];
      for (int d = 0; d < spec.dim; ++d) c[d] += origin[d];
      a[k] = f.at(c);
    }
    parts[i] = detail::quad_accumulator(nt);
    detail::accumulate_sample(parts[i], geo, terms, a, lambda, beta, 1.0);
  });
  std::vector<detail::quad_accumulator> batch(batches, detail::quad_accumulator(nt));
  for (std::size_t i = 0; i < n_field_samples; ++i) batch[i % batches].add(parts[i]);
  detail::quad_accumulator total(nt);
  for (const auto& bt : batch) total.add(bt);
  out.sigma = 2 * total.minimum();
  out.g0_value = 2 * total.c0 / total.weight;
  out.field_samples = n_field_samples;
  std::vector<double> loo;
  for (std::size_t k = 0; k < batches; ++k) {
    detail::quad_accumulator rest(nt);
    for (std::size_t j = 0; j < batches; ++j)
      if (j != k) rest.add(batch[j]);
    loo.push_back(2 * rest.minimum());
  }
  double mean = 0;
  for (double v : loo) mean += v / batches;
  double var = 0;
  for (double v : loo) var += (v - mean) * (v - mean);
  out.stderr_ = std::sqrt(var * (batches - 1.0) / batches);
  return out;
}

struct homogenization_result {
  double D = 0.0;
  double minimum = 0.0;  ///< Av sum_e c (beta_e + grad U)^2 at the corrector
  double z = 0.0;
  int iterations = 0;
};

/// (beta, D(0) beta) = 2 z^{-1} min_U Av_x sum_e c_{x,x+e} (beta_e + U_{x+e} - U_x)^2
/// on the torus of the field, c = e^{alpha_x} + e^{alpha_{x+e}}.
inline homogenization_result D0_homogenization(const field& f, const std::vector<double>& beta,
                                               double tol = 1e-12) {
  const box& b = f.lattice();
  const int d = b.dim();
  require(static_cast<int>(beta.size()) == d, error_kind::invalid_spec, "direction has wrong dimension");
  const auto n = static_cast<std::size_t>(b.size());
  std::vector<double> cond(n * d);
  std::vector<site_t> next(n * d);
  for (site_t s = 0; s < b.size(); ++s)
    for (int a = 0; a < d; ++a) {
      next[s * d + a] = b.neighbor(s, a, +1);
      cond[s * d + a] = std::exp(f[s]) + std::exp(f[next[s * d + a]]);
    }
  auto apply = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t s = 0; s < n; ++s)
      for (int a = 0; a < d; ++a) {
        const auto t = static_cast<std::size_t>(next[s * d + a]);
        const double flux = cond[s * d + a] * (u[s] - u[t]);
        out[s] += flux;
        out[t] -= flux;
      }
    return out;
  };
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < n; ++s)
    for (int a = 0; a < d; ++a) {
      const auto t = static_cast<std::size_t>(next[s * d + a]);
      rhs[s] += beta[a] * cond[s * d + a];
      rhs[t] -= beta[a] * cond[s * d + a];
    }
  homogenization_result out;
  if (d == 1) {
    // constant flux along the ring: the minimum is the harmonic mean of c
    double inv = 0, z = 0;
    for (std::size_t s = 0; s < n; ++s) {
      inv += 1 / cond[s];
      z += std::exp(f[s]);
    }
    out.minimum = beta[0] * beta[0] * static_cast<double>(n) / inv;
    out.z = z / static_cast<double>(n);
    out.D = 2 * out.minimum / out.z;
    return out;
  }
  // Stationarity: A U = rhs with (AU)_x = sum c (U_x - U_y); solve on mean-zero vectors.
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd r = rhs;
  r.array() -= r.mean();
  Eigen::VectorXd p = r;
  double rr = r.squaredNorm();
  const double target = tol * tol * std::max(1e-300, rhs.squaredNorm());
  const int max_iter = static_cast<int>(10 * n + 100);
  int it = 0;
  for (; it < max_iter && rr > target; ++it) {
    const Eigen::VectorXd ap = apply(p);
    const double step = rr / p.dot(ap);
    u += step * p;
    r -= step * ap;
    r.array() -= r.mean();
    const double rn = r.squaredNorm();
    p = r + (rn / rr) * p;
    rr = rn;
  }
  require(rr <= target * 1e6 || rhs.squaredNorm() == 0, error_kind::non_convergence,
          "corrector CG did not converge");
  double value = 0, z = 0;
  for (std::size_t s = 0; s < n; ++s) {
    z += std::exp(f[s]);
    for (int a = 0; a < d; ++a) {
      const auto t = static_cast<std::size_t>(next[s * d + a]);
      const double g = beta[a] + u[t] - u[s];
      value += cond[s * d + a] * g * g;
    }
  }
  out.minimum = value / static_cast<double>(n);
  out.z = z / static_cast<double>(n);
  out.D = 2 * out.minimum / out.z;
  out.iterations = it;
  return out;
}

inline homogenization_result D1_dual(const field& f, const std::vector<double>& beta) {
  return D0_homogenization(f.negated(), beta);
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
class pchip {
 public:
  pchip() = default;
  pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    require(n >= 2 && y_.size() == n, error_kind::invalid_spec, "interpolant needs two or more points");
    for (std::size_t i = 1; i < n; ++i)
      require(x_[i] > x_[i - 1], error_kind::invalid_spec, "interpolation grid must increase");
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      delta[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    d_.assign(n, 0.0);
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
      return;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (delta[i - 1] * delta[i] <= 0) continue;
      const double w1 = 2 * h[i] + h[i - 1], w2 = h[i] + 2 * h[i - 1];
      d_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
    auto edge = [](double h0, double h1, double d0, double d1) {
      double d = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
      if (d * d0 <= 0) return 0.0;
      if (d0 * d1 <= 0 && std::abs(d) > 3 * std::abs(d0)) return 3 * d0;
      return d;
    };
    d_[0] = edge(h[0], h[1], delta[0], delta[1]);
    d_[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }

  double operator()(double x) const { return eval(x, false); }
  double derivative(double x) const { return eval(x, true); }
  double lo() const { return x_.front(); }
  double hi() const { return x_.back(); }
  double max_value() const { return *std::max_element(y_.begin(), y_.end()); }
  double min_value() const { return *std::min_element(y_.begin(), y_.end()); }
  double max_abs_derivative() const {
    double m = 0;
    for (std::size_t i = 0; i + 1 < x_.size(); ++i)
      for (int k = 0; k <= 8; ++k)
        m = std::max(m, std::abs(derivative(x_[i] + (x_[i + 1] - x_[i]) * k / 8.0)));
    return m;
  }

 private:
  double eval(double x, bool deriv) const {
    require(x >= x_.front() - 1e-12 && x <= x_.back() + 1e-12, error_kind::domain,
            "interpolation outside the table");
    x = std::clamp(x, x_.front(), x_.back());
    std::size_t i = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin());
    i = std::min(std::max<std::size_t>(i, 1), x_.size() - 1) - 1;
    const double h = x_[i + 1] - x_[i], t = (x - x_[i]) / h;
    const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
    const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
    if (!deriv) return h00 * y_[i] + h10 * h * d_[i] + h01 * y_[i + 1] + h11 * h * d_[i + 1];
    const double d00 = 6 * t * t - 6 * t, d10 = 3 * t * t - 4 * t + 1;
    const double d01 = -6 * t * t + 6 * t, d11 = 3 * t * t - 2 * t;
    return (d00 * y_[i] + d01 * y_[i + 1]) / h + d10 * d_[i] + d11 * d_[i + 1];
  }

  std::vector<double> x_, y_, d_;
};

struct diffusion_row {
  double m = 0.0;
  int axis = 0;
  double sigma = 0.0;
  double lambda_prime = 0.0;
  double D = 0.0;
  double stderr_ = 0.0;
  std::string estimator;

  double nu() const { return m > 0 && m < 1 ? sigma / (m * (1 - m)) : 0.0; }
};

/// Sampled m -> D(m) per axis, sorted by (axis, m).
struct diffusion_table {
  std::vector<diffusion_row> rows;

  static diffusion_table constant(double D, int dim = 1, std::size_t points = 11) {
    diffusion_table t;
    for (int a = 0; a < dim; ++a)
      for (std::size_t i = 0; i < points; ++i) {
        const double m = static_cast<double>(i) / static_cast<double>(points - 1);
        const double lp = (m > 0 && m < 1) ? 1 / (m * (1 - m)) : std::numeric_limits<double>::infinity();
        t.rows.push_back({m, a, (m > 0 && m < 1) ? D / lp : 0.0, lp, D, 0.0, "constant"});
      }
    return t;
  }

  int dim() const {
    int d = 0;
    for (const auto& r : rows) d = std::max(d, r.axis + 1);
    return d;
  }

  std::vector<diffusion_row> axis_rows(int axis) const {
    std::vector<diffusion_row> out;
    for (const auto& r : rows)
      if (r.axis == axis) out.push_back(r);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.m < b.m; });
    return out;
  }

  pchip interpolant(int axis) const {
    std::vector<double> x, y;
    for (const auto& r : axis_rows(axis)) {
      if (!x.empty() && r.m == x.back()) continue;
      x.push_back(r.m);
      y.push_back(r.D);
    }
    require(!x.empty() && x.front() <= 1e-12 && x.back() >= 1 - 1e-12, error_kind::invalid_spec,
            "diffusion table does not cover [0,1]");
    return pchip(x, y);
  }

  void write_csv(std::ostream& os) const {
    csv::writer w(os);
    w.row("m", "axis", "sigma", "lambda_prime", "D", "stderr", "estimator");
    for (const auto& r : rows) w.row(r.m, r.axis, r.sigma, r.lambda_prime, r.D, r.stderr_, r.estimator);
  }

  static diffusion_table read_csv(std::istream& is) {
    const auto t = csv::read(is);
    const char* names[] = {"m", "axis", "sigma", "lambda_prime", "D", "stderr", "estimator"};
    int col[7];
    for (int i = 0; i < 7; ++i) {
      col[i] = t.column(names[i]);
      require(col[i] >= 0, error_kind::invalid_spec, std::string("diffusion table lacks column ") + names[i]);
    }
    diffusion_table out;
    for (const auto& row : t.rows) {
      diffusion_row r;
      r.m = csv::to_double(row.at(col[0]));
      r.axis = static_cast<int>(csv::to_double(row.at(col[1])));
      r.sigma = csv::to_double(row.at(col[2]));
      r.lambda_prime = csv::to_double(row.at(col[3]));
      r.D = csv::to_double(row.at(col[4]));
      r.stderr_ = csv::to_double(row.at(col[5]));
      r.estimator = row.at(col[6]);
      require(r.m >= 0 && r.m <= 1 && r.D > 0, error_kind::invalid_spec, "invalid diffusion table row");
      out.rows.push_back(r);
    }
    return out;
  }
};

struct table_options {
  local_basis basis;
  field_average mode = field_average::automatic;
  std::size_t field_samples = 2000;
  std::int64_t homogenization_side = 0;  ///< torus side for D(0), D(1); 0 picks a default
  std::uint64_t seed = 0;
};

/// D(m) = sigma(m) lambda'(m) on the interior grid, homogenization at 0 and 1.
inline diffusion_table D_of_m_table(const field_spec& spec, const std::vector<double>& m_grid,
                                    const table_options& opt) {
  const site_law law = site_law::of(spec);
  diffusion_table t;
  for (int axis = 0; axis < spec.dim; ++axis) {
    std::vector<double> beta(spec.dim, 0.0);
    beta[axis] = 1.0;
    for (double m : m_grid) {
      diffusion_row r;
      r.m = m;
      r.axis = axis;
      if (m <= 0 || m >= 1) {
        std::int64_t side = opt.homogenization_side;
        if (side <= 0) {
          if (spec.law == field_law::periodic)
            side = static_cast<std::int64_t>(spec.pattern.size()) * (spec.dim == 1 ? 16 : 4);
          else
            side = spec.dim == 1 ? 1 << 16 : 128;
        }
        const field f = gen_field(spec.with_side(side));
        const auto h = m <= 0 ? D0_homogenization(f, beta) : D1_dual(f, beta);
        r.D = h.D;
        r.sigma = 0;
        r.lambda_prime = std::numeric_limits<double>::infinity();
        r.estimator = "homogenization";
      } else {
        const auto s = sigma_variational(spec, m, opt.basis, beta, opt.mode, opt.field_samples, opt.seed);
        r.sigma = s.sigma;
        r.lambda_prime = lambda_prime(law, m);
        r.D = r.sigma * r.lambda_prime;
        r.stderr_ = s.stderr_ * r.lambda_prime;
        r.estimator = "variational";
      }
      t.rows.push_back(r);
    }
  }
  return t;
}

struct finite_volume_result {
  double value = 0.0;   ///< K^{-d} <V_K, (-L_K)^{-1} V_K>, averaged over samples
  double stderr_ = 0.0;
  std::size_t samples = 0;
};

/// V_K = beta sum_x tau_x W_ell over the shifts with both blocks inside an open
/// chain of K sites, canonical sector N = m K.
inline double finite_volume_value(std::span<const double> alpha, std::int64_t ell, std::int64_t K,
                                  double m, double beta) {
  require(ell >= 1 && 2 * ell <= K, error_kind::invalid_spec, "need 2 ell <= K");
  const double n_real = m * static_cast<double>(K);
  const auto n = static_cast<std::int64_t>(std::llround(n_real));
  require(std::abs(n_real - static_cast<double>(n)) < 1e-9, error_kind::invalid_spec, "m K must be an integer");
  if (beta == 0) return 0.0;
  const sector_generator gen(alpha, site_graph::chain(K), n);
  const box b(1, K, false);
  std::vector<block_pair> pairs;
  for (std::int64_t x = 0; x + 2 * ell <= K; ++x) pairs.push_back(block_pair::standard(b, {x}, ell, 0));
  const Eigen::VectorXd v = gen.observable([&](state_t s) {
    configuration c(static_cast<std::size_t>(K));
    for (std::int64_t i = 0; i < K; ++i) c.occ[i] = (s >> i) & 1u;
    double total = 0;
    for (const auto& p : pairs) total += avg_current(c, alpha, p);
    return beta * total / static_cast<double>(ell);
  });
  return resolvent_variance(gen, v, 1e-12, false).value / static_cast<double>(K);
}

inline finite_volume_result finite_volume_sigma_inverse(const field_spec& spec, std::int64_t ell,
                                                        std::int64_t K, double m, double beta,
                                                        std::size_t n_samples) {
  require(spec.dim == 1, error_kind::invalid_spec, "finite-volume resolvent is one-dimensional");
  std::vector<double> vals(n_samples);
  parallel_for(n_samples, [&](std::size_t i) {
    const field f = gen_field(spec.with_side(K).with_seed(hash_key(spec.seed, {0xf0, i})));
    vals[i] = finite_volume_value(f.values(), ell, K, m, beta);
  });
  const auto e = mean_and_stderr(vals);
  return {e.value, e.stderr_, n_samples};
}

struct regularity_report {
  double C_hat = 0.0;
  std::vector<std::pair<double, double>> endpoint_gaps;  ///< (m, |D(m) - D(0)|) for m <= 1/2
};

/// C_hat = max over grid pairs of |D(x) - D(y)|^2 max(x(1-x), y(1-y)) / |x - y|.
inline regularity_report regularity_diagnostics(const diffusion_table& t, int axis = 0) {
  const auto rows = t.axis_rows(axis);
  regularity_report out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const double x = rows[i].m, y = rows[j].m;
      if (x == y) continue;
      const double dd = rows[i].D - rows[j].D;
      const double w = std::max(x * (1 - x), y * (1 - y));
      out.C_hat = std::max(out.C_hat, dd * dd * w / std::abs(x - y));
    }
  if (!rows.empty() && rows.front().m == 0)
    for (const auto& r : rows)
      if (r.m > 0 && r.m <= 0.5) out.endpoint_gaps.emplace_back(r.m, std::abs(r.D - rows.front().D));
  return out;
}

}  // namespace disorder_hydro
