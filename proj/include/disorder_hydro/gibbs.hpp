#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace disorder_hydro {

/// Logistic occupation probability e^x / (1 + e^x), overflow safe.
inline double logistic(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double m) { return std::log(m / (1.0 - m)); }

namespace detail {
/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1 - z * z) * dp * dp);
  }
  return {x, w};
}
}  // namespace detail

/// Marginal law of a single field value, used for the annealed expectations
/// E[h(alpha_0)]. Either a finite distribution (exact sums) or the uniform
/// law on [-B, B] (composite Gauss-Legendre quadrature).
class site_law {
 public:
  enum class kind { discrete, uniform };

  static site_law discrete(std::vector<double> values, std::vector<double> probs,
                           std::string mode = "exact-sum") {
    require(!values.empty() && values.size() == probs.size(), error_kind::invalid_spec,
            "discrete law needs matching values and probabilities");
    site_law l;
    l.kind_ = kind::discrete;
    l.values_ = std::move(values);
    l.probs_ = std::move(probs);
    double total = 0;
    for (double p : l.probs_) total += p;
    for (auto& p : l.probs_) p /= total;
    for (double v : l.values_) l.bound_ = std::max(l.bound_, std::abs(v));
    l.mode_ = std::move(mode);
    return l;
  }

  static site_law constant(double c) { return discrete({c}, {1.0}); }
  static site_law two_point(double b) { return discrete({-b, b}, {0.5, 0.5}); }

  static site_law uniform(double bound, int panels = 64) {
    require(bound > 0, error_kind::invalid_spec, "uniform law needs B > 0");
    site_law l;
    l.kind_ = kind::uniform;
    l.bound_ = bound;
    l.mode_ = "quadrature";
    auto [x, w] = detail::gauss_legendre(8);
    const double h = 2.0 * bound / panels;
    for (int k = 0; k < panels; ++k) {
      const double mid = -bound + (k + 0.5) * h;
      for (std::size_t i = 0; i < x.size(); ++i) {
        l.values_.push_back(mid + 0.5 * h * x[i]);
        l.probs_.push_back(0.5 * h * w[i] / (2.0 * bound));
      }
    }
    return l;
  }

  /// Equal-weight average over the given values (a field sample or a block).
  static site_law empirical(std::span<const double> values) {
    return discrete(std::vector<double>(values.begin(), values.end()),
                    std::vector<double>(values.size(), 1.0), "empirical");
  }

  /// Site marginal of the stationary law described by `spec`.
  static site_law of(const field_spec& spec) {
    validate(spec);
    switch (spec.law) {
      case field_law::iid_uniform: return uniform(spec.bound);
      case field_law::iid_two_point: return two_point(spec.bound);
      case field_law::periodic:
        return discrete(spec.pattern, std::vector<double>(spec.pattern.size(), 1.0));
      case field_law::block_pattern: {
        std::vector<double> v;
        for (const auto& p : spec.patterns) v.insert(v.end(), p.begin(), p.end());
        return discrete(v, std::vector<double>(v.size(), 1.0));
      }
    }
    return constant(0);
  }

  site_law negated() const {
    site_law l = *this;
    for (auto& v : l.values_) v = -v;
    return l;
  }

  template <class F>
  double expect(F&& f) const {
    double s = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) s += probs_[i] * f(values_[i]);
    return s;
  }

  double bound() const noexcept { return bound_; }
  kind law_kind() const noexcept { return kind_; }
  const std::string& mode() const noexcept { return mode_; }
  const std::vector<double>& values() const noexcept { return values_; }
  const std::vector<double>& probs() const noexcept { return probs_; }

 private:
  kind kind_ = kind::discrete;
  std::vector<double> values_, probs_;
  double bound_ = 0.0;
  std::string mode_;
};

struct lambda_solve {
  double m = 0.0;
  double lambda = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Root of E[logistic(alpha + lambda)] = m by bisection. The map is strictly
/// increasing and the root lies within B of logit(m).
inline lambda_solve lambda_of_m(const site_law& law, double m, double tol = 1e-12) {
  require(m > 0 && m < 1, error_kind::domain, "density must lie in (0,1)");
  auto mean = [&](double lam) { return law.expect([&](double a) { return logistic(a + lam); }); };
  const double centre = logit(m);
  double lo = centre - law.bound() - 1e-9, hi = centre + law.bound() + 1e-9;
  lambda_solve out{m, centre, 0.0, 0};
  for (; out.iterations < 400; ++out.iterations) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double r = mean(mid) - m;
    if (r == 0) {
      lo = hi = mid;
      break;
    }
    (r < 0 ? lo : hi) = mid;
  }
  out.lambda = 0.5 * (lo + hi);
  out.residual = mean(out.lambda) - m;
  require(std::abs(out.residual) <= tol, error_kind::non_convergence,
          "chemical potential bisection did not reach tolerance");
  return out;
}

/// lambda'(m) = 1 / E[p(1-p)] at lambda(m).
inline double lambda_prime(const site_law& law, double m) {
  const double lam = lambda_of_m(law, m).lambda;
  const double v = law.expect([&](double a) {
    const double p = logistic(a + lam);
    return p * (1 - p);
  });
  return 1.0 / v;
}

/// Empirical chemical potential of a block: Av_x logistic(lambda + alpha_x) = m.
inline lambda_solve empirical_lambda(std::span<const double> block_alpha, double m,
                                     double tol = 1e-12) {
  require(!block_alpha.empty(), error_kind::invalid_spec, "empty block");
  return lambda_of_m(site_law::empirical(block_alpha), m, tol);
}

/// Occupation vector over a finite site list.
struct configuration {
  std::vector<std::uint8_t> occ;
  std::int64_t particles = 0;

  configuration() = default;
  explicit configuration(std::size_t n) : occ(n, 0) {}
  explicit configuration(std::vector<std::uint8_t> o) : occ(std::move(o)) { recount(); }

  std::size_t size() const noexcept { return occ.size(); }
  std::uint8_t operator[](std::size_t i) const noexcept { return occ[i]; }
  void recount() noexcept {
    particles = 0;
    for (auto v : occ) particles += v;
  }
  configuration flipped() const {
    configuration c(occ);
    for (auto& v : c.occ) v = 1 - v;
    c.recount();
    return c;
  }
  double density() const noexcept {
    return occ.empty() ? 0.0 : static_cast<double>(particles) / static_cast<double>(occ.size());
  }
};

inline configuration sample_grand(std::span<const double> alpha, double lambda, rng& gen) {
  configuration c(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) c.occ[i] = gen.bernoulli(logistic(alpha[i] + lambda));
  c.recount();
  return c;
}

/// Canonical measure with exactly n_particles particles and weights
/// exp(sum alpha_x eta_x). Grand-canonical start at the block's empirical
/// chemical potential, count fixed by uniform additions/removals, then
/// Metropolis pair exchanges for `burn_in` sweeps of |Lambda| attempts.
inline configuration sample_canonical(std::span<const double> alpha, std::int64_t n_particles,
                                      rng& gen, int burn_in = 50) {
  const auto n = static_cast<std::int64_t>(alpha.size());
  require(n_particles >= 0 && n_particles <= n, error_kind::invalid_spec,
          "particle number out of range");
  configuration c(alpha.size());
  if (n_particles == 0) return c;
  if (n_particles == n) {
    std::fill(c.occ.begin(), c.occ.end(), 1);
    c.particles = n;
    return c;
  }
  const double lam = empirical_lambda(alpha, static_cast<double>(n_particles) / n).lambda;
  c = sample_grand(alpha, lam, gen);

  std::vector<std::int64_t> full, empty;
  std::vector<std::int64_t> pos(alpha.size());
  auto rebuild = [&] {
    full.clear();
    empty.clear();
    for (std::int64_t i = 0; i < n; ++i) {
      auto& list = c.occ[i] ? full : empty;
      pos[i] = static_cast<std::int64_t>(list.size());
      list.push_back(i);
    }
  };
  rebuild();
  auto move = [&](std::vector<std::int64_t>& from, std::vector<std::int64_t>& to, std::int64_t k) {
    const std::int64_t site = from[k];
    from[k] = from.back();
    pos[from[k]] = k;
    from.pop_back();
    pos[site] = static_cast<std::int64_t>(to.size());
    to.push_back(site);
    c.occ[site] ^= 1;
  };
  while (static_cast<std::int64_t>(full.size()) > n_particles)
    move(full, empty, static_cast<std::int64_t>(gen.below(full.size())));
  while (static_cast<std::int64_t>(full.size()) < n_particles)
    move(empty, full, static_cast<std::int64_t>(gen.below(empty.size())));
  c.particles = n_particles;

  const std::int64_t attempts = static_cast<std::int64_t>(burn_in) * n;
  for (std::int64_t a = 0; a < attempts; ++a) {
    const auto i = static_cast<std::int64_t>(gen.below(full.size()));
    const auto j = static_cast<std::int64_t>(gen.below(empty.size()));
    const std::int64_t x = full[i], y = empty[j];
    const double delta = alpha[y] - alpha[x];
    if (delta >= 0 || gen.uniform() < std::exp(delta)) {
      c.occ[x] = 0;
      c.occ[y] = 1;
      full[i] = y;
      empty[j] = x;
      pos[y] = i;
      pos[x] = j;
    }
  }
  return c;
}

struct deviation_point {
  std::int64_t K = 0;
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

struct deviation_study {
  std::vector<deviation_point> points;
  linear_fit fit;  ///< log estimate vs log K
};

/// Monte Carlo E|lambda_hat_K - lambda(m)|^gamma over independent blocks of
/// side K drawn from the field law.
inline deviation_study lambda_deviation_scaling(const field_spec& spec, double m,
                                                const std::vector<std::int64_t>& K_list,
                                                double gamma, std::size_t n_samples) {
  require(n_samples >= 2, error_kind::insufficient_samples, "need at least two samples");
  const double lam = lambda_of_m(site_law::of(spec), m).lambda;
  deviation_study out;
  std::vector<double> ks, vals;
  for (std::size_t ki = 0; ki < K_list.size(); ++ki) {
    const std::int64_t K = K_list[ki];
    running_stats st;
    for (std::size_t i = 0; i < n_samples; ++i) {
      const field f = gen_field(spec.with_side(K).with_seed(
          hash_key(spec.seed, {0x1a3b, static_cast<std::uint64_t>(K), i})));
      const double dev = empirical_lambda(f.values(), m).lambda - lam;
      st.add(std::pow(std::abs(dev), gamma));
    }
    out.points.push_back({K, st.mean(), st.stderr_of_mean(), n_samples});
    require(st.mean() == 0 || !(st.stderr_of_mean() > st.mean()), error_kind::insufficient_samples,
            "deviation estimate dominated by its standard error");
    ks.push_back(static_cast<double>(K));
    vals.push_back(st.mean());
  }
  out.fit = fit_loglog(ks, vals);
  return out;
}

}  // namespace disorder_hydro
