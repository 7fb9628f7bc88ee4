#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
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

/// Binary indexed tree over non-negative weights with prefix search.
class fenwick {
 public:
  fenwick() = default;
  explicit fenwick(std::size_t n) : tree_(n + 1, 0.0), values_(n, 0.0) {
    top_ = 1;
    while (top_ * 2 <= n) top_ *= 2;
  }

  std::size_t size() const noexcept { return values_.size(); }
  double value(std::size_t i) const noexcept { return values_[i]; }

  void set(std::size_t i, double v) noexcept {
    const double d = v - values_[i];
    if (d == 0) return;
    values_[i] = v;
    for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) tree_[k] += d;
  }

  double total() const noexcept {
    double s = 0;
    for (std::size_t k = values_.size(); k > 0; k -= k & (~k + 1)) s += tree_[k];
    return s;
  }

  /// Smallest index whose inclusive prefix sum exceeds u (0 <= u < total).
  std::size_t find(double u) const noexcept {
    std::size_t pos = 0;
    for (std::size_t step = top_; step > 0; step >>= 1) {
      const std::size_t next = pos + step;
      if (next < tree_.size() && tree_[next] <= u) {
        pos = next;
        u -= tree_[next];
      }
    }
    // guard against rounding: skip zero-weight slots
    while (pos < values_.size() && values_[pos] == 0) ++pos;
    if (pos >= values_.size()) {
      pos = values_.size() - 1;
      while (pos > 0 && values_[pos] == 0) --pos;
    }
    return pos;
  }

  void rebuild() {
    std::fill(tree_.begin(), tree_.end(), 0.0);
    for (std::size_t i = 0; i < values_.size(); ++i) {
      tree_[i + 1] += values_[i];
      const std::size_t parent = (i + 1) + ((i + 1) & (~(i + 1) + 1));
      if (parent < tree_.size()) tree_[parent] += tree_[i + 1];
    }
  }

  double recomputed_total() const noexcept {
    double s = 0;
    for (double v : values_) s += v;
    return s;
  }

 private:
  std::vector<double> tree_, values_;
  std::size_t top_ = 1;
};

enum class current_mode { total, section };

/// Exclusion dynamics on the torus of a field, rates 1 + e^{alpha_y - alpha_x}
/// per admissible jump x -> y. Time is kept in microscopic units; the
/// macroscopic clock is epsilon^2 t_micro with epsilon = 1 / side.
class kmc_sim {
 public:
  static constexpr std::uint64_t audit_interval = 1'000'000;

  kmc_sim(field f, configuration config, std::uint64_t seed,
          current_mode mode = current_mode::total)
      : field_(std::move(f)), eta_(std::move(config)), gen_(seed), mode_(mode) {
    const box& b = field_.lattice();
    require(static_cast<std::int64_t>(eta_.size()) == b.size(), error_kind::invalid_spec,
            "configuration does not match the field");
    dim_ = b.dim();
    current_.assign(dim_, 0.0);
    const auto n_bonds = static_cast<std::size_t>(b.size()) * dim_;
    rates_ = fenwick(n_bonds);
    fwd_.resize(n_bonds);
    bwd_.resize(n_bonds);
    target_.resize(n_bonds);
    for (site_t s = 0; s < b.size(); ++s)
      for (int a = 0; a < dim_; ++a) {
        const auto k = bond(s, a);
        const site_t t = b.neighbor(s, a, +1);
        target_[k] = t;
        fwd_[k] = 1.0 + std::exp(field_[t] - field_[s]);
        bwd_[k] = 1.0 + std::exp(field_[s] - field_[t]);
        refresh(k);
      }
    eta_.recount();
  }

  const field& env() const noexcept { return field_; }
  const configuration& config() const noexcept { return eta_; }
  double epsilon() const noexcept { return 1.0 / static_cast<double>(field_.lattice().side()); }
  double t_micro() const noexcept { return t_; }
  double t_macro() const noexcept { return t_ * epsilon() * epsilon(); }
  std::uint64_t events() const noexcept { return events_; }
  const std::vector<double>& current() const noexcept { return current_; }
  double total_rate() const noexcept { return rates_.total(); }
  double max_audit_error() const noexcept { return audit_error_; }
  current_mode mode() const noexcept { return mode_; }

  /// Audit the maintained total against a fresh sum; returns relative error.
  double audit() {
    const double kept = rates_.total();
    const double fresh = rates_.recomputed_total();
    const double err = std::abs(kept - fresh) / std::max(1.0, std::abs(fresh));
    audit_error_ = std::max(audit_error_, err);
    rates_.rebuild();
    return err;
  }

  void run_micro(double duration) {
    require(duration >= 0, error_kind::invalid_spec, "negative duration");
    const double end = t_ + duration;
    for (;;) {
      const double total = rates_.total();
      if (!(total > 0)) {
        t_ = end;
        return;
      }
      const double dt = gen_.exponential(total);
      if (t_ + dt >= end) {
        t_ = end;
        return;
      }
      t_ += dt;
      step(gen_.uniform() * total);
    }
  }

  void run(double duration_macro) {
    const double e = epsilon();
    run_micro(duration_macro / (e * e));
  }

 private:
  std::size_t bond(site_t s, int axis) const noexcept {
    return static_cast<std::size_t>(s) * dim_ + axis;
  }

  void refresh(std::size_t k) noexcept {
    const site_t s = static_cast<site_t>(k / dim_);
    const site_t t = target_[k];
    const auto es = eta_.occ[s], et = eta_.occ[t];
    rates_.set(k, es == et ? 0.0 : (es ? fwd_[k] : bwd_[k]));
  }

  void step(double u) {
    const std::size_t k = rates_.find(u);
    const site_t s = static_cast<site_t>(k / dim_);
    const int axis = static_cast<int>(k % dim_);
    const site_t t = target_[k];
    const int sign = eta_.occ[s] ? +1 : -1;  // particle moves along +e when it leaves s
    std::swap(eta_.occ[s], eta_.occ[t]);
    const box& b = field_.lattice();
    if (mode_ == current_mode::total || b.coord(s, axis) == b.side() - 1) current_[axis] += sign;
    for (site_t x : {s, t})
      for (int a = 0; a < dim_; ++a) {
        refresh(bond(x, a));
        const site_t back = b.neighbor(x, a, -1);
        refresh(bond(back, a));
      }
    if (++events_ % audit_interval == 0) audit();
  }

  field field_;
  configuration eta_;
  rng gen_;
  current_mode mode_;
  int dim_ = 1;
  double t_ = 0.0;
  std::uint64_t events_ = 0;
  double audit_error_ = 0.0;
  std::vector<double> current_;
  fenwick rates_;
  std::vector<double> fwd_, bwd_;
  std::vector<site_t> target_;
};

/// Macroscopic profile m0 evaluated at theta = epsilon x.
using profile_fn = std::function<double(const std::vector<double>& theta)>;

/// Product measure with P(eta_x = 1) = logistic(alpha_x + lambda(m0(eps x))),
/// lambda from the field law's site marginal.
inline configuration init_local_equilibrium(const field& f, const profile_fn& m0, rng& gen) {
  const box& b = f.lattice();
  const site_law law = site_law::of(f.spec());
  const double eps = 1.0 / static_cast<double>(b.side());
  configuration c(static_cast<std::size_t>(b.size()));
  std::vector<double> theta(b.dim());
  double cached_m = -1, cached_lambda = 0;
  for (site_t s = 0; s < b.size(); ++s) {
    const auto x = b.coords(s);
    for (int i = 0; i < b.dim(); ++i) theta[i] = eps * static_cast<double>(x[i]);
    const double m = m0(theta);
    require(m >= 0 && m <= 1, error_kind::domain, "initial profile leaves [0,1]");
    if (m == 0 || m == 1) {
      c.occ[s] = m == 1;
      continue;
    }
    if (m != cached_m) {
      cached_m = m;
      cached_lambda = lambda_of_m(law, m).lambda;
    }
    c.occ[s] = gen.bernoulli(logistic(f[s] + cached_lambda));
  }
  c.recount();
  return c;
}

struct density_profile {
  int dim = 1;
  std::int64_t cells = 1;  ///< per axis
  double t_macro = 0.0;
  std::vector<double> values;
};

/// Cell averages over cubes of side delta (macroscopic units).
inline density_profile coarse_density(const configuration& c, const box& b, double delta,
                                      double t_macro = 0.0) {
  const double sites_per_cell = delta * static_cast<double>(b.side());
  const auto w = static_cast<std::int64_t>(std::llround(sites_per_cell));
  require(w >= 1 && std::abs(sites_per_cell - static_cast<double>(w)) < 1e-9 && b.side() % w == 0,
          error_kind::invalid_spec, "cell size incompatible with the lattice");
  density_profile p;
  p.dim = b.dim();
  p.cells = b.side() / w;
  p.t_macro = t_macro;
  const box cells(b.dim(), p.cells, true);
  p.values.assign(static_cast<std::size_t>(cells.size()), 0.0);
  for (site_t s = 0; s < b.size(); ++s) {
    auto x = b.coords(s);
    for (auto& v : x) v /= w;
    p.values[static_cast<std::size_t>(cells.index(x))] += c.occ[s];
  }
  double per_cell = 1;
  for (int i = 0; i < b.dim(); ++i) per_cell *= static_cast<double>(w);
  for (auto& v : p.values) v /= per_cell;
  return p;
}

inline void write_snapshots_csv(std::ostream& os, const std::vector<density_profile>& snaps) {
  csv::writer wr(os);
  std::vector<std::string> header{"t"};
  if (!snaps.empty())
    for (std::size_t i = 0; i < snaps.front().values.size(); ++i) header.push_back("cell" + std::to_string(i));
  wr.row(header);
  for (const auto& s : snaps) {
    std::vector<std::string> row{csv::format(s.t_macro)};
    for (double v : s.values) row.push_back(csv::format(v));
    wr.row(row);
  }
}

struct gk_axis {
  int axis = 0;
  double raw = 0.0;     ///< E[dQ^2] / (T |Lambda|) before calibration
  double sigma = 0.0;   ///< c_gk * raw
  double stderr_ = 0.0;
};

struct gk_result {
  double m = 0.0;
  double T = 0.0;
  std::size_t replicas = 0;
  std::size_t blocks = 0;
  double c_gk = 1.0;
  bool calibrated = false;
  std::vector<gk_axis> axes;
};

/// Equilibrium flux variance: each replica starts from the product measure at
/// lambda(m) and records the total signed flux over `blocks` consecutive
/// windows of microscopic length T.
inline gk_result green_kubo_sigma(const field& f, double m, double T, std::size_t n_replicas,
                                  std::size_t blocks, std::uint64_t seed, double c_gk = 1.0,
                                  bool calibrated = false) {
  require(T > 0 && blocks >= 1, error_kind::invalid_spec, "need T > 0 and at least one block");
  require(n_replicas >= 2, error_kind::insufficient_samples, "need at least two replicas");
  require(m >= 0 && m <= 1, error_kind::domain, "density outside [0,1]");
  const int d = f.lattice().dim();
  gk_result out;
  out.m = m;
  out.T = T;
  out.replicas = n_replicas;
  out.blocks = blocks;
  out.c_gk = c_gk;
  out.calibrated = calibrated;
  out.axes.resize(d);
  for (int a = 0; a < d; ++a) out.axes[a].axis = a;
  if (m == 0 || m == 1) return out;

  const double lam = lambda_of_m(site_law::of(f.spec()), m).lambda;
  const double volume = static_cast<double>(f.size());
  std::vector<std::vector<double>> per_rep(n_replicas, std::vector<double>(d, 0.0));
  parallel_for(n_replicas, [&](std::size_t r) {
    rng init(hash_key(seed, {0x6b, r}));
    kmc_sim sim(f, sample_grand(f.values(), lam, init), hash_key(seed, {0x6c, r}));
    std::vector<double> last(d, 0.0);
    for (std::size_t k = 0; k < blocks; ++k) {
      sim.run_micro(T);
      for (int a = 0; a < d; ++a) {
        const double dq = sim.current()[a] - last[a];
        last[a] = sim.current()[a];
        per_rep[r][a] += dq * dq / (T * volume);
      }
    }
    for (auto& v : per_rep[r]) v /= static_cast<double>(blocks);
  });
  for (int a = 0; a < d; ++a) {
    running_stats st;
    for (const auto& rep : per_rep) st.add(rep[a]);
    out.axes[a].raw = st.mean();
    out.axes[a].sigma = c_gk * st.mean();
    out.axes[a].stderr_ = c_gk * st.stderr_of_mean();
    require(!(out.axes[a].stderr_ > 0.25 * out.axes[a].sigma), error_kind::insufficient_samples,
            "Green-Kubo error bar exceeds 25% of the estimate");
  }
  return out;
}

inline void write_gk_csv(std::ostream& os, const std::vector<gk_result>& rows) {
  csv::writer w(os);
  w.row("axis", "m", "sigma", "stderr", "replicas", "T");
  for (const auto& r : rows)
    for (const auto& a : r.axes)
      w.row(a.axis, r.m, a.sigma, a.stderr_, static_cast<unsigned long long>(r.replicas), r.T);
}

struct msd_result {
  std::vector<estimate> D;           ///< per axis slope of E[x_e(t)^2]
  std::vector<double> times;
  std::vector<std::vector<double>> msd;  ///< [axis][time]
};

/// Single particle in the field (no exclusion), started from its stationary
/// law proportional to e^{alpha_x}. D per axis is the least-squares slope of
/// the mean squared displacement over [T/2, T].
inline msd_result single_particle_msd(const field& f, double T, std::size_t n_replicas,
                                      std::uint64_t seed, std::size_t n_times = 40,
                                      std::size_t n_batches = 20) {
  require(T > 0 && n_times >= 4, error_kind::invalid_spec, "need T > 0 and >= 4 sample times");
  require(n_replicas >= n_batches && n_batches >= 2, error_kind::insufficient_samples,
          "too few replicas");
  const box& b = f.lattice();
  const int d = b.dim();
  // stationary start by inversion of the cumulative weights
  std::vector<double> cum(static_cast<std::size_t>(b.size()));
  double z = 0;
  for (site_t s = 0; s < b.size(); ++s) cum[s] = (z += std::exp(f[s]));
  // per-site jump tables: 2d neighbours with rates
  std::vector<double> rate(static_cast<std::size_t>(b.size()) * 2 * d), out_rate(b.size(), 0.0);
  std::vector<site_t> nbr(rate.size());
  for (site_t s = 0; s < b.size(); ++s)
    for (int a = 0; a < d; ++a)
      for (int dir = 0; dir < 2; ++dir) {
        const std::size_t k = static_cast<std::size_t>(s) * 2 * d + 2 * a + dir;
        nbr[k] = b.neighbor(s, a, dir ? +1 : -1);
        rate[k] = 1.0 + std::exp(f[nbr[k]] - f[s]);
        out_rate[s] += rate[k];
      }

  msd_result out;
  for (std::size_t i = 1; i <= n_times; ++i) out.times.push_back(T * i / n_times);
  // sums[batch][axis][time]
  std::vector<std::vector<std::vector<double>>> sums(
      n_batches, std::vector<std::vector<double>>(d, std::vector<double>(n_times, 0.0)));
  std::vector<std::vector<double>> disp(n_replicas, std::vector<double>(d * n_times));
  parallel_for(n_replicas, [&](std::size_t r) {
    rng gen(hash_key(seed, {0x3d, r}));
    const double u = gen.uniform() * z;
    site_t s = static_cast<site_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (s >= b.size()) s = b.size() - 1;
    std::vector<double> x(d, 0.0);
    double t = 0;
    std::size_t next = 0;
    while (next < n_times) {
      const double dt = gen.exponential(out_rate[s]);
      while (next < n_times && t + dt >= out.times[next]) {
        for (int a = 0; a < d; ++a) disp[r][a * n_times + next] = x[a];
        ++next;
      }
      t += dt;
      double v = gen.uniform() * out_rate[s];
      std::size_t k = static_cast<std::size_t>(s) * 2 * d;
      const std::size_t end = k + 2 * d - 1;
      while (k < end && v >= rate[k]) v -= rate[k++];
      const int a = static_cast<int>((k % (2 * d)) / 2);
      x[a] += (k % 2) ? 1.0 : -1.0;
      s = nbr[k];
    }
  });
  for (std::size_t r = 0; r < n_replicas; ++r)
    for (int a = 0; a < d; ++a)
      for (std::size_t i = 0; i < n_times; ++i) {
        const double v = disp[r][a * n_times + i];
        sums[r % n_batches][a][i] += v * v;
      }
  out.msd.assign(d, std::vector<double>(n_times, 0.0));
  const std::size_t first = n_times / 2 - 1;
  for (int a = 0; a < d; ++a) {
    running_stats slopes;
    std::vector<double> tw(out.times.begin() + first, out.times.end());
    for (std::size_t bt = 0; bt < n_batches; ++bt) {
      const double count = static_cast<double>((n_replicas - bt + n_batches - 1) / n_batches);
      std::vector<double> y;
      for (std::size_t i = first; i < n_times; ++i) y.push_back(sums[bt][a][i] / count);
      slopes.add(fit_line(tw, y).slope);
      for (std::size_t i = 0; i < n_times; ++i) out.msd[a][i] += sums[bt][a][i] / n_replicas;
    }
    std::vector<double> y(out.msd[a].begin() + first, out.msd[a].end());
    out.D.push_back({fit_line(tw, y).slope, slopes.stderr_of_mean(), n_replicas});
  }
  return out;
}

}  // namespace disorder_hydro
