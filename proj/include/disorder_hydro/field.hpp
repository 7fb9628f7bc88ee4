#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "lattice.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace disorder_hydro {

enum class field_law { iid_uniform, iid_two_point, periodic, block_pattern };

inline std::string to_string(field_law law) {
  switch (law) {
    case field_law::iid_uniform: return "iid-uniform";
    case field_law::iid_two_point: return "iid-two-point";
    case field_law::periodic: return "periodic";
    case field_law::block_pattern: return "block-pattern";
  }
  return "?";
}

inline field_law parse_field_law(const std::string& s) {
  if (s == "iid-uniform") return field_law::iid_uniform;
  if (s == "iid-two-point") return field_law::iid_two_point;
  if (s == "periodic") return field_law::periodic;
  if (s == "block-pattern") return field_law::block_pattern;
  fail(error_kind::invalid_spec, "unknown field law '" + s + "'");
}

/// Law and geometry of a bounded site field alpha on the d-torus of side L.
///
/// periodic:      alpha_x = pattern[(x0 + ... + x{d-1}) mod p]; p must divide L.
/// block-pattern: the torus is tiled by cubes of side `block`; each cube copies
///                one entry of `patterns` (each of length block^d, lexicographic
///                local order) chosen uniformly at random from the seed.
struct field_spec {
  int dim = 1;
  std::int64_t side = 1;
  double bound = 1.0;
  field_law law = field_law::iid_uniform;
  std::vector<double> pattern;
  std::int64_t block = 1;
  std::vector<std::vector<double>> patterns;
  std::uint64_t seed = 0;

  static field_spec constant(int dim, std::int64_t side, double value, double bound = 1.0) {
    field_spec s;
    s.dim = dim;
    s.side = side;
    s.bound = std::max(bound, std::abs(value));
    s.law = field_law::periodic;
    s.pattern = {value};
    return s;
  }

  static field_spec periodic_pattern(int dim, std::int64_t side, std::vector<double> pattern,
                                     double bound) {
    field_spec s;
    s.dim = dim;
    s.side = side;
    s.bound = bound;
    s.law = field_law::periodic;
    s.pattern = std::move(pattern);
    return s;
  }

  static field_spec iid(field_law law, int dim, std::int64_t side, double bound,
                        std::uint64_t seed) {
    field_spec s;
    s.dim = dim;
    s.side = side;
    s.bound = bound;
    s.law = law;
    s.seed = seed;
    return s;
  }

  field_spec with_side(std::int64_t new_side) const {
    field_spec s = *this;
    s.side = new_side;
    return s;
  }

  field_spec with_seed(std::uint64_t new_seed) const {
    field_spec s = *this;
    s.seed = new_seed;
    return s;
  }

  /// Same law with every value negated (the hole picture).
  field_spec negated() const {
    field_spec s = *this;
    for (auto& v : s.pattern) v = -v;
    for (auto& p : s.patterns)
      for (auto& v : p) v = -v;
    return s;
  }

  std::int64_t block_volume() const {
    std::int64_t v = 1;
    for (int i = 0; i < dim; ++i) v *= block;
    return v;
  }
};

inline void validate(const field_spec& s) {
  require(s.dim >= 1, error_kind::invalid_spec, "field dim must be >= 1");
  require(s.side >= 1, error_kind::invalid_spec, "field side must be >= 1");
  require(s.bound > 0 && std::isfinite(s.bound), error_kind::invalid_spec,
          "field bound must be positive");
  auto check_values = [&](const std::vector<double>& vs) {
    for (double v : vs)
      require(std::isfinite(v) && std::abs(v) <= s.bound, error_kind::invalid_spec,
              "pattern value exceeds the bound");
  };
  switch (s.law) {
    case field_law::iid_uniform:
    case field_law::iid_two_point: break;
    case field_law::periodic:
      require(!s.pattern.empty(), error_kind::invalid_spec, "periodic law needs a pattern");
      require(s.side % static_cast<std::int64_t>(s.pattern.size()) == 0, error_kind::invalid_spec,
              "pattern length does not tile the torus");
      check_values(s.pattern);
      break;
    case field_law::block_pattern:
      require(s.block >= 1, error_kind::invalid_spec, "block side must be >= 1");
      require(s.side % s.block == 0, error_kind::invalid_spec, "blocks do not tile the torus");
      require(!s.patterns.empty(), error_kind::invalid_spec, "block-pattern law needs patterns");
      for (const auto& p : s.patterns) {
        require(static_cast<std::int64_t>(p.size()) == s.block_volume(), error_kind::invalid_spec,
                "block pattern has wrong length");
        check_values(p);
      }
      break;
  }
}

/// A realization of the field on the torus.
class field {
 public:
  field() = default;
  field(field_spec spec, std::vector<double> values)
      : spec_(std::move(spec)), box_(spec_.dim, spec_.side, true), values_(std::move(values)) {
    require(static_cast<std::int64_t>(values_.size()) == box_.size(), error_kind::invalid_spec,
            "field value count does not match the lattice");
  }

  const field_spec& spec() const noexcept { return spec_; }
  const box& lattice() const noexcept { return box_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::int64_t size() const noexcept { return box_.size(); }
  double operator[](site_t s) const noexcept { return values_[static_cast<std::size_t>(s)]; }
  double at(const coord_t& x) const { return values_[static_cast<std::size_t>(box_.index(x))]; }

  double max_abs() const noexcept {
    double m = 0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  field negated() const {
    std::vector<double> v(values_);
    for (auto& x : v) x = -x;
    return field(spec_.negated(), std::move(v));
  }

  bool operator==(const field& o) const { return values_ == o.values_; }

 private:
  field_spec spec_;
  box box_;
  std::vector<double> values_;
};

namespace detail {
inline std::uint64_t coord_key(const coord_t& x) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto c : x) h = mix64(h ^ static_cast<std::uint64_t>(c));
  return h;
}
}  // namespace detail

/// Draws are keyed by (seed, site coordinates), so two tori of different sides
/// generated from one seed agree on every site they share.
inline field gen_field(const field_spec& spec) {
  validate(spec);
  const box b(spec.dim, spec.side, true);
  std::vector<double> values(static_cast<std::size_t>(b.size()));
  for (site_t s = 0; s < b.size(); ++s) {
    const coord_t x = b.coords(s);
    double v = 0;
    switch (spec.law) {
      case field_law::iid_uniform: {
        const double u = u64_to_unit(hash_key(spec.seed, {1, detail::coord_key(x)}));
        v = spec.bound * (2.0 * u - 1.0);
        break;
      }
      case field_law::iid_two_point: {
        const auto h = hash_key(spec.seed, {2, detail::coord_key(x)});
        v = (h >> 63) ? spec.bound : -spec.bound;
        break;
      }
      case field_law::periodic: {
        std::int64_t sum = 0;
        for (auto c : x) sum += c;
        v = spec.pattern[static_cast<std::size_t>(sum % static_cast<std::int64_t>(spec.pattern.size()))];
        break;
      }
      case field_law::block_pattern: {
        coord_t blk(x.size()), local(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          blk[i] = x[i] / spec.block;
          local[i] = x[i] % spec.block;
        }
        const auto h = hash_key(spec.seed, {3, detail::coord_key(blk)});
        const auto& pat = spec.patterns[static_cast<std::size_t>(h % spec.patterns.size())];
        std::int64_t li = 0;
        for (auto c : local) li = li * spec.block + c;
        v = pat[static_cast<std::size_t>(li)];
        break;
      }
    }
    values[static_cast<std::size_t>(s)] = v;
  }
  return field(spec, std::move(values));
}

/// (tau_x alpha)_y = alpha_{x+y} with periodic wraparound.
inline field shift_view(const field& f, const coord_t& shift) {
  const box& b = f.lattice();
  require(static_cast<int>(shift.size()) == b.dim(), error_kind::invalid_spec,
          "shift has wrong dimension");
  std::vector<double> v(static_cast<std::size_t>(b.size()));
  for (site_t s = 0; s < b.size(); ++s) {
    coord_t y = b.coords(s);
    for (int i = 0; i < b.dim(); ++i) y[i] += shift[i];
    v[static_cast<std::size_t>(s)] = f.at(y);
  }
  return field(f.spec(), std::move(v));
}

inline void write_field_csv(std::ostream& os, const field& f) {
  csv::writer w(os);
  std::vector<std::string> header;
  for (int i = 0; i < f.lattice().dim(); ++i) header.push_back("x" + std::to_string(i));
  header.push_back("alpha");
  w.row(header);
  for (site_t s = 0; s < f.size(); ++s) {
    std::vector<std::string> cells;
    for (auto c : f.lattice().coords(s)) cells.push_back(std::to_string(c));
    cells.push_back(csv::format(f[s]));
    w.row(cells);
  }
}

/// Reads values back onto the lattice described by `spec`; rows may come in
/// any order but must cover every site exactly once.
inline field read_field_csv(std::istream& is, const field_spec& spec) {
  const auto t = csv::read(is);
  const box b(spec.dim, spec.side, true);
  require(static_cast<int>(t.header.size()) == spec.dim + 1 && t.header.back() == "alpha",
          error_kind::invalid_spec, "field CSV header mismatch");
  std::vector<double> v(static_cast<std::size_t>(b.size()), 0.0);
  std::vector<char> seen(v.size(), 0);
  for (const auto& row : t.rows) {
    require(static_cast<int>(row.size()) == spec.dim + 1, error_kind::invalid_spec, "short field row");
    coord_t x(spec.dim);
    for (int i = 0; i < spec.dim; ++i) x[i] = std::stoll(row[i]);
    const auto s = static_cast<std::size_t>(b.index(x));
    require(!seen[s], error_kind::invalid_spec, "duplicate site in field CSV");
    seen[s] = 1;
    v[s] = csv::to_double(row.back());
  }
  for (char c : seen) require(c, error_kind::invalid_spec, "field CSV misses sites");
  return field(spec, std::move(v));
}

/// Local statistic f(tau_x alpha) depending on alpha inside x + {0..window-1}^d.
struct local_statistic {
  std::int64_t window = 1;
  std::function<double(const field&, const coord_t& origin)> eval;

  static local_statistic site_value() {
    return {1, [](const field& f, const coord_t& x) { return f.at(x); }};
  }
};

struct mixing_result {
  double ratio = 0.0;  ///< estimate of C in E|Av f|^gamma <= C (l/K)^{gamma d/2} E|f|^gamma
  double stderr_ = 0.0;
  double moment_average = 0.0;  ///< E|Av_{Lambda_K} tau_x f|^gamma
  double moment_single = 0.0;   ///< E|f|^gamma (calibration pool)
  double calibration_mean = 0.0;
  std::size_t samples = 0;
};

/// Monte Carlo estimate of the mixing constant for one field family. The
/// statistic is centred by its mean over `n_calibration` independent fields.
inline mixing_result mixing_diagnostic(const field_spec& spec, const local_statistic& stat,
                                       double gamma, std::int64_t block_side,
                                       std::size_t n_samples, std::size_t n_calibration = 16) {
  validate(spec);
  require(block_side >= stat.window, error_kind::invalid_spec, "need K >= l");
  require(gamma >= 2, error_kind::invalid_spec, "need gamma >= 2");
  require(spec.side >= block_side, error_kind::invalid_spec, "torus smaller than the block");
  require(n_samples >= 2, error_kind::insufficient_samples, "need at least two samples");

  const box b(spec.dim, spec.side, true);
  running_stats calib;
  std::vector<double> fvals;
  for (std::size_t i = 0; i < n_calibration; ++i) {
    const field f = gen_field(spec.with_seed(hash_key(spec.seed, {0xca11, i})));
    for (site_t s = 0; s < b.size(); ++s) {
      const double v = stat.eval(f, b.coords(s));
      calib.add(v);
      fvals.push_back(v);
    }
  }
  const double centre = calib.mean();
  double single = 0;
  for (double v : fvals) single += std::pow(std::abs(v - centre), gamma);
  single /= static_cast<double>(fvals.size());

  const box kbox(spec.dim, block_side, false);
  running_stats moments;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const field f = gen_field(spec.with_seed(hash_key(spec.seed, {0x5a3e, i})));
    double avg = 0;
    for (site_t s = 0; s < kbox.size(); ++s) avg += stat.eval(f, kbox.coords(s)) - centre;
    avg /= static_cast<double>(kbox.size());
    moments.add(std::pow(std::abs(avg), gamma));
  }

  mixing_result r;
  r.samples = n_samples;
  r.calibration_mean = centre;
  r.moment_single = single;
  r.moment_average = moments.mean();
  const double scale =
      std::pow(static_cast<double>(stat.window) / static_cast<double>(block_side),
               gamma * spec.dim / 2.0) * single;
  if (scale > 0) {
    r.ratio = moments.mean() / scale;
    r.stderr_ = moments.stderr_of_mean() / scale;
  }
  require(!(r.stderr_ > r.ratio), error_kind::insufficient_samples,
          "mixing diagnostic: standard error exceeds the estimate");
  return r;
}

}  // namespace disorder_hydro
