#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "error.hpp"

namespace disorder_hydro {

using site_t = std::int64_t;
using coord_t = std::vector<std::int64_t>;

/// Hypercubic box of side `side` in `dim` dimensions. Sites are numbered in
/// lexicographic order with x0 varying slowest.
class box {
 public:
  box() = default;
  box(int dim, std::int64_t side, bool periodic = true) : dim_(dim), side_(side), periodic_(periodic) {
    require(dim >= 1, error_kind::invalid_spec, "lattice dimension must be >= 1");
    require(side >= 1, error_kind::invalid_spec, "lattice side must be >= 1");
    size_ = 1;
    for (int i = 0; i < dim; ++i) size_ *= side;
    stride_.assign(dim, 1);
    for (int i = dim - 2; i >= 0; --i) stride_[i] = stride_[i + 1] * side;
  }

  int dim() const noexcept { return dim_; }
  std::int64_t side() const noexcept { return side_; }
  bool periodic() const noexcept { return periodic_; }
  std::int64_t size() const noexcept { return size_; }
  std::int64_t stride(int axis) const noexcept { return stride_[axis]; }

  static std::int64_t wrap(std::int64_t v, std::int64_t side) noexcept {
    v %= side;
    return v < 0 ? v + side : v;
  }

  site_t index(const coord_t& x) const {
    site_t s = 0;
    for (int i = 0; i < dim_; ++i) s += wrap(x[i], side_) * stride_[i];
    return s;
  }

  coord_t coords(site_t s) const {
    coord_t x(dim_);
    for (int i = 0; i < dim_; ++i) {
      x[i] = s / stride_[i];
      s -= x[i] * stride_[i];
    }
    return x;
  }

  std::int64_t coord(site_t s, int axis) const noexcept { return (s / stride_[axis]) % side_; }

  /// Neighbour of `s` one step along `axis` in direction `dir` (+1/-1).
  /// Returns -1 when the step leaves an open box.
  site_t neighbor(site_t s, int axis, int dir) const noexcept {
    const std::int64_t c = coord(s, axis);
    std::int64_t n = c + dir;
    if (n < 0 || n >= side_) {
      if (!periodic_) return -1;
      n = wrap(n, side_);
    }
    return s + (n - c) * stride_[axis];
  }

  /// Nearest-neighbour bonds (x, x+e_axis). On a periodic box of side 2 the
  /// wrap bond duplicates the interior one and is dropped.
  std::vector<std::pair<site_t, site_t>> bonds() const {
    std::vector<std::pair<site_t, site_t>> out;
    for (site_t s = 0; s < size_; ++s)
      for (int a = 0; a < dim_; ++a) {
        const site_t t = neighbor(s, a, +1);
        if (t < 0 || t == s) continue;
        if (side_ == 2 && coord(s, a) == 1) continue;
        out.emplace_back(s, t);
      }
    return out;
  }

 private:
  int dim_ = 1;
  std::int64_t side_ = 1;
  bool periodic_ = true;
  std::int64_t size_ = 1;
  std::vector<std::int64_t> stride_{1};
};

}  // namespace disorder_hydro
