#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>

#include "exitflow/errors.hpp"
#include "exitflow/linalg.hpp"

namespace exitflow {

/// Uniform cell-centered tensor grid. Cells are stored row-major, the last
/// axis varying fastest.
class Grid {
 public:
  using Index = std::array<std::size_t, kMaxDim>;

  Grid(int dim, const Vec& origin, double spacing, const Index& counts)
      : dim_(dim), spacing_(spacing), counts_(counts) {
    if (dim < 1 || dim > kMaxDim) throw ParameterError("grid dimension must be in [1, 3]");
    if (!(spacing > 0.0) || !std::isfinite(spacing)) throw ParameterError("grid spacing must be positive");
    if (origin.size() != dim) throw ShapeError("grid origin has wrong dimension");
    origin_.fill(0.0);
    for (int d = 0; d < dim; ++d) {
      origin_[d] = origin[d];
      if (counts_[d] == 0) throw ParameterError("grid must have at least one cell per axis");
    }
    for (int d = dim; d < kMaxDim; ++d) counts_[d] = 1;
  }

  /// Smallest grid with spacing `h` whose cells cover the box [lo, hi].
  static Grid covering(const Vec& lo, const Vec& hi, double h) {
    if (!(h > 0.0)) throw ParameterError("grid spacing must be positive");
    Index counts{1, 1, 1};
    for (Eigen::Index d = 0; d < lo.size(); ++d) {
      const double cells = (hi[d] - lo[d]) / h;
      counts[d] = static_cast<std::size_t>(std::max(1.0, std::ceil(cells - 1e-9)));
    }
    return Grid(static_cast<int>(lo.size()), lo, h, counts);
  }

  int dim() const { return dim_; }
  double spacing() const { return spacing_; }
  std::size_t count(int axis) const { return counts_[axis]; }
  const Index& counts() const { return counts_; }

  Vec origin() const {
    Vec o(dim_);
    for (int d = 0; d < dim_; ++d) o[d] = origin_[d];
    return o;
  }

  std::size_t size() const { return counts_[0] * counts_[1] * counts_[2]; }
  double cell_volume() const { return std::pow(spacing_, dim_); }

  Index unflatten(std::size_t flat) const {
    Index idx{0, 0, 0};
    for (int d = dim_ - 1; d >= 0; --d) {
      idx[d] = flat % counts_[d];
      flat /= counts_[d];
    }
    return idx;
  }

  std::size_t flatten(const Index& idx) const {
    std::size_t flat = 0;
    for (int d = 0; d < dim_; ++d) flat = flat * counts_[d] + idx[d];
    return flat;
  }

  /// Stride of a unit step along `axis` in flat indexing.
  std::size_t stride(int axis) const {
    std::size_t s = 1;
    for (int d = dim_ - 1; d > axis; --d) s *= counts_[d];
    return s;
  }

  Vec center(std::size_t flat) const {
    const Index idx = unflatten(flat);
    Vec c(dim_);
    for (int d = 0; d < dim_; ++d) c[d] = origin_[d] + (static_cast<double>(idx[d]) + 0.5) * spacing_;
    return c;
  }

  /// Cell containing `x`, if any. Points on a shared face go to the upper cell.
  std::optional<std::size_t> locate(const Vec& x) const {
    if (x.size() != dim_) return std::nullopt;
    Index idx{0, 0, 0};
    for (int d = 0; d < dim_; ++d) {
      const double r = std::floor((x[d] - origin_[d]) / spacing_);
      if (!(r >= 0.0) || r >= static_cast<double>(counts_[d])) return std::nullopt;
      idx[d] = static_cast<std::size_t>(r);
    }
    return flatten(idx);
  }

  bool operator==(const Grid& other) const {
    return dim_ == other.dim_ && spacing_ == other.spacing_ && counts_ == other.counts_ &&
           origin_ == other.origin_;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "grid(dim=" << dim_ << ", h=" << spacing_ << ", counts=";
    for (int d = 0; d < dim_; ++d) os << (d ? "x" : "") << counts_[d];
    os << ")";
    return os.str();
  }

 private:
  int dim_;
  std::array<double, kMaxDim> origin_{};
  double spacing_;
  Index counts_;
};

}  // namespace exitflow
