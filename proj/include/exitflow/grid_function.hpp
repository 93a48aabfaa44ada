#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "exitflow/domain.hpp"
#include "exitflow/errors.hpp"
#include "exitflow/fields.hpp"
#include "exitflow/grid.hpp"
#include "exitflow/linalg.hpp"

namespace exitflow {

/// Discrete element of L2(D): one value per cell of a uniform grid, with a
/// mask marking the cells whose centers lie in D. Masked-out cells always
/// hold zero.
class GridFunction {
 public:
  GridFunction(Grid grid, std::vector<std::uint8_t> mask, std::vector<double> values)
      : grid_(std::move(grid)), mask_(std::move(mask)), values_(std::move(values)) {
    if (mask_.size() != grid_.size() || values_.size() != grid_.size()) {
      throw ShapeError("grid function storage does not match its grid");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!mask_[i]) values_[i] = 0.0;
    }
  }

  static std::vector<std::uint8_t> domain_mask(const Grid& grid, const Domain& domain) {
    if (grid.dim() != domain.dim()) throw ShapeError("grid and domain dimensions differ");
    std::vector<std::uint8_t> mask(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) mask[i] = domain.contains(grid.center(i)) ? 1 : 0;
    return mask;
  }

  static GridFunction zeros(const Grid& grid, const Domain& domain) {
    return GridFunction(grid, domain_mask(grid, domain), std::vector<double>(grid.size(), 0.0));
  }

  /// Zero function sharing the grid and mask of `like`.
  static GridFunction zeros_like(const GridFunction& like) {
    return GridFunction(like.grid_, like.mask_, std::vector<double>(like.size(), 0.0));
  }

  static GridFunction sample(const Grid& grid, const Domain& domain, const std::function<double(const Vec&)>& fn) {
    auto mask = domain_mask(grid, domain);
    std::vector<double> values(grid.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (mask[i]) values[i] = fn(grid.center(i));
    }
    return GridFunction(grid, std::move(mask), std::move(values));
  }

  static GridFunction sample(const Grid& grid, const Domain& domain, const ScalarData& data, double t) {
    return sample(grid, domain, [&data, t](const Vec& x) { return data(x, t); });
  }

  const Grid& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }
  bool active(std::size_t i) const { return mask_[i] != 0; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::size_t active_count() const {
    std::size_t n = 0;
    for (auto m : mask_) n += m;
    return n;
  }

  /// Writes a cell value; writes to masked-out cells are ignored.
  void set(std::size_t i, double v) {
    if (mask_[i]) values_[i] = v;
  }

  bool same_layout(const GridFunction& other) const { return grid_ == other.grid_ && mask_ == other.mask_; }

  void require_same_layout(const GridFunction& other) const {
    if (!(grid_ == other.grid_)) throw ShapeError("grid metadata differ: " + grid_.describe() + " vs " + other.grid_.describe());
    if (mask_ != other.mask_) throw ShapeError("grid functions have different masks");
  }

  GridFunction& operator+=(const GridFunction& other) {
    require_same_layout(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  GridFunction& operator-=(const GridFunction& other) {
    require_same_layout(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
  }

  GridFunction& operator*=(double a) {
    for (double& v : values_) v *= a;
    return *this;
  }

  friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
  friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
  friend GridFunction operator*(double a, GridFunction g) { return g *= a; }

 private:
  Grid grid_;
  std::vector<std::uint8_t> mask_;
  std::vector<double> values_;
};

/// Midpoint quadrature of the integral of g*h over D.
inline double inner_product(const GridFunction& g, const GridFunction& h) {
  g.require_same_layout(h);
  std::vector<double> terms(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) terms[i] = g[i] * h[i];
  return pairwise_sum(terms) * g.grid().cell_volume();
}

inline double l2_norm(const GridFunction& g) {
  std::vector<double> terms(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) terms[i] = g[i] * g[i];
  return std::sqrt(pairwise_sum(terms) * g.grid().cell_volume());
}

inline double l2_distance(const GridFunction& g, const GridFunction& h) { return l2_norm(g - h); }

/// Grid-L1 distance; reported alongside L2 for discontinuous targets.
inline double l1_distance(const GridFunction& g, const GridFunction& h) {
  g.require_same_layout(h);
  std::vector<double> terms(g.values().size());
  for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = std::abs(g[i] - h[i]);
  return pairwise_sum(terms) * g.grid().cell_volume();
}

/// Integral of g over D.
inline double mass(const GridFunction& g) {
  return pairwise_sum(g.values()) * g.grid().cell_volume();
}

}  // namespace exitflow
