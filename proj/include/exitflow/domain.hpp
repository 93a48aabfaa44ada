#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "exitflow/errors.hpp"
#include "exitflow/fields.hpp"
#include "exitflow/grid.hpp"
#include "exitflow/linalg.hpp"

namespace exitflow {

/// Bounded domain D = {g < 0} with boundary {g = 0} given by a C1 implicit
/// function g and its gradient.
class Domain {
 public:
  using Implicit = std::function<double(const Vec&)>;
  using Gradient = std::function<Vec(const Vec&)>;

  Domain(std::string label, int dim, Implicit g, Gradient grad, Vec lower, Vec upper)
      : label_(std::move(label)), dim_(dim), g_(std::move(g)), grad_(std::move(grad)),
        lower_(std::move(lower)), upper_(std::move(upper)) {
    if (dim < 1 || dim > kMaxDim) throw ConfigurationError("domain dimension must be in [1, 3]");
    if (lower_.size() != dim || upper_.size() != dim) throw ConfigurationError("bounding box has wrong dimension");
    for (int d = 0; d < dim; ++d) {
      if (!(lower_[d] < upper_[d])) throw ConfigurationError("bounding box is empty");
    }
  }

  /// Open interval (a, b).
  static Domain interval(double a, double b) {
    if (!(a < b)) throw ConfigurationError("interval needs a < b");
    const double c = 0.5 * (a + b);
    const double r = 0.5 * (b - a);
    return Domain(
        "interval(" + fmt(a) + "," + fmt(b) + ")", 1,
        [c, r](const Vec& x) { return ((x[0] - c) * (x[0] - c) - r * r) / (2.0 * r); },
        [c, r](const Vec& x) { return scalar_vec((x[0] - c) / r); }, scalar_vec(a), scalar_vec(b));
  }

  /// Open ball of radius r.
  static Domain ball(const Vec& center, double r) {
    if (!(r > 0.0)) throw ConfigurationError("ball radius must be positive");
    const int n = static_cast<int>(center.size());
    Vec lo = center.array() - r;
    Vec hi = center.array() + r;
    return Domain(
        "ball(r=" + fmt(r) + ")", n,
        [center, r](const Vec& x) { return ((x - center).squaredNorm() - r * r) / (2.0 * r); },
        [center, r](const Vec& x) -> Vec { return (x - center) / r; }, lo, hi);
  }

  /// Axis-aligned ellipsoid with the given semi-axes.
  static Domain ellipse(const Vec& center, const Vec& semi_axes) {
    if (center.size() != semi_axes.size()) throw ConfigurationError("ellipse center/axes mismatch");
    for (Eigen::Index d = 0; d < semi_axes.size(); ++d) {
      if (!(semi_axes[d] > 0.0)) throw ConfigurationError("ellipse semi-axes must be positive");
    }
    const int n = static_cast<int>(center.size());
    Vec lo = center - semi_axes;
    Vec hi = center + semi_axes;
    return Domain(
        "ellipse", n,
        [center, semi_axes](const Vec& x) {
          return 0.5 * ((x - center).array() / semi_axes.array()).square().sum() - 0.5;
        },
        [center, semi_axes](const Vec& x) -> Vec {
          return ((x - center).array() / semi_axes.array().square()).matrix();
        },
        lo, hi);
  }

  /// Superellipse sum |(x_i - c_i)/a_i|^p < 1, a rectangle with rounded
  /// corners. The power must be at least 4 so the boundary stays C1 with a
  /// well-conditioned gradient.
  static Domain rounded_box(const Vec& center, const Vec& half_widths, double power) {
    if (!(power >= 4.0)) throw ConfigurationError("rounded box power must be >= 4");
    if (center.size() != half_widths.size()) throw ConfigurationError("rounded box center/width mismatch");
    const int n = static_cast<int>(center.size());
    Vec lo = center - half_widths;
    Vec hi = center + half_widths;
    return Domain(
        "rounded-box(p=" + fmt(power) + ")", n,
        [center, half_widths, power](const Vec& x) {
          double acc = 0.0;
          for (Eigen::Index d = 0; d < x.size(); ++d) acc += std::pow(std::abs((x[d] - center[d]) / half_widths[d]), power);
          return (acc - 1.0) / power;
        },
        [center, half_widths, power](const Vec& x) -> Vec {
          Vec g(x.size());
          for (Eigen::Index d = 0; d < x.size(); ++d) {
            const double u = (x[d] - center[d]) / half_widths[d];
            g[d] = std::copysign(std::pow(std::abs(u), power - 1.0), u) / half_widths[d];
          }
          return g;
        },
        lo, hi);
  }

  /// Same domain described by lambda * g.
  [[nodiscard]] Domain rescaled(double lambda) const {
    if (!(lambda > 0.0)) throw ConfigurationError("rescaling factor must be positive");
    auto g = g_;
    auto grad = grad_;
    return Domain(label_, dim_, [g, lambda](const Vec& x) { return lambda * g(x); },
                  [grad, lambda](const Vec& x) -> Vec { return lambda * grad(x); }, lower_, upper_);
  }

  const std::string& label() const { return label_; }
  int dim() const { return dim_; }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }

  double level(const Vec& x) const { return g_(x); }
  Vec gradient(const Vec& x) const { return grad_(x); }
  bool contains(const Vec& x) const { return g_(x) < 0.0; }
  bool contains_closure(const Vec& x) const { return g_(x) <= 0.0; }

  Vec unit_normal(const Vec& x) const {
    const Vec grad = grad_(x);
    const double norm = grad.norm();
    if (!(norm > 1e-12)) throw GeometryError("gradient of the implicit function vanishes: boundary is not C1 here");
    return grad / norm;
  }

  /// Grid with spacing h covering the bounding box. A nonzero `offset` (in
  /// cells, within [0, 1)) shifts cell faces off the box corner.
  Grid covering_grid(double h, double offset = 0.0) const {
    if (!(offset >= 0.0 && offset < 1.0)) throw ParameterError("grid offset must lie in [0, 1)");
    if (offset == 0.0) return Grid::covering(lower_, upper_, h);
    const Vec lo = lower_.array() - offset * h;
    const Vec hi = upper_.array() + (1.0 - offset) * h;
    return Grid::covering(lo, hi, h);
  }

 private:
  static std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }

  std::string label_;
  int dim_;
  Implicit g_;
  Gradient grad_;
  Vec lower_;
  Vec upper_;
};

/// Probe points for sup-over-D estimates: the centers of a `per_axis`^n grid
/// over the bounding box that lie in the closed domain.
inline std::vector<Vec> probe_points(const Domain& domain, std::size_t per_axis = 64) {
  const Vec extent = domain.upper() - domain.lower();
  Grid::Index counts{1, 1, 1};
  for (int d = 0; d < domain.dim(); ++d) counts[d] = per_axis;
  // Non-cubic boxes: use the largest extent and clip.
  const double h = extent.maxCoeff() / static_cast<double>(per_axis);
  for (int d = 0; d < domain.dim(); ++d) {
    counts[d] = static_cast<std::size_t>(std::max(1.0, std::ceil(extent[d] / h - 1e-9)));
  }
  const Grid grid(domain.dim(), domain.lower(), h, counts);
  std::vector<Vec> points;
  points.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Vec c = grid.center(i);
    if (domain.contains_closure(c)) points.push_back(std::move(c));
  }
  return points;
}

/// delta_f(t): half the largest |div f(x, t)| over the probe points.
inline double divergence_bound(const VectorField& field, double t, std::span<const Vec> probes) {
  if (!field.has_divergence()) throw ConfigurationError("field has neither analytic nor numeric divergence");
  double sup = 0.0;
  for (const Vec& x : probes) sup = std::max(sup, std::abs(field.divergence(x, t)));
  return 0.5 * sup;
}

inline double divergence_bound(const VectorField& field, double t, const Domain& domain,
                               std::size_t per_axis = 64) {
  const auto probes = probe_points(domain, per_axis);
  return divergence_bound(field, t, probes);
}

struct GrowthQuadrature {
  std::size_t panels = 256;     ///< Simpson panels over [s, t]; rounded up to even.
  std::size_t probe_per_axis = 64;
};

/// c_f(s, t) = exp of the integral of delta_f over [s, t], by composite
/// Simpson. Autonomous fields have constant delta_f and use the closed form.
inline double growth_constant(const VectorField& field, const Domain& domain, double s, double t,
                              const GrowthQuadrature& quad = {}) {
  if (s > t) throw DomainError("growth_constant requires s <= t");
  if (s == t) return 1.0;
  const auto probes = probe_points(domain, quad.probe_per_axis);
  if (field.is_autonomous()) return std::exp(divergence_bound(field, s, probes) * (t - s));
  std::size_t panels = std::max<std::size_t>(2, quad.panels);
  if (panels % 2) ++panels;
  const double h = (t - s) / static_cast<double>(panels);
  double acc = divergence_bound(field, s, probes) + divergence_bound(field, t, probes);
  for (std::size_t k = 1; k < panels; ++k) {
    acc += (k % 2 ? 4.0 : 2.0) * divergence_bound(field, s + static_cast<double>(k) * h, probes);
  }
  return std::exp(acc * h / 3.0);
}

/// Sanity check of the declared bound on |f| at the probe points and times.
/// Returns the largest observed |f|.
inline double check_declared_bound(const VectorField& field, const Domain& domain, std::span<const double> times,
                                   std::size_t per_axis = 32) {
  double observed = 0.0;
  for (const Vec& x : probe_points(domain, per_axis)) {
    for (double t : times) observed = std::max(observed, field(x, t).norm());
  }
  if (observed > field.declared_bound() * (1.0 + 1e-9) + 1e-12) {
    throw ConfigurationError("declared field bound " + std::to_string(field.declared_bound()) +
                             " is exceeded at a probe point (observed " + std::to_string(observed) + ")");
  }
  return observed;
}

/// |<n(x), f(x, t)>| with n the unit outward normal at the boundary point x.
/// Zero means f is tangent to the boundary. Invariant under g -> lambda g.
inline double tangency_score(const Domain& domain, const VectorField& field, const Vec& x, double t,
                             double boundary_tol = 1e-6) {
  const double g = domain.level(x);
  if (!(std::abs(g) <= boundary_tol)) {
    throw DomainError("tangency_score needs a boundary point (|g| = " + std::to_string(std::abs(g)) + ")");
  }
  return std::abs(domain.unit_normal(x).dot(field(x, t)));
}

}  // namespace exitflow
