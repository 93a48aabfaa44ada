#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "exitflow/domain.hpp"
#include "exitflow/errors.hpp"
#include "exitflow/fields.hpp"
#include "exitflow/grid_function.hpp"
#include "exitflow/philox.hpp"

namespace exitflow {

enum class Direction { forward, backward };

/// Finite-volume discretization of the transport-diffusion operator
///   A p = -div(f p) + (eps^2 / 2) Laplacian p
/// on the active cells of a grid, with zero ghost values outside D.
///
/// Advection is first-order upwind in flux form; diffusion is the centered
/// five-point (2n+1-point) Laplacian. The backward (value) operator is the
/// exact matrix transpose of the forward (density) operator.
class TransportDiscretization {
 public:
  TransportDiscretization(VectorField field, const Domain& domain, Grid grid, double eps)
      : field_(std::move(field)), grid_(std::move(grid)), eps_(eps) {
    if (!(eps >= 0.0)) throw ParameterError("eps must be nonnegative");
    if (grid_.dim() != domain.dim() || field_.dim() != domain.dim()) {
      throw ShapeError("field, domain and grid dimensions differ");
    }
    mask_ = GridFunction::domain_mask(grid_, domain);
    local_.assign(grid_.size(), -1);
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      if (mask_[i]) {
        local_[i] = static_cast<std::int64_t>(active_.size());
        active_.push_back(i);
      }
    }
    build_topology();
    if (field_.is_autonomous()) static_speeds_ = face_speeds(0.0);
  }

  const VectorField& field() const { return field_; }
  const Grid& grid() const { return grid_; }
  double eps() const { return eps_; }
  std::size_t active_size() const { return active_.size(); }
  const std::vector<std::uint8_t>& mask() const { return mask_; }

  /// Sum over axes of |f_i| bounded via the declared bound.
  double cfl_speed() const { return std::sqrt(static_cast<double>(grid_.dim())) * field_.declared_bound(); }

  std::vector<double> compress(const GridFunction& g) const {
    if (!(g.grid() == grid_) || g.mask() != mask_) throw ShapeError("grid function does not match the solver grid");
    std::vector<double> out(active_.size());
    for (std::size_t k = 0; k < active_.size(); ++k) out[k] = g[active_[k]];
    return out;
  }

  GridFunction expand(std::span<const double> compact) const {
    std::vector<double> values(grid_.size(), 0.0);
    for (std::size_t k = 0; k < active_.size(); ++k) values[active_[k]] = compact[k];
    return GridFunction(grid_, mask_, std::move(values));
  }

  /// Samples data on active cell centers at time t.
  std::vector<double> sample(const ScalarData& data, double t) const {
    std::vector<double> out(active_.size());
    for (std::size_t k = 0; k < active_.size(); ++k) out[k] = data(grid_.center(active_[k]), t);
    return out;
  }

  double norm(std::span<const double> compact) const {
    std::vector<double> sq(compact.size());
    for (std::size_t k = 0; k < compact.size(); ++k) sq[k] = compact[k] * compact[k];
    return std::sqrt(pairwise_sum(sq) * grid_.cell_volume());
  }

  double inner(std::span<const double> a, std::span<const double> b) const {
    std::vector<double> prod(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) prod[k] = a[k] * b[k];
    return pairwise_sum(prod) * grid_.cell_volume();
  }

  /// Forward step p <- D(dt) (I + dt C(t)) p.
  void forward_step(std::vector<double>& p, double t, double dt, std::vector<double>& scratch) const {
    advect(p, scratch, t, dt);
    p.swap(scratch);
    if (eps_ > 0.0) diffuse(p, dt);
  }

  /// Transposed step u <- (I + dt C(t))^T D(dt) u.
  void backward_step(std::vector<double>& u, double t, double dt, std::vector<double>& scratch) const {
    if (eps_ > 0.0) diffuse(u, dt);
    advect_transpose(u, scratch, t, dt);
    u.swap(scratch);
  }

 private:
  struct Face {
    std::int64_t left;   // local index or -1 for a ghost cell
    std::int64_t right;
    int axis;
    Vec center;
  };

  using SparseMatrix = Eigen::SparseMatrix<double>;
  using Factorization = Eigen::SimplicialLDLT<SparseMatrix>;

  void build_topology() {
    const int n = grid_.dim();
    const double h = grid_.spacing();
    neighbors_.assign(active_.size() * 2 * static_cast<std::size_t>(n), -1);
    for (std::size_t k = 0; k < active_.size(); ++k) {
      const std::size_t flat = active_[k];
      const auto idx = grid_.unflatten(flat);
      const Vec c = grid_.center(flat);
      for (int d = 0; d < n; ++d) {
        const std::size_t stride = grid_.stride(d);
        std::int64_t right = -1;
        std::int64_t left = -1;
        if (idx[d] + 1 < grid_.count(d)) right = local_[flat + stride];
        if (idx[d] > 0) left = local_[flat - stride];
        neighbors_[(k * n + d) * 2] = left;
        neighbors_[(k * n + d) * 2 + 1] = right;
        Vec fc = c;
        fc[d] += 0.5 * h;
        faces_.push_back(Face{static_cast<std::int64_t>(k), right, d, fc});
        if (left < 0) {
          Vec lc = c;
          lc[d] -= 0.5 * h;
          faces_.push_back(Face{-1, static_cast<std::int64_t>(k), d, lc});
        }
      }
    }
  }

  std::vector<double> face_speeds(double t) const {
    std::vector<double> speeds(faces_.size());
    for (std::size_t i = 0; i < faces_.size(); ++i) speeds[i] = field_(faces_[i].center, t)[faces_[i].axis];
    return speeds;
  }

  void advect(const std::vector<double>& p, std::vector<double>& out, double t, double dt) const {
    std::vector<double> local_speeds;
    const std::vector<double>* speeds = &static_speeds_;
    if (!field_.is_autonomous()) {
      local_speeds = face_speeds(t);
      speeds = &local_speeds;
    }
    out = p;
    const double r = dt / grid_.spacing();
    for (std::size_t i = 0; i < faces_.size(); ++i) {
      const Face& f = faces_[i];
      const double a = (*speeds)[i];
      const double pl = f.left >= 0 ? p[f.left] : 0.0;
      const double pr = f.right >= 0 ? p[f.right] : 0.0;
      const double flux = r * (std::max(a, 0.0) * pl + std::min(a, 0.0) * pr);
      if (f.left >= 0) out[f.left] -= flux;
      if (f.right >= 0) out[f.right] += flux;
    }
  }

  void advect_transpose(const std::vector<double>& u, std::vector<double>& out, double t, double dt) const {
    std::vector<double> local_speeds;
    const std::vector<double>* speeds = &static_speeds_;
    if (!field_.is_autonomous()) {
      local_speeds = face_speeds(t);
      speeds = &local_speeds;
    }
    out = u;
    const double r = dt / grid_.spacing();
    for (std::size_t i = 0; i < faces_.size(); ++i) {
      const Face& f = faces_[i];
      const double a = (*speeds)[i];
      const double ul = f.left >= 0 ? u[f.left] : 0.0;
      const double ur = f.right >= 0 ? u[f.right] : 0.0;
      const double jump = r * (ur - ul);
      if (f.left >= 0) out[f.left] += std::max(a, 0.0) * jump;
      if (f.right >= 0) out[f.right] += std::min(a, 0.0) * jump;
    }
  }

  /// (B u)_k with B = (eps^2/2) discrete Laplacian, zero ghosts.
  void apply_laplacian(std::span<const double> u, std::vector<double>& out) const {
    const int n = grid_.dim();
    const double coef = 0.5 * eps_ * eps_ / (grid_.spacing() * grid_.spacing());
    out.assign(u.size(), 0.0);
    for (std::size_t k = 0; k < u.size(); ++k) {
      double acc = -2.0 * n * u[k];
      for (int j = 0; j < 2 * n; ++j) {
        const std::int64_t nb = neighbors_[k * 2 * n + j];
        if (nb >= 0) acc += u[nb];
      }
      out[k] = coef * acc;
    }
  }

  std::shared_ptr<const Factorization> factorization(double dt) const {
    std::lock_guard lock(cache_mutex_);
    auto it = factor_cache_.find(dt);
    if (it != factor_cache_.end()) return it->second;
    const int n = grid_.dim();
    const double coef = 0.5 * dt * 0.5 * eps_ * eps_ / (grid_.spacing() * grid_.spacing());
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(active_.size() * (2 * n + 1));
    for (std::size_t k = 0; k < active_.size(); ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      triplets.emplace_back(row, row, 1.0 + coef * 2.0 * n);
      for (int j = 0; j < 2 * n; ++j) {
        const std::int64_t nb = neighbors_[k * 2 * n + j];
        if (nb >= 0) triplets.emplace_back(row, static_cast<Eigen::Index>(nb), -coef);
      }
    }
    SparseMatrix m(static_cast<Eigen::Index>(active_.size()), static_cast<Eigen::Index>(active_.size()));
    m.setFromTriplets(triplets.begin(), triplets.end());
    auto fact = std::make_shared<Factorization>();
    fact->compute(m);
    if (fact->info() != Eigen::Success) throw ConfigurationError("Crank-Nicolson matrix factorization failed");
    if (factor_cache_.size() > 8) factor_cache_.clear();
    factor_cache_.emplace(dt, fact);
    return fact;
  }

  /// u <- (I - dt/2 B)^{-1} (I + dt/2 B) u. B is symmetric, so this map is
  /// its own transpose.
  void diffuse(std::vector<double>& u, double dt) const {
    std::vector<double> bu;
    apply_laplacian(u, bu);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(u.size()));
    for (std::size_t k = 0; k < u.size(); ++k) rhs[static_cast<Eigen::Index>(k)] = u[k] + 0.5 * dt * bu[k];
    const auto fact = factorization(dt);
    const Eigen::VectorXd sol = fact->solve(rhs);
    for (std::size_t k = 0; k < u.size(); ++k) u[k] = sol[static_cast<Eigen::Index>(k)];
  }

  VectorField field_;
  Grid grid_;
  double eps_;
  std::vector<std::uint8_t> mask_;
  std::vector<std::int64_t> local_;
  std::vector<std::size_t> active_;
  std::vector<std::int64_t> neighbors_;
  std::vector<Face> faces_;
  std::vector<double> static_speeds_;
  mutable std::mutex cache_mutex_;
  mutable std::map<double, std::shared_ptr<const Factorization>> factor_cache_;
};

struct SchemeOptions {
  double dt = 0.0;          ///< Nominal step; 0 derives it from the CFL condition.
  double cfl_safety = 0.9;
  double horizon = 0.0;     ///< Anchors the global time grid; 0 uses the operator end time.
};

/// Evolution operator over [s, t]: forward maps densities at s to t,
/// backward maps values at t to s.
///
/// Time nodes are the global grid k * dt strictly inside (s, t) plus the end
/// points, so operators over adjacent intervals compose step by step.
class EvolutionOperator {
 public:
  EvolutionOperator(std::shared_ptr<const TransportDiscretization> disc, Direction direction, double s, double t,
                    double dt)
      : disc_(std::move(disc)), direction_(direction), s_(s), t_(t), dt_(dt) {
    if (s > t) throw ParameterError("evolution operator needs s <= t");
    if (!(dt > 0.0)) throw ParameterError("evolution operator needs a positive time step");
  }

  const TransportDiscretization& discretization() const { return *disc_; }
  std::shared_ptr<const TransportDiscretization> shared_discretization() const { return disc_; }
  Direction direction() const { return direction_; }
  double start() const { return s_; }
  double end() const { return t_; }
  double dt() const { return dt_; }
  double eps() const { return disc_->eps(); }

  std::vector<double> nodes() const { return nodes_between(s_, t_); }

  std::vector<double> nodes_between(double a, double b) const {
    std::vector<double> out{a};
    if (b <= a) return out;
    const double tol = 1e-9 * dt_;
    auto k = static_cast<long long>(std::floor(a / dt_)) + 1;
    for (;; ++k) {
      const double node = static_cast<double>(k) * dt_;
      if (node >= b - tol) break;
      if (node > a + tol) out.push_back(node);
    }
    out.push_back(b);
    return out;
  }

  /// Distance from `time` to the nearest global node.
  double snap_distance(double time) const {
    const double k = std::round(time / dt_);
    return std::abs(time - k * dt_);
  }

  [[nodiscard]] EvolutionOperator restricted(double a, double b) const {
    return EvolutionOperator(disc_, direction_, a, b, dt_);
  }

  [[nodiscard]] EvolutionOperator transposed() const {
    return EvolutionOperator(disc_, direction_ == Direction::forward ? Direction::backward : Direction::forward, s_,
                             t_, dt_);
  }

  /// Applies the operator to compact (active-cell) data.
  std::vector<double> apply_compact(std::vector<double> v) const {
    const auto times = nodes();
    std::vector<double> scratch;
    if (direction_ == Direction::forward) {
      for (std::size_t n = 0; n + 1 < times.size(); ++n) disc_->forward_step(v, times[n], times[n + 1] - times[n], scratch);
    } else {
      for (std::size_t n = times.size() - 1; n > 0; --n) {
        disc_->backward_step(v, times[n - 1], times[n] - times[n - 1], scratch);
      }
    }
    return v;
  }

  GridFunction apply(const GridFunction& g) const { return disc_->expand(apply_compact(disc_->compress(g))); }

 private:
  std::shared_ptr<const TransportDiscretization> disc_;
  Direction direction_;
  double s_;
  double t_;
  double dt_;
};

/// Nominal time step: CFL-limited for advection, plus an accuracy cap
/// h / (4 eps^2) on the Crank-Nicolson diffusion. The horizon is split into
/// a whole number of steps. A caller-supplied step is checked against the
/// stability limit h / speed.
inline double scheme_time_step(const TransportDiscretization& disc, double horizon, const SchemeOptions& opts) {
  if (!(horizon > 0.0)) throw ParameterError("time horizon must be positive");
  const double h = disc.grid().spacing();
  const double speed = disc.cfl_speed();
  const double admissible = speed > 0.0 ? h / speed : std::numeric_limits<double>::infinity();
  double dt = 0.0;
  if (opts.dt > 0.0) {
    if (opts.dt > admissible * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << "CFL condition violated: dt=" << opts.dt << " but the upwind scheme needs dt <= " << admissible;
      throw ConfigurationError(os.str());
    }
    dt = opts.dt;
  } else {
    dt = opts.cfl_safety * admissible;
    if (disc.eps() > 0.0) dt = std::min(dt, 0.25 * h / (disc.eps() * disc.eps()));
    if (!std::isfinite(dt)) dt = h;
  }
  const double steps = std::ceil(horizon / dt - 1e-9);
  return horizon / std::max(1.0, steps);
}

inline EvolutionOperator make_operator(const VectorField& field, const Domain& domain, const Grid& grid, double eps,
                                       Direction direction, double s, double t, const SchemeOptions& opts = {}) {
  auto disc = std::make_shared<const TransportDiscretization>(field, domain, grid, eps);
  const double horizon = opts.horizon > 0.0 ? opts.horizon : t;
  if (t > horizon * (1.0 + 1e-12)) throw ParameterError("operator end time exceeds the scheme horizon");
  const double dt = scheme_time_step(*disc, horizon, opts);
  return EvolutionOperator(std::move(disc), direction, s, t, dt);
}

/// Grid functions at increasing time nodes.
struct GridFamily {
  std::vector<double> times;
  std::vector<GridFunction> values;

  const GridFunction& front() const { return values.front(); }
  const GridFunction& back() const { return values.back(); }

  /// Snapshot at the node nearest to t.
  const GridFunction& nearest(double t) const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (std::abs(times[i] - t) < std::abs(times[best] - t)) best = i;
    }
    return values[best];
  }
};

/// Runs the forward problem from op.start(); observer(t, compact) sees the
/// density at every node.
template <class Observer>
void run_forward(const EvolutionOperator& op, const GridFunction& rho, Observer&& observer) {
  if (op.direction() != Direction::forward) throw ParameterError("solve_forward needs a forward operator");
  const auto& disc = op.discretization();
  std::vector<double> p = disc.compress(rho);
  std::vector<double> scratch;
  const auto times = op.nodes();
  observer(times.front(), std::span<const double>(p));
  for (std::size_t n = 0; n + 1 < times.size(); ++n) {
    disc.forward_step(p, times[n], times[n + 1] - times[n], scratch);
    observer(times[n + 1], std::span<const double>(p));
  }
}

/// Runs the backward problem from op.end(); observer(t, compact) sees the
/// value at every node in decreasing time.
template <class Observer>
void run_backward(const EvolutionOperator& op, const GridFunction& zeta, Observer&& observer) {
  if (op.direction() != Direction::backward) throw ParameterError("solve_backward needs a backward operator");
  const auto& disc = op.discretization();
  std::vector<double> u = disc.compress(zeta);
  std::vector<double> scratch;
  const auto times = op.nodes();
  observer(times.back(), std::span<const double>(u));
  for (std::size_t n = times.size() - 1; n > 0; --n) {
    disc.backward_step(u, times[n - 1], times[n] - times[n - 1], scratch);
    observer(times[n - 1], std::span<const double>(u));
  }
}

/// Densities p(., t_k) at every `stride`-th node (and the last one).
inline GridFamily solve_forward(const EvolutionOperator& op, const GridFunction& rho, std::size_t stride = 1) {
  GridFamily family;
  const std::size_t last = op.nodes().size() - 1;
  std::size_t k = 0;
  run_forward(op, rho, [&](double t, std::span<const double> p) {
    if (k % std::max<std::size_t>(1, stride) == 0 || k == last) {
      family.times.push_back(t);
      family.values.push_back(op.discretization().expand(p));
    }
    ++k;
  });
  return family;
}

/// Values u(., t_k) at every `stride`-th node (and the first one), in
/// increasing time; the last entry is the terminal data.
inline GridFamily solve_backward(const EvolutionOperator& op, const GridFunction& zeta, std::size_t stride = 1) {
  GridFamily family;
  const std::size_t last = op.nodes().size() - 1;
  std::size_t k = 0;
  run_backward(op, zeta, [&](double t, std::span<const double> u) {
    if (k % std::max<std::size_t>(1, stride) == 0 || k == last) {
      family.times.push_back(t);
      family.values.push_back(op.discretization().expand(u));
    }
    ++k;
  });
  std::reverse(family.times.begin(), family.times.end());
  std::reverse(family.values.begin(), family.values.end());
  return family;
}

/// Trapezoid weights of the node sequence.
inline std::vector<double> trapezoid_weights(std::span<const double> times) {
  std::vector<double> w(times.size(), 0.0);
  for (std::size_t n = 0; n + 1 < times.size(); ++n) {
    const double h = times[n + 1] - times[n];
    w[n] += 0.5 * h;
    w[n + 1] += 0.5 * h;
  }
  return w;
}

/// Backward transport with source phi and zero terminal value; observer(t,
/// compact) sees v at every node in decreasing time. Built so that, for
/// every rho and the forward densities p on the same nodes,
///   (v(., s), rho) = sum_k w_k (phi(., t_k), p(., t_k))
/// with trapezoid weights w_k, up to round-off.
template <class Observer>
void run_source(const EvolutionOperator& op, const ScalarData& phi, Observer&& observer) {
  if (op.direction() != Direction::backward) throw ParameterError("value_from_source needs a backward operator");
  const auto& disc = op.discretization();
  const auto times = op.nodes();
  const std::size_t n_nodes = times.size();
  std::vector<double> v(disc.active_size(), 0.0);
  observer(times.back(), std::span<const double>(v));
  if (n_nodes == 1) return;

  // r accumulates sum_{m >= n} c_m L_{t_n, t_m} phi_m with interior trapezoid
  // weights c_m; v_n adds only the half step to the right of t_n.
  std::vector<double> scratch;
  std::vector<double> r = disc.sample(phi, times.back());
  const double last_half = 0.5 * (times[n_nodes - 1] - times[n_nodes - 2]);
  for (double& x : r) x *= last_half;
  for (std::size_t n = n_nodes - 1; n > 0; --n) {
    const double t0 = times[n - 1];
    const double h = times[n] - t0;
    disc.backward_step(r, t0, h, scratch);
    const std::vector<double> phi_n = disc.sample(phi, t0);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = r[k] + 0.5 * h * phi_n[k];
    observer(t0, std::span<const double>(v));
    if (n > 1) {
      const double w = 0.5 * (times[n] - times[n - 2]);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] += w * phi_n[k];
    }
  }
}

/// v(., t_k) at every `stride`-th node (and the first one), in increasing
/// time; the last entry is the zero terminal value.
inline GridFamily value_from_source(const EvolutionOperator& op, const ScalarData& phi, std::size_t stride = 1) {
  GridFamily family;
  const std::size_t last = op.nodes().size() - 1;
  std::size_t k = 0;
  run_source(op, phi, [&](double t, std::span<const double> v) {
    if (k % std::max<std::size_t>(1, stride) == 0 || k == last) {
      family.times.push_back(t);
      family.values.push_back(op.discretization().expand(v));
    }
    ++k;
  });
  std::reverse(family.times.begin(), family.times.end());
  std::reverse(family.values.begin(), family.values.end());
  return family;
}

struct ComposeResult {
  double residual = 0.0;        ///< |L*_{s,t} rho - L*_{theta,t} L*_{s,theta} rho| / |rho|
  double snap_distance = 0.0;   ///< Distance from theta to the nearest time node.
};

/// Semigroup check for two forward operators over adjacent intervals.
inline ComposeResult compose_check(const EvolutionOperator& first, const EvolutionOperator& second,
                                   const GridFunction& rho) {
  if (first.direction() != Direction::forward || second.direction() != Direction::forward) {
    throw ParameterError("compose_check expects forward operators");
  }
  if (first.end() != second.start()) throw ParameterError("compose_check: intervals do not meet");
  if (&first.discretization() != &second.discretization() || first.dt() != second.dt()) {
    throw ParameterError("compose_check: operators use different discretizations");
  }
  ComposeResult res;
  res.snap_distance = first.snap_distance(first.end());
  const double norm = l2_norm(rho);
  if (norm == 0.0) return res;
  const GridFunction whole = first.restricted(first.start(), second.end()).apply(rho);
  const GridFunction split = second.apply(first.apply(rho));
  res.residual = l2_distance(whole, split) / norm;
  return res;
}

/// Operator norm of a forward or backward operator by power iteration on
/// L* L, started from a random grid function.
inline double estimate_operator_norm(const EvolutionOperator& op, int iterations = 30, std::uint64_t seed = 7) {
  const auto& disc = op.discretization();
  std::vector<double> x(disc.active_size());
  PathStream stream(seed, 0, StreamTag::uniform_start);
  for (double& v : x) v = stream.uniform() - 0.5;
  const EvolutionOperator adjoint = op.transposed();
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const double nx = disc.norm(x);
    if (nx == 0.0) return 0.0;
    for (double& v : x) v /= nx;
    x = adjoint.apply_compact(op.apply_compact(x));
    sigma = std::sqrt(disc.norm(x));
  }
  return sigma;
}

}  // namespace exitflow
