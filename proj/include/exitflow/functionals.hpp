#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "exitflow/domain.hpp"
#include "exitflow/errors.hpp"
#include "exitflow/fields.hpp"
#include "exitflow/flow.hpp"
#include "exitflow/grid_function.hpp"
#include "exitflow/parallel.hpp"

namespace exitflow {

struct FunctionalOptions {
  FlowOptions flow;
  ExitOptions exit;
  std::size_t workers = 0;
};

/// Values collected along one characteristic.
struct PathFunctionals {
  bool survived = true;       ///< open exit time > T
  double tau = 0.0;           ///< min(T, open exit time)
  Vec terminal_state;         ///< y(T) when survived
  double integral = 0.0;      ///< integral of phi over [s, tau]
};

namespace detail {

/// Three-point Gauss-Legendre rule for phi along a dense step over [a, b].
inline double gauss3(const DenseStep<Vec>& step, const ScalarData& phi, double a, double b) {
  if (!(b > a)) return 0.0;
  static constexpr std::array<double, 3> kNodes{-0.7745966692414834, 0.0, 0.7745966692414834};
  static constexpr std::array<double, 3> kWeights{5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double acc = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double t = mid + half * kNodes[i];
    acc += kWeights[i] * phi(step(t), t);
  }
  return acc * half;
}

}  // namespace detail

/// Integrates one characteristic from (x, s), stopping at the first open
/// exit or at T. The running integral is truncated exactly at tau.
inline PathFunctionals evaluate_path(const VectorField& field, const Domain& domain, const Vec& x, double s, double T,
                                     const ScalarData* phi, const FunctionalOptions& opts = {}) {
  if (!domain.contains(x)) throw DomainError("start point must lie in the open domain");
  if (!(s >= 0.0) || s > T) throw DomainError("need 0 <= s <= T");
  PathFunctionals out;
  out.terminal_state = x;
  out.tau = T;

  ExitScanner scanner(domain, opts.exit, false);
  scanner.start(s, x);
  double before_prev = 0.0;  // integral over all steps before `prev`
  double prev_integral = 0.0;
  std::optional<DenseStep<Vec>> prev;

  walk_flow(field, x, s, T, opts.flow, [&](const DenseStep<Vec>& st) {
    const double this_integral = phi ? detail::gauss3(st, *phi, st.t0, st.t1()) : 0.0;
    scanner.feed(st);
    if (scanner.open_exit()) {
      const double tau = *scanner.open_exit();
      out.survived = false;
      out.tau = std::min(T, tau);
      if (phi) {
        if (tau >= st.t0 || !prev) {
          out.integral = before_prev + prev_integral + detail::gauss3(st, *phi, st.t0, std::max(st.t0, tau));
        } else {
          out.integral = before_prev + detail::gauss3(*prev, *phi, prev->t0, tau);
        }
      }
      return false;
    }
    before_prev += prev_integral;
    prev_integral = this_integral;
    prev = st;
    out.terminal_state = st.end();
    return true;
  });
  if (out.survived) out.integral = before_prev + prev_integral;
  return out;
}

/// U(x, s) = zeta(y(T)) Ind{open exit > T}.
inline double terminal_functional(const VectorField& field, const Domain& domain, const ScalarData& zeta,
                                  const Vec& x, double s, double T, const FunctionalOptions& opts = {}) {
  const PathFunctionals path = evaluate_path(field, domain, x, s, T, nullptr, opts);
  if (!path.survived) return 0.0;
  return zeta(path.terminal_state, T);
}

/// V(x, s) = integral of phi(y(t), t) over [s, tau].
inline double integral_functional(const VectorField& field, const Domain& domain, const ScalarData& phi,
                                  const Vec& x, double s, double T, const FunctionalOptions& opts = {}) {
  return evaluate_path(field, domain, x, s, T, &phi, opts).integral;
}

/// U(., s) for terminal data or V(., s) for running data, one characteristic
/// per active cell center.
inline GridFunction functional_grid(const VectorField& field, const Domain& domain, const ScalarData& data, double s,
                                    double T, const Grid& grid, const FunctionalOptions& opts = {}) {
  if (data.role() == DataRole::density) throw DataError("functional_grid needs terminal or running data");
  auto mask = GridFunction::domain_mask(grid, domain);
  std::vector<double> values(grid.size(), 0.0);
  const auto zero = data.constant_value();
  if (!(zero && *zero == 0.0)) {
    parallel_for(
        grid.size(),
        [&](std::size_t i) {
          if (!mask[i]) return;
          const Vec c = grid.center(i);
          values[i] = data.role() == DataRole::terminal ? terminal_functional(field, domain, data, c, s, T, opts)
                                                        : integral_functional(field, domain, data, c, s, T, opts);
        },
        opts.workers);
  }
  return GridFunction(grid, std::move(mask), std::move(values));
}

/// Characteristics pushforward of rho from time s to t:
///   p(x, t) = rho(y(s), s) exp(-int_s^t div f(y(r), r) dr)
/// where y is the trajectory through (x, t), or 0 if it leaves D on [s, t].
/// The density solution of the forward problem for eps = 0.
inline GridFunction pushforward_density(const VectorField& field, const Domain& domain, const ScalarData& rho,
                                        double s, double t, const Grid& grid, const FunctionalOptions& opts = {}) {
  if (rho.role() != DataRole::density) throw DataError("pushforward needs density data");
  if (!(s <= t)) throw DomainError("pushforward needs s <= t");
  if (!field.has_divergence()) throw ConfigurationError("pushforward needs the divergence of the field");
  const VectorField reversed(
      field.dim(), [field, t](const Vec& z, double r) -> Vec { return -field(z, t - r); }, field.declared_bound());
  const ScalarData div = ScalarData::from_function(
      DataRole::running, [field, t](const Vec& z, double r) { return field.divergence(z, t - r); }, "divergence");
  auto mask = GridFunction::domain_mask(grid, domain);
  std::vector<double> values(grid.size(), 0.0);
  parallel_for(
      grid.size(),
      [&](std::size_t i) {
        if (!mask[i]) return;
        const PathFunctionals back = evaluate_path(reversed, domain, grid.center(i), 0.0, t - s, &div, opts);
        if (back.survived) values[i] = rho(back.terminal_state, s) * std::exp(-back.integral);
      },
      opts.workers);
  return GridFunction(grid, std::move(mask), std::move(values));
}

}  // namespace exitflow
