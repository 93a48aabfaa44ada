#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "exitflow/domain.hpp"
#include "exitflow/errors.hpp"
#include "exitflow/fields.hpp"
#include "exitflow/grid_function.hpp"
#include "exitflow/linalg.hpp"
#include "exitflow/parallel.hpp"
#include "exitflow/philox.hpp"

namespace exitflow {

/// Shared parameters of an Euler-Maruyama ensemble.
struct EnsembleConfig {
  double eps = 0.0;
  double dt = 1e-3;
  std::size_t samples = 1000;
  std::uint64_t seed = 1;
  std::size_t workers = 0;
};

/// One Euler-Maruyama path of dy = f dt + eps dw, killed on leaving D.
struct SdePath {
  double eps = 0.0;
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> increments;   ///< Wiener increments w(t_{k+1}) - w(t_k).
  bool exited = false;
  std::size_t exit_step = 0;     ///< Index of the first state outside D.
  double exit_time = 0.0;
  Vec exit_point;
};

/// Monte-Carlo mean with its standard error.
struct McEstimate {
  std::string target;
  double mean = 0.0;
  double std_error = 0.0;  ///< Sample standard deviation / sqrt(N).
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double eps = 0.0;
  double dt = 0.0;
};

namespace detail {

inline void validate_ensemble(double eps, double dt, double s, double T) {
  if (!(eps >= 0.0)) throw ParameterError("eps must be nonnegative");
  if (!(dt > 0.0)) throw ParameterError("time step must be positive");
  if (s > T) throw ParameterError("need s <= T");
}

struct EmOutcome {
  bool killed = false;
  double exit_time = 0.0;
  Vec exit_point;
  Vec final_state;
};

/// Euler-Maruyama kernel. `on_step(t, y, h, fraction)` is called for every
/// step before it is taken; `fraction` < 1 only for the step in which the
/// path is killed (the linearly interpolated share of the step spent in D).
template <class OnStep, class OnState>
EmOutcome euler_maruyama(const VectorField& field, const Domain* domain, double eps, const Vec& x, double s,
                         double T, double dt, PathStream& stream, OnStep&& on_step, OnState&& on_state) {
  EmOutcome out;
  Vec y = x;
  double t = s;
  double g = domain ? domain->level(y) : -1.0;
  if (domain && g >= 0.0) {
    out.killed = true;
    out.exit_time = s;
    out.exit_point = y;
    out.final_state = y;
    return out;
  }
  const int n = static_cast<int>(x.size());
  Vec dw(n);
  std::size_t k = 0;
  while (t < T) {
    double h = dt;
    bool last = false;
    if (T - t <= dt * (1.0 + 1e-9)) {
      h = T - t;
      last = true;
    }
    const double sq = std::sqrt(h);
    for (int i = 0; i < n; ++i) dw[i] = eps > 0.0 ? sq * stream.normal() : 0.0;
    Vec next = y + h * field(y, t) + eps * dw;
    const double t_next = last ? T : s + static_cast<double>(k + 1) * dt;
    if (domain) {
      const double g_next = domain->level(next);
      if (g_next >= 0.0) {
        const double frac = g / (g - g_next);
        on_step(t, y, h, frac, dw);
        out.killed = true;
        out.exit_time = t + frac * h;
        out.exit_point = y + frac * (next - y);
        out.final_state = next;
        on_state(t_next, next);
        return out;
      }
      g = g_next;
    }
    on_step(t, y, h, 1.0, dw);
    y = next;
    t = t_next;
    ++k;
    on_state(t, y);
  }
  out.final_state = y;
  return out;
}

inline McEstimate summarize(std::string target, const std::vector<double>& values, const EnsembleConfig& cfg) {
  McEstimate est;
  est.target = std::move(target);
  est.samples = values.size();
  est.seed = cfg.seed;
  est.eps = cfg.eps;
  est.dt = cfg.dt;
  const double n = static_cast<double>(values.size());
  est.mean = pairwise_sum(values) / n;
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - est.mean) * (values[i] - est.mean);
  const double var = values.size() > 1 ? pairwise_sum(sq) / (n - 1.0) : 0.0;
  est.std_error = std::sqrt(var / n);
  return est;
}

}  // namespace detail

/// Simulates one killed path; eps = 0 reduces to Euler stepping of the ODE.
inline SdePath simulate_path(const VectorField& field, const Domain& domain, double eps, const Vec& x, double s,
                             double T, double dt, std::uint64_t seed, std::uint64_t path_index = 0) {
  detail::validate_ensemble(eps, dt, s, T);
  if (!domain.contains(x)) throw DomainError("simulate_path: start must lie in D");
  SdePath path;
  path.eps = eps;
  path.dt = dt;
  path.times.push_back(s);
  path.states.push_back(x);
  PathStream stream(seed, path_index, StreamTag::wiener);
  const auto outcome = detail::euler_maruyama(
      field, &domain, eps, x, s, T, dt, stream,
      [&path](double, const Vec&, double, double, const Vec& dw) { path.increments.push_back(dw); },
      [&path](double t, const Vec& y) {
        path.times.push_back(t);
        path.states.push_back(y);
      });
  path.exited = outcome.killed;
  if (outcome.killed) {
    path.exit_step = path.states.size() - 1;
    path.exit_time = outcome.exit_time;
    path.exit_point = outcome.exit_point;
  }
  return path;
}

/// Estimate of U_eps(x, s) = M zeta(y(T)) Ind{survived}.
inline McEstimate mc_terminal(const VectorField& field, const Domain& domain, const ScalarData& zeta, const Vec& x,
                              double s, double T, const EnsembleConfig& cfg) {
  detail::validate_ensemble(cfg.eps, cfg.dt, s, T);
  if (cfg.samples < 2) throw ParameterError("need at least two samples");
  if (!domain.contains(x)) throw DomainError("mc_terminal: start must lie in D");
  std::vector<double> values(cfg.samples, 0.0);
  const auto zero = zeta.constant_value();
  if (!(zero && *zero == 0.0)) {
    parallel_for(
        cfg.samples,
        [&](std::size_t i) {
          PathStream stream(cfg.seed, i, StreamTag::wiener);
          const auto out = detail::euler_maruyama(
              field, &domain, cfg.eps, x, s, T, cfg.dt, stream, [](double, const Vec&, double, double, const Vec&) {},
              [](double, const Vec&) {});
          values[i] = out.killed ? 0.0 : zeta(out.final_state, T);
        },
        cfg.workers);
  }
  return detail::summarize("U_eps", values, cfg);
}

/// Estimate of V_eps(x, s) = M integral of phi over [s, tau_eps], left-point
/// rule per step with the killing step cut at the interpolated exit time.
inline McEstimate mc_integral(const VectorField& field, const Domain& domain, const ScalarData& phi, const Vec& x,
                              double s, double T, const EnsembleConfig& cfg) {
  detail::validate_ensemble(cfg.eps, cfg.dt, s, T);
  if (cfg.samples < 2) throw ParameterError("need at least two samples");
  if (!domain.contains(x)) throw DomainError("mc_integral: start must lie in D");
  std::vector<double> values(cfg.samples, 0.0);
  const auto zero = phi.constant_value();
  if (!(zero && *zero == 0.0)) {
    parallel_for(
        cfg.samples,
        [&](std::size_t i) {
          PathStream stream(cfg.seed, i, StreamTag::wiener);
          double acc = 0.0;
          detail::euler_maruyama(
              field, &domain, cfg.eps, x, s, T, cfg.dt, stream,
              [&](double t, const Vec& y, double h, double frac, const Vec&) { acc += phi(y, t) * h * frac; },
              [](double, const Vec&) {});
          values[i] = acc;
        },
        cfg.workers);
  }
  return detail::summarize("V_eps", values, cfg);
}

/// Estimate of M sup_t |y_eps(t) - y(t)|^2 over [s, T], where y is the
/// noise-free Euler path on the same time grid. Paths are not killed: the
/// deviation compares the two flows on the whole interval.
inline McEstimate path_deviation(const VectorField& field, const Domain& domain, const Vec& x, double s, double T,
                                 const EnsembleConfig& cfg) {
  detail::validate_ensemble(cfg.eps, cfg.dt, s, T);
  if (cfg.samples < 2) throw ParameterError("need at least two samples");
  if (!domain.contains(x)) throw DomainError("path_deviation: start must lie in D");
  std::vector<Vec> reference{x};
  {
    PathStream unused(cfg.seed, 0, StreamTag::wiener);
    detail::euler_maruyama(
        field, nullptr, 0.0, x, s, T, cfg.dt, unused, [](double, const Vec&, double, double, const Vec&) {},
        [&reference](double, const Vec& y) { reference.push_back(y); });
  }
  std::vector<double> values(cfg.samples, 0.0);
  if (cfg.eps > 0.0) {
    parallel_for(
        cfg.samples,
        [&](std::size_t i) {
          PathStream stream(cfg.seed, i, StreamTag::wiener);
          double sup = 0.0;
          std::size_t k = 0;
          detail::euler_maruyama(
              field, nullptr, cfg.eps, x, s, T, cfg.dt, stream, [](double, const Vec&, double, double, const Vec&) {},
              [&](double, const Vec& y) {
                ++k;
                sup = std::max(sup, (y - reference[k]).squaredNorm());
              });
          values[i] = sup;
        },
        cfg.workers);
  }
  return detail::summarize("deviation", values, cfg);
}

/// Histogram estimate of the killed sub-density at time t.
struct DensityEstimate {
  GridFunction density;
  GridFunction standard_error;
  double band = 0.0;       ///< L2 norm of the per-cell standard errors.
  double mass = 0.0;       ///< Surviving fraction times the initial mass.
  std::size_t samples = 0;
};

/// Starts are drawn from rho binned on `grid` (cell chosen by inverse CDF,
/// then uniform inside the cell); surviving endpoints are histogrammed and
/// normalised by N * cell volume, then scaled by the initial mass.
inline DensityEstimate mc_density(const VectorField& field, const Domain& domain, const ScalarData& rho, double s,
                                  double t, const Grid& grid, const EnsembleConfig& cfg) {
  detail::validate_ensemble(cfg.eps, cfg.dt, s, t);
  if (cfg.samples < 2) throw ParameterError("need at least two samples");
  if (rho.role() != DataRole::density) throw DataError("mc_density needs density data");
  const GridFunction binned = GridFunction::sample(grid, domain, rho, s);
  const double vol = grid.cell_volume();
  std::vector<double> cumulative;
  std::vector<std::size_t> cells;
  double total = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (binned.active(i) && binned[i] > 0.0) {
      total += binned[i] * vol;
      cumulative.push_back(total);
      cells.push_back(i);
    }
  }
  if (cells.empty()) throw DataError("initial density has no mass on the grid");

  constexpr std::size_t kDead = static_cast<std::size_t>(-1);
  std::vector<std::size_t> landing(cfg.samples, kDead);
  parallel_for(
      cfg.samples,
      [&](std::size_t i) {
        PathStream init(cfg.seed, i, StreamTag::initial_state);
        const double u = init.uniform() * total;
        auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        const std::size_t cell = cells[static_cast<std::size_t>(it - cumulative.begin())];
        Vec x = grid.center(cell);
        for (int d = 0; d < grid.dim(); ++d) x[d] += (init.uniform() - 0.5) * grid.spacing();
        if (!domain.contains(x)) return;  // sampled point fell outside D in a boundary cell
        PathStream stream(cfg.seed, i, StreamTag::wiener);
        const auto out = detail::euler_maruyama(
            field, &domain, cfg.eps, x, s, t, cfg.dt, stream, [](double, const Vec&, double, double, const Vec&) {},
            [](double, const Vec&) {});
        if (out.killed) return;
        const auto where = grid.locate(out.final_state);
        if (where && binned.active(*where)) landing[i] = *where;
      },
      cfg.workers);

  std::vector<double> counts(grid.size(), 0.0);
  std::size_t alive = 0;
  for (std::size_t c : landing) {
    if (c != kDead) {
      counts[c] += 1.0;
      ++alive;
    }
  }
  const double n = static_cast<double>(cfg.samples);
  std::vector<double> density(grid.size(), 0.0);
  std::vector<double> error(grid.size(), 0.0);
  double band2 = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double p = counts[i] / n;
    density[i] = p * total / vol;
    error[i] = std::sqrt(p * (1.0 - p) / n) * total / vol;
    band2 += error[i] * error[i] * vol;
  }
  DensityEstimate est{GridFunction(grid, binned.mask(), std::move(density)),
                      GridFunction(grid, binned.mask(), std::move(error)), std::sqrt(band2),
                      total * static_cast<double>(alive) / n, cfg.samples};
  return est;
}

}  // namespace exitflow
