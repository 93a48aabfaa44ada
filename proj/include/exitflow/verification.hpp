#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "exitflow/domain.hpp"
#include "exitflow/flow.hpp"
#include "exitflow/functionals.hpp"
#include "exitflow/grid_function.hpp"
#include "exitflow/parallel.hpp"
#include "exitflow/pde.hpp"
#include "exitflow/philox.hpp"
#include "exitflow/scenarios.hpp"
#include "exitflow/stochastic.hpp"

namespace exitflow {

enum class Relation { at_most, at_least, info };

struct Measure {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  Relation relation = Relation::info;

  bool ok() const {
    switch (relation) {
      case Relation::at_most: return value <= limit;
      case Relation::at_least: return value >= limit;
      case Relation::info: return true;
    }
    return false;
  }
};

inline const char* to_string(Relation r) {
  switch (r) {
    case Relation::at_most: return "<=";
    case Relation::at_least: return ">=";
    case Relation::info: return "info";
  }
  return "?";
}

struct RefinementTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

/// Outcome of one verification check. Passes iff every asserted measure is
/// within its limit.
struct CheckReport {
  std::string check;
  std::string scenario;
  std::vector<std::pair<std::string, std::string>> parameters;
  std::vector<Measure> measures;
  RefinementTable table;
  std::vector<std::string> notes;

  bool passed() const {
    return std::all_of(measures.begin(), measures.end(), [](const Measure& m) { return m.ok(); });
  }

  void param(const std::string& key, double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    parameters.emplace_back(key, os.str());
  }
  void param(const std::string& key, const std::string& v) { parameters.emplace_back(key, v); }
  void at_most(const std::string& name, double value, double limit) {
    measures.push_back({name, value, limit, Relation::at_most});
  }
  void at_least(const std::string& name, double value, double limit) {
    measures.push_back({name, value, limit, Relation::at_least});
  }
  void info(const std::string& name, double value) { measures.push_back({name, value, 0.0, Relation::info}); }
  void require(const std::string& name, bool condition) {
    measures.push_back({name, condition ? 1.0 : 0.0, 1.0, Relation::at_least});
  }

  const Measure* find(const std::string& name) const {
    for (const auto& m : measures) {
      if (m.name == name) return &m;
    }
    return nullptr;
  }
};

/// Residuals below this are treated as round-off.
inline constexpr double kRoundoffFloor = 1e-12;

/// Least-squares slope of log(y) against log(x); empty when any y is at the
/// round-off floor.
inline std::optional<double> fitted_order(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) return std::nullopt;
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(ys[i] > kRoundoffFloor) || !(xs[i] > 0.0)) return std::nullopt;
    mx += std::log(xs[i]);
    my += std::log(ys[i]);
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(xs.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = std::log(xs[i]) - mx;
    sxy += dx * (std::log(ys[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

/// Number of i with ys[i+1] > ys[i] (ys ordered by decreasing resolution
/// parameter, so a well-behaved sequence never increases).
inline std::size_t increases(std::span<const double> ys) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
    if (ys[i + 1] > ys[i]) ++n;
  }
  return n;
}

inline bool all_at_floor(std::span<const double> ys) {
  return std::all_of(ys.begin(), ys.end(), [](double y) { return std::abs(y) <= kRoundoffFloor; });
}

/// Asserts decay of ys (indexed by decreasing xs) at rate >= min_order, or
/// round-off residuals throughout.
inline void assert_order(CheckReport& report, const std::string& name, std::span<const double> xs,
                         std::span<const double> ys, double min_order) {
  if (all_at_floor(ys)) {
    report.info(name + " order", std::numeric_limits<double>::infinity());
    report.notes.push_back(name + ": residuals are at round-off on every level, order not fitted");
    return;
  }
  const auto order = fitted_order(xs, ys);
  report.at_least(name + " order", order.value_or(0.0), min_order);
}

/// c_f(s, t) for all s <= t in [t0, t1] from one table of delta_f.
class GrowthTable {
 public:
  GrowthTable(const VectorField& field, const Domain& domain, double t0, double t1, std::size_t panels = 512,
              std::size_t per_axis = 64)
      : t0_(t0), t1_(t1) {
    const auto probes = probe_points(domain, per_axis);
    if (field.is_autonomous() || t1 == t0) {
      rate_ = divergence_bound(field, t0, probes);
      return;
    }
    cumulative_.assign(panels + 1, 0.0);
    double prev = divergence_bound(field, t0, probes);
    const double dt = (t1 - t0) / static_cast<double>(panels);
    for (std::size_t k = 1; k <= panels; ++k) {
      const double cur = divergence_bound(field, t0 + static_cast<double>(k) * dt, probes);
      cumulative_[k] = cumulative_[k - 1] + 0.5 * dt * (prev + cur);
      prev = cur;
    }
  }

  double operator()(double s, double t) const { return std::exp(integral(t) - integral(s)); }

 private:
  double integral(double t) const {
    if (cumulative_.empty()) return rate_ * (t - t0_);
    const double pos = std::clamp((t - t0_) / (t1_ - t0_), 0.0, 1.0) * static_cast<double>(cumulative_.size() - 1);
    const auto k = std::min(static_cast<std::size_t>(pos), cumulative_.size() - 2);
    const double w = pos - static_cast<double>(k);
    return (1.0 - w) * cumulative_[k] + w * cumulative_[k + 1];
  }

  double t0_;
  double t1_;
  double rate_ = 0.0;
  std::vector<double> cumulative_;
};

/// int_t^T ||phi(., r)|| dr on a grid, for any t in [t0, T].
class SourceNormTable {
 public:
  SourceNormTable(const ScalarData& phi, const Grid& grid, const Domain& domain, double t0, double T,
                  std::size_t panels = 64)
      : t0_(t0), T_(T) {
    if (const auto c = phi.constant_value()) {
      constant_norm_ = l2_norm(GridFunction::sample(grid, domain, [v = *c](const Vec&) { return v; }));
      return;
    }
    tail_.assign(panels + 1, 0.0);
    std::vector<double> norms(panels + 1);
    const double dt = (T - t0) / static_cast<double>(panels);
    for (std::size_t k = 0; k <= panels; ++k) {
      norms[k] = l2_norm(GridFunction::sample(grid, domain, phi, t0 + static_cast<double>(k) * dt));
    }
    for (std::size_t k = panels; k > 0; --k) tail_[k - 1] = tail_[k] + 0.5 * dt * (norms[k] + norms[k - 1]);
  }

  double operator()(double t) const {
    if (constant_norm_) return *constant_norm_ * (T_ - t);
    const double pos = std::clamp((t - t0_) / (T_ - t0_), 0.0, 1.0) * static_cast<double>(tail_.size() - 1);
    const auto k = std::min(static_cast<std::size_t>(pos), tail_.size() - 2);
    const double w = pos - static_cast<double>(k);
    return (1.0 - w) * tail_[k] + w * tail_[k + 1];
  }

 private:
  double t0_;
  double T_;
  std::optional<double> constant_norm_;
  std::vector<double> tail_;
};

inline double safe_ratio(double num, double den) {
  if (den > 0.0) return num / den;
  return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// duality

struct DualityOptions {
  double grid_offset = 0.0;
  SchemeOptions scheme;
  FunctionalOptions functional;
  std::size_t time_panels = 62;  ///< Simpson panels for the pushforward side.
  double tolerance = 0.02;
  double adjoint_tolerance = 1e-10;
};

struct DualityValues {
  double lhs = 0.0;            ///< (v(., s), rho) from the backward solve
  double rhs_discrete = 0.0;   ///< sum_k w_k (phi_k, p_k) from the forward solve
  double rhs_density = 0.0;    ///< int (phi, p) dt with the characteristics density (eps = 0)
  double rhs_value = 0.0;      ///< (V(., s), rho) with V along characteristics (eps = 0)
  double residual = 0.0;
  double adjointness = 0.0;
  double dt = 0.0;
};

inline double relative_gap(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

/// Both sides of the duality between the value of the source problem and
/// the density: (v(., s), rho) = int_s^T (phi, p) dt.
///
/// The left side comes from the backward solver. For eps = 0 the right side
/// is computed without the PDE: once with the characteristics density and
/// once as (V(., s), rho); the residual is the larger gap. For eps > 0 only
/// the discrete forward route is available and the residual equals the
/// adjointness residual.
inline DualityValues duality_values(const Scenario& sc, double s, double T, double h, double eps,
                                    const DualityOptions& opts = {}) {
  const Grid grid = sc.domain.covering_grid(h, opts.grid_offset);
  SchemeOptions scheme = opts.scheme;
  if (scheme.horizon == 0.0) scheme.horizon = T;
  const auto back = make_operator(sc.field, sc.domain, grid, eps, Direction::backward, s, T, scheme);
  const auto& disc = back.discretization();
  const GridFunction rho = GridFunction::sample(grid, sc.domain, sc.rho, s);
  const std::vector<double> rho_c = disc.compress(rho);

  DualityValues out;
  out.dt = back.dt();
  run_source(back, sc.phi, [&](double t, std::span<const double> v) {
    if (t == s) out.lhs = disc.inner(v, rho_c);
  });
  const auto nodes = back.nodes();
  const auto w = trapezoid_weights(nodes);
  std::size_t k = 0;
  std::vector<double> terms(nodes.size());
  run_forward(back.transposed(), rho, [&](double t, std::span<const double> p) {
    terms[k] = w[k] * disc.inner(disc.sample(sc.phi, t), p);
    ++k;
  });
  out.rhs_discrete = pairwise_sum(terms);
  out.adjointness = relative_gap(out.lhs, out.rhs_discrete);

  if (eps == 0.0) {
    const std::size_t panels = opts.time_panels + opts.time_panels % 2;
    std::vector<double> simpson(panels + 1);
    for (std::size_t j = 0; j <= panels; ++j) {
      const double t = s + (T - s) * static_cast<double>(j) / static_cast<double>(panels);
      const double weight = (j == 0 || j == panels) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
      const GridFunction p = pushforward_density(sc.field, sc.domain, sc.rho, s, t, grid, opts.functional);
      simpson[j] = weight * inner_product(GridFunction::sample(grid, sc.domain, sc.phi, t), p);
    }
    out.rhs_density = pairwise_sum(simpson) * (T - s) / (3.0 * static_cast<double>(panels));
    const GridFunction V = functional_grid(sc.field, sc.domain, sc.phi, s, T, grid, opts.functional);
    out.rhs_value = inner_product(V, rho);
    out.residual = std::max(relative_gap(out.lhs, out.rhs_density), relative_gap(out.lhs, out.rhs_value));
  } else {
    out.rhs_density = out.rhs_value = out.rhs_discrete;
    out.residual = out.adjointness;
  }
  return out;
}

inline CheckReport duality_residual(const Scenario& sc, double s, double T, double h, double eps,
                                    const DualityOptions& opts = {}) {
  CheckReport r{"duality", sc.name, {}, {}, {}, {}};
  const DualityValues d = duality_values(sc, s, T, h, eps, opts);
  r.param("s", s);
  r.param("T", T);
  r.param("h", h);
  r.param("dt", d.dt);
  r.param("eps", eps);
  r.param("grid_offset", opts.grid_offset);
  r.info("lhs", d.lhs);
  r.info("rhs discrete", d.rhs_discrete);
  r.info("rhs density route", d.rhs_density);
  r.info("rhs value route", d.rhs_value);
  r.at_most("residual", d.residual, opts.tolerance);
  r.at_most("adjointness", d.adjointness, opts.adjoint_tolerance);
  if (eps > 0.0) r.notes.push_back("eps > 0: right side from the discrete forward solve only");
  r.table.columns = {"h", "lhs", "rhs_density", "rhs_value", "residual", "adjointness"};
  r.table.rows.push_back({h, d.lhs, d.rhs_density, d.rhs_value, d.residual, d.adjointness});
  return r;
}

/// Duality residual over a refinement sequence (coarse to fine).
inline CheckReport duality_refinement(const Scenario& sc, double s, double T, std::span<const double> spacings,
                                      double eps, const DualityOptions& opts = {}, double min_order = 0.8) {
  CheckReport r{"duality-refinement", sc.name, {}, {}, {}, {}};
  r.param("s", s);
  r.param("T", T);
  r.param("eps", eps);
  r.param("grid_offset", opts.grid_offset);
  r.table.columns = {"h", "lhs", "rhs_density", "rhs_value", "residual", "adjointness"};
  std::vector<double> hs;
  std::vector<double> res;
  double worst_adjoint = 0.0;
  for (double h : spacings) {
    const DualityValues d = duality_values(sc, s, T, h, eps, opts);
    r.table.rows.push_back({h, d.lhs, d.rhs_density, d.rhs_value, d.residual, d.adjointness});
    hs.push_back(h);
    res.push_back(d.residual);
    worst_adjoint = std::max(worst_adjoint, d.adjointness);
  }
  r.at_most("residual at finest h", res.back(), opts.tolerance);
  r.at_most("adjointness", worst_adjoint, opts.adjoint_tolerance);
  if (!all_at_floor(res)) {
    r.at_most("monotone violations", static_cast<double>(increases(res)), 1.0);
    if (increases(res) == 1) r.notes.push_back("one non-monotone refinement step (mask re-alignment)");
  }
  assert_order(r, "residual", hs, res, min_order);
  return r;
}

// ---------------------------------------------------------------------------
// equivalence of characteristics and PDE routes

enum class Expectation { none, relative, order };

struct EquivalenceOptions {
  std::vector<double> spacings{1.0 / 64, 1.0 / 128, 1.0 / 256};
  Expectation terminal = Expectation::order;
  Expectation running = Expectation::relative;
  double relative_tolerance = 0.02;
  double min_order = 0.5;
  double grid_offset = 0.0;
  std::optional<double> horizon;  ///< Overrides the scenario horizon.
  SchemeOptions scheme;
  FunctionalOptions functional;
};

/// Grid-L2 distance between U, V along characteristics and the PDE values
/// u, v at time s, over a refinement sequence.
inline CheckReport equivalence_check(const Scenario& sc, double s, const EquivalenceOptions& opts = {}) {
  CheckReport r{"equivalence", sc.name, {}, {}, {}, {}};
  const double T = opts.horizon.value_or(sc.horizon);
  r.param("s", s);
  r.param("T", T);
  r.param("grid_offset", opts.grid_offset);
  r.table.columns = {"h", "dist_U", "rel_U", "dist_V", "rel_V", "l1_U", "l1_V"};
  std::vector<double> hs;
  std::vector<double> l1u;
  std::vector<double> l1v;
  std::vector<double> du;
  std::vector<double> ru;
  std::vector<double> dv;
  std::vector<double> rv;
  for (double h : opts.spacings) {
    const Grid grid = sc.domain.covering_grid(h, opts.grid_offset);
    SchemeOptions scheme = opts.scheme;
    if (scheme.horizon == 0.0) scheme.horizon = T;
    const auto back = make_operator(sc.field, sc.domain, grid, 0.0, Direction::backward, s, T, scheme);
    const auto& disc = back.discretization();

    double dist_u = 0.0;
    double norm_u = 0.0;
    if (opts.terminal != Expectation::none) {
      const GridFunction U = functional_grid(sc.field, sc.domain, sc.zeta, s, T, grid, opts.functional);
      const GridFunction u = back.apply(GridFunction::sample(grid, sc.domain, sc.zeta, T));
      dist_u = l2_distance(U, u);
      norm_u = l2_norm(U);
      l1u.push_back(l1_distance(U, u));
    }
    double dist_v = 0.0;
    double norm_v = 0.0;
    if (opts.running != Expectation::none) {
      const GridFunction V = functional_grid(sc.field, sc.domain, sc.phi, s, T, grid, opts.functional);
      std::vector<double> v_s;
      run_source(back, sc.phi, [&](double t, std::span<const double> v) {
        if (t == s) v_s.assign(v.begin(), v.end());
      });
      const GridFunction v = disc.expand(v_s);
      dist_v = l2_distance(V, v);
      norm_v = l2_norm(V);
      l1v.push_back(l1_distance(V, v));
    }
    hs.push_back(h);
    du.push_back(dist_u);
    ru.push_back(safe_ratio(dist_u, norm_u));
    dv.push_back(dist_v);
    rv.push_back(safe_ratio(dist_v, norm_v));
    r.table.rows.push_back({h, dist_u, ru.back(), dist_v, rv.back(), l1u.empty() ? 0.0 : l1u.back(),
                            l1v.empty() ? 0.0 : l1v.back()});
  }
  auto judge = [&](const std::string& name, Expectation e, const std::vector<double>& dist,
                   const std::vector<double>& rel, const std::vector<double>& l1) {
    if (e == Expectation::none) return;
    r.info(name + " relative distance at finest h", rel.back());
    if (const auto l1_order = fitted_order(hs, l1)) r.info(name + " L1 distance order", *l1_order);
    if (e == Expectation::relative) r.at_most(name + " relative distance", rel.back(), opts.relative_tolerance);
    if (e == Expectation::order) assert_order(r, name + " distance", hs, dist, opts.min_order);
    if (!all_at_floor(dist)) {
      const auto bumps = increases(dist);
      r.at_most(name + " monotone violations", static_cast<double>(bumps), 1.0);
      if (bumps == 1) r.notes.push_back(name + ": one non-monotone refinement step (mask re-alignment)");
    }
  };
  judge("U", opts.terminal, du, ru, l1u);
  judge("V", opts.running, dv, rv, l1v);
  return r;
}

// ---------------------------------------------------------------------------
// L2 bounds

struct BoundOptions {
  double h = 1.0 / 256;
  std::vector<double> s_values;  ///< Characteristics sweep; empty means {0, T/2}.
  double eps = 0.0;
  double slack = 1.05;
  std::optional<double> saturation_floor;  ///< Asserted lower bound on the density ratio at T.
  SchemeOptions scheme;
  FunctionalOptions functional;
};

/// Ratios of ||U||, ||V|| (characteristics, at each s of the sweep) and of
/// ||p||, ||u||, ||v|| (PDE, at every time node) to their growth bounds
///   ||U(., s)|| <= c_f(s, T) ||zeta||,  ||V(., s)|| <= c_f(s, T) int_s^T ||phi||,
///   ||p(., t)|| <= c_f(0, t) ||rho||.
inline CheckReport bound_check(const Scenario& sc, const BoundOptions& opts = {}) {
  CheckReport r{"bounds", sc.name, {}, {}, {}, {}};
  const double T = sc.horizon;
  const Grid grid = sc.domain.covering_grid(opts.h);
  const GrowthTable c(sc.field, sc.domain, 0.0, T);
  const SourceNormTable phi_tail(sc.phi, grid, sc.domain, 0.0, T);
  const double zeta_norm = l2_norm(GridFunction::sample(grid, sc.domain, sc.zeta, T));
  const GridFunction rho = GridFunction::sample(grid, sc.domain, sc.rho, 0.0);
  const double rho_norm = l2_norm(rho);
  r.param("h", opts.h);
  r.param("eps", opts.eps);
  r.param("T", T);
  r.info("c0", c(0.0, T));

  std::vector<double> sweep = opts.s_values;
  if (sweep.empty()) sweep = {0.0, 0.5 * T};
  r.table.columns = {"s", "ratio_U", "ratio_V"};
  double worst_u_char = 0.0;
  double worst_v_char = 0.0;
  for (double s : sweep) {
    const GridFunction U = functional_grid(sc.field, sc.domain, sc.zeta, s, T, grid, opts.functional);
    const GridFunction V = functional_grid(sc.field, sc.domain, sc.phi, s, T, grid, opts.functional);
    const double ru = safe_ratio(l2_norm(U), c(s, T) * zeta_norm);
    const double rv = safe_ratio(l2_norm(V), c(s, T) * phi_tail(s));
    r.table.rows.push_back({s, ru, rv});
    worst_u_char = std::max(worst_u_char, ru);
    worst_v_char = std::max(worst_v_char, rv);
  }
  r.at_most("U ratio", worst_u_char, opts.slack);
  r.at_most("V ratio", worst_v_char, opts.slack);

  SchemeOptions scheme = opts.scheme;
  if (scheme.horizon == 0.0) scheme.horizon = T;
  const auto back = make_operator(sc.field, sc.domain, grid, opts.eps, Direction::backward, 0.0, T, scheme);
  const auto& disc = back.discretization();
  r.param("dt", back.dt());
  double worst_p = 0.0;
  double final_p = 0.0;
  run_forward(back.transposed(), rho, [&](double t, std::span<const double> p) {
    final_p = safe_ratio(disc.norm(p), c(0.0, t) * rho_norm);
    worst_p = std::max(worst_p, final_p);
  });
  double worst_u = 0.0;
  run_backward(back, GridFunction::sample(grid, sc.domain, sc.zeta, T), [&](double t, std::span<const double> u) {
    worst_u = std::max(worst_u, safe_ratio(disc.norm(u), c(t, T) * zeta_norm));
  });
  double worst_v = 0.0;
  run_source(back, sc.phi, [&](double t, std::span<const double> v) {
    if (t < T) worst_v = std::max(worst_v, safe_ratio(disc.norm(v), c(t, T) * phi_tail(t)));
  });
  r.at_most("p ratio", worst_p, opts.slack);
  r.at_most("u ratio", worst_u, opts.slack);
  r.at_most("v ratio", worst_v, opts.slack);
  if (opts.saturation_floor) {
    r.at_least("p ratio at T", final_p, *opts.saturation_floor);
  } else {
    r.info("p ratio at T", final_p);
  }
  return r;
}

// ---------------------------------------------------------------------------
// density identity

struct DensityMatchOptions {
  std::optional<ScalarData> rho;  ///< Overrides the scenario density.
  double mc_dt = 1e-3;
  double band_factor = 3.0;
  double sqrt_h_factor = 2.0;
  SchemeOptions scheme;
  FunctionalOptions functional;
  std::size_t workers = 0;
};

struct DensityMatch {
  CheckReport report;
  GridFunction pde;
  DensityEstimate mc;
  std::optional<GridFunction> characteristics;
};

/// PDE density, Monte Carlo histogram and (eps = 0) characteristics
/// pushforward at time t, compared pairwise in grid L2.
inline DensityMatch density_match_full(const Scenario& sc, double s, double t, double eps, double h, std::size_t n,
                                       std::uint64_t seed, const DensityMatchOptions& opts = {}) {
  const ScalarData rho = opts.rho.value_or(sc.rho);
  const Grid grid = sc.domain.covering_grid(h);
  SchemeOptions scheme = opts.scheme;
  if (scheme.horizon == 0.0) scheme.horizon = std::max(t, sc.horizon);
  const auto fwd = make_operator(sc.field, sc.domain, grid, eps, Direction::forward, s, t, scheme);
  GridFunction pde = fwd.apply(GridFunction::sample(grid, sc.domain, rho, s));

  EnsembleConfig cfg;
  cfg.eps = eps;
  cfg.dt = opts.mc_dt;
  cfg.samples = n;
  cfg.seed = seed;
  cfg.workers = opts.workers;
  DensityEstimate mc = mc_density(sc.field, sc.domain, rho, s, t, grid, cfg);

  CheckReport r{"density", sc.name, {}, {}, {}, {}};
  r.param("s", s);
  r.param("t", t);
  r.param("eps", eps);
  r.param("h", h);
  r.param("dt_pde", fwd.dt());
  r.param("dt_mc", opts.mc_dt);
  r.param("N", static_cast<double>(n));
  r.param("seed", static_cast<double>(seed));
  r.param("rho", rho.label());
  const double grid_tol = opts.sqrt_h_factor * std::sqrt(h);
  const double mc_tol = std::max(opts.band_factor * mc.band, grid_tol);
  r.info("mc band", mc.band);
  r.info("pde mass", mass(pde));
  r.info("mc mass", mc.mass);
  r.at_most("pde-mc distance", l2_distance(pde, mc.density), mc_tol);
  std::optional<GridFunction> ch;
  if (eps == 0.0) {
    ch = pushforward_density(sc.field, sc.domain, rho, s, t, grid, opts.functional);
    r.at_most("pde-characteristics distance", l2_distance(pde, *ch), grid_tol);
    r.at_most("mc-characteristics distance", l2_distance(mc.density, *ch), mc_tol);
  }
  return DensityMatch{std::move(r), std::move(pde), std::move(mc), std::move(ch)};
}

inline CheckReport density_match(const Scenario& sc, double s, double t, double eps, double h, std::size_t n,
                                 std::uint64_t seed, const DensityMatchOptions& opts = {}) {
  return density_match_full(sc, s, t, eps, h, n, seed, opts).report;
}

// ---------------------------------------------------------------------------
// one-sided continuity

struct ContinuityOptions {
  double h = 1.0 / 256;
  double eps = 0.0;
  double min_rate = 0.4;
  double weak_slack = 1.25;
  SchemeOptions scheme;
};

/// Test function prod_d cos(pi x_d / 2), which vanishes on the faces of
/// [-1, 1]^n.
inline double probe_xi(const Vec& x) {
  double v = 1.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) v *= std::cos(0.5 * std::numbers::pi * x[d]);
  return v;
}

inline Vec probe_xi_gradient(const Vec& x) {
  Vec g(x.size());
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    double v = -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * x[d]);
    for (Eigen::Index e = 0; e < x.size(); ++e) {
      if (e != d) v *= std::cos(0.5 * std::numbers::pi * x[e]);
    }
    g[d] = v;
  }
  return g;
}

/// Strong moduli ||p(theta + k) - p(theta)||, ||u(theta - k) - u(theta)||,
/// ||v(theta - k) - v(theta)|| over the step sequence k, asserted to decay
/// monotonically at a fitted rate. The opposite one-sided moduli are
/// reported but not asserted. The weak pairing (xi, p(theta + k) - p(theta))
/// is asserted against k ||p|| ||grad xi . f||.
inline CheckReport continuity_probe(const Scenario& sc, double theta, std::span<const double> steps,
                                    const ContinuityOptions& opts = {}) {
  CheckReport r{"continuity", sc.name, {}, {}, {}, {}};
  const double T = sc.horizon;
  const double kmax = *std::max_element(steps.begin(), steps.end());
  if (!(theta - kmax >= 0.0 && theta + kmax <= T)) throw ParameterError("continuity probe window leaves [0, T]");
  const Grid grid = sc.domain.covering_grid(opts.h);
  SchemeOptions scheme = opts.scheme;
  if (scheme.horizon == 0.0) scheme.horizon = T;
  const auto fwd = make_operator(sc.field, sc.domain, grid, opts.eps, Direction::forward, 0.0, theta, scheme);
  const auto back = fwd.transposed().restricted(theta, T);
  const auto& disc = fwd.discretization();
  r.param("theta", theta);
  r.param("h", opts.h);
  r.param("dt", fwd.dt());
  r.param("eps", opts.eps);

  const GridFunction rho = GridFunction::sample(grid, sc.domain, sc.rho, 0.0);
  const GridFunction zeta = GridFunction::sample(grid, sc.domain, sc.zeta, T);
  const GridFunction xi = GridFunction::sample(grid, sc.domain, [](const Vec& x) { return probe_xi(x); });
  auto value_at = [&](double t) {
    std::vector<double> out;
    run_source(fwd.transposed().restricted(t, T), sc.phi, [&](double node, std::span<const double> v) {
      if (node == t) out.assign(v.begin(), v.end());
    });
    return disc.expand(out);
  };

  const GridFunction p_theta = fwd.apply(rho);
  const GridFunction u_theta = back.apply(zeta);
  const GridFunction v_theta = value_at(theta);

  std::vector<double> ks(steps.begin(), steps.end());
  std::vector<double> right_p, left_p, left_u, right_u, left_v, right_v, weak, weak_bound;
  for (double k : ks) {
    const GridFunction p_right = fwd.restricted(theta, theta + k).apply(p_theta);
    const GridFunction p_left = fwd.restricted(0.0, theta - k).apply(rho);
    right_p.push_back(l2_distance(p_right, p_theta));
    left_p.push_back(l2_distance(p_left, p_theta));
    const GridFunction u_right = back.restricted(theta + k, T).apply(zeta);
    left_u.push_back(l2_distance(back.restricted(theta - k, theta).apply(u_theta), u_theta));
    right_u.push_back(l2_distance(u_right, u_theta));
    left_v.push_back(l2_distance(value_at(theta - k), v_theta));
    right_v.push_back(l2_distance(value_at(theta + k), v_theta));
    weak.push_back(std::abs(inner_product(xi, p_right - p_theta)));
    double flux = 0.0;
    for (double t : {theta, theta + 0.5 * k, theta + k}) {
      const GridFunction gf = GridFunction::sample(
          grid, sc.domain, [&](const Vec& x) { return probe_xi_gradient(x).dot(sc.field(x, t)); });
      flux = std::max(flux, l2_norm(gf));
    }
    weak_bound.push_back(k * flux * std::max(l2_norm(p_theta), l2_norm(p_right)));
  }
  r.table.columns = {"step", "right_p", "left_p", "left_u", "right_u", "left_v", "right_v", "weak_p", "weak_bound"};
  for (std::size_t i = 0; i < ks.size(); ++i) {
    r.table.rows.push_back(
        {ks[i], right_p[i], left_p[i], left_u[i], right_u[i], left_v[i], right_v[i], weak[i], weak_bound[i]});
  }

  auto decay = [&](const std::string& name, const std::vector<double>& ys, bool asserted) {
    if (all_at_floor(ys)) {
      r.info(name + " rate", std::numeric_limits<double>::infinity());
      return std::optional<double>{};
    }
    const auto rate = fitted_order(ks, ys);
    if (asserted) {
      r.at_most(name + " increases", static_cast<double>(increases(ys)), 0.0);
      r.at_least(name + " rate", rate.value_or(0.0), opts.min_rate);
    } else {
      r.info(name + " rate", rate.value_or(0.0));
    }
    return rate;
  };
  const auto rp = decay("right modulus p", right_p, true);
  const auto lp = decay("left modulus p", left_p, false);
  const auto lu = decay("left modulus u", left_u, true);
  const auto ru = decay("right modulus u", right_u, false);
  decay("left modulus v", left_v, true);
  decay("right modulus v", right_v, false);
  double weak_ratio = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) weak_ratio = std::max(weak_ratio, safe_ratio(weak[i], weak_bound[i]));
  r.at_most("weak pairing / bound", weak_ratio, opts.weak_slack);
  if (rp && lp && std::abs(*rp - *lp) > 0.2) r.notes.push_back("density moduli differ between the two sides");
  if (lu && ru && std::abs(*lu - *ru) > 0.2) r.notes.push_back("value moduli differ between the two sides");
  return r;
}

// ---------------------------------------------------------------------------
// tangency statistic

struct TangencyOptions {
  double time_tol = 1e-6;
  double max_mismatch = 0.01;
  FlowOptions flow;
  ExitOptions exit;
  std::size_t workers = 0;
};

/// Uniform point in D by rejection from the bounding box.
inline Vec uniform_start(const Domain& domain, std::uint64_t seed, std::uint64_t index) {
  PathStream stream(seed, index, StreamTag::uniform_start);
  const Vec lo = domain.lower();
  const Vec hi = domain.upper();
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Vec x(domain.dim());
    for (int d = 0; d < domain.dim(); ++d) x[d] = lo[d] + (hi[d] - lo[d]) * stream.uniform();
    if (domain.contains(x)) return x;
  }
  throw DomainError("could not sample a point inside the domain");
}

/// Fraction of uniform starts with open and closed exit times differing by
/// more than time_tol (or only one of them finite), and fractions of starts
/// whose exit tangency score is below each delta.
inline CheckReport tangency_statistic(const Scenario& sc, double s, std::size_t samples,
                                      std::span<const double> deltas, std::uint64_t seed,
                                      const TangencyOptions& opts = {}) {
  CheckReport r{"tangency", sc.name, {}, {}, {}, {}};
  r.param("s", s);
  r.param("T", sc.horizon);
  r.param("samples", static_cast<double>(samples));
  r.param("seed", static_cast<double>(seed));
  r.param("time_tol", opts.time_tol);
  std::vector<std::uint8_t> mismatch(samples, 0);
  std::vector<double> score(samples, std::numeric_limits<double>::infinity());
  parallel_for(
      samples,
      [&](std::size_t i) {
        const Vec x = uniform_start(sc.domain, seed, i);
        const ExitRecord rec = first_exit(sc.field, sc.domain, x, s, sc.horizon, opts.flow, opts.exit, true);
        const bool a = rec.open_exit.has_value();
        const bool b = rec.closed_exit.has_value();
        mismatch[i] = (a != b) || (a && b && std::abs(*rec.open_exit - *rec.closed_exit) > opts.time_tol);
        if (rec.tangency) score[i] = *rec.tangency;
      },
      opts.workers);
  const double n = static_cast<double>(samples);
  const double mismatch_fraction =
      static_cast<double>(std::count(mismatch.begin(), mismatch.end(), std::uint8_t{1})) / n;
  r.at_most("open/closed mismatch fraction", mismatch_fraction, opts.max_mismatch);
  r.table.columns = {"delta", "fraction_below"};
  std::vector<double> fractions;
  for (double delta : deltas) {
    const double f =
        static_cast<double>(std::count_if(score.begin(), score.end(), [delta](double v) { return v < delta; })) / n;
    fractions.push_back(f);
    r.table.rows.push_back({delta, f});
  }
  r.at_most("tangency fraction increases", static_cast<double>(increases(fractions)), 0.0);
  if (fractions.size() >= 2 && fractions.front() > 0.0) {
    r.require("tangency fraction shrinks", fractions.back() < fractions.front());
  }
  return r;
}

}  // namespace exitflow
