#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "exitflow/functionals.hpp"
#include "exitflow/pde.hpp"
#include "exitflow/scenarios.hpp"

using namespace exitflow;

namespace {

constexpr double kPi = std::numbers::pi;
const Domain kInterval = Domain::interval(-1, 1);
const VectorField kUnit = fields::constant(scalar_vec(1.0));
const VectorField kStill = fields::constant(scalar_vec(0.0));

GridFunction noise(const Grid& grid, const Domain& domain, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return GridFunction::sample(grid, domain, [&](const Vec&) { return u(rng); });
}

GridFunction terminal_values(const EvolutionOperator& back, const GridFunction& zeta) {
  return solve_backward(back, zeta, std::size_t{1} << 30).front();
}

}  // namespace

TEST(EvolutionOperator, EmptyIntervalIsIdentity) {
  const Grid grid = kInterval.covering_grid(1.0 / 32);
  const auto op = make_operator(kUnit, kInterval, grid, 0.1, Direction::forward, 0.4, 0.4, {0.0, 0.9, 1.0});
  const GridFunction g = noise(grid, kInterval, 1);
  EXPECT_EQ(l2_distance(op.apply(g), g), 0.0);
}

TEST(EvolutionOperator, DiscreteAdjointness) {
  const Scenario sc = builtin_scenario("box-wind");
  const Grid grid = sc.domain.covering_grid(1.0 / 32);
  for (double eps : {0.0, 0.3}) {
    const auto fwd = make_operator(sc.field, sc.domain, grid, eps, Direction::forward, 0.2, 1.7);
    const auto back = fwd.transposed();
    const GridFunction xi = noise(grid, sc.domain, 2);
    const GridFunction rho = noise(grid, sc.domain, 3);
    const double lhs = inner_product(back.apply(xi), rho);
    const double rhs = inner_product(xi, fwd.apply(rho));
    EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max({std::abs(lhs), std::abs(rhs), 1.0})) << "eps=" << eps;
  }
}

TEST(EvolutionOperator, NormBoundedByGrowthConstant) {
  const Grid grid = kInterval.covering_grid(1.0 / 64);
  const Scenario sc = builtin_scenario("contracting");
  for (double eps : {0.0, 0.2}) {
    const auto fwd = make_operator(sc.field, sc.domain, grid, eps, Direction::forward, 0.0, 1.0);
    const double c = growth_constant(sc.field, sc.domain, 0.0, 1.0);
    EXPECT_LE(estimate_operator_norm(fwd), c * 1.05);
    EXPECT_LE(estimate_operator_norm(fwd.transposed()), c * 1.05);
  }
}

TEST(EvolutionOperator, CflViolationNamesTheAdmissibleStep) {
  const Grid grid = kInterval.covering_grid(1.0 / 64);
  SchemeOptions opts;
  opts.dt = 0.1;
  try {
    make_operator(kUnit, kInterval, grid, 0.0, Direction::forward, 0.0, 1.0, opts);
    FAIL() << "expected a configuration error";
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("dt <= 0.015625"), std::string::npos) << e.what();
  }
  opts.dt = 1.0 / 128;
  EXPECT_NO_THROW(make_operator(kUnit, kInterval, grid, 0.0, Direction::forward, 0.0, 1.0, opts));
}

TEST(SolveBackward, HeatSurvivalOracle) {
  double oracle = 0.0;
  for (int k = 1; k < 200; k += 2) {
    oracle += 4.0 / (k * kPi) * std::sin(k * kPi / 2) * std::exp(-k * k * kPi * kPi / 8.0);
  }
  const Grid grid = kInterval.covering_grid(1.0 / 256);
  const auto back = make_operator(kStill, kInterval, grid, 1.0, Direction::backward, 0.0, 1.0);
  const GridFunction zeta = GridFunction::sample(grid, kInterval, [](const Vec&) { return 1.0; });
  const GridFunction u0 = terminal_values(back, zeta);
  // Average of the two cells adjacent to x = 0.
  const double at_zero = 0.5 * (u0[*grid.locate(scalar_vec(-1e-9))] + u0[*grid.locate(scalar_vec(1e-9))]);
  EXPECT_NEAR(at_zero, oracle, 0.01 * oracle);
}

TEST(SolveBackward, PaperCosSurvivalRegion) {
  const ScalarData one = ScalarData::constant(DataRole::terminal, 1.0);
  std::vector<double> distances;
  for (double h : {1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256}) {
    const Grid grid = kInterval.covering_grid(h);
    const auto back = make_operator(fields::cos_time(), kInterval, grid, 0.0, Direction::backward, 0.0, kPi);
    const GridFunction u0 = terminal_values(back, GridFunction::sample(grid, kInterval, one, kPi));
    const GridFunction oracle =
        GridFunction::sample(grid, kInterval, [](const Vec& x) { return x[0] < 0 ? 1.0 : 0.0; });
    distances.push_back(l2_distance(u0, oracle));
  }
  for (std::size_t i = 0; i + 1 < distances.size(); ++i) EXPECT_LT(distances[i + 1], distances[i]);
}

TEST(SolveBackward, ZeroDataStaysZero) {
  const Grid grid = kInterval.covering_grid(1.0 / 64);
  const auto back = make_operator(kUnit, kInterval, grid, 0.3, Direction::backward, 0.0, 1.0);
  const auto family = solve_backward(back, GridFunction::zeros(grid, kInterval));
  for (const auto& g : family.values) EXPECT_EQ(l2_norm(g), 0.0);
}

TEST(SolveBackward, TerminalValueAndMaskedZeros) {
  const Scenario sc = builtin_scenario("disk-rotation");
  const Grid grid = sc.domain.covering_grid(1.0 / 16);
  const auto back = make_operator(sc.field, sc.domain, grid, 0.1, Direction::backward, 0.0, 1.0);
  const GridFunction zeta = GridFunction::sample(grid, sc.domain, sc.zeta, 1.0);
  const auto family = solve_backward(back, zeta);
  EXPECT_EQ(family.times.back(), 1.0);
  EXPECT_EQ(l2_distance(family.back(), zeta), 0.0);
  for (const auto& g : family.values) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!g.active(i)) {
        EXPECT_EQ(g[i], 0.0);
      }
    }
  }
}

TEST(SolveForward, TranslationConvergesAtHalfOrder) {
  const ScalarData rho = data::box(DataRole::density, scalar_vec(-1.0), scalar_vec(0.0));
  std::vector<double> errors;
  const std::vector<double> hs{1.0 / 64, 1.0 / 256};
  for (double h : hs) {
    const Grid grid = kInterval.covering_grid(h);
    const auto fwd = make_operator(kUnit, kInterval, grid, 0.0, Direction::forward, 0.0, 0.5);
    const GridFunction p = fwd.apply(GridFunction::sample(grid, kInterval, rho, 0.0));
    const GridFunction oracle =
        GridFunction::sample(grid, kInterval, [](const Vec& x) { return std::abs(x[0]) < 0.5 ? 1.0 : 0.0; });
    errors.push_back(l2_distance(p, oracle));
  }
  const double order = std::log(errors[0] / errors[1]) / std::log(hs[0] / hs[1]);
  EXPECT_GT(order, 0.2);
  EXPECT_LE(errors[1], 2.0 * std::sqrt(hs[1]));
}

TEST(SolveForward, ContractionSaturatesTheBound) {
  const Scenario sc = builtin_scenario("contracting");
  const Grid grid = kInterval.covering_grid(1.0 / 256);
  const auto fwd = make_operator(sc.field, sc.domain, grid, 0.0, Direction::forward, 0.0, 1.0);
  const GridFunction rho = GridFunction::sample(grid, kInterval, sc.rho, 0.0);
  const double ratio = l2_norm(fwd.apply(rho)) / (std::exp(0.5) * l2_norm(rho));
  EXPECT_GT(ratio, 0.95);
  EXPECT_LE(ratio, 1.05);
}

TEST(SolveForward, StillFieldKeepsTheDensity) {
  const Scenario sc = builtin_scenario("contracting");
  const Grid grid = kInterval.covering_grid(1.0 / 64);
  const auto fwd = make_operator(kStill, kInterval, grid, 0.0, Direction::forward, 0.0, 2.0);
  const GridFunction rho = GridFunction::sample(grid, kInterval, sc.rho, 0.0);
  for (const auto& g : solve_forward(fwd, rho).values) EXPECT_EQ(l2_distance(g, rho), 0.0);
}

TEST(SolveForward, MassNonincreasingAndPositive) {
  const Scenario sc = builtin_scenario("box-wind");
  const Grid grid = sc.domain.covering_grid(1.0 / 32);
  const auto fwd = make_operator(sc.field, sc.domain, grid, 0.2, Direction::forward, 0.0, sc.horizon);
  const auto family = solve_forward(fwd, GridFunction::sample(grid, sc.domain, sc.rho, 0.0));
  double previous = mass(family.front());
  for (const auto& g : family.values) {
    EXPECT_LE(mass(g), previous * (1 + 1e-12));
    previous = mass(g);
    for (double v : g.values()) EXPECT_GE(v, -1e-14);
  }
}

TEST(SolveForward, StrideKeepsEndpoints) {
  const Grid grid = kInterval.covering_grid(1.0 / 32);
  const auto fwd = make_operator(kUnit, kInterval, grid, 0.0, Direction::forward, 0.0, 1.0);
  const auto all = solve_forward(fwd, GridFunction::zeros(grid, kInterval));
  const auto sparse = solve_forward(fwd, GridFunction::zeros(grid, kInterval), 5);
  EXPECT_EQ(sparse.times.front(), 0.0);
  EXPECT_EQ(sparse.times.back(), 1.0);
  EXPECT_LT(sparse.times.size(), all.times.size());
}

TEST(SolveForward, VanishingViscosity) {
  const Scenario sc = builtin_scenario("contracting");
  const Grid grid = kInterval.covering_grid(1.0 / 128);
  const GridFunction rho = GridFunction::sample(grid, kInterval, sc.rho, 0.0);
  SchemeOptions opts;
  opts.dt = 1.0 / 256;
  const GridFunction p0 = make_operator(sc.field, sc.domain, grid, 0.0, Direction::forward, 0.0, 1.0, opts).apply(rho);
  double previous = std::numeric_limits<double>::infinity();
  for (double eps : {0.2, 0.1, 0.05}) {
    const auto op = make_operator(sc.field, sc.domain, grid, eps, Direction::forward, 0.0, 1.0, opts);
    const double gap = l2_distance(op.apply(rho), p0);
    EXPECT_LT(gap, previous) << "eps=" << eps;
    previous = gap;
  }
}

TEST(ValueFromSource, ConstantDriftExitTime) {
  const ScalarData phi = ScalarData::constant(DataRole::running, 1.0);
  std::vector<double> distances;
  for (double h : {1.0 / 64, 1.0 / 256}) {
    const Grid grid = kInterval.covering_grid(h);
    const auto back = make_operator(kUnit, kInterval, grid, 0.0, Direction::backward, 0.0, 1.0);
    const GridFunction v0 = value_from_source(back, phi).front();
    const GridFunction oracle =
        GridFunction::sample(grid, kInterval, [](const Vec& x) { return std::min(1.0 - x[0], 1.0); });
    distances.push_back(l2_distance(v0, oracle));
  }
  EXPECT_LT(distances[1], distances[0]);
  EXPECT_LE(distances[1], 0.02 * std::sqrt(4.0 / 3.0));
}

TEST(ValueFromSource, ZeroSourceAndBound) {
  const Grid grid = kInterval.covering_grid(1.0 / 64);
  const auto back = make_operator(kUnit, kInterval, grid, 0.1, Direction::backward, 0.0, 1.0);
  const auto zero = value_from_source(back, ScalarData::constant(DataRole::running, 0.0));
  for (const auto& g : zero.values) EXPECT_EQ(l2_norm(g), 0.0);
  // |v(., 0)| <= c0 * int_0^1 |phi| dt with c0 = 1 and |phi| = sqrt(2).
  const auto v = value_from_source(back, ScalarData::constant(DataRole::running, 1.0));
  EXPECT_LE(l2_norm(v.front()), std::sqrt(2.0) * 1.05);
}

TEST(ValueFromSource, PaperCosResidenceNearZero) {
  // V(x, 0) = asin(1 - x) for 0 < x, tending to pi/2 at 0+; compare cell
  // averages over (0, 0.1).
  const ScalarData phi = ScalarData::constant(DataRole::running, 1.0);
  double oracle = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) oracle += std::asin(1.0 - 0.1 * (i + 0.5) / n);
  oracle /= n;
  std::vector<double> gaps;
  for (double h : {1.0 / 64, 1.0 / 128, 1.0 / 256, 1.0 / 512}) {
    const Grid grid = kInterval.covering_grid(h);
    const auto back = make_operator(fields::cos_time(), kInterval, grid, 0.0, Direction::backward, 0.0, 2 * kPi);
    const GridFunction v0 = value_from_source(back, phi).front();
    double acc = 0.0;
    int cells = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double x = grid.center(i)[0];
      if (x > 0.0 && x < 0.1) {
        acc += v0[i];
        ++cells;
      }
    }
    gaps.push_back(std::abs(acc / cells - oracle));
  }
  // Upwind smearing spreads the grazing point over a width of order sqrt(h),
  // so the gap closes at roughly half order (about 0.43 observed).
  for (std::size_t i = 0; i + 1 < gaps.size(); ++i) EXPECT_LT(gaps[i + 1], gaps[i]);
  const double order = std::log(gaps.front() / gaps.back()) / std::log(8.0);
  EXPECT_GE(order, 0.3);
}

TEST(ComposeCheck, AlignedOffGridAndZero) {
  const Scenario sc = builtin_scenario("box-wind");
  const Grid grid = sc.domain.covering_grid(1.0 / 32);
  const auto whole = make_operator(sc.field, sc.domain, grid, 0.1, Direction::forward, 0.0, 2.0);
  const GridFunction rho = GridFunction::sample(grid, sc.domain, sc.rho, 0.0);
  const double dt = whole.dt();
  const double aligned = 10 * dt;
  const auto exact = compose_check(whole.restricted(0.0, aligned), whole.restricted(aligned, 2.0), rho);
  EXPECT_EQ(exact.residual, 0.0);
  EXPECT_LE(exact.snap_distance, 1e-12);
  const double off = 10.4 * dt;
  const auto split = compose_check(whole.restricted(0.0, off), whole.restricted(off, 2.0), rho);
  EXPECT_GT(split.residual, 0.0);
  EXPECT_LE(split.residual, 5.0 * dt);
  EXPECT_NEAR(split.snap_distance, 0.4 * dt, 1e-12);
  EXPECT_EQ(compose_check(whole.restricted(0.0, off), whole.restricted(off, 2.0), GridFunction::zeros(grid, sc.domain))
                .residual,
            0.0);
  EXPECT_THROW(compose_check(whole.restricted(0.0, 0.5), whole.restricted(0.6, 2.0), rho), ParameterError);
}
