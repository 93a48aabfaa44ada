#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "exitflow/functionals.hpp"
#include "exitflow/scenarios.hpp"

using namespace exitflow;

namespace {

constexpr double kPi = std::numbers::pi;
const Domain kInterval = Domain::interval(-1, 1);
const ScalarData kOne = ScalarData::constant(DataRole::terminal, 1.0);
const ScalarData kRunOne = ScalarData::constant(DataRole::running, 1.0);
const VectorField kUnit = fields::constant(scalar_vec(1.0));

}  // namespace

TEST(TerminalFunctional, Examples) {
  const VectorField cos = fields::cos_time();
  EXPECT_EQ(terminal_functional(cos, kInterval, kOne, scalar_vec(-0.5), 0.0, kPi), 1.0);
  EXPECT_EQ(terminal_functional(cos, kInterval, kOne, scalar_vec(0.5), 0.0, kPi), 0.0);
  EXPECT_EQ(terminal_functional(kUnit, kInterval, kOne, scalar_vec(-0.3), 0.0, 1.0), 1.0);
  EXPECT_EQ(terminal_functional(kUnit, kInterval, kOne, scalar_vec(0.3), 0.0, 1.0), 0.0);
  const ScalarData zero = ScalarData::constant(DataRole::terminal, 0.0);
  EXPECT_EQ(terminal_functional(cos, kInterval, zero, scalar_vec(-0.5), 0.0, kPi), 0.0);
}

TEST(TerminalFunctional, EvaluatesZetaAtTerminalState) {
  const ScalarData zeta = ScalarData::from_function(DataRole::terminal, [](const Vec& x, double) { return x[0]; });
  EXPECT_NEAR(terminal_functional(kUnit, kInterval, zeta, scalar_vec(-0.8), 0.0, 1.0), 0.2, 1e-9);
  const ScalarData broken = ScalarData::from_function(DataRole::terminal, [](const Vec&, double) { return NAN; });
  EXPECT_THROW(terminal_functional(kUnit, kInterval, broken, scalar_vec(-0.8), 0.0, 1.0), DataError);
  EXPECT_THROW(terminal_functional(kUnit, kInterval, kOne, scalar_vec(1.0), 0.0, 1.0), DomainError);
}

TEST(IntegralFunctional, Examples) {
  EXPECT_NEAR(integral_functional(fields::cos_time(), kInterval, kRunOne, scalar_vec(0.0), 0.0, 2 * kPi), kPi / 2,
              1e-6);
  EXPECT_NEAR(integral_functional(kUnit, kInterval, kRunOne, scalar_vec(0.5), 0.0, 1.0), 0.5, 1e-9);
  EXPECT_NEAR(integral_functional(kUnit, kInterval, kRunOne, scalar_vec(-0.5), 0.0, 1.0), 1.0, 1e-12);
  const ScalarData zero = ScalarData::constant(DataRole::running, 0.0);
  EXPECT_EQ(integral_functional(kUnit, kInterval, zero, scalar_vec(0.5), 0.0, 1.0), 0.0);
}

TEST(IntegralFunctional, SmoothIntegrandTruncatedAtExit) {
  // y = x + t until 1 - x; int t dt over [0, 1 - x] = (1 - x)^2 / 2.
  const ScalarData phi = ScalarData::from_function(DataRole::running, [](const Vec&, double t) { return t; });
  for (double x : {-0.6, 0.1, 0.7}) {
    const double tau = std::min(1.5, 1.0 - x);
    EXPECT_NEAR(integral_functional(kUnit, kInterval, phi, scalar_vec(x), 0.0, 1.5), 0.5 * tau * tau, 1e-9);
  }
}

TEST(FunctionalGrid, PaperCosIndicator) {
  const Grid grid = kInterval.covering_grid(1.0 / 64);
  const GridFunction U = functional_grid(fields::cos_time(), kInterval, kOne, 0.0, kPi, grid);
  const GridFunction oracle = GridFunction::sample(grid, kInterval, [](const Vec& x) { return x[0] < 0 ? 1.0 : 0.0; });
  EXPECT_LE(l2_distance(U, oracle), 1e-12);
  const ScalarData zero = ScalarData::constant(DataRole::terminal, 0.0);
  EXPECT_EQ(l2_norm(functional_grid(fields::cos_time(), kInterval, zero, 0.0, kPi, grid)), 0.0);
}

TEST(FunctionalGrid, ConstantDriftValues) {
  const Grid grid = kInterval.covering_grid(1.0 / 32);
  const GridFunction V = functional_grid(kUnit, kInterval, kRunOne, 0.0, 1.0, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ASSERT_TRUE(V.active(i));
    EXPECT_NEAR(V[i], std::min(1.0 - grid.center(i)[0], 1.0), 1e-9);
  }
}

TEST(FunctionalGrid, ParallelMatchesSequentialBitwise) {
  const Scenario sc = builtin_scenario("box-wind");
  const Grid grid = sc.domain.covering_grid(1.0 / 16);
  FunctionalOptions seq;
  seq.workers = 1;
  FunctionalOptions par;
  par.workers = 4;
  const GridFunction a = functional_grid(sc.field, sc.domain, sc.phi, 0.0, sc.horizon, grid, seq);
  const GridFunction b = functional_grid(sc.field, sc.domain, sc.phi, 0.0, sc.horizon, grid, par);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(GridCalculus, NormExamples) {
  for (double h : {1.0 / 16, 1.0 / 64, 1.0 / 256}) {
    const Grid grid = kInterval.covering_grid(h);
    const GridFunction one = GridFunction::sample(grid, kInterval, [](const Vec&) { return 1.0; });
    EXPECT_NEAR(l2_norm(one), std::sqrt(2.0), 2 * h);
    const GridFunction v = GridFunction::sample(grid, kInterval, [](const Vec& x) { return std::min(1 - x[0], 1.0); });
    EXPECT_NEAR(l2_norm(v), std::sqrt(4.0 / 3.0), 2 * h);
    EXPECT_EQ(l2_norm(GridFunction::zeros(grid, kInterval)), 0.0);
  }
}

TEST(GridCalculus, CauchySchwarzAndSymmetry) {
  const Domain disk = Domain::ball(Vec::Zero(2), 1.0);
  const Grid grid = disk.covering_grid(1.0 / 32);
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    const GridFunction g = GridFunction::sample(grid, disk, [&](const Vec&) { return n01(rng); });
    const GridFunction h = GridFunction::sample(grid, disk, [&](const Vec&) { return n01(rng); });
    EXPECT_LE(std::abs(inner_product(g, h)), l2_norm(g) * l2_norm(h) * (1 + 1e-12));
    EXPECT_DOUBLE_EQ(inner_product(g, h), inner_product(h, g));
  }
}

TEST(GridCalculus, MaskedCellsCarryZero) {
  const Domain disk = Domain::ball(Vec::Zero(2), 1.0);
  const Grid grid = disk.covering_grid(1.0 / 8);
  const GridFunction g = GridFunction::sample(grid, disk, [](const Vec&) { return 3.0; });
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!g.active(i)) EXPECT_EQ(g[i], 0.0);
  }
}

TEST(GridCalculus, MismatchedGridsAreShapeErrors) {
  const GridFunction a = GridFunction::zeros(kInterval.covering_grid(0.1), kInterval);
  const GridFunction b = GridFunction::zeros(kInterval.covering_grid(0.05), kInterval);
  EXPECT_THROW(inner_product(a, b), ShapeError);
}

TEST(Pushforward, LiouvilleFactorForContraction) {
  // f = -x: p(x, t) = rho(x e^t) e^t while the support stays inside D.
  const Scenario sc = builtin_scenario("contracting");
  const Grid grid = kInterval.covering_grid(1.0 / 128);
  const double t = 0.8;
  const GridFunction p = pushforward_density(sc.field, sc.domain, sc.rho, 0.0, t, grid);
  const GridFunction oracle = GridFunction::sample(
      grid, kInterval, [&](const Vec& x) { return sc.rho(Vec(x * std::exp(t)), 0.0) * std::exp(t); });
  EXPECT_LE(l2_distance(p, oracle), 1e-6 * l2_norm(oracle));
  const GridFunction rho = GridFunction::sample(grid, kInterval, sc.rho, 0.0);
  EXPECT_NEAR(l2_norm(p), std::exp(t / 2) * l2_norm(rho), 0.01 * l2_norm(p));
}

TEST(Pushforward, TranslationOfAnIndicator) {
  const ScalarData rho = data::box(DataRole::density, scalar_vec(-1.0), scalar_vec(0.0));
  const Grid grid = kInterval.covering_grid(1.0 / 64);
  const GridFunction p = pushforward_density(kUnit, kInterval, rho, 0.0, 0.5, grid);
  const GridFunction oracle =
      GridFunction::sample(grid, kInterval, [](const Vec& x) { return std::abs(x[0]) < 0.5 ? 1.0 : 0.0; });
  EXPECT_LE(l2_distance(p, oracle), 1e-12);
  EXPECT_THROW(pushforward_density(kUnit, kInterval, kOne, 0.0, 0.5, grid), DataError);
}
