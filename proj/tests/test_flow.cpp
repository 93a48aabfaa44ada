#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "exitflow/flow.hpp"
#include "exitflow/scenarios.hpp"

using namespace exitflow;

namespace {

constexpr double kPi = std::numbers::pi;

const Domain kInterval = Domain::interval(-1, 1);

double open_exit(double x, double T = 2 * kPi) {
  const auto r = first_exit(fields::cos_time(), kInterval, scalar_vec(x), 0.0, T);
  return r.open_exit.value_or(std::numeric_limits<double>::infinity());
}

}  // namespace

TEST(IntegrateFlow, CosTimeMatchesClosedForm) {
  const Trajectory traj = integrate_flow(fields::cos_time(), scalar_vec(0.0), 0.0, 2 * kPi);
  EXPECT_EQ(traj.states().front()[0], 0.0);
  EXPECT_EQ(traj.times().front(), 0.0);
  for (double t = 0.0; t <= 2 * kPi; t += 0.05) EXPECT_NEAR(traj(t)[0], std::sin(t), 1e-8);
}

TEST(IntegrateFlow, ZeroFieldAndContraction) {
  const Trajectory still = integrate_flow(fields::constant(make_vec({0.0, 0.0})), make_vec({0.2, -0.3}), 0.0, 3.0);
  EXPECT_EQ(still.end_state(), make_vec({0.2, -0.3}));
  const VectorField minus_x = fields::linear(Mat::Constant(1, 1, -1.0), Vec::Zero(1), 1.0);
  const Trajectory decay = integrate_flow(minus_x, scalar_vec(1.0), 0.0, 2.0);
  for (double t : {0.3, 1.0, 2.0}) EXPECT_NEAR(decay(t)[0], std::exp(-t), 1e-8);
}

TEST(IntegrateFlow, FlowPropertyOnRestart) {
  const Scenario sc = builtin_scenario("box-wind");
  const Vec x = make_vec({0.1, -0.2});
  const double tol = 1e-9;
  const Trajectory whole = integrate_flow(sc.field, x, 0.0, 2.0);
  const Trajectory first = integrate_flow(sc.field, x, 0.0, 0.7);
  const Trajectory second = integrate_flow(sc.field, first.end_state(), 0.7, 2.0);
  EXPECT_LE((whole.end_state() - second.end_state()).norm(), 10 * tol);
}

TEST(IntegrateFlow, BlowUpIsIntegrationError) {
  const VectorField riccati(1, [](const Vec& y, double) { return scalar_vec(y[0] * y[0]); }, 1.0);
  EXPECT_THROW(integrate_flow(riccati, scalar_vec(1.0), 0.0, 2.0), IntegrationError);
}

TEST(ExitTimes, CosFieldGrazingAndDiscontinuity) {
  EXPECT_NEAR(open_exit(0.0), kPi / 2, 1e-6);
  EXPECT_NEAR(open_exit(-0.5), 7 * kPi / 6, 1e-8);
  const auto r = first_exit(fields::cos_time(), kInterval, scalar_vec(0.0), 0.0, 2 * kPi);
  EXPECT_FALSE(r.closed_exit.has_value());
  EXPECT_EQ(r.kind, ExitKind::open_only);
  EXPECT_DOUBLE_EQ(r.tau, *r.open_exit);
}

TEST(ExitTimes, DiscontinuityInTheStart) {
  // y = x + sin t leaves through -1 when sin t = -1 - x.
  const double oracle = kPi + std::asin(1.0 - 1e-3);
  EXPECT_NEAR(open_exit(-1e-3), oracle, 1e-7);
  EXPECT_NEAR(open_exit(-1e-3), 3 * kPi / 2 - 0.0447, 0.002);
  EXPECT_NEAR(open_exit(-1e-5), 3 * kPi / 2, 0.01);
  EXPECT_GT(open_exit(-1e-3) - open_exit(0.0), 2.9);
  const std::vector<Vec> starts{scalar_vec(-1e-2), scalar_vec(-1e-3), scalar_vec(-1e-4)};
  const auto limits = left_limit_exit(fields::cos_time(), kInterval, starts, 0.0, 2 * kPi);
  for (std::size_t i = 0; i + 1 < limits.size(); ++i) EXPECT_GT(*limits[i + 1], *limits[i]);
  EXPECT_NEAR(*limits.back(), 3 * kPi / 2, 0.02);
}

TEST(ExitTimes, RecordOrderingAndCap) {
  const Scenario sc = builtin_scenario("box-wind");
  for (int i = 0; i < 40; ++i) {
    const Vec x = make_vec({-0.9 + 0.045 * i, 0.6 * std::sin(1.0 * i)});
    if (!sc.domain.contains(x)) continue;
    const ExitRecord r = first_exit(sc.field, sc.domain, x, 0.0, sc.horizon);
    if (r.open_exit) {
      EXPECT_LE(0.0, *r.open_exit);
      if (r.closed_exit) {
        EXPECT_LE(*r.open_exit, *r.closed_exit);
      }
    }
    EXPECT_EQ(r.tau, std::min(sc.horizon, r.open_exit.value_or(sc.horizon)));
  }
}

TEST(ExitTimes, TransversalExitHasPositiveTangency) {
  const auto r = first_exit(fields::constant(scalar_vec(1.0)), kInterval, scalar_vec(0.25), 0.0, 5.0);
  ASSERT_TRUE(r.open_exit && r.closed_exit);
  EXPECT_NEAR(*r.open_exit, 0.75, 1e-9);
  EXPECT_NEAR(*r.closed_exit, 0.75, 1e-6);
  EXPECT_EQ(r.kind, ExitKind::transversal);
  EXPECT_NEAR(*r.tangency, 1.0, 1e-9);
}

TEST(VariationalMatrix, ClosedForms) {
  const VectorField minus_x = fields::linear(Mat::Constant(1, 1, -1.0), Vec::Zero(1), 1.0);
  const auto phi = variational_matrix(minus_x, integrate_flow(minus_x, scalar_vec(0.5), 0.0, 1.5));
  EXPECT_EQ(phi.values.front()(0, 0), 1.0);
  EXPECT_NEAR(phi.final()(0, 0), std::exp(-1.5), 1e-8);

  const VectorField drift = fields::constant(make_vec({1.0, 2.0}));
  const auto id = variational_matrix(drift, integrate_flow(drift, Vec::Zero(2), 0.0, 1.0));
  EXPECT_NEAR((id.final() - Mat::Identity(2, 2)).norm(), 0.0, 1e-12);

  const VectorField rot = fields::rotation(1.0, 2.0);
  const double t = 2.3;
  const auto r = variational_matrix(rot, integrate_flow(rot, make_vec({0.5, 0.0}), 0.0, t));
  Mat expected(2, 2);
  expected << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
  EXPECT_NEAR((r.final() - expected).norm(), 0.0, 1e-7);
  EXPECT_NEAR(r.final().determinant(), 1.0, 1e-8);
}

TEST(VariationalMatrix, LiouvilleDeterminant) {
  const Scenario sc = builtin_scenario("box-wind");
  const double T = 1.2;
  const auto traj = integrate_flow(sc.field, make_vec({0.2, 0.1}), 0.0, T);
  const auto phi = variational_matrix(sc.field, traj);
  // div f = -0.3 everywhere in this scenario.
  EXPECT_NEAR(phi.final().determinant(), std::exp(-0.3 * T), 1e-7);
  for (const Mat& m : phi.values) EXPECT_GT(m.determinant(), 0.0);
}
