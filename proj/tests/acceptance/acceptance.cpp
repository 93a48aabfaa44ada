// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Oracles are computed here, independently of the library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "exitflow/pde.hpp"
#include "exitflow/scenarios.hpp"
#include "exitflow/stochastic.hpp"
#include "exitflow/verification.hpp"

using namespace exitflow;

namespace {

constexpr double kPi = std::numbers::pi;

// Pinned tolerances.
constexpr double kExitTimeTol = 1e-6;
constexpr double kExitRuntimeSec = 1e-3;
constexpr double kDiscontinuityWindow = 0.05;
constexpr double kDiscontinuityJump = 2.9;
constexpr double kDualityTol = 0.02;
constexpr double kDualityOrder = 0.8;
constexpr double kAdjointTol = 1e-10;
constexpr double kDualityRuntimeSec = 10.0;
constexpr double kEquivalenceRel = 0.02;
constexpr double kEquivalenceOrder = 0.5;
constexpr double kBoundSlack = 1.05;
constexpr double kSaturationFloor = 0.95;
constexpr double kDensityRuntimeSec = 60.0;
constexpr std::size_t kDensitySamples = 100000;
constexpr std::size_t kDeviationSamples = 10000;
constexpr double kSeparation = 3.0;
constexpr std::size_t kHeatSamples = 100000;
constexpr double kHeatDt = 4e-5;
constexpr double kDiscretizationRel = 0.01;
constexpr double kContinuityRate = 0.4;
constexpr std::size_t kTangencySamples = 10000;
constexpr double kMismatchPaperCos = 0.01;
constexpr double kMismatchDisk = 0.005;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double measure(const CheckReport& r, const std::string& name) {
  const Measure* m = r.find(name);
  return m ? m->value : std::nan("");
}

std::string failing(const CheckReport& r) {
  std::string out;
  for (const auto& m : r.measures) {
    if (!m.ok()) out += " [" + r.scenario + ": " + m.name + " = " + fmt(m.value) + "]";
  }
  return out;
}

// Survival of eps = 1 Brownian motion from 0 in (-1, 1) up to T = 1,
// from the sine series of the heat kernel.
double heat_survival_series() {
  double sum = 0.0;
  for (int k = 1; k < 400; k += 2) {
    sum += 4.0 / (k * kPi) * std::sin(k * kPi / 2) * std::exp(-k * k * kPi * kPi / 8.0);
  }
  return sum;
}

Outcome grazing_exit_time() {
  const Scenario sc = builtin_scenario("paper-cos");
  const Vec x = scalar_vec(0.0);
  first_exit(sc.field, sc.domain, x, 0.0, sc.horizon);
  std::vector<double> runtimes;
  ExitRecord rec;
  for (int i = 0; i < 11; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    rec = first_exit(sc.field, sc.domain, x, 0.0, sc.horizon);
    runtimes.push_back(seconds_since(t0));
  }
  std::nth_element(runtimes.begin(), runtimes.begin() + 5, runtimes.end());
  const double runtime = runtimes[5];
  const double err = rec.open_exit ? std::abs(*rec.open_exit - kPi / 2) : INFINITY;
  return {err <= kExitTimeTol && runtime < kExitRuntimeSec,
          "|tau - pi/2| = " + fmt(err) + ", median runtime " + fmt(runtime * 1e3) + " ms"};
}

Outcome exit_time_discontinuity() {
  const Scenario sc = builtin_scenario("paper-cos");
  const ExitRecord left = first_exit(sc.field, sc.domain, scalar_vec(-1e-3), 0.0, sc.horizon);
  const ExitRecord centre = first_exit(sc.field, sc.domain, scalar_vec(0.0), 0.0, sc.horizon);
  if (!left.open_exit || !centre.open_exit) return {false, "missing exit"};
  // -1e-3 + sin t reaches -1 at t = pi + asin(1 - 1e-3).
  const double oracle = kPi + std::asin(1.0 - 1e-3);
  const double tl = *left.open_exit;
  const bool in_window = tl >= 1.5 * kPi - kDiscontinuityWindow && tl <= 1.5 * kPi;
  const double jump = tl - *centre.open_exit;
  return {in_window && jump > kDiscontinuityJump && std::abs(tl - oracle) <= kExitTimeTol,
          "tau(-1e-3) = " + fmt(tl) + " (oracle " + fmt(oracle) + "), jump " + fmt(jump)};
}

Outcome duality() {
  const Scenario sc = builtin_scenario("const-drift");
  const std::vector<double> hs{1.0 / 64, 1.0 / 128, 1.0 / 256};
  const auto t0 = std::chrono::steady_clock::now();
  DualityOptions aligned;
  aligned.tolerance = kDualityTol;
  aligned.adjoint_tolerance = kAdjointTol;
  const DualityValues fine = duality_values(sc, 0.0, 1.0, hs.back(), 0.0, aligned);
  const double runtime = seconds_since(t0);
  // Both sides equal int (1 - x) ^ 1 * 1/2 dx over (-1, 1) = 3/4.
  const double closed_form = 0.75;
  const double lhs_err = std::abs(fine.lhs - closed_form) / closed_form;
  DualityOptions shifted = aligned;
  shifted.grid_offset = 1.0 / 3.0;
  const CheckReport refine = duality_refinement(sc, 0.0, 1.0, hs, 0.0, shifted, kDualityOrder);
  const double order = measure(refine, "residual order");
  const double adjoint = std::max(fine.adjointness, measure(refine, "adjointness"));
  const bool ok = fine.residual <= kDualityTol && lhs_err <= kDualityTol && refine.passed() &&
                  adjoint <= kAdjointTol && runtime < kDualityRuntimeSec;
  return {ok, "residual " + fmt(fine.residual) + ", |lhs - 3/4|/(3/4) " + fmt(lhs_err) + ", shifted-grid order " +
                  fmt(order) + ", adjointness " + fmt(adjoint) + ", runtime " + fmt(runtime) + " s" +
                  failing(refine)};
}

Outcome equivalence() {
  EquivalenceOptions drift;
  drift.relative_tolerance = kEquivalenceRel;
  drift.min_order = kEquivalenceOrder;
  const CheckReport a = equivalence_check(builtin_scenario("const-drift"), 0.0, drift);
  EquivalenceOptions cos = drift;
  cos.horizon = kPi;
  cos.running = Expectation::order;
  const CheckReport b = equivalence_check(builtin_scenario("paper-cos"), 0.0, cos);
  return {a.passed() && b.passed(), "const-drift V relative " + fmt(measure(a, "V relative distance")) +
                                        ", U order " + fmt(measure(a, "U distance order")) + "; paper-cos U order " +
                                        fmt(measure(b, "U distance order")) + ", V order " +
                                        fmt(measure(b, "V distance order")) + failing(a) + failing(b)};
}

Outcome bounds() {
  bool ok = true;
  double worst = 0.0;
  double saturation = 0.0;
  std::string bad;
  for (const auto& name : scenario_names()) {
    const Scenario sc = builtin_scenario(name);
    BoundOptions o;
    o.h = 1.0 / 256;
    o.slack = kBoundSlack;
    if (name == "contracting") o.saturation_floor = kSaturationFloor;
    const CheckReport r = bound_check(sc, o);
    ok = ok && r.passed();
    bad += failing(r);
    for (const char* m : {"p ratio", "u ratio", "v ratio"}) worst = std::max(worst, measure(r, m));
    if (name == "contracting") saturation = measure(r, "p ratio at T");
  }
  return {ok, "largest ratio " + fmt(worst) + ", contracting density ratio at T " + fmt(saturation) + bad};
}

Outcome density() {
  const Scenario sc = builtin_scenario("const-drift");
  const auto t0 = std::chrono::steady_clock::now();
  const CheckReport r = density_match(sc, 0.0, 0.5, 0.0, 1.0 / 256, kDensitySamples, 17);
  const double runtime = seconds_since(t0);
  return {r.passed() && runtime < kDensityRuntimeSec,
          "pde-mc " + fmt(measure(r, "pde-mc distance")) + ", pde-char " +
              fmt(measure(r, "pde-characteristics distance")) + ", mc-char " +
              fmt(measure(r, "mc-characteristics distance")) + ", band " + fmt(measure(r, "mc band")) +
              ", runtime " + fmt(runtime) + " s" + failing(r)};
}

Outcome deviation_trend() {
  const Scenario sc = builtin_scenario("paper-cos");
  std::vector<McEstimate> est;
  for (double eps : {0.2, 0.1, 0.05}) {
    EnsembleConfig cfg;
    cfg.eps = eps;
    cfg.dt = 1e-3;
    cfg.samples = kDeviationSamples;
    cfg.seed = 23;
    est.push_back(path_deviation(sc.field, sc.domain, scalar_vec(0.0), 0.0, sc.horizon, cfg));
  }
  bool ok = true;
  std::ostringstream os;
  for (std::size_t i = 0; i < est.size(); ++i) {
    os << (i ? ", " : "") << "eps " << fmt(est[i].eps) << ": " << fmt(est[i].mean) << " +- " << fmt(est[i].std_error);
    if (i + 1 < est.size()) {
      const double gap = est[i].mean - est[i + 1].mean;
      ok = ok && gap > kSeparation * std::hypot(est[i].std_error, est[i + 1].std_error);
    }
  }
  EnsembleConfig still;
  still.eps = 0.0;
  still.samples = 100;
  const McEstimate zero = path_deviation(sc.field, sc.domain, scalar_vec(0.0), 0.0, sc.horizon, still);
  ok = ok && zero.mean == 0.0 && zero.std_error == 0.0;
  os << ", eps 0: " << fmt(zero.mean);
  return {ok, os.str()};
}

Outcome heat_agreement() {
  const Domain d = Domain::interval(-1, 1);
  const VectorField still = fields::constant(scalar_vec(0.0));
  const ScalarData one = ScalarData::constant(DataRole::terminal, 1.0);
  const Vec x = scalar_vec(0.0);
  EnsembleConfig cfg;
  cfg.eps = 1.0;
  cfg.dt = kHeatDt;
  cfg.samples = kHeatSamples;
  cfg.seed = 29;
  const McEstimate mc = mc_terminal(still, d, one, x, 0.0, 1.0, cfg);
  const Grid grid = d.covering_grid(1.0 / 256);
  const auto back = make_operator(still, d, grid, 1.0, Direction::backward, 0.0, 1.0);
  const GridFunction u0 = solve_backward(back, GridFunction::sample(grid, d, one, 1.0), 1u << 30).front();
  // x = 0 is a cell face: average the two neighbouring cells.
  const double pde = 0.5 * (u0[*grid.locate(scalar_vec(-1e-9))] + u0[*grid.locate(scalar_vec(1e-9))]);
  const double series = heat_survival_series();
  const double band = kSeparation * mc.std_error;
  const bool ok = std::abs(mc.mean - pde) <= band + kDiscretizationRel * pde &&
                  std::abs(mc.mean - series) <= band + kDiscretizationRel * series &&
                  std::abs(pde - series) <= kDiscretizationRel * series;
  return {ok, "mc " + fmt(mc.mean) + " +- " + fmt(mc.std_error) + ", pde " + fmt(pde) + ", series " + fmt(series)};
}

Outcome continuity() {
  const Scenario sc = builtin_scenario("const-drift");
  ContinuityOptions o;
  o.h = 1.0 / 256;
  o.min_rate = kContinuityRate;
  const std::vector<double> ks{0.1, 0.05, 0.025, 0.0125};
  const CheckReport r = continuity_probe(sc, 0.5, ks, o);
  return {r.passed(), "right p rate " + fmt(measure(r, "right modulus p rate")) + ", left u rate " +
                          fmt(measure(r, "left modulus u rate")) + ", left v rate " +
                          fmt(measure(r, "left modulus v rate")) + failing(r)};
}

Outcome tangency() {
  const std::vector<double> deltas{1e-1, 1e-2, 1e-3};
  TangencyOptions a;
  a.time_tol = 1e-6;
  a.max_mismatch = kMismatchPaperCos;
  const CheckReport ra = tangency_statistic(builtin_scenario("paper-cos"), 0.0, kTangencySamples, deltas, 31, a);
  TangencyOptions b = a;
  b.max_mismatch = kMismatchDisk;
  const CheckReport rb =
      tangency_statistic(builtin_scenario("disk-constant-field"), 0.0, kTangencySamples, deltas, 31, b);
  std::ostringstream os;
  os << "mismatch paper-cos " << fmt(measure(ra, "open/closed mismatch fraction")) << ", disk "
     << fmt(measure(rb, "open/closed mismatch fraction")) << "; disk fraction below delta";
  for (const auto& row : rb.table.rows) os << ' ' << fmt(row[1]);
  return {ra.passed() && rb.passed(), os.str() + failing(ra) + failing(rb)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"grazing exit time", grazing_exit_time},
      {"exit-time discontinuity", exit_time_discontinuity},
      {"duality identity", duality},
      {"characteristics/PDE equivalence", equivalence},
      {"growth bounds", bounds},
      {"three-way density match", density},
      {"vanishing-noise path deviation", deviation_trend},
      {"Monte Carlo vs PDE vs series", heat_agreement},
      {"one-sided continuity", continuity},
      {"tangential exit statistic", tangency},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o{false, ""};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %2zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
