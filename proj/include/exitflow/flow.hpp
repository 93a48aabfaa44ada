#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "exitflow/domain.hpp"
#include "exitflow/dopri5.hpp"
#include "exitflow/errors.hpp"
#include "exitflow/fields.hpp"
#include "exitflow/linalg.hpp"

namespace exitflow {

struct FlowOptions {
  double tol = 1e-9;       ///< Relative and absolute local error tolerance.
  double max_step = 0.1;
};

/// Sampled solution y^{x,s}(t) on [s, horizon] with dense output.
class Trajectory {
 public:
  Trajectory(VectorField field, Vec start, double start_time, double horizon)
      : field_(std::move(field)), start_(std::move(start)), start_time_(start_time), horizon_(horizon) {}

  const VectorField& field() const { return field_; }
  const Vec& start() const { return start_; }
  double start_time() const { return start_time_; }
  double horizon() const { return horizon_; }
  int dim() const { return static_cast<int>(start_.size()); }
  const std::vector<DenseStep<Vec>>& steps() const { return steps_; }

  std::vector<double> times() const {
    std::vector<double> t{start_time_};
    for (const auto& st : steps_) t.push_back(st.t1());
    return t;
  }

  std::vector<Vec> states() const {
    std::vector<Vec> y{start_};
    for (const auto& st : steps_) y.push_back(st.end());
    return y;
  }

  Vec end_state() const { return steps_.empty() ? start_ : steps_.back().end(); }

  /// Dense-output evaluation for t in [start_time, horizon].
  Vec operator()(double t) const {
    if (steps_.empty() || t <= start_time_) return start_;
    auto it = std::lower_bound(steps_.begin(), steps_.end(), t,
                               [](const DenseStep<Vec>& st, double tt) { return st.t1() < tt; });
    if (it == steps_.end()) return steps_.back().end();
    return (*it)(t);
  }

  void push(DenseStep<Vec> step) { steps_.push_back(std::move(step)); }

 private:
  VectorField field_;
  Vec start_;
  double start_time_;
  double horizon_;
  std::vector<DenseStep<Vec>> steps_;
};

/// Integrates the flow and hands every accepted step to `visit`, which
/// returns false to stop early.
template <class Visitor>
void walk_flow(const VectorField& field, const Vec& x, double s, double horizon, const FlowOptions& opts,
               Visitor&& visit) {
  if (x.size() != field.dim()) throw DomainError("start point has wrong dimension");
  if (s > horizon) throw DomainError("flow horizon precedes the start time");
  if (s == horizon) return;
  auto rhs = [&field](double t, const Vec& y) { return field(y, t); };
  StepperOptions so;
  so.rtol = opts.tol;
  so.atol = opts.tol;
  so.max_step = opts.max_step;
  auto stepper = make_dopri5<Vec>(rhs, s, x, so);
  while (stepper.time() < horizon) {
    const DenseStep<Vec> st = stepper.step(horizon);
    if (!visit(st)) return;
  }
}

inline Trajectory integrate_flow(const VectorField& field, const Vec& x, double s, double horizon,
                                 const FlowOptions& opts = {}) {
  Trajectory traj(field, x, s, horizon);
  walk_flow(field, x, s, horizon, opts, [&traj](const DenseStep<Vec>& st) {
    traj.push(st);
    return true;
  });
  return traj;
}

enum class ExitKind { none, open_only, transversal };

inline const char* to_string(ExitKind kind) {
  switch (kind) {
    case ExitKind::none: return "none";
    case ExitKind::open_only: return "open-only";
    case ExitKind::transversal: return "transversal";
  }
  return "unknown";
}

/// First exit data of one trajectory. Missing exits are encoded as empty
/// optionals, never as large numbers.
struct ExitRecord {
  Vec start;
  double start_time = 0.0;
  double horizon = 0.0;                 ///< T.
  std::optional<double> open_exit;      ///< First time y leaves the open domain.
  std::optional<double> closed_exit;    ///< First time y leaves the closed domain.
  double tau = 0.0;                     ///< min(T, open_exit).
  std::optional<Vec> exit_point;
  std::optional<double> tangency;
  ExitKind kind = ExitKind::none;

  /// Ind{open_exit > T}.
  bool survives() const { return !open_exit || *open_exit > horizon; }
};

struct ExitOptions {
  double time_tol = 1e-12;            ///< Bisection tolerance on exit times.
  double level_tol = 1e-7;            ///< |g| below this counts as touching the boundary.
  int samples_per_step = 8;           ///< Sub-samples of g inside each step.
  double graze_window = 1e-3;         ///< Local maxima of g above -window are refined.
  double tangential_threshold = 1e-6; ///< Exits with a smaller tangency score are open-only.
};

/// Incremental exit detector fed with consecutive dense steps.
///
/// Open exit: the first sub-interval with g >= 0 at its right end is bisected.
/// A local maximum of g that comes within level_tol of zero without a sign
/// change counts as an open exit at the maximiser (grazing contact).
/// Closed exit: the first sample with g > level_tol; the exit time is the
/// root of g in the last crossing bracket before it, so transversal crossings
/// give identical open and closed exit times.
class ExitScanner {
 public:
  ExitScanner(const Domain& domain, ExitOptions opts, bool want_closed)
      : domain_(domain), opts_(opts), want_closed_(want_closed) {}

  void start(double t, const Vec& x) {
    const double g = domain_.level(x);
    prev_ = Sample{t, g};
    older_.reset();
    if (g >= 0.0) {
      open_ = t;
      open_point_ = x;
    }
    if (g > opts_.level_tol) closed_ = t;
  }

  bool done() const { return open_.has_value() && (!want_closed_ || closed_.has_value()); }
  const std::optional<double>& open_exit() const { return open_; }
  const std::optional<double>& closed_exit() const { return closed_; }
  const std::optional<Vec>& open_point() const { return open_point_; }

  void feed(const DenseStep<Vec>& step) {
    const int m = std::max(1, opts_.samples_per_step);
    for (int j = 1; j <= m; ++j) {
      const double tb = j == m ? step.t1() : step.t0 + step.h * static_cast<double>(j) / m;
      const Sample b{tb, domain_.level(step(tb))};
      const Sample a = prev_;
      if (!open_) scan_open(step, a, b);
      if (want_closed_ && !closed_) scan_closed(step, a, b);
      older_ = a;
      prev_ = b;
      if (done()) break;
    }
    previous_step_ = step;
    current_step_valid_ = true;
  }

 private:
  struct Sample {
    double t;
    double g;
  };

  void scan_open(const DenseStep<Vec>& step, const Sample& a, const Sample& b) {
    if (b.g >= 0.0) {
      open_ = bisect(step, a.t, b.t);
      open_point_ = step(*open_);
      return;
    }
    if (older_ && a.g > older_->g && a.g >= b.g && a.g >= -opts_.graze_window) {
      const auto [tmax, gmax] = maximise(step, older_->t, b.t);
      if (gmax >= -opts_.level_tol) {
        open_ = tmax;
        open_point_ = eval(step, tmax);
      }
    }
  }

  void scan_closed(const DenseStep<Vec>& step, const Sample& a, const Sample& b) {
    if (b.g > 0.0 && a.g <= 0.0) {
      bracket_step_ = step;
      bracket_ = std::pair{a.t, b.t};
    }
    if (b.g > opts_.level_tol) {
      if (bracket_) {
        closed_ = bisect(*bracket_step_, bracket_->first, bracket_->second);
      } else {
        closed_ = a.t;
      }
    }
  }

  double bisect(const DenseStep<Vec>& step, double lo, double hi) const {
    for (int it = 0; it < 200 && hi - lo > opts_.time_tol; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (domain_.level(step(mid)) >= 0.0) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return hi;
  }

  Vec eval(const DenseStep<Vec>& step, double t) const {
    if (t < step.t0 && current_step_valid_) return previous_step_(t);
    return step(t);
  }

  std::pair<double, double> maximise(const DenseStep<Vec>& step, double lo, double hi) const {
    constexpr double kInvPhi = 0.6180339887498949;
    auto g = [&](double t) { return domain_.level(eval(step, t)); };
    double x1 = hi - kInvPhi * (hi - lo);
    double x2 = lo + kInvPhi * (hi - lo);
    double g1 = g(x1);
    double g2 = g(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
      if (g1 < g2) {
        lo = x1;
        x1 = x2;
        g1 = g2;
        x2 = lo + kInvPhi * (hi - lo);
        g2 = g(x2);
      } else {
        hi = x2;
        x2 = x1;
        g2 = g1;
        x1 = hi - kInvPhi * (hi - lo);
        g1 = g(x1);
      }
    }
    const double t = 0.5 * (lo + hi);
    return {t, g(t)};
  }

  const Domain& domain_;
  ExitOptions opts_;
  bool want_closed_;
  Sample prev_{0.0, 0.0};
  std::optional<Sample> older_;
  DenseStep<Vec> previous_step_;
  bool current_step_valid_ = false;
  std::optional<DenseStep<Vec>> bracket_step_;
  std::optional<std::pair<double, double>> bracket_;
  std::optional<double> open_;
  std::optional<double> closed_;
  std::optional<Vec> open_point_;
};

namespace detail {

inline ExitRecord finish_record(const Domain& domain, const VectorField& field, const Vec& x, double s,
                                double horizon, const ExitScanner& scanner, const ExitOptions& opts) {
  ExitRecord rec;
  rec.start = x;
  rec.start_time = s;
  rec.horizon = horizon;
  rec.open_exit = scanner.open_exit();
  rec.closed_exit = scanner.closed_exit();
  rec.tau = rec.open_exit ? std::min(horizon, *rec.open_exit) : horizon;
  if (rec.open_exit) {
    rec.exit_point = scanner.open_point();
    const double tol = std::max(1e-6, 10.0 * opts.level_tol);
    rec.tangency = tangency_score(domain, field, *rec.exit_point, *rec.open_exit, tol);
    rec.kind = *rec.tangency > opts.tangential_threshold ? ExitKind::transversal : ExitKind::open_only;
  }
  return rec;
}

}  // namespace detail

/// Exit record of a stored trajectory; T is the trajectory horizon.
inline ExitRecord exit_times(const Trajectory& traj, const Domain& domain, const ExitOptions& opts = {}) {
  ExitScanner scanner(domain, opts, true);
  scanner.start(traj.start_time(), traj.start());
  for (const auto& st : traj.steps()) {
    if (scanner.done()) break;
    scanner.feed(st);
  }
  return detail::finish_record(domain, traj.field(), traj.start(), traj.start_time(), traj.horizon(), scanner,
                               opts);
}

inline ExitRecord exit_times(const Trajectory& traj, const Domain& domain, double time_tol) {
  ExitOptions opts;
  opts.time_tol = time_tol;
  return exit_times(traj, domain, opts);
}

/// Streaming variant: integrates only until the requested exits are found.
inline ExitRecord first_exit(const VectorField& field, const Domain& domain, const Vec& x, double s, double horizon,
                             const FlowOptions& flow = {}, const ExitOptions& opts = {}, bool want_closed = true) {
  ExitScanner scanner(domain, opts, want_closed);
  scanner.start(s, x);
  if (!scanner.done()) {
    walk_flow(field, x, s, horizon, flow, [&scanner](const DenseStep<Vec>& st) {
      scanner.feed(st);
      return !scanner.done();
    });
  }
  return detail::finish_record(domain, field, x, s, horizon, scanner, opts);
}

/// Open exit times for a sequence of starts approaching a point; used to
/// exhibit the discontinuity of the exit time in the initial point.
inline std::vector<std::optional<double>> left_limit_exit(const VectorField& field, const Domain& domain,
                                                          std::span<const Vec> starts, double s, double horizon,
                                                          const FlowOptions& flow = {},
                                                          const ExitOptions& opts = {}) {
  std::vector<std::optional<double>> out;
  out.reserve(starts.size());
  for (const Vec& x : starts) {
    if (!domain.contains_closure(x)) throw DomainError("left_limit_exit: start lies outside the closed domain");
    out.push_back(first_exit(field, domain, x, s, horizon, flow, opts, false).open_exit);
  }
  return out;
}

/// Fundamental matrix Phi(t, s) of the variational equation along a
/// trajectory, sampled at the accepted steps.
struct VariationalMatrix {
  std::vector<double> times;
  std::vector<Mat> values;

  const Mat& final() const { return values.back(); }
};

inline VariationalMatrix variational_matrix(const VectorField& field, const Trajectory& traj,
                                            const FlowOptions& opts = {}) {
  if (!field.has_jacobian()) throw ConfigurationError("variational_matrix needs a Jacobian");
  using Aug = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim + kMaxDim * kMaxDim, 1>;
  const int n = traj.dim();
  Aug y0(n + n * n);
  y0.head(n) = traj.start();
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) y0[n + j * n + i] = i == j ? 1.0 : 0.0;
  }
  auto rhs = [&field, n](double t, const Aug& y) {
    Aug dy(y.size());
    const Vec x = y.head(n);
    dy.head(n) = field(x, t);
    const Mat jac = field.jacobian(x, t);
    for (int j = 0; j < n; ++j) {
      const Vec col = y.segment(n + j * n, n);
      dy.segment(n + j * n, n) = jac * col;
    }
    return dy;
  };
  auto unpack = [n](const Aug& y) {
    Mat phi(n, n);
    for (int j = 0; j < n; ++j) phi.col(j) = y.segment(n + j * n, n);
    return phi;
  };

  VariationalMatrix out;
  out.times.push_back(traj.start_time());
  out.values.push_back(unpack(y0));
  if (traj.horizon() <= traj.start_time()) return out;
  StepperOptions so;
  so.rtol = opts.tol;
  so.atol = opts.tol;
  so.max_step = opts.max_step;
  auto stepper = make_dopri5<Aug>(rhs, traj.start_time(), y0, so);
  while (stepper.time() < traj.horizon()) {
    stepper.step(traj.horizon());
    out.times.push_back(stepper.time());
    out.values.push_back(unpack(stepper.state()));
  }
  return out;
}

}  // namespace exitflow
