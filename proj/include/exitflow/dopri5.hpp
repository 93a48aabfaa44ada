#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "exitflow/errors.hpp"

namespace exitflow {

struct StepperOptions {
  double rtol = 1e-9;
  double atol = 1e-9;
  double max_step = 0.1;
  double initial_step = 0.0;  ///< 0 selects a step from the tolerances.
};

/// One accepted Dormand-Prince step with its 4th-order continuous extension.
template <class State>
struct DenseStep {
  double t0 = 0.0;
  double h = 0.0;
  State r1, r2, r3, r4, r5;

  double t1() const { return t0 + h; }
  const State& start() const { return r1; }
  State end() const { return r1 + r2; }

  State operator()(double t) const {
    const double th = (t - t0) / h;
    const double th1 = 1.0 - th;
    return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
  }
};

/// Explicit Runge-Kutta 5(4) of Dormand and Prince with FSAL and dense
/// output. `State` is an Eigen column vector; `Rhs` is callable as
/// rhs(t, y) -> State.
template <class State, class Rhs>
class Dopri5 {
 public:
  Dopri5(Rhs rhs, double t0, State y0, StepperOptions opts)
      : rhs_(std::move(rhs)), opts_(opts), t_(t0), y_(std::move(y0)) {
    k1_ = rhs_(t_, y_);
    h_ = opts_.initial_step > 0.0 ? opts_.initial_step : initial_step();
  }

  double time() const { return t_; }
  const State& state() const { return y_; }

  /// Takes one accepted step that does not pass t_end.
  DenseStep<State> step(double t_end) {
    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                     a65 = -5103.0 / 18656;
    constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                     a76 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                     e6 = 22.0 / 525, e7 = -1.0 / 40;
    constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                     d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                     d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

    const double remaining = t_end - t_;
    if (!(remaining > 0.0)) throw IntegrationError("step requested past the end of the interval");

    for (;;) {
      double h = std::min({h_, opts_.max_step, remaining});
      const bool last = h >= remaining * (1.0 - 1e-12);
      if (last) h = remaining;
      if (h < 1e-14 * std::max(1.0, std::abs(t_))) {
        std::ostringstream os;
        os << "step size underflow at t=" << t_ << " (h=" << h << ")";
        throw IntegrationError(os.str());
      }

      const State k2 = rhs_(t_ + c2 * h, y_ + h * (a21 * k1_));
      const State k3 = rhs_(t_ + c3 * h, y_ + h * (a31 * k1_ + a32 * k2));
      const State k4 = rhs_(t_ + c4 * h, y_ + h * (a41 * k1_ + a42 * k2 + a43 * k3));
      const State k5 = rhs_(t_ + c5 * h, y_ + h * (a51 * k1_ + a52 * k2 + a53 * k3 + a54 * k4));
      const State k6 = rhs_(t_ + h, y_ + h * (a61 * k1_ + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      const State y1 = y_ + h * (a71 * k1_ + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
      const double t1 = last ? t_end : t_ + h;
      const State k7 = rhs_(t1, y1);

      const State err = h * (e1 * k1_ + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double acc = 0.0;
      for (Eigen::Index i = 0; i < y_.size(); ++i) {
        const double sc = opts_.atol + opts_.rtol * std::max(std::abs(y_[i]), std::abs(y1[i]));
        acc += (err[i] / sc) * (err[i] / sc);
      }
      const double norm = std::sqrt(acc / static_cast<double>(y_.size()));

      if (norm <= 1.0) {
        DenseStep<State> out;
        out.t0 = t_;
        out.h = t1 - t_;
        const State ydiff = y1 - y_;
        const State bspl = h * k1_ - ydiff;
        out.r1 = y_;
        out.r2 = ydiff;
        out.r3 = bspl;
        out.r4 = ydiff - h * k7 - bspl;
        out.r5 = h * (d1 * k1_ + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
        t_ = t1;
        y_ = y1;
        k1_ = k7;
        const double fac = norm > 0.0 ? 0.9 * std::pow(norm, -0.2) : 10.0;
        h_ = h * std::clamp(fac, 0.2, 10.0);
        return out;
      }
      h_ = h * std::clamp(0.9 * std::pow(norm, -0.2), 0.1, 1.0);
    }
  }

 private:
  double initial_step() const {
    double scale = 0.0;
    double dnorm = 0.0;
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      const double sc = opts_.atol + opts_.rtol * std::abs(y_[i]);
      scale += (y_[i] / sc) * (y_[i] / sc);
      dnorm += (k1_[i] / sc) * (k1_[i] / sc);
    }
    scale = std::sqrt(scale / static_cast<double>(y_.size()));
    dnorm = std::sqrt(dnorm / static_cast<double>(y_.size()));
    const double h = (scale < 1e-5 || dnorm < 1e-5) ? 1e-6 : 0.01 * scale / dnorm;
    return std::min(std::max(h, 1e-6), opts_.max_step);
  }

  Rhs rhs_;
  StepperOptions opts_;
  double t_;
  State y_;
  State k1_;
  double h_ = 0.0;
};

template <class State, class Rhs>
Dopri5<State, Rhs> make_dopri5(Rhs rhs, double t0, State y0, StepperOptions opts) {
  return Dopri5<State, Rhs>(std::move(rhs), t0, std::move(y0), opts);
}

}  // namespace exitflow
