#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "exitflow/errors.hpp"
#include "exitflow/grid.hpp"
#include "exitflow/linalg.hpp"

namespace exitflow {

/// Drift f(x, t) of the flow, with optional analytic derivatives.
///
/// Instances are immutable; the `with_*` members return modified copies.
/// When no analytic Jacobian or divergence is supplied they are obtained by
/// central differences, unless numeric derivatives were disabled.
class VectorField {
 public:
  using Eval = std::function<Vec(const Vec&, double)>;
  using JacobianEval = std::function<Mat(const Vec&, double)>;
  using DivergenceEval = std::function<double(const Vec&, double)>;

  VectorField(int dim, Eval f, double declared_bound)
      : state_(std::make_shared<State>()) {
    if (dim < 1 || dim > kMaxDim) throw ConfigurationError("field dimension must be in [1, 3]");
    if (!f) throw ConfigurationError("field evaluator is empty");
    if (!(declared_bound >= 0.0)) throw ConfigurationError("declared field bound must be nonnegative");
    state_->dim = dim;
    state_->f = std::move(f);
    state_->bound = declared_bound;
  }

  [[nodiscard]] VectorField with_jacobian(JacobianEval jac) const {
    VectorField copy = clone();
    copy.state_->jacobian = std::move(jac);
    return copy;
  }

  [[nodiscard]] VectorField with_divergence(DivergenceEval div) const {
    VectorField copy = clone();
    copy.state_->divergence = std::move(div);
    return copy;
  }

  /// Marks f as independent of t, which lets solvers cache face velocities.
  [[nodiscard]] VectorField with_autonomous(bool autonomous = true) const {
    VectorField copy = clone();
    copy.state_->autonomous = autonomous;
    return copy;
  }

  [[nodiscard]] VectorField without_numeric_derivatives() const {
    VectorField copy = clone();
    copy.state_->numeric_derivatives = false;
    return copy;
  }

  int dim() const { return state_->dim; }
  double declared_bound() const { return state_->bound; }
  bool is_autonomous() const { return state_->autonomous; }
  bool has_analytic_jacobian() const { return static_cast<bool>(state_->jacobian); }
  bool has_analytic_divergence() const { return static_cast<bool>(state_->divergence); }
  bool has_jacobian() const { return has_analytic_jacobian() || state_->numeric_derivatives; }
  bool has_divergence() const { return has_analytic_divergence() || has_jacobian(); }

  Vec operator()(const Vec& x, double t) const { return state_->f(x, t); }

  Mat jacobian(const Vec& x, double t) const {
    if (state_->jacobian) return state_->jacobian(x, t);
    if (!state_->numeric_derivatives) {
      throw ConfigurationError("field has no analytic Jacobian and numeric derivatives are disabled");
    }
    return numeric_jacobian(x, t);
  }

  Mat numeric_jacobian(const Vec& x, double t) const {
    const int n = dim();
    Mat jac(n, n);
    Vec probe = x;
    for (int j = 0; j < n; ++j) {
      const double step = 1e-6 * std::max(1.0, std::abs(x[j]));
      probe[j] = x[j] + step;
      const Vec plus = state_->f(probe, t);
      probe[j] = x[j] - step;
      const Vec minus = state_->f(probe, t);
      probe[j] = x[j];
      jac.col(j) = (plus - minus) / (2.0 * step);
    }
    return jac;
  }

  double divergence(const Vec& x, double t) const {
    if (state_->divergence) return state_->divergence(x, t);
    if (state_->jacobian) return state_->jacobian(x, t).trace();
    if (state_->numeric_derivatives) return numeric_divergence(x, t);
    throw ConfigurationError("field has neither analytic nor numeric divergence");
  }

  double numeric_divergence(const Vec& x, double t) const {
    double div = 0.0;
    Vec probe = x;
    for (int j = 0; j < dim(); ++j) {
      const double step = 1e-6 * std::max(1.0, std::abs(x[j]));
      probe[j] = x[j] + step;
      const double plus = state_->f(probe, t)[j];
      probe[j] = x[j] - step;
      const double minus = state_->f(probe, t)[j];
      probe[j] = x[j];
      div += (plus - minus) / (2.0 * step);
    }
    return div;
  }

 private:
  struct State {
    int dim = 0;
    Eval f;
    JacobianEval jacobian;
    DivergenceEval divergence;
    double bound = 0.0;
    bool autonomous = false;
    bool numeric_derivatives = true;
  };

  VectorField clone() const {
    VectorField copy = *this;
    copy.state_ = std::make_shared<State>(*state_);
    return copy;
  }

  std::shared_ptr<State> state_;
};

/// What a scalar datum stands for.
enum class DataRole { terminal, running, density };

inline const char* to_string(DataRole role) {
  switch (role) {
    case DataRole::terminal: return "terminal";
    case DataRole::running: return "running";
    case DataRole::density: return "density";
  }
  return "unknown";
}

/// Terminal data zeta, running cost phi or initial density rho.
///
/// Either an evaluator (x, t) -> value or a stack of gridded snapshots. A
/// stack is piecewise constant in space (per cell) and in time (the latest
/// snapshot not after t).
class ScalarData {
 public:
  using Eval = std::function<double(const Vec&, double)>;

  static ScalarData from_function(DataRole role, Eval eval, std::string label = "function") {
    if (!eval) throw DataError("scalar data evaluator is empty");
    ScalarData d(role, std::move(label));
    d.eval_ = std::move(eval);
    return d;
  }

  static ScalarData constant(DataRole role, double value) {
    if (role == DataRole::density && value < 0.0) throw DataError("densities must be nonnegative");
    ScalarData d(role, "constant(" + std::to_string(value) + ")");
    d.eval_ = [value](const Vec&, double) { return value; };
    d.constant_ = value;
    return d;
  }

  static ScalarData from_grid_stack(DataRole role, const Grid& grid, std::vector<double> times,
                                    std::vector<std::vector<double>> snapshots) {
    if (times.empty() || times.size() != snapshots.size()) {
      throw DataError("grid stack needs one snapshot per time sample");
    }
    if (!std::is_sorted(times.begin(), times.end())) throw DataError("grid stack times must be sorted");
    for (const auto& snap : snapshots) {
      if (snap.size() != grid.size()) throw ShapeError("grid stack snapshot does not match its grid metadata");
      if (role == DataRole::density) {
        for (double v : snap) {
          if (v < 0.0) throw DataError("densities must be nonnegative");
        }
      }
    }
    ScalarData d(role, "grid-stack");
    d.stack_ = std::make_shared<Stack>(Stack{grid, std::move(times), std::move(snapshots)});
    return d;
  }

  DataRole role() const { return role_; }
  const std::string& label() const { return label_; }
  bool is_gridded() const { return static_cast<bool>(stack_); }
  /// Value when the data is a known constant.
  std::optional<double> constant_value() const { return constant_; }

  double operator()(const Vec& x, double t) const {
    if (stack_) return eval_stack(x, t);
    const double v = eval_(x, t);
    if (!std::isfinite(v)) throw DataError("scalar data '" + label_ + "' is not finite at the query point");
    if (role_ == DataRole::density && v < 0.0) throw DataError("density evaluated to a negative value");
    return v;
  }

 private:
  struct Stack {
    Grid grid;
    std::vector<double> times;
    std::vector<std::vector<double>> snapshots;
  };

  ScalarData(DataRole role, std::string label) : role_(role), label_(std::move(label)) {}

  double eval_stack(const Vec& x, double t) const {
    const auto cell = stack_->grid.locate(x);
    if (!cell) throw DataError("point lies outside the grid of gridded data");
    const auto& times = stack_->times;
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t k = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin()) - 1;
    return stack_->snapshots[k][*cell];
  }

  DataRole role_;
  std::string label_;
  Eval eval_;
  std::shared_ptr<const Stack> stack_;
  std::optional<double> constant_;
};

}  // namespace exitflow
