#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "distill/autodiff.hpp"

namespace distill {

/// Per-input comparison of backward() against central differences.
struct ParamCheck {
  std::string name;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose probes crossed a kink
};

struct GradReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;
  bool passed = false;

  double max_rel_error() const;
  double max_abs_error() const;
  std::size_t skipped() const;
};

/// Builds a scalar on `tape` from the bound inputs.
using TapeFn = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

/// Central difference (f(x + eps e_i) - f(x - eps e_i)) / 2 eps per coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

/// Relative error with the max(|a|, |b|, 1e-8) denominator.
double relative_error(double a, double b);

/// Compares backward() with central differences for every coordinate of every
/// input. Coordinates whose probes at +-eps or +-10 eps change any recorded
/// branch (relu, max, hinge, huber, clamp) are skipped and counted.
GradReport gradient_check(const TapeFn& f, const std::vector<Tensor>& inputs, double tol, double eps = 1e-5,
                          const std::vector<std::string>& names = {});

GradReport gradient_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double tol, double eps = 1e-5);

}  // namespace distill
