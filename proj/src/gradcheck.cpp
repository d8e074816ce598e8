#include "distill/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace distill {

double GradReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

double GradReport::max_abs_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_abs_error);
  return m;
}

std::size_t GradReport::skipped() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.skipped;
  return n;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const TapeFn& f, const std::vector<Tensor>& inputs) {
  BranchRecorder recorder;
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Var out = f(tape, vars);
  return Probe{out.value().item(), recorder.signature()};
}

}  // namespace

GradReport gradient_check(const TapeFn& f, const std::vector<Tensor>& inputs, double tol, double eps,
                          const std::vector<std::string>& names) {
  GradReport report;
  report.tolerance = tol;

  std::vector<Tensor> analytic;
  std::uint64_t base_signature = 0;
  {
    BranchRecorder recorder;
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    const Var out = f(tape, vars);
    base_signature = recorder.signature();
    const Gradients grads = tape.backward(out);
    for (const auto& v : vars) analytic.push_back(grads.of(v));
  }

  std::vector<Tensor> probe = inputs;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    ParamCheck check;
    check.name = p < names.size() ? names[p] : "input" + std::to_string(p);
    Tensor& x = probe[p];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double original = x[i];
      auto at = [&](double offset) {
        x[i] = original + offset;
        return evaluate(f, probe);
      };
      const Probe up = at(eps);
      const Probe down = at(-eps);
      const Probe far_up = at(10.0 * eps);
      const Probe far_down = at(-10.0 * eps);
      x[i] = original;
      if (up.signature != base_signature || down.signature != base_signature ||
          far_up.signature != base_signature || far_down.signature != base_signature) {
        ++check.skipped;
        continue;
      }
      const double numeric = (up.value - down.value) / (2.0 * eps);
      const double exact = analytic[p][i];
      check.max_abs_error = std::max(check.max_abs_error, std::abs(numeric - exact));
      check.max_rel_error = std::max(check.max_rel_error, relative_error(numeric, exact));
      ++check.checked;
    }
    report.params.push_back(std::move(check));
  }
  report.passed = report.max_rel_error() <= tol;
  return report;
}

GradReport gradient_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double tol, double eps) {
  return gradient_check([&f](Tape& tape, std::span<const Var> in) { return f(tape, in[0]); }, {x}, tol, eps, {"x"});
}

}  // namespace distill
