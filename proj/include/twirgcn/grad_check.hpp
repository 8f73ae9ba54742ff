#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "twirgcn/tensor.hpp"

namespace twirgcn {

// Builds a scalar computation on the given tape. Parameters are bound with
// `tape.param(...)` inside the callback.
using ScalarFn = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of `f` with respect to `inputs` against
// central finite differences. Relative error per coordinate is
// |a - n| / max(|a|, |n|, floor * max(1, |f(x)|)); the floor scales with the
// function value because finite-difference round-off does.
inline GradCheckResult grad_check_detailed(const ScalarFn& f, const std::vector<Tensor*>& inputs,
                                           double step = 1e-5, double floor = 1e-6) {
  auto eval = [&] {
    Tape tape;
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw ContractError("grad_check: non-finite forward value");
    return v;
  };

  for (Tensor* t : inputs) t->set_requires_grad(true);
  double scale = 1.0;
  {
    Tape tape;
    Var out = f(tape);
    if (!std::isfinite(out.item())) throw ContractError("grad_check: non-finite forward value");
    scale = std::max(1.0, std::abs(out.item()));
    tape.backward(out);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* t : inputs) analytic.push_back(t->grad);

  GradCheckResult res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& t = *inputs[i];
    for (std::size_t k = 0; k < t.values.size(); ++k) {
      const double orig = t.values[k];
      t.values[k] = orig + step;
      const double fp = eval();
      t.values[k] = orig - step;
      const double fm = eval();
      t.values[k] = orig;
      const double num = (fp - fm) / (2.0 * step);
      const double a = analytic[i][k];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor * scale});
      if (rel > res.max_rel_error || (i == 0 && k == 0)) {
        res = {rel, i, k, a, num};
      }
    }
  }
  return res;
}

inline double grad_check(const ScalarFn& f, const std::vector<Tensor*>& inputs,
                         double step = 1e-5) {
  return grad_check_detailed(f, inputs, step).max_rel_error;
}

}  // namespace twirgcn
