#include "emoreg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace emoreg {

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, float step) {
  for (Tensor& x : inputs) x.set_requires_grad(true);

  // Analytic pass.
  std::vector<std::vector<float>> analytic;
  {
    for (Tensor& x : inputs) x.zero_grad();
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
    for (Tensor& x : inputs) {
      auto g = x.grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  // Numeric pass: no tape alive, so the evaluations stay pure.
  double max_rel = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto vals = inputs[t].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const float saved = vals[i];
      const float plus = saved + step;
      const float minus = saved - step;
      vals[i] = plus;
      const double f_plus = f().item();
      vals[i] = minus;
      const double f_minus = f().item();
      vals[i] = saved;
      const double h = static_cast<double>(plus) - static_cast<double>(minus);
      const double numeric = (f_plus - f_minus) / h;
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

double grad_check(const std::function<Tensor()>& f, Tensor& input, float step) {
  return grad_check(f, std::span<Tensor>(&input, 1), step);
}

}  // namespace emoreg
