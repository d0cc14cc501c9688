#include "hcrn/gradcheck.hpp"

#include <cmath>
#include <vector>

namespace hcrn {

namespace {

double evaluate(const std::function<Tensor()>& loss_fn) {
  NoGradScope no_grad;
  return loss_fn().item();
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                  double eps, std::size_t max_elements_per_param) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");

  const double base = evaluate(loss_fn);
  if (evaluate(loss_fn) != base) {
    throw NondeterministicFunctionError("finite_diff_check: loss function is not deterministic");
  }

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    auto loss = loss_fn();
    // A loss that no parameter reaches has an all-zero gradient.
    if (loss.requires_grad()) tape.backward(loss);
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const auto n = p.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    std::size_t stride = 1;
    if (max_elements_per_param != 0 && n > max_elements_per_param) {
      stride = (n + max_elements_per_param - 1) / max_elements_per_param;
    }
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(loss_fn);
      values[i] = saved - eps;
      const double down = evaluate(loss_fn);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + eps);
      ++report.elements_checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_param = pi;
        report.worst_element = i;
        report.analytic = analytic[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace hcrn
