#pragma once

#include <functional>
#include <span>
#include <string>

#include "hcrn/tensor.hpp"

namespace hcrn {

struct GradCheckReport {
  double max_relative_error = 0.0;
  // Parameter position and element index where the maximum occurred.
  std::size_t worst_param = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements_checked = 0;
};

class NondeterministicFunctionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Compares reverse-mode gradients of `loss_fn` against central differences.
//
// `loss_fn` must rebuild the scalar loss from the current values of `params`.
// The relative error per element is |a - n| / (|a| + |n| + eps). Parameter
// gradients are overwritten. Elements are subsampled with a fixed stride when
// `max_elements_per_param` is nonzero.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                  double eps = 1e-5, std::size_t max_elements_per_param = 0);

}  // namespace hcrn
