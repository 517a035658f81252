#pragma once

#include <functional>
#include <vector>

#include "lfs/tensor.hpp"

namespace lfs {

/// A differentiable scalar function of several tensors. The function must
/// rebuild its graph on the given tape from the given inputs each call.
using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // |analytic - numeric| / max(1, |analytic|, |numeric|)
  double max_abs_error = 0.0;
  std::int64_t checked = 0;
};

/// Compares analytic gradients against central finite differences
/// (f(x+eps) - f(x-eps)) / (2 eps) for every element of every input that
/// requires gradients. Inputs are perturbed in place and restored.
GradCheckResult check_gradient(const ScalarFn& fn, std::vector<Tensor> inputs,
                               double eps = 1e-5);

}  // namespace lfs
