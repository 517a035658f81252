#include "lfs/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace lfs {

GradCheckResult check_gradient(const ScalarFn& fn, std::vector<Tensor> inputs, double eps) {
  // Analytic gradients.
  Tape tape;
  Tensor loss = fn(tape, inputs);
  if (loss.size() != 1) throw ArgumentError("check_gradient: fn must return a scalar");
  tape.backward(loss);

  std::vector<Eigen::ArrayXd> analytic;
  analytic.reserve(inputs.size());
  for (Tensor& t : inputs) {
    analytic.push_back(t.requires_grad() ? t.grad() : Eigen::ArrayXd());
  }

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    Eigen::ArrayXd& v = inputs[i].mutable_values();
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const double saved = v[k];
      v[k] = saved + eps;
      Tape tp;
      const double fp = fn(tp, inputs).value();
      v[k] = saved - eps;
      Tape tm;
      const double fm = fn(tm, inputs).value();
      v[k] = saved;

      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i][k];
      const double abs_err = std::fabs(a - numeric);
      const double rel_err = abs_err / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, rel_err);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace lfs
