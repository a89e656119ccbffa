#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bafpn/errors.hpp"
#include "bafpn/tensor.hpp"

namespace bafpn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_input = 0;
  std::int64_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference check of reverse-mode gradients. `fn` must rebuild its
// graph from the given leaves on every call; leaves are perturbed in place.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckReport finite_diff_gradcheck(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
    std::vector<Tensor<double>> inputs, double h = 1e-6) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Tensor<double> loss = fn(inputs);
  if (loss.numel() != 1) {
    throw ContractError("gradcheck: fn must return a scalar, got " + shape_str(loss.shape()));
  }
  if (!std::isfinite(loss.item())) throw DomainError("gradcheck: loss is not finite");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.push_back(t.grad());

  // graph construction is pointless while only function values are needed
  for (auto& t : inputs) t.set_requires_grad(false);

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& buf = inputs[k].data();
    for (std::int64_t i = 0; i < inputs[k].numel(); ++i) {
      const double saved = buf[i];
      buf[i] = saved + h;
      const double f_plus = fn(inputs).item();
      buf[i] = saved - h;
      const double f_minus = fn(inputs).item();
      buf[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw DomainError("gradcheck: non-finite value at input " + std::to_string(k) +
                          " coordinate " + std::to_string(i));
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = k;
        report.worst_coord = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  for (auto& t : inputs) t.set_requires_grad(true);
  return report;
}

}  // namespace bafpn
