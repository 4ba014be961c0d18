#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hypertea/tensor.hpp"

namespace hypertea {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  std::string worst;  // "name[flat_index]" of the worst-matching entry
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int64_t checked = 0;

  bool pass(double tol) const { return max_rel_err <= tol; }
};

// Central-difference check of reverse-mode gradients.
//
// `loss_fn` must rebuild its graph from the current parameter values on every
// call and return a scalar. Each listed tensor is perturbed in place; the
// numeric slope (f(x+eps) - f(x-eps)) / (2 eps) is compared with the gradient
// recorded by one backward pass using
//   rel_err = |a - n| / max(|a|, |n|, 1e-6).
template <typename T, typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn,
                           const std::vector<std::pair<std::string, Tensor<T>>>& params,
                           T eps = T(1e-5)) {
  for (const auto& [name, p] : params) p.zero_grad();
  Tensor<T> loss = loss_fn();
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) analytic.push_back(p.grad_or_zeros());

  GradCheckReport report;
  double rel_sum = 0.0;
  NoGradGuard eval_only;
  {
    T first = loss_fn().item();
    T second = loss_fn().item();
    if (first != second) {
      throw NumericsError("grad_check: function is not deterministic (" +
                          std::to_string(first) + " vs " + std::to_string(second) + ")");
    }
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& node = *params[pi].second.node();
    for (size_t i = 0; i < node.value.size(); ++i) {
      T saved = node.value[i];
      node.value[i] = saved + eps;
      T up = loss_fn().item();
      node.value[i] = saved - eps;
      T down = loss_fn().item();
      node.value[i] = saved;

      double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
      double a = static_cast<double>(analytic[pi][i]);
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++report.checked;
      rel_sum += rel;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = params[pi].first + "[" + std::to_string(i) + "]";
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  if (report.checked > 0) report.mean_rel_err = rel_sum / static_cast<double>(report.checked);
  return report;
}

}  // namespace hypertea
