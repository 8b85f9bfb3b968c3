#pragma once

#include "emag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace emag::ad {

// Compares reverse-mode gradients of a scalar function against central
// differences. Returns the largest
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// over parameters, with |.| the Euclidean norm of the parameter's gradient.
// `f` must be deterministic.
template <typename Scalar>
Scalar finite_difference_check(const std::function<Tensor<Scalar>()>& f,
                               std::vector<Tensor<Scalar>> params, Scalar step) {
  for (auto& p : params) p.zero_grad();
  f().backward();
  std::vector<typename Tensor<Scalar>::Array> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.push_back(p.has_grad() ? p.grad()
                                    : Tensor<Scalar>::Array::Zero(p.size()).eval());
  }

  Scalar worst = 0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& values = params[i].value();
    typename Tensor<Scalar>::Array numeric(values.size());
    for (Index j = 0; j < values.size(); ++j) {
      const Scalar saved = values[j];
      values[j] = saved + step;
      const Scalar plus = f().item();
      values[j] = saved - step;
      const Scalar minus = f().item();
      values[j] = saved;
      numeric[j] = (plus - minus) / (Scalar(2) * step);
    }
    const Scalar a = analytic[i].matrix().norm();
    const Scalar n = numeric.matrix().norm();
    const Scalar denom = std::max({a, n, Scalar(1e-8)});
    worst = std::max(worst, (analytic[i] - numeric).matrix().norm() / denom);
  }
  return worst;
}

}  // namespace emag::ad
