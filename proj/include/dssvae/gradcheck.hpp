// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "dssvae/autodiff.hpp"

namespace dssvae {

struct GradCheckResult {
  /// False when the op recorded a non-differentiable step (argmax etc.);
  /// max_relative_error is meaningless then.
  bool checkable = true;
  double max_relative_error = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares `analytic[i]` against central differences of `evaluate` taken
/// by perturbing `*inputs[i]` in place. Every input is restored.
inline double finite_difference_error(std::span<Tensor* const> inputs,
                                      std::span<const Tensor> analytic,
                                      const std::function<double()>& evaluate, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite difference step must be positive");
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i]->data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + eps;
      const double plus = evaluate();
      data[k] = saved - eps;
      const double minus = evaluate();
      data[k] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite output under perturbation");
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[i][k];
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite analytic gradient");
      worst = std::max(worst, relative_error(a, numeric));
    }
  }
  return worst;
}

using TapeOp = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

/// Runs `op` on differentiable leaves built from `inputs`, back-propagates
/// its scalar output and reports the worst relative error against central
/// differences at step `eps`.
inline GradCheckResult grad_check(const TapeOp& op, std::vector<Tensor> inputs, double eps) {
  if (!(eps > 0.0)) throw DomainError("grad_check: eps must be positive");
  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    ad::Var out = op(tape, leaves);
    if (tape.nondifferentiable()) {
      return {false, std::numeric_limits<double>::quiet_NaN()};
    }
    if (!out.value().all_finite()) throw NumericError("grad_check: non-finite output");
    tape.backward(out);
    for (const ad::Var& leaf : leaves) {
      const Tensor& g = leaf.grad();
      analytic.push_back(g.empty() ? Tensor(leaf.rows(), leaf.cols()) : g);
    }
  }
  std::vector<Tensor*> ptrs;
  for (Tensor& t : inputs) ptrs.push_back(&t);
  const auto evaluate = [&]() {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
    return op(tape, leaves).value().item();
  };
  return {true, finite_difference_error(ptrs, analytic, evaluate, eps)};
}

}  // namespace dssvae
