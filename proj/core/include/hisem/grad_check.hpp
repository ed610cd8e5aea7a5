#pragma once

#include <functional>
#include <vector>

#include "hisem/tensor.hpp"

namespace hisem {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  Real max_rel_err = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  Real worst_analytic = 0.0;
  Real worst_numeric = 0.0;
  /// The one-sided differences at the worst coordinate disagree: the
  /// function has a kink within +-eps there, so the central difference is not
  /// a gradient estimate at that point.
  bool worst_nonsmooth = false;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences over every coordinate of every input. The error at one
/// coordinate is |analytic - fd| / max(|analytic|, |fd|, 1e-6). The floor sits
/// above central-difference roundoff (a few ulps of the loss over 2 eps), so
/// a gradient that is exactly zero is not reported as a large error.
/// `f` must be pure; `inputs` are cloned and not modified.
GradCheckResult grad_check_detailed(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                    Real eps = 1e-4);

Real grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, Real eps = 1e-4);

using LossFn = std::function<Tensor()>;

/// Same comparison for a loss that closes over existing parameter tensors
/// (leaves with requires_grad). Each coordinate is perturbed in place and
/// restored; `worst_input` indexes `params`.
GradCheckResult grad_check_params(const LossFn& loss, const std::vector<Tensor>& params, Real eps = 1e-4);

}  // namespace hisem
