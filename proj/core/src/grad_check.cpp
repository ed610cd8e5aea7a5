#include "hisem/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace hisem {

namespace {

GradCheckResult compare(const std::function<Real()>& eval, const std::vector<Tensor>& params,
                        const std::vector<std::vector<Real>>& analytic, Real eps) {
  GradCheckResult result;
  Real worst_up = 0.0, worst_down = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor p = params[t];
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      values[i] = saved + eps;
      const Real up = eval();
      values[i] = saved - eps;
      const Real down = eval();
      values[i] = saved;
      const Real numeric = (up - down) / (2.0 * eps);
      const Real a = analytic[t][i];
      const Real denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      const Real err = std::fabs(a - numeric) / denom;
      if (err > result.max_rel_err) {
        result = {err, t, i, a, numeric, false};
        worst_up = up;
        worst_down = down;
      }
    }
  }
  if (result.max_rel_err > 0.0) {
    // One-sided slopes differ by about eps * f'' on a smooth function; a
    // switch of relu/abs inside the window makes them disagree outright.
    const Real center = eval();
    const Real left = (center - worst_down) / eps;
    const Real right = (worst_up - center) / eps;
    result.worst_nonsmooth = std::fabs(right - left) > 0.1 * std::max({std::fabs(left), std::fabs(right), 1e-6});
  }
  return result;
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarFn& f, const std::vector<Tensor>& inputs, Real eps) {
  std::vector<Tensor> params;
  params.reserve(inputs.size());
  for (const auto& in : inputs) {
    params.push_back(Tensor::parameter(in.shape(), {in.values().begin(), in.values().end()}));
  }

  std::vector<std::vector<Real>> analytic;
  {
    Tape tape;
    Tensor loss = f(params);
    tape.backward(loss);
    for (const auto& p : params) analytic.push_back(p.grad());
  }

  return compare([&] { return f(params).item(); }, params, analytic, eps);
}

Real grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, Real eps) {
  return grad_check_detailed(f, inputs, eps).max_rel_err;
}

GradCheckResult grad_check_params(const LossFn& loss, const std::vector<Tensor>& params, Real eps) {
  for (auto p : params) p.zero_grad();
  std::vector<std::vector<Real>> analytic;
  {
    Tape tape;
    Tensor l = loss();
    tape.backward(l);
    for (const auto& p : params) analytic.push_back(p.grad());
  }
  for (auto p : params) p.zero_grad();
  return compare([&] { return loss().item(); }, params, analytic, eps);
}

}  // namespace hisem
