// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit tests.

#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>

namespace detrack::testing {

/// Max relative error between autograd and central differences over up to
/// `probes` entries of `param` (double precision expected).
inline double gradient_error(torch::Tensor param, const std::function<torch::Tensor()>& loss,
                             int probes = 12, double h = 1e-6) {
  if (param.grad().defined()) param.grad().zero_();
  loss().backward();
  auto analytic = param.grad().clone().reshape({-1});
  auto flat = param.detach().reshape({-1});
  const auto n = flat.numel();
  double worst = 0.0;
  torch::NoGradGuard guard;
  for (int p = 0; p < probes && p < n; ++p) {
    const auto idx = (p * 7919) % n;
    const double orig = flat[idx].item<double>();
    flat[idx] = orig + h;
    const double up = loss().item<double>();
    flat[idx] = orig - h;
    const double down = loss().item<double>();
    flat[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[idx].item<double>();
    const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / scale);
  }
  return worst;
}

}  // namespace detrack::testing
