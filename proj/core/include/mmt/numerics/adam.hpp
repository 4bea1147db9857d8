// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmt/numerics/autograd.hpp"

namespace mmt::num {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment estimates, one pair per parameter.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;

  static AdamState zeros_like(const ParameterStore& params);
};

/// One bias-corrected Adam update on values in place.
///
/// `lr` must be finite and non-negative; lr == 0 updates the moments but
/// leaves every value untouched.
void adam_step(std::span<Tensor* const> values, std::span<const Tensor* const> grads, AdamState& state, double lr,
               const AdamConfig& cfg);

/// Convenience overload over a whole store; frozen parameters are skipped.
void adam_step(ParameterStore& params, AdamState& state, double lr, const AdamConfig& cfg);

/// Global L2 norm of all gradients.
double gradient_norm(const ParameterStore& params);
/// Rescales gradients so their global norm is at most max_norm.
void clip_gradients(ParameterStore& params, double max_norm);

}  // namespace mmt::num
