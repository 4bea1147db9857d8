// SPDX-License-Identifier: Apache-2.0
#include "mmt/numerics/adam.hpp"

#include <cmath>

#include "mmt/errors.hpp"

namespace mmt::num {

AdamState AdamState::zeros_like(const ParameterStore& params) {
  AdamState s;
  for (const auto& p : params) {
    s.first_moment.push_back(Tensor::zeros_like(p.value()));
    s.second_moment.push_back(Tensor::zeros_like(p.value()));
  }
  return s;
}

void adam_step(std::span<Tensor* const> values, std::span<const Tensor* const> grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (!std::isfinite(lr) || lr < 0.0) throw ConfigError("Adam learning rate must be finite and >= 0");
  if (values.size() != grads.size() || values.size() != state.first_moment.size() ||
      values.size() != state.second_moment.size()) {
    throw DimensionError("Adam state does not match parameter count");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < values.size(); ++i) {
    Tensor& w = *values[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!w.same_shape(g) || !w.same_shape(m) || !w.same_shape(v)) {
      throw DimensionError("Adam: shape mismatch for parameter " + std::to_string(i));
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      if (lr == 0.0) continue;
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

void adam_step(ParameterStore& params, AdamState& state, double lr, const AdamConfig& cfg) {
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  std::vector<Tensor*> frozen_values;
  for (auto& p : params) {
    values.push_back(&p.value());
    if (p.grad().empty()) p.grad() = Tensor::zeros_like(p.value());
    grads.push_back(&p.grad());
    if (!p.var.requires_grad()) frozen_values.push_back(&p.value());
  }
  // Frozen values are restored after the update so they never move.
  std::vector<Tensor> saved;
  saved.reserve(frozen_values.size());
  for (Tensor* t : frozen_values) saved.push_back(*t);
  adam_step(values, grads, state, lr, cfg);
  for (std::size_t i = 0; i < frozen_values.size(); ++i) *frozen_values[i] = std::move(saved[i]);
}

double gradient_norm(const ParameterStore& params) {
  double s = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad().values()) s += g * g;
  }
  return std::sqrt(s);
}

void clip_gradients(ParameterStore& params, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = gradient_norm(params);
  if (n <= max_norm || n == 0.0) return;
  const double f = max_norm / n;
  for (auto& p : params) {
    for (auto& g : p.grad().values()) g *= f;
  }
}

}  // namespace mmt::num
