// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "mgae/errors.hpp"
#include "mgae/tensor.hpp"

namespace mgae {

/// lr_max * (1 + cos(pi * step / total)) / 2, no warmup.
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max) {
  if (total_steps == 0) throw ValidationError("cosine_lr: total_steps must be > 0");
  if (step > total_steps) throw ValidationError("cosine_lr: step beyond total_steps");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_max * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

struct AdamWConfig {
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParameterSet m;
  ParameterSet v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterSet& theta) {
    AdamState s;
    for (const auto& [name, p] : theta) {
      s.m.add(name, Matrix(p.rows(), p.cols()));
      s.v.add(name, Matrix(p.rows(), p.cols()));
    }
    return s;
  }

  bool operator==(const AdamState&) const = default;
};

/**
 * One AdamW update of every tensor in `theta`. Parameters missing from
 * `grads` are treated as having zero gradient, so their moments still decay
 * and weight decay still applies. Decay is decoupled: theta -= lr * wd * theta
 * before the bias-corrected adaptive step.
 */
inline void adamw_step(ParameterSet& theta, const GradientMap& grads, AdamState& state, double lr,
                       const AdamWConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!theta.contains(name)) throw ValidationError("adamw_step: gradient for unknown parameter '" + name + "'");
    if (!g.all_finite()) throw NumericalError("adamw_step: non-finite gradient for '" + name + "'");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : theta) {
    Matrix& m = state.m.at(name);
    Matrix& v = state.v.at(name);
    if (!m.same_shape(p) || !v.same_shape(p)) throw ShapeError("adamw_step: moment shape mismatch for '" + name + "'");
    auto it = grads.find(name);
    const Matrix* g = it == grads.end() ? nullptr : &it->second;
    if (g && !g->same_shape(p)) throw ShapeError("adamw_step: gradient shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      p[i] -= lr * cfg.weight_decay * p[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
    }
  }
}

}  // namespace mgae
