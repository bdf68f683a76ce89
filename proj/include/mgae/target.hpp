// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include "mgae/gnn.hpp"
#include "mgae/tensor.hpp"

namespace mgae {

/// Target network weights (encoder' + projector'), never trained directly.
struct TargetState {
  ParameterSet xi;
  double tau = 0.996;
};

inline TargetState init_target(const ParameterSet& theta, double tau = 0.996) {
  if (tau < 0.0 || tau > 1.0) throw ValidationError("init_target: ema decay must lie in [0, 1]");
  TargetState s;
  s.tau = tau;
  s.xi = theta.subset({"encoder.", "projector."});
  bool has_enc = false, has_proj = false;
  for (const auto& [k, _] : s.xi) {
    has_enc = has_enc || k.rfind("encoder.", 0) == 0;
    has_proj = has_proj || k.rfind("projector.", 0) == 0;
  }
  if (!has_enc || !has_proj) throw ValidationError("init_target: theta lacks encoder or projector parameters");
  return s;
}

/// Latent targets from the unmasked graph. Eval mode; the result is a plain
/// matrix with no tape attachment.
inline Matrix target_forward(const TargetState& state, const ModelConfig& cfg, const PreparedGraph& pg,
                             const Matrix& features) {
  Tape tape;
  ParamBinder bind(tape, state.xi, false);
  Var h = encoder_forward(bind, cfg.encoder, pg, tape.constant(features), ForwardMode{});
  return projector_forward(bind, cfg.projector, h).value();
}

/// xi <- tau * xi + (1 - tau) * theta, entrywise.
inline void ema_update(TargetState& state, const ParameterSet& theta) {
  const double tau = state.tau;
  for (auto& [name, xi] : state.xi) {
    const Matrix& th = theta.at(name);
    if (!th.same_shape(xi)) throw ShapeError("ema_update: shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < xi.size(); ++i) xi[i] = tau * xi[i] + (1.0 - tau) * th[i];
  }
}

}  // namespace mgae
