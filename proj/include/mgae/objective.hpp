// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mgae/graph.hpp"
#include "mgae/tensor.hpp"

namespace mgae {

struct ObjectiveConfig {
  double gamma = 2.0;
  double lambda_mix = 1.0;
  double eps = 1e-12;
  /// Divide the reconstruction term by K as well as |masked|.
  bool normalize_views = false;
  /// Ablation switch: drop the reconstruction term entirely.
  bool input_recon = true;

  void validate() const {
    if (!(gamma >= 1.0)) throw ValidationError("objective: gamma must be >= 1");
    if (!(lambda_mix >= 0.0)) throw ValidationError("objective: lambda must be >= 0");
    if (!(eps > 0.0)) throw ValidationError("objective: eps must be > 0");
  }
};

/// (1 - cos(a, b))^gamma for two plain vectors.
inline double scaled_cosine_error(std::span<const double> a, std::span<const double> b, double gamma,
                                  double eps = 1e-12) {
  if (a.size() != b.size()) throw ShapeError("scaled_cosine_error: widths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < eps || nb < eps) throw NumericalError("scaled_cosine_error: zero-norm vector");
  const double cos = dot / (na * nb);
  return std::pow(std::max(1.0 - cos, 0.0), gamma);
}

namespace detail {

template <class Err>
void require_nonzero_rows(const Matrix& m, double eps, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double ss = 0.0;
    for (double v : m.row(r)) ss += v * v;
    if (std::sqrt(ss) < eps) throw Err(std::string(what) + ": zero-norm row " + std::to_string(r));
  }
}

}  // namespace detail

/// Per-row (1 - cos(a_i, b_i))^gamma as an N x 1 tensor. A model output
/// row with norm <= eps counts as cos = 0 and contributes no gradient.
inline Var scaled_cosine_rows(const Var& a, const Var& b, double gamma, double eps = 1e-12) {
  Var cos = rowwise_dot(l2_normalize_rows(a, eps), l2_normalize_rows(b, eps));
  return pow_nonneg(add_scalar(scale(cos, -1.0), 1.0), gamma);
}

/**
 * Multi-view reconstruction loss over the input-masked nodes:
 *   (1/|masked|) * sum_views sum_{i in masked} (1 - cos(x_i, z_i^(j)))^gamma.
 * Not divided by the number of views unless `normalize_views` is set.
 */
inline Var input_recon_loss(const Var& x, std::span<const Var> z_views, std::span<const NodeId> masked,
                            const ObjectiveConfig& cfg) {
  if (masked.empty()) throw ValidationError("input_recon_loss: no masked nodes");
  if (z_views.empty()) throw ValidationError("input_recon_loss: no decoded views");
  Var xm = row_slice(x, masked);
  detail::require_nonzero_rows<ValidationError>(xm.value(), cfg.eps, "input_recon_loss (features)");
  Var total;
  bool first = true;
  for (const Var& z : z_views) {
    if (!z.value().same_shape(x.value()))
      throw ShapeError("input_recon_loss: view shape " + shape_str(z.value()) + " != features " + shape_str(x.value()));
    Var term = reduce_sum(scaled_cosine_rows(xm, row_slice(z, masked), cfg.gamma, cfg.eps));
    total = first ? term : add(total, term);
    first = false;
  }
  double norm = static_cast<double>(masked.size());
  if (cfg.normalize_views) norm *= static_cast<double>(z_views.size());
  return scale(total, 1.0 / norm);
}

/// Mean over all rows of (1 - cos(zbar_i, xbar_i))^gamma. `x_bar` is used
/// as a constant target; no gradient reaches it.
inline Var latent_pred_loss(const Var& z_bar, const Var& x_bar, const ObjectiveConfig& cfg) {
  if (!z_bar.value().same_shape(x_bar.value()))
    throw ShapeError("latent_pred_loss: " + shape_str(z_bar.value()) + " vs " + shape_str(x_bar.value()));
  if (z_bar.rows() == 0) throw ValidationError("latent_pred_loss: empty input");
  Var target = detach(x_bar);
  return reduce_mean(scaled_cosine_rows(z_bar, target, cfg.gamma, cfg.eps));
}

/// L_input + lambda * L_latent. With lambda == 0 the latent term is not
/// attached at all.
inline Var combined_loss(const Var& l_input, const Var& l_latent, double lambda_mix) {
  detail::same_tape(l_input, l_latent, "combined_loss");
  if (lambda_mix == 0.0) return l_input;
  return add(l_input, scale(l_latent, lambda_mix));
}

}  // namespace mgae
