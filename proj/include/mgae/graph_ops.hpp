// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mgae/graph.hpp"
#include "mgae/tensor.hpp"

namespace mgae {

/// Row owner of every CSR entry: edge e sits in row edge_targets(g)[e].
inline std::vector<NodeId> edge_targets(const Graph& g) {
  std::vector<NodeId> out(g.num_edges());
  const auto off = g.row_offsets();
  for (NodeId v = 0; v < g.num_nodes(); ++v)
    for (std::size_t e = off[static_cast<std::size_t>(v)]; e < off[static_cast<std::size_t>(v) + 1]; ++e)
      out[e] = v;
  return out;
}

/**
 * Attention-weighted neighbourhood sum, one softmax per (node, head).
 *
 * `scores` is E x H with one row per CSR entry of `g`; `values` is
 * N x (H * D). For node i and head h,
 *   out(i, h*D + d) = sum_{e in row i} softmax_e(scores(., h)) * values(col[e], h*D + d).
 * The softmax subtracts the per-neighbourhood maximum. With `training` and a
 * positive `attn_dropout`, normalized coefficients are dropped (inverted
 * scaling) before aggregation.
 *
 * `g` must outlive the tape the result is recorded on.
 */
inline Var neighbor_softmax_aggregate(const Graph& g, const Var& scores, const Var& values,
                                      double attn_dropout = 0.0, bool training = false,
                                      std::mt19937_64* rng = nullptr) {
  detail::same_tape(scores, values, "neighbor_softmax_aggregate");
  const Matrix& s = scores.value();
  const Matrix& x = values.value();
  const std::size_t n = static_cast<std::size_t>(g.num_nodes());
  const std::size_t heads = s.cols();
  if (s.rows() != g.num_edges())
    throw ShapeError("neighbor_softmax_aggregate: " + std::to_string(s.rows()) + " scores for " +
                     std::to_string(g.num_edges()) + " edges");
  if (heads == 0 || x.cols() % heads != 0)
    throw ShapeError("neighbor_softmax_aggregate: value width " + std::to_string(x.cols()) +
                     " not divisible by " + std::to_string(heads) + " heads");
  if (x.rows() != n) throw ShapeError("neighbor_softmax_aggregate: value rows != num_nodes");
  if (attn_dropout < 0.0 || attn_dropout >= 1.0)
    throw ValidationError("neighbor_softmax_aggregate: attn_dropout must lie in [0, 1)");
  const bool drop = training && attn_dropout > 0.0;
  if (drop && rng == nullptr) throw ValidationError("neighbor_softmax_aggregate: dropout needs an rng");

  const std::size_t width = x.cols() / heads;
  const auto off = g.row_offsets();
  const auto col = g.col_indices();

  Matrix weights(s.rows(), heads);
  Matrix mask;
  if (drop) {
    mask = Matrix(s.rows(), heads);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep = 1.0 / (1.0 - attn_dropout);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = u(*rng) >= attn_dropout ? keep : 0.0;
  }

  Matrix out(n, x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = off[i], e_end = off[i + 1];
    if (b == e_end)
      throw ValidationError("neighbor_softmax_aggregate: node " + std::to_string(i) +
                            " has no incoming edges (add self-loops first)");
    for (std::size_t h = 0; h < heads; ++h) {
      double mx = s(b, h);
      for (std::size_t e = b + 1; e < e_end; ++e) mx = std::max(mx, s(e, h));
      double z = 0.0;
      for (std::size_t e = b; e < e_end; ++e) {
        weights(e, h) = std::exp(s(e, h) - mx);
        z += weights(e, h);
      }
      for (std::size_t e = b; e < e_end; ++e) {
        weights(e, h) /= z;
        const double w = drop ? weights(e, h) * mask(e, h) : weights(e, h);
        if (w == 0.0) continue;
        const auto src = x.row(static_cast<std::size_t>(col[e]));
        auto dst = out.row(i);
        for (std::size_t d = 0; d < width; ++d) dst[h * width + d] += w * src[h * width + d];
      }
    }
  }

  const std::size_t is = scores.id, ix = values.id;
  const Graph* gp = &g;
  return scores.tape->record(
      "neighbor_softmax_aggregate", std::move(out), {scores, values},
      [is, ix, gp, heads, width, weights = std::move(weights), mask = std::move(mask)](Tape& t, std::size_t self) {
        const Matrix& gout = t.grad(self);
        const Matrix& x = t.value(ix);
        const auto off = gp->row_offsets();
        const auto col = gp->col_indices();
        const bool drop = !mask.empty();
        const bool need_s = t.requires_grad(is);
        const bool need_x = t.requires_grad(ix);
        Matrix* gs = need_s ? &t.grad(is) : nullptr;
        Matrix* gx = need_x ? &t.grad(ix) : nullptr;
        std::vector<double> dw;
        const std::size_t n = static_cast<std::size_t>(gp->num_nodes());
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t b = off[i], e_end = off[i + 1];
          const auto gi = gout.row(i);
          for (std::size_t h = 0; h < heads; ++h) {
            dw.assign(e_end - b, 0.0);
            double weighted = 0.0;
            for (std::size_t e = b; e < e_end; ++e) {
              const double m = drop ? mask(e, h) : 1.0;
              const double w = weights(e, h) * m;
              const auto src_row = static_cast<std::size_t>(col[e]);
              if (need_x && w != 0.0) {
                auto gxr = gx->row(src_row);
                for (std::size_t d = 0; d < width; ++d) gxr[h * width + d] += w * gi[h * width + d];
              }
              if (need_s) {
                const auto xr = x.row(src_row);
                double acc = 0.0;
                for (std::size_t d = 0; d < width; ++d) acc += gi[h * width + d] * xr[h * width + d];
                dw[e - b] = acc * m;
                weighted += weights(e, h) * dw[e - b];
              }
            }
            if (need_s)
              for (std::size_t e = b; e < e_end; ++e) (*gs)(e, h) += weights(e, h) * (dw[e - b] - weighted);
          }
        }
      });
}

}  // namespace mgae
