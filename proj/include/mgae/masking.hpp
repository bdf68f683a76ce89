// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "mgae/graph.hpp"
#include "mgae/tensor.hpp"

namespace mgae {

/// kRandom draws every re-mask set independently; kFixed re-masks exactly
/// the input-masked nodes (the single-view fixed re-mask ablation).
enum class RemaskMode { kRandom, kFixed };

struct MaskPlan {
  std::vector<NodeId> input_masked;
  std::vector<std::vector<NodeId>> remask_sets;
  std::uint64_t seed = 0;
};

struct MaskTokens {
  Var input_token;   // 1 x d_in
  Var decode_token;  // 1 x d
};

/// floor(rate * n) distinct nodes, uniform without replacement, sorted.
inline std::vector<NodeId> sample_without_replacement(std::size_t n, double rate, std::mt19937_64& rng) {
  const auto m = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n)));
  std::vector<NodeId> pool(n);
  std::iota(pool.begin(), pool.end(), NodeId{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline MaskPlan sample_mask_plan(std::size_t n, double mask_rate, double remask_rate, std::size_t k_views,
                                 std::uint64_t seed, RemaskMode mode = RemaskMode::kRandom) {
  if (n == 0) throw ValidationError("sample_mask_plan: graph has no nodes");
  if (mask_rate < 0.0 || mask_rate > 1.0 || remask_rate < 0.0 || remask_rate > 1.0)
    throw ValidationError("sample_mask_plan: rates must lie in [0, 1]");
  if (k_views < 1) throw ValidationError("sample_mask_plan: need at least one re-mask view");
  std::mt19937_64 rng(seed);
  MaskPlan plan;
  plan.seed = seed;
  plan.input_masked = sample_without_replacement(n, mask_rate, rng);
  for (std::size_t j = 0; j < k_views; ++j) {
    if (mode == RemaskMode::kFixed)
      plan.remask_sets.push_back(plan.input_masked);
    else
      plan.remask_sets.push_back(sample_without_replacement(n, remask_rate, rng));
  }
  return plan;
}

/// Masked rows become the [MASK] token; other rows are untouched.
inline Var apply_input_mask(const Var& x, const MaskPlan& plan, const MaskTokens& tokens) {
  return replace_rows(x, plan.input_masked, tokens.input_token);
}

/// Re-masked rows of the code become the [DMASK] token.
inline Var apply_remask(const Var& h, std::span<const NodeId> remask_set, const MaskTokens& tokens) {
  return replace_rows(h, remask_set, tokens.decode_token);
}

}  // namespace mgae
