// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "mgae/graph.hpp"
#include "mgae/parallel.hpp"

namespace mgae {

struct ClusterConfig {
  double alpha = 0.15;
  double epsilon = 1e-4;
  std::size_t top_k = 64;
  /// Clusters whose positive-score support is smaller than this are padded
  /// with the largest-residual nodes the push touched.
  std::size_t min_cluster = 1;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("cluster: alpha must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ValidationError("cluster: epsilon must be > 0");
    if (top_k < 1) throw ValidationError("cluster: top_k must be >= 1");
  }
};

/// Sparse approximate personalized PageRank for one seed. Entries are
/// sorted by node id.
struct PPRVector {
  NodeId seed = 0;
  std::vector<std::pair<NodeId, double>> scores;
  std::vector<std::pair<NodeId, double>> residuals;

  double score(NodeId v) const { return lookup(scores, v); }
  double residual(NodeId v) const { return lookup(residuals, v); }
  double total_score() const {
    double s = 0.0;
    for (const auto& [_, x] : scores) s += x;
    return s;
  }
  double total_residual() const {
    double s = 0.0;
    for (const auto& [_, x] : residuals) s += x;
    return s;
  }

 private:
  static double lookup(const std::vector<std::pair<NodeId, double>>& v, NodeId id) {
    auto it = std::lower_bound(v.begin(), v.end(), id, [](const auto& p, NodeId x) { return p.first < x; });
    return it != v.end() && it->first == id ? it->second : 0.0;
  }
};

/// Dense scratch buffers reused across seeds; only touched slots are reset.
class PprWorkspace {
 public:
  explicit PprWorkspace(std::size_t n = 0) { resize(n); }

  void resize(std::size_t n) {
    if (p_.size() == n) return;
    p_.assign(n, 0.0);
    r_.assign(n, 0.0);
    queued_.assign(n, 0);
    touched_flag_.assign(n, 0);
    touched_.clear();
  }

  /**
   * Push procedure on the lazy walk W = (I + D^-1 A) / 2. While some node u
   * holds residual r(u) > eps * deg(u): p(u) += alpha r(u), half of the
   * remaining (1 - alpha) r(u) stays at u and half is split evenly over its
   * neighbours. Nodes without out-edges keep their walk in place, so their
   * residual is absorbed into p directly.
   */
  PPRVector push(const Graph& g, NodeId seed, double alpha, double epsilon) {
    if (seed < 0 || seed >= g.num_nodes()) throw ValidationError("approx_ppr_push: seed out of range");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("approx_ppr_push: alpha must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ValidationError("approx_ppr_push: epsilon must be > 0");
    resize(static_cast<std::size_t>(g.num_nodes()));

    std::deque<NodeId> queue;
    touch(seed);
    r_[idx(seed)] = 1.0;
    queue.push_back(seed);
    queued_[idx(seed)] = 1;

    while (!queue.empty()) {
      const NodeId u = queue.front();
      queue.pop_front();
      queued_[idx(u)] = 0;
      const auto deg = g.degree(u);
      const double ru = r_[idx(u)];
      if (deg == 0) {
        p_[idx(u)] += ru;
        r_[idx(u)] = 0.0;
        continue;
      }
      if (ru <= epsilon * static_cast<double>(deg)) continue;
      p_[idx(u)] += alpha * ru;
      r_[idx(u)] = (1.0 - alpha) * ru / 2.0;
      const double share = (1.0 - alpha) * ru / (2.0 * static_cast<double>(deg));
      for (NodeId v : g.neighbors(u)) {
        touch(v);
        r_[idx(v)] += share;
      }
      for (NodeId v : g.neighbors(u)) enqueue_if_active(g, v, epsilon, queue);
      enqueue_if_active(g, u, epsilon, queue);
    }

    PPRVector out;
    out.seed = seed;
    std::sort(touched_.begin(), touched_.end());
    for (NodeId v : touched_) {
      if (p_[idx(v)] > 0.0) out.scores.emplace_back(v, p_[idx(v)]);
      if (r_[idx(v)] > 0.0) out.residuals.emplace_back(v, r_[idx(v)]);
      p_[idx(v)] = 0.0;
      r_[idx(v)] = 0.0;
      touched_flag_[idx(v)] = 0;
    }
    touched_.clear();
    return out;
  }

 private:
  static std::size_t idx(NodeId v) { return static_cast<std::size_t>(v); }

  void touch(NodeId v) {
    if (!touched_flag_[idx(v)]) {
      touched_flag_[idx(v)] = 1;
      touched_.push_back(v);
    }
  }

  void enqueue_if_active(const Graph& g, NodeId v, double epsilon, std::deque<NodeId>& queue) {
    if (queued_[idx(v)]) return;
    const auto deg = g.degree(v);
    const double rv = r_[idx(v)];
    if ((deg == 0 && rv > 0.0) || rv > epsilon * static_cast<double>(deg)) {
      queued_[idx(v)] = 1;
      queue.push_back(v);
    }
  }

  std::vector<double> p_, r_;
  std::vector<char> queued_, touched_flag_;
  std::vector<NodeId> touched_;
};

inline PPRVector approx_ppr_push(const Graph& g, NodeId seed, double alpha, double epsilon) {
  PprWorkspace ws(static_cast<std::size_t>(g.num_nodes()));
  return ws.push(g, seed, alpha, epsilon);
}

/// Dense PPR by iterating p <- alpha e_seed + (1 - alpha) p W on the same lazy
/// walk the push uses, until the max change drops below 1e-14.
inline std::vector<double> ppr_power_iteration_oracle(const Graph& g, NodeId seed, double alpha,
                                                      std::size_t iters = 100000) {
  if (seed < 0 || seed >= g.num_nodes()) throw ValidationError("ppr oracle: seed out of range");
  const auto n = static_cast<std::size_t>(g.num_nodes());
  std::vector<double> p(n, 0.0), next(n, 0.0);
  p[static_cast<std::size_t>(seed)] = 1.0;
  for (std::size_t it = 0; it < iters; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (NodeId u = 0; u < g.num_nodes(); ++u) {
      const double pu = p[static_cast<std::size_t>(u)];
      if (pu == 0.0) continue;
      const auto deg = g.degree(u);
      if (deg == 0) {
        next[static_cast<std::size_t>(u)] += (1.0 - alpha) * pu;
        continue;
      }
      next[static_cast<std::size_t>(u)] += (1.0 - alpha) * pu / 2.0;
      const double share = (1.0 - alpha) * pu / (2.0 * static_cast<double>(deg));
      for (NodeId v : g.neighbors(u)) next[static_cast<std::size_t>(v)] += share;
    }
    next[static_cast<std::size_t>(seed)] += alpha;
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - p[i]));
    p.swap(next);
    if (change < 1e-14) return p;
  }
  throw NumericalError("ppr oracle: no convergence within " + std::to_string(iters) + " iterations");
}

/// Seed plus the k-1 highest-score other nodes (ties: smaller id first).
/// The seed is local node 0 and the anchor.
inline Subgraph topk_cluster(const Graph& g, const PPRVector& ppr, std::size_t k, std::size_t min_cluster = 1) {
  if (k < 1) throw ValidationError("topk_cluster: k must be >= 1");
  std::vector<std::pair<NodeId, double>> ranked;
  for (const auto& [v, s] : ppr.scores)
    if (v != ppr.seed && s > 0.0) ranked.emplace_back(v, s);
  auto by_score = [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; };
  const std::size_t want = k - 1;
  if (ranked.size() > want) {
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(want), ranked.end(), by_score);
    ranked.resize(want);
  } else {
    std::sort(ranked.begin(), ranked.end(), by_score);
  }

  std::vector<NodeId> nodes{ppr.seed};
  for (const auto& [v, _] : ranked) nodes.push_back(v);

  const std::size_t floor_size = std::min(min_cluster, k);
  if (nodes.size() < floor_size) {
    std::vector<std::pair<NodeId, double>> extra;
    for (const auto& [v, r] : ppr.residuals)
      if (std::find(nodes.begin(), nodes.end(), v) == nodes.end()) extra.emplace_back(v, r);
    std::sort(extra.begin(), extra.end(), by_score);
    for (std::size_t i = 0; i < extra.size() && nodes.size() < floor_size; ++i) nodes.push_back(extra[i].first);
  }

  Subgraph sub = induce_subgraph(g, nodes);
  sub.anchor = 0;
  return sub;
}

/// One cluster per seed, computed independently on up to `threads` workers.
inline std::vector<Subgraph> compute_clusters(const Graph& g, std::span<const NodeId> seeds, const ClusterConfig& cfg,
                                              std::size_t threads = 1) {
  cfg.validate();
  std::vector<Subgraph> out(seeds.size());
  const std::size_t workers = std::max<std::size_t>(1, threads == 0 ? default_threads() : threads);
  std::vector<PprWorkspace> ws(std::min(workers, std::max<std::size_t>(1, seeds.size())));
  parallel_for(seeds.size(), ws.size(), [&](std::size_t i, std::size_t w) {
    PPRVector p = ws[w].push(g, seeds[i], cfg.alpha, cfg.epsilon);
    out[i] = topk_cluster(g, p, cfg.top_k, cfg.min_cluster);
  });
  return out;
}

using ClusterBatch = std::vector<Subgraph>;

/// Groups precomputed clusters into batches of `batch_size` in an order
/// shuffled by `shuffle_seed` (input order when absent).
inline std::vector<ClusterBatch> batch_clusters(const std::vector<Subgraph>& clusters, std::size_t batch_size,
                                                std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  if (batch_size == 0) throw ValidationError("batch_clusters: batch_size must be >= 1");
  std::vector<std::size_t> order(clusters.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<ClusterBatch> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    ClusterBatch b;
    for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j) b.push_back(clusters[order[j]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

inline std::vector<ClusterBatch> build_cluster_batches(const Graph& g, std::span<const NodeId> seeds,
                                                       const ClusterConfig& cfg, std::size_t batch_size,
                                                       std::optional<std::uint64_t> shuffle_seed = std::nullopt,
                                                       std::size_t threads = 1) {
  if (seeds.empty()) throw ValidationError("build_cluster_batches: no seeds");
  return batch_clusters(compute_clusters(g, seeds, cfg, threads), batch_size, shuffle_seed);
}

}  // namespace mgae
