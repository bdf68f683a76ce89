// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgae/errors.hpp"

namespace mgae {

using NodeId = std::int64_t;

/**
 * Compressed sparse row adjacency.
 *
 * Row i lists the neighbours of node i in ascending order. For undirected
 * graphs both orientations of every edge are stored, so `num_edges()` counts
 * directed entries (twice the undirected edge count).
 */
class Graph {
 public:
  Graph() = default;

  /// Validates a raw CSR. Self-loops are allowed here (used by tests and by
  /// the attention graph); loaders go through `from_edges` instead.
  Graph(NodeId num_nodes, std::vector<std::size_t> row_offsets, std::vector<NodeId> col_indices,
        bool undirected)
      : num_nodes_(num_nodes),
        row_offsets_(std::move(row_offsets)),
        col_indices_(std::move(col_indices)),
        undirected_(undirected) {
    validate();
  }

  /// Builds a normalized graph: self-loops dropped, duplicates merged,
  /// symmetrized when `undirected`.
  static Graph from_edges(NodeId num_nodes, std::span<const std::pair<NodeId, NodeId>> edges,
                          bool undirected = true) {
    if (num_nodes < 0) throw ValidationError("graph: negative node count");
    std::vector<std::pair<NodeId, NodeId>> all;
    all.reserve(edges.size() * (undirected ? 2 : 1));
    for (const auto& [u, v] : edges) {
      if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes) {
        throw ValidationError("graph: edge (" + std::to_string(u) + ", " + std::to_string(v) +
                              ") out of range for " + std::to_string(num_nodes) + " nodes");
      }
      if (u == v) continue;
      all.emplace_back(u, v);
      if (undirected) all.emplace_back(v, u);
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    std::vector<std::size_t> offsets(static_cast<std::size_t>(num_nodes) + 1, 0);
    std::vector<NodeId> cols;
    cols.reserve(all.size());
    for (const auto& [u, v] : all) {
      ++offsets[static_cast<std::size_t>(u) + 1];
      cols.push_back(v);
    }
    for (std::size_t i = 1; i < offsets.size(); ++i) offsets[i] += offsets[i - 1];
    return Graph(num_nodes, std::move(offsets), std::move(cols), undirected);
  }

  NodeId num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return col_indices_.size(); }
  bool undirected() const { return undirected_; }

  std::span<const std::size_t> row_offsets() const { return row_offsets_; }
  std::span<const NodeId> col_indices() const { return col_indices_; }

  std::span<const NodeId> neighbors(NodeId v) const {
    const auto b = row_offsets_[static_cast<std::size_t>(v)];
    const auto e = row_offsets_[static_cast<std::size_t>(v) + 1];
    return std::span<const NodeId>(col_indices_).subspan(b, e - b);
  }

  std::size_t degree(NodeId v) const {
    return row_offsets_[static_cast<std::size_t>(v) + 1] - row_offsets_[static_cast<std::size_t>(v)];
  }

  std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> d(static_cast<std::size_t>(num_nodes_));
    for (NodeId v = 0; v < num_nodes_; ++v) d[static_cast<std::size_t>(v)] = degree(v);
    return d;
  }

  bool has_edge(NodeId u, NodeId v) const {
    auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
  }

  /// Number of undirected edges (directed entries for directed graphs).
  std::size_t num_undirected_edges() const {
    if (!undirected_) return num_edges();
    std::size_t loops = 0;
    for (NodeId v = 0; v < num_nodes_; ++v) loops += has_edge(v, v) ? 1 : 0;
    return (num_edges() - loops) / 2 + loops;
  }

  bool operator==(const Graph&) const = default;

 private:
  void validate() const {
    if (num_nodes_ < 0) throw ValidationError("graph: negative node count");
    if (row_offsets_.size() != static_cast<std::size_t>(num_nodes_) + 1)
      throw ValidationError("graph: row_offsets must have num_nodes + 1 entries");
    if (row_offsets_.front() != 0) throw ValidationError("graph: row_offsets[0] must be 0");
    if (row_offsets_.back() != col_indices_.size())
      throw ValidationError("graph: row_offsets[N] must equal the number of column indices");
    for (std::size_t i = 1; i < row_offsets_.size(); ++i) {
      if (row_offsets_[i] < row_offsets_[i - 1])
        throw ValidationError("graph: row_offsets must be nondecreasing");
    }
    for (NodeId v = 0; v < num_nodes_; ++v) {
      auto nb = neighbors(v);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        if (nb[k] < 0 || nb[k] >= num_nodes_)
          throw ValidationError("graph: column index out of range in row " + std::to_string(v));
        if (k > 0 && nb[k] <= nb[k - 1])
          throw ValidationError("graph: neighbour lists must be sorted and duplicate-free");
      }
    }
    if (undirected_) {
      for (NodeId u = 0; u < num_nodes_; ++u) {
        for (NodeId v : neighbors(u)) {
          if (!has_edge(v, u))
            throw ValidationError("graph: undirected graph is missing reverse edge (" +
                                  std::to_string(v) + ", " + std::to_string(u) + ")");
        }
      }
    }
  }

  NodeId num_nodes_ = 0;
  std::vector<std::size_t> row_offsets_{0};
  std::vector<NodeId> col_indices_;
  bool undirected_ = true;
};

/// Dense row-major N x d_in node features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }

  bool operator==(const FeatureMatrix&) const = default;
};

enum class Split : std::uint8_t { kTrain, kValid, kTest, kNone };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
    case Split::kNone: return "none";
  }
  return "none";
}

inline std::optional<Split> parse_split(std::string_view token) {
  if (token == "train") return Split::kTrain;
  if (token == "valid") return Split::kValid;
  if (token == "test") return Split::kTest;
  if (token == "none") return Split::kNone;
  return std::nullopt;
}

struct DatasetBundle {
  std::string name;
  Graph graph;
  FeatureMatrix features;
  std::vector<int> labels;  // -1 = unlabeled
  std::vector<Split> splits;

  int num_classes() const {
    int c = 0;
    for (int y : labels) c = std::max(c, y + 1);
    return c;
  }

  std::vector<NodeId> nodes_in(Split s) const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(static_cast<NodeId>(i));
    return out;
  }

  void validate() const {
    const auto n = static_cast<std::size_t>(graph.num_nodes());
    if (features.rows != n)
      throw ValidationError("dataset: feature rows (" + std::to_string(features.rows) +
                            ") != num_nodes (" + std::to_string(n) + ")");
    if (labels.size() != n) throw ValidationError("dataset: label count != num_nodes");
    if (splits.size() != n) throw ValidationError("dataset: split count != num_nodes");
    for (double v : features.data)
      if (!std::isfinite(v)) throw ValidationError("dataset: non-finite feature value");
    for (int y : labels)
      if (y < -1) throw ValidationError("dataset: label below -1");
  }

  bool operator==(const DatasetBundle&) const = default;
};

/// Induced subgraph over `node_ids` (original ids), with local ids 0..k-1.
struct Subgraph {
  std::vector<NodeId> node_ids;
  Graph local_graph;
  std::optional<NodeId> anchor;
};

namespace detail {

inline std::vector<char> membership(const Graph& g, std::span<const NodeId> s, bool reject_duplicates,
                                    const char* what) {
  std::vector<char> in(static_cast<std::size_t>(g.num_nodes()), 0);
  for (NodeId v : s) {
    if (v < 0 || v >= g.num_nodes())
      throw ValidationError(std::string(what) + ": node id " + std::to_string(v) + " out of range");
    auto& slot = in[static_cast<std::size_t>(v)];
    if (slot && reject_duplicates)
      throw ValidationError(std::string(what) + ": duplicate node id " + std::to_string(v));
    slot = 1;
  }
  return in;
}

}  // namespace detail

inline Subgraph induce_subgraph(const Graph& g, std::span<const NodeId> node_ids) {
  detail::membership(g, node_ids, true, "induce_subgraph");
  std::vector<NodeId> local(static_cast<std::size_t>(g.num_nodes()), -1);
  for (std::size_t i = 0; i < node_ids.size(); ++i)
    local[static_cast<std::size_t>(node_ids[i])] = static_cast<NodeId>(i);

  std::vector<std::size_t> offsets(node_ids.size() + 1, 0);
  std::vector<NodeId> cols;
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    const auto start = cols.size();
    for (NodeId v : g.neighbors(node_ids[i])) {
      const NodeId lv = local[static_cast<std::size_t>(v)];
      if (lv >= 0) cols.push_back(lv);
    }
    std::sort(cols.begin() + static_cast<std::ptrdiff_t>(start), cols.end());
    offsets[i + 1] = cols.size();
  }
  Subgraph sub;
  sub.node_ids.assign(node_ids.begin(), node_ids.end());
  sub.local_graph = Graph(static_cast<NodeId>(node_ids.size()), std::move(offsets), std::move(cols),
                          g.undirected());
  return sub;
}

inline double volume(const Graph& g, std::span<const NodeId> s) {
  const auto in = detail::membership(g, s, false, "volume");
  double vol = 0.0;
  for (NodeId v = 0; v < g.num_nodes(); ++v)
    if (in[static_cast<std::size_t>(v)]) vol += static_cast<double>(g.degree(v));
  return vol;
}

/// cut(S, V\S) / min(vol S, vol V\S). A zero cut with a zero-volume side is 0.
inline double conductance(const Graph& g, std::span<const NodeId> s) {
  const auto in = detail::membership(g, s, false, "conductance");
  std::size_t members = 0;
  for (char c : in) members += c ? 1 : 0;
  if (members == 0) throw ValidationError("conductance: empty node set");
  if (members == static_cast<std::size_t>(g.num_nodes()))
    throw ValidationError("conductance: node set covers the whole graph");

  double cut = 0.0, vol_in = 0.0, vol_out = 0.0;
  for (NodeId u = 0; u < g.num_nodes(); ++u) {
    const bool u_in = in[static_cast<std::size_t>(u)] != 0;
    (u_in ? vol_in : vol_out) += static_cast<double>(g.degree(u));
    if (!u_in) continue;
    for (NodeId v : g.neighbors(u))
      if (!in[static_cast<std::size_t>(v)]) cut += 1.0;
  }
  const double denom = std::min(vol_in, vol_out);
  if (denom == 0.0) return 0.0;
  return cut / denom;
}

/// Copy of `g` with one self-loop per node (existing loops kept once).
inline Graph add_self_loops(const Graph& g) {
  std::vector<std::size_t> offsets(static_cast<std::size_t>(g.num_nodes()) + 1, 0);
  std::vector<NodeId> cols;
  cols.reserve(g.num_edges() + static_cast<std::size_t>(g.num_nodes()));
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    auto nb = g.neighbors(v);
    bool placed = false;
    for (NodeId u : nb) {
      if (!placed && u >= v) {
        cols.push_back(v);
        placed = true;
        if (u == v) continue;
      }
      cols.push_back(u);
    }
    if (!placed) cols.push_back(v);
    offsets[static_cast<std::size_t>(v) + 1] = cols.size();
  }
  return Graph(g.num_nodes(), std::move(offsets), std::move(cols), g.undirected());
}

/// Relabels nodes: node v of `g` becomes perm[v].
inline Graph permute_graph(const Graph& g, std::span<const NodeId> perm) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < g.num_nodes(); ++u)
    for (NodeId v : g.neighbors(u))
      edges.emplace_back(perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]);
  return Graph::from_edges(g.num_nodes(), edges, g.undirected());
}

}  // namespace mgae
