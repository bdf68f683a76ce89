// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "mgae/graph.hpp"

namespace mgae {

/// Planted-partition graph with bag-of-words features, shaped like a small
/// citation network: one topic per class, homophilous edges, binary words.
struct SyntheticSpec {
  std::size_t num_nodes = 600;
  int num_classes = 4;
  std::size_t feature_dim = 200;
  double avg_degree = 4.0;
  double homophily = 0.8;        // fraction of edges inside a class
  std::size_t words_per_node = 12;
  double topic_strength = 0.5;   // chance a word comes from the class topic
  std::size_t train_per_class = 20;
  std::size_t num_valid = 100;
  std::size_t num_test = 200;
  std::uint64_t seed = 0;
};

inline DatasetBundle make_synthetic(const SyntheticSpec& s) {
  if (s.num_classes < 2 || s.num_nodes < static_cast<std::size_t>(s.num_classes))
    throw ValidationError("synthetic: need at least two classes and one node per class");
  if (s.words_per_node == 0 || s.feature_dim < static_cast<std::size_t>(s.num_classes))
    throw ValidationError("synthetic: need words per node and at least one feature per class");
  std::mt19937_64 rng(s.seed);
  const auto n = s.num_nodes;
  const auto c = static_cast<std::size_t>(s.num_classes);

  DatasetBundle b;
  b.name = "synthetic";
  b.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) b.labels[i] = static_cast<int>(i % c);
  std::shuffle(b.labels.begin(), b.labels.end(), rng);

  std::vector<std::vector<NodeId>> members(c);
  for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(b.labels[i])].push_back(static_cast<NodeId>(i));

  std::vector<std::pair<NodeId, NodeId>> edges;
  const auto num_edges = static_cast<std::size_t>(s.avg_degree * static_cast<double>(n) / 2.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any(0, n - 1);
  for (std::size_t e = 0; e < num_edges; ++e) {
    const auto u = static_cast<NodeId>(any(rng));
    NodeId v;
    if (unit(rng) < s.homophily) {
      const auto& same = members[static_cast<std::size_t>(b.labels[static_cast<std::size_t>(u)])];
      v = same[std::uniform_int_distribution<std::size_t>(0, same.size() - 1)(rng)];
    } else {
      v = static_cast<NodeId>(any(rng));
    }
    edges.emplace_back(u, v);
  }
  b.graph = Graph::from_edges(static_cast<NodeId>(n), edges, true);

  const std::size_t block = s.feature_dim / c;
  b.features = FeatureMatrix(n, s.feature_dim);
  std::uniform_int_distribution<std::size_t> word(0, s.feature_dim - 1);
  std::uniform_int_distribution<std::size_t> topic_word(0, block - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(b.labels[i]);
    for (std::size_t w = 0; w < s.words_per_node; ++w) {
      const std::size_t col = unit(rng) < s.topic_strength ? y * block + topic_word(rng) : word(rng);
      b.features(i, col) = 1.0;
    }
  }

  b.splits.assign(n, Split::kNone);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> per_class(c, 0);
  std::vector<std::size_t> rest;
  for (std::size_t i : order) {
    const auto y = static_cast<std::size_t>(b.labels[i]);
    if (per_class[y] < s.train_per_class) {
      b.splits[i] = Split::kTrain;
      ++per_class[y];
    } else {
      rest.push_back(i);
    }
  }
  for (std::size_t k = 0; k < rest.size(); ++k) {
    if (k < s.num_valid)
      b.splits[rest[k]] = Split::kValid;
    else if (k < s.num_valid + s.num_test)
      b.splits[rest[k]] = Split::kTest;
  }
  b.validate();
  return b;
}

}  // namespace mgae
