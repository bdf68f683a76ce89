// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "mgae/dataset_io.hpp"
#include "mgae/synthetic.hpp"
#include "test_util.hpp"

using namespace mgae;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

/// Minimal valid directory with `n` nodes of one-hot features.
fs::path write_basic(const std::string& tag, int n, const std::string& edges) {
  const fs::path dir = mgae::testing::temp_dir(tag);
  std::string feats, labels, splits;
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < n; ++c) feats += (c ? "\t" : "") + std::string(c == i ? "1" : "0");
    feats += "\n";
    labels += std::to_string(i % 2) + "\n";
    splits += std::string(i == 0 ? "train" : i == 1 ? "valid" : "test") + "\n";
  }
  write_file(dir / "features.tsv", feats);
  write_file(dir / "edges.tsv", edges);
  write_file(dir / "labels.tsv", labels);
  write_file(dir / "splits.tsv", splits);
  return dir;
}

}  // namespace

TEST(LoadDataset, PathGraph) {
  const auto dir = write_basic("path", 3, "# comment\n0 1\n1\t2\n");
  DatasetBundle b = load_dataset(dir);
  EXPECT_EQ(b.graph.degrees(), (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_EQ(b.features.cols, 3u);
  EXPECT_EQ(b.labels, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(b.splits, (std::vector<Split>{Split::kTrain, Split::kValid, Split::kTest}));
}

TEST(LoadDataset, EmptyEdges) {
  const auto dir = write_basic("empty", 5, "");
  DatasetBundle b = load_dataset(dir);
  EXPECT_EQ(b.graph.num_nodes(), 5);
  EXPECT_EQ(b.graph.num_edges(), 0u);
}

TEST(LoadDataset, SymmetrizesAndDeduplicates) {
  const auto dir = write_basic("dups", 3, "0 1\n1 0\n0 1\n2 2\n");
  DatasetBundle b = load_dataset(dir);
  EXPECT_EQ(b.graph.num_undirected_edges(), 1u);
  EXPECT_EQ(b.graph.degree(2), 0u);
}

TEST(LoadDataset, DirectedMeta) {
  const auto dir = write_basic("directed", 3, "0 1\n");
  write_file(dir / "meta.tsv", "directed\ttrue\nname\tdemo\n");
  DatasetBundle b = load_dataset(dir);
  EXPECT_TRUE(b.graph.has_edge(0, 1));
  EXPECT_FALSE(b.graph.has_edge(1, 0));
  EXPECT_EQ(b.name, "demo");
}

TEST(LoadDataset, Errors) {
  {
    const auto dir = write_basic("missing", 3, "0 1\n");
    fs::remove(dir / "labels.tsv");
    EXPECT_THROW(load_dataset(dir), ValidationError);
  }
  {
    const auto dir = write_basic("ragged", 3, "0 1\n");
    write_file(dir / "features.tsv", "1\t0\t0\n0\t1\n0\t0\t1\n");
    EXPECT_THROW(load_dataset(dir), ValidationError);
  }
  {
    const auto dir = write_basic("range", 3, "0 3\n");
    EXPECT_THROW(load_dataset(dir), ValidationError);
  }
  {
    const auto dir = write_basic("nan", 3, "0 1\n");
    write_file(dir / "features.tsv", "1\t0\t0\n0\tnan\t1\n0\t0\t1\n");
    EXPECT_THROW(load_dataset(dir), ValidationError);
  }
  {
    const auto dir = write_basic("zero", 3, "0 1\n");
    write_file(dir / "features.tsv", "1\t0\t0\n0\t0\t0\n0\t0\t1\n");
    EXPECT_THROW(load_dataset(dir), ValidationError);
  }
  {
    const auto dir = write_basic("split", 3, "0 1\n");
    write_file(dir / "splits.tsv", "train\nvalid\nholdout\n");
    EXPECT_THROW(load_dataset(dir), ValidationError);
  }
  {
    const auto dir = write_basic("count", 3, "0 1\n");
    write_file(dir / "labels.tsv", "0\n1\n");
    EXPECT_THROW(load_dataset(dir), ValidationError);
  }
  EXPECT_THROW(load_dataset("/nonexistent/mgae"), ValidationError);
}

TEST(LoadDataset, RoundTrip) {
  SyntheticSpec spec;
  spec.num_nodes = 80;
  spec.feature_dim = 16;
  spec.train_per_class = 4;
  spec.num_valid = 10;
  spec.num_test = 20;
  DatasetBundle a = make_synthetic(spec);
  // Non-binary values exercise the shortest round-trip formatting.
  for (std::size_t i = 0; i < a.features.data.size(); ++i)
    if (a.features.data[i] != 0.0) a.features.data[i] = 1.0 / 3.0 + static_cast<double>(i) * 1e-7;
  const auto dir = mgae::testing::temp_dir("roundtrip");
  save_dataset(a, dir);
  DatasetBundle b = load_dataset(dir);
  EXPECT_EQ(b.graph, a.graph);
  EXPECT_EQ(b.features.data, a.features.data);
  EXPECT_EQ(b.labels, a.labels);
  EXPECT_EQ(b.splits, a.splits);
  EXPECT_EQ(b.name, a.name);

  const auto dir2 = mgae::testing::temp_dir("roundtrip2");
  save_dataset(b, dir2);
  DatasetBundle c = load_dataset(dir2);
  EXPECT_EQ(c.features.data, b.features.data);
  EXPECT_EQ(c.graph, b.graph);
}

TEST(LoadDataset, FloatRounding) {
  FeatureMatrix f(1, 2);
  f.data = {0.1, 1.0};
  round_features_to_float(f);
  EXPECT_EQ(f.data[0], static_cast<double>(0.1f));
  EXPECT_EQ(f.data[1], 1.0);
}
