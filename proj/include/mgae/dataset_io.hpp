// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mgae/errors.hpp"
#include "mgae/graph.hpp"

namespace mgae {

namespace detail {

/// Calls fn(line_number, tokens) for every non-blank, non-comment line.
template <class Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream f(path);
  if (!f) throw ValidationError("dataset: missing file '" + path.string() + "'");
  std::string line;
  std::vector<std::string_view> tokens;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    tokens.clear();
    std::string_view rest(line);
    while (true) {
      const auto b = rest.find_first_not_of(" \t\r");
      if (b == std::string_view::npos) break;
      rest.remove_prefix(b);
      const auto e = rest.find_first_of(" \t\r");
      tokens.push_back(rest.substr(0, e));
      if (e == std::string_view::npos) break;
      rest.remove_prefix(e);
    }
    if (!tokens.empty()) fn(lineno, tokens);
  }
}

template <class T>
T parse_token(std::string_view tok, const std::filesystem::path& path, std::size_t lineno) {
  T out{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ValidationError("dataset: " + path.filename().string() + " line " + std::to_string(lineno) +
                          ": cannot parse '" + std::string(tok) + "'");
  return out;
}

inline std::string where(const std::filesystem::path& path, std::size_t lineno) {
  return path.filename().string() + " line " + std::to_string(lineno);
}

}  // namespace detail

/**
 * Reads a dataset directory: edges.tsv, features.tsv, labels.tsv,
 * splits.tsv and optionally meta.tsv. The node count is the number of
 * feature rows. Graphs are symmetrized unless meta says `directed true`.
 */
inline DatasetBundle load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ValidationError("dataset: '" + dir.string() + "' is not a directory");
  DatasetBundle b;
  b.name = dir.filename().string();
  bool directed = false;

  if (fs::exists(dir / "meta.tsv")) {
    detail::for_each_record(dir / "meta.tsv", [&](std::size_t ln, const auto& t) {
      if (t.size() != 2) throw ValidationError("dataset: " + detail::where(dir / "meta.tsv", ln) + ": expected key value");
      if (t[0] == "directed") {
        if (t[1] != "true" && t[1] != "false") throw ValidationError("dataset: meta 'directed' must be true or false");
        directed = t[1] == "true";
      } else if (t[0] == "name") {
        b.name = std::string(t[1]);
      }
    });
  }

  const fs::path fpath = dir / "features.tsv";
  std::size_t cols = 0;
  std::size_t rows = 0;
  detail::for_each_record(fpath, [&](std::size_t ln, const auto& t) {
    if (rows == 0) cols = t.size();
    if (t.size() != cols)
      throw ValidationError("dataset: " + detail::where(fpath, ln) + ": ragged row (" + std::to_string(t.size()) +
                            " columns, expected " + std::to_string(cols) + ")");
    bool nonzero = false;
    for (auto tok : t) {
      const double v = detail::parse_token<double>(tok, fpath, ln);
      if (!std::isfinite(v)) throw ValidationError("dataset: " + detail::where(fpath, ln) + ": non-finite feature value");
      nonzero = nonzero || v != 0.0;
      b.features.data.push_back(v);
    }
    if (!nonzero) throw ValidationError("dataset: " + detail::where(fpath, ln) + ": all-zero feature row");
    ++rows;
  });
  b.features.rows = rows;
  b.features.cols = cols;
  const auto n = static_cast<NodeId>(rows);

  const fs::path epath = dir / "edges.tsv";
  std::vector<std::pair<NodeId, NodeId>> edges;
  detail::for_each_record(epath, [&](std::size_t ln, const auto& t) {
    if (t.size() != 2) throw ValidationError("dataset: " + detail::where(epath, ln) + ": expected 'src dst'");
    const auto u = detail::parse_token<NodeId>(t[0], epath, ln);
    const auto v = detail::parse_token<NodeId>(t[1], epath, ln);
    if (u < 0 || u >= n || v < 0 || v >= n)
      throw ValidationError("dataset: " + detail::where(epath, ln) + ": node id out of range");
    edges.emplace_back(u, v);
  });
  b.graph = Graph::from_edges(n, edges, !directed);

  const fs::path lpath = dir / "labels.tsv";
  detail::for_each_record(lpath, [&](std::size_t ln, const auto& t) {
    if (t.size() != 1) throw ValidationError("dataset: " + detail::where(lpath, ln) + ": expected one label");
    const int y = detail::parse_token<int>(t[0], lpath, ln);
    if (y < -1) throw ValidationError("dataset: " + detail::where(lpath, ln) + ": label below -1");
    b.labels.push_back(y);
  });

  const fs::path spath = dir / "splits.tsv";
  detail::for_each_record(spath, [&](std::size_t ln, const auto& t) {
    if (t.size() != 1) throw ValidationError("dataset: " + detail::where(spath, ln) + ": expected one split tag");
    auto s = parse_split(t[0]);
    if (!s) throw ValidationError("dataset: " + detail::where(spath, ln) + ": unknown split '" + std::string(t[0]) + "'");
    b.splits.push_back(*s);
  });

  b.validate();
  return b;
}

/// Writes the directory format read by load_dataset. Values use the
/// shortest representation that parses back to the same double.
inline void save_dataset(const DatasetBundle& b, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  b.validate();
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::trunc);
    if (!f) throw ValidationError("dataset: cannot write '" + (dir / name).string() + "'");
    return f;
  };
  {
    auto f = open("meta.tsv");
    f << "name\t" << (b.name.empty() ? "unnamed" : b.name) << "\n";
    f << "directed\t" << (b.graph.undirected() ? "false" : "true") << "\n";
  }
  {
    auto f = open("edges.tsv");
    for (NodeId u = 0; u < b.graph.num_nodes(); ++u)
      for (NodeId v : b.graph.neighbors(u))
        if (!b.graph.undirected() || u < v) f << u << '\t' << v << '\n';
  }
  {
    auto f = open("features.tsv");
    char buf[64];
    for (std::size_t r = 0; r < b.features.rows; ++r) {
      std::string line;
      for (std::size_t c = 0; c < b.features.cols; ++c) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, b.features(r, c));
        if (c) line += '\t';
        line.append(buf, ptr);
      }
      f << line << '\n';
    }
  }
  {
    auto f = open("labels.tsv");
    for (int y : b.labels) f << y << '\n';
  }
  {
    auto f = open("splits.tsv");
    for (Split s : b.splits) f << split_name(s) << '\n';
  }
}

/// 32-bit feature storage mode: every value is rounded through float.
inline void round_features_to_float(FeatureMatrix& f) {
  for (double& v : f.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace mgae
