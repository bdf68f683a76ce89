// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mgae/graph.hpp"
#include "mgae/graph_ops.hpp"
#include "mgae/tensor.hpp"

namespace mgae {

enum class Activation { kPrelu, kElu, kNone };

inline Activation parse_activation(const std::string& s) {
  if (s == "prelu") return Activation::kPrelu;
  if (s == "elu") return Activation::kElu;
  if (s == "none") return Activation::kNone;
  throw ValidationError("unknown activation '" + s + "' (expected prelu|elu|none)");
}

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kPrelu: return "prelu";
    case Activation::kElu: return "elu";
    case Activation::kNone: return "none";
  }
  return "none";
}

struct GatLayerConfig {
  std::size_t in_dim = 0;
  std::size_t out_dim_per_head = 0;
  std::size_t num_heads = 1;
  double attn_slope = 0.2;
  bool concat_heads = true;
  double dropout_rate = 0.0;
  double attn_dropout = 0.0;
  Activation activation = Activation::kNone;

  std::size_t head_width() const { return out_dim_per_head * num_heads; }
  std::size_t out_dim() const { return concat_heads ? head_width() : out_dim_per_head; }

  void validate() const {
    if (in_dim == 0 || out_dim_per_head == 0 || num_heads == 0)
      throw ValidationError("gat layer: dimensions must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0 || attn_dropout < 0.0 || attn_dropout >= 1.0)
      throw ValidationError("gat layer: dropout rates must lie in [0, 1)");
  }
};

/// Stacked GAT: hidden layers concatenate heads, the last layer averages them.
struct EncoderConfig {
  std::size_t in_dim = 0;
  std::size_t num_layers = 2;
  std::size_t hidden_size = 256;
  std::size_t heads = 4;
  Activation activation = Activation::kPrelu;
  double feat_dropout = 0.2;
  double attn_dropout = 0.1;
  double attn_slope = 0.2;

  void validate() const {
    if (in_dim == 0) throw ValidationError("encoder: in_dim must be positive");
    if (num_layers < 1) throw ValidationError("encoder: num_layers must be >= 1");
    if (hidden_size == 0 || heads == 0) throw ValidationError("encoder: hidden_size and heads must be positive");
    if (num_layers > 1 && hidden_size % heads != 0)
      throw ValidationError("encoder: hidden_size must be divisible by heads");
  }

  std::vector<GatLayerConfig> layers() const {
    validate();
    std::vector<GatLayerConfig> out;
    std::size_t in = in_dim;
    for (std::size_t l = 0; l < num_layers; ++l) {
      GatLayerConfig c;
      c.in_dim = in;
      c.num_heads = heads;
      c.attn_slope = attn_slope;
      c.dropout_rate = feat_dropout;
      c.attn_dropout = attn_dropout;
      c.activation = activation;
      const bool last = l + 1 == num_layers;
      c.concat_heads = !last;
      c.out_dim_per_head = last ? hidden_size : hidden_size / heads;
      out.push_back(c);
      in = c.out_dim();
    }
    return out;
  }

  std::size_t out_dim() const { return hidden_size; }
};

/// Single GAT layer from code space back to feature space, no activation.
struct DecoderConfig {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t heads = 1;
  double feat_dropout = 0.2;
  double attn_dropout = 0.1;
  double attn_slope = 0.2;

  GatLayerConfig layer() const {
    GatLayerConfig c;
    c.in_dim = in_dim;
    c.out_dim_per_head = out_dim;
    c.num_heads = heads;
    c.attn_slope = attn_slope;
    c.concat_heads = false;
    c.dropout_rate = feat_dropout;
    c.attn_dropout = attn_dropout;
    c.activation = Activation::kNone;
    c.validate();
    return c;
  }
};

struct ProjectorConfig {
  std::vector<std::size_t> layers;  // widths, first = encoder output dim
  Activation activation = Activation::kPrelu;
  bool bias = true;

  void validate() const {
    if (layers.size() < 2) throw ValidationError("projector: needs at least input and output width");
    for (auto w : layers)
      if (w == 0) throw ValidationError("projector: widths must be positive");
  }
  std::size_t out_dim() const { return layers.back(); }
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  ProjectorConfig projector;

  /// Fills derived widths (decoder in/out, projector input) from the encoder.
  void link(std::size_t feature_dim) {
    encoder.in_dim = feature_dim;
    decoder.in_dim = encoder.out_dim();
    decoder.out_dim = feature_dim;
    if (projector.layers.empty())
      projector.layers = {encoder.out_dim(), encoder.out_dim(), encoder.out_dim()};
    projector.layers.front() = encoder.out_dim();
  }
};

/// Graph with self-loops plus the per-edge source/target arrays GAT needs.
struct PreparedGraph {
  Graph graph;
  std::vector<NodeId> edge_src;
  std::vector<NodeId> edge_dst;

  explicit PreparedGraph(const Graph& g) : graph(add_self_loops(g)) {
    const auto cols = graph.col_indices();
    edge_src.assign(cols.begin(), cols.end());
    edge_dst = edge_targets(graph);
  }
};

/// Binds parameters onto a tape once per name. Frozen binders record
/// constants, so nothing downstream carries a gradient.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParameterSet& params, bool trainable)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = trainable_ ? tape_.parameter(params_, name) : tape_.constant(params_.at(name));
    bound_.emplace(name, v);
    return v;
  }

  Tape& tape() { return tape_; }
  const ParameterSet& params() const { return params_; }

 private:
  Tape& tape_;
  const ParameterSet& params_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

struct ForwardMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t rows, std::size_t cols,
                             std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
  return m;
}


inline void init_gat_layer(ParameterSet& ps, const std::string& prefix, const GatLayerConfig& c,
                           std::mt19937_64& rng) {
  c.validate();
  const std::size_t hd = c.head_width();
  ps.add(prefix + ".weight", xavier_uniform(c.in_dim, hd, c.in_dim, hd, rng));
  ps.add(prefix + ".attn_src", xavier_uniform(c.out_dim_per_head, 1, 1, hd, rng));
  ps.add(prefix + ".attn_dst", xavier_uniform(c.out_dim_per_head, 1, 1, hd, rng));
  ps.add(prefix + ".bias", Matrix(1, c.out_dim()));
  if (c.activation == Activation::kPrelu) ps.add(prefix + ".prelu", Matrix(1, 1, 0.25));
}

inline Var activate(ParamBinder& bind, const std::string& prefix, Activation act, const Var& x) {
  switch (act) {
    case Activation::kPrelu: return prelu(x, bind(prefix + ".prelu"));
    case Activation::kElu: return elu(x);
    case Activation::kNone: return x;
  }
  return x;
}

}  // namespace detail

inline std::string encoder_layer_prefix(std::size_t l) { return "encoder.layer" + std::to_string(l); }

/// One GAT layer: shared linear map, additive leaky-relu attention,
/// per-neighbourhood softmax, head concat or mean, bias, activation.
inline Var gat_layer(ParamBinder& bind, const std::string& prefix, const GatLayerConfig& c,
                     const PreparedGraph& pg, const Var& input, const ForwardMode& mode) {
  if (input.cols() != c.in_dim)
    throw ShapeError(prefix + ": input width " + std::to_string(input.cols()) + " != " + std::to_string(c.in_dim));
  if (input.rows() != static_cast<std::size_t>(pg.graph.num_nodes()))
    throw ShapeError(prefix + ": input rows != num_nodes");

  Var x = input;
  if (mode.training && c.dropout_rate > 0.0) x = dropout(x, c.dropout_rate, true, *mode.rng);
  Var wh = matmul(x, bind(prefix + ".weight"));
  Var el = matmul(wh, head_columns(bind(prefix + ".attn_src"), c.num_heads));
  Var er = matmul(wh, head_columns(bind(prefix + ".attn_dst"), c.num_heads));
  Var scores = leaky_relu(add(row_slice(el, pg.edge_src), row_slice(er, pg.edge_dst)), c.attn_slope);
  Var out = neighbor_softmax_aggregate(pg.graph, scores, wh, c.attn_dropout, mode.training, mode.rng);
  if (!c.concat_heads && c.num_heads > 1) out = head_mean(out, c.num_heads);
  out = add_row(out, bind(prefix + ".bias"));
  return detail::activate(bind, prefix, c.activation, out);
}

inline ParameterSet init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(detail::mix_seed(seed, 1));
  ParameterSet ps;
  const auto layers = cfg.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) detail::init_gat_layer(ps, encoder_layer_prefix(l), layers[l], rng);
  return ps;
}

inline ParameterSet init_decoder(const DecoderConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(detail::mix_seed(seed, 2));
  ParameterSet ps;
  detail::init_gat_layer(ps, "decoder.layer0", cfg.layer(), rng);
  return ps;
}

inline ParameterSet init_projector(const ProjectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(detail::mix_seed(seed, 3));
  ParameterSet ps;
  for (std::size_t i = 0; i + 1 < cfg.layers.size(); ++i) {
    const std::string p = "projector.linear" + std::to_string(i);
    const auto in = cfg.layers[i], out = cfg.layers[i + 1];
    ps.add(p + ".weight", detail::xavier_uniform(in, out, in, out, rng));
    if (cfg.bias) ps.add(p + ".bias", Matrix(1, out));
    if (i + 2 < cfg.layers.size() && cfg.activation == Activation::kPrelu) ps.add(p + ".prelu", Matrix(1, 1, 0.25));
  }
  return ps;
}

/// Online parameters theta: encoder, decoder, projector and both mask tokens
/// (zero-initialized).
inline ParameterSet init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterSet ps = init_encoder(cfg.encoder, seed);
  ps.merge(init_decoder(cfg.decoder, seed));
  ps.merge(init_projector(cfg.projector, seed));
  ps.add("mask.input_token", Matrix(1, cfg.encoder.in_dim));
  ps.add("mask.decode_token", Matrix(1, cfg.encoder.out_dim()));
  return ps;
}

inline Var encoder_forward(ParamBinder& bind, const EncoderConfig& cfg, const PreparedGraph& pg, const Var& x,
                           const ForwardMode& mode) {
  if (x.cols() != cfg.in_dim)
    throw ShapeError("encoder: feature width " + std::to_string(x.cols()) + " != in_dim " + std::to_string(cfg.in_dim));
  const auto layers = cfg.layers();
  Var h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) h = gat_layer(bind, encoder_layer_prefix(l), layers[l], pg, h, mode);
  return h;
}

inline Var decoder_forward(ParamBinder& bind, const DecoderConfig& cfg, const PreparedGraph& pg, const Var& code,
                           const ForwardMode& mode) {
  return gat_layer(bind, "decoder.layer0", cfg.layer(), pg, code, mode);
}

/// Row-wise MLP; no graph mixing.
inline Var projector_forward(ParamBinder& bind, const ProjectorConfig& cfg, const Var& h) {
  cfg.validate();
  if (h.cols() != cfg.layers.front())
    throw ShapeError("projector: input width " + std::to_string(h.cols()) + " != " +
                     std::to_string(cfg.layers.front()));
  Var z = h;
  for (std::size_t i = 0; i + 1 < cfg.layers.size(); ++i) {
    const std::string p = "projector.linear" + std::to_string(i);
    z = matmul(z, bind(p + ".weight"));
    if (cfg.bias) z = add_row(z, bind(p + ".bias"));
    if (i + 2 < cfg.layers.size()) z = detail::activate(bind, p, cfg.activation, z);
  }
  return z;
}

/// Eval-mode encoding with frozen weights (dropout off, no gradients).
inline Matrix encode(const ParameterSet& params, const EncoderConfig& cfg, const PreparedGraph& pg,
                     const Matrix& features) {
  Tape tape;
  ParamBinder bind(tape, params, false);
  Var h = encoder_forward(bind, cfg, pg, tape.constant(features), ForwardMode{});
  return h.value();
}

inline Matrix encode(const ParameterSet& params, const EncoderConfig& cfg, const Graph& g, const Matrix& features) {
  return encode(params, cfg, PreparedGraph(g), features);
}

inline Matrix to_matrix(const FeatureMatrix& f) { return Matrix(f.rows, f.cols, f.data); }

}  // namespace mgae
