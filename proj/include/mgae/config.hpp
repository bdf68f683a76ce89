// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mgae/errors.hpp"
#include "mgae/gnn.hpp"
#include "mgae/masking.hpp"
#include "mgae/objective.hpp"
#include "mgae/optim.hpp"
#include "mgae/ppr.hpp"

namespace mgae {

enum class TrainMode { kFullBatch, kLocalCluster };

inline const char* mode_name(TrainMode m) { return m == TrainMode::kFullBatch ? "full_batch" : "local_cluster"; }

inline TrainMode parse_mode(std::string_view s) {
  if (s == "full_batch") return TrainMode::kFullBatch;
  if (s == "local_cluster") return TrainMode::kLocalCluster;
  throw ValidationError("unknown mode '" + std::string(s) + "' (expected full_batch or local_cluster)");
}

/// Every knob of a run. Field names follow the config-file keys.
struct TrainConfig {
  TrainMode mode = TrainMode::kFullBatch;
  std::uint64_t max_epoch = 500;
  double lr = 0.001;
  double weight_decay = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;

  double masking_rate = 0.5;
  double re_masking_rate = 0.5;
  std::size_t num_re_masking = 3;
  RemaskMode remask_mode = RemaskMode::kRandom;

  double gamma = 2.0;
  double lambda = 1.0;
  bool normalize_views = false;
  bool input_recon = true;
  double ema_decay = 0.996;

  double ppr_alpha = 0.15;
  double ppr_epsilon = 1e-4;
  std::size_t cluster_k = 64;
  std::size_t min_cluster = 1;
  std::size_t batch_size = 8;

  std::size_t num_layer = 2;
  std::size_t hidden_size = 512;
  std::size_t num_heads = 4;
  Activation activation = Activation::kPrelu;
  double in_drop = 0.2;
  double attn_drop = 0.1;
  double negative_slope = 0.2;
  std::size_t decoder_heads = 1;

  double probe_lr = 0.01;
  std::size_t probe_epochs = 300;
  double probe_weight_decay = 1e-4;
  std::size_t num_seeds = 20;
  double label_fraction = 1.0;
  double finetune_lr = 0.005;
  std::size_t finetune_epochs = 100;

  int feature_precision = 64;

  bool operator==(const TrainConfig&) const = default;

  void validate() const;

  ModelConfig model(std::size_t feature_dim) const {
    ModelConfig m;
    m.encoder.num_layers = num_layer;
    m.encoder.hidden_size = hidden_size;
    m.encoder.heads = num_heads;
    m.encoder.activation = activation;
    m.encoder.feat_dropout = in_drop;
    m.encoder.attn_dropout = attn_drop;
    m.encoder.attn_slope = negative_slope;
    m.decoder.heads = decoder_heads;
    m.decoder.feat_dropout = in_drop;
    m.decoder.attn_dropout = attn_drop;
    m.decoder.attn_slope = negative_slope;
    m.projector.activation = activation == Activation::kNone ? Activation::kNone : Activation::kPrelu;
    m.link(feature_dim);
    return m;
  }

  ObjectiveConfig objective() const {
    ObjectiveConfig o;
    o.gamma = gamma;
    o.lambda_mix = lambda;
    o.normalize_views = normalize_views;
    o.input_recon = input_recon;
    return o;
  }

  ClusterConfig cluster() const {
    ClusterConfig c;
    c.alpha = ppr_alpha;
    c.epsilon = ppr_epsilon;
    c.top_k = cluster_k;
    c.min_cluster = min_cluster;
    return c;
  }

  AdamWConfig adamw() const {
    AdamWConfig a;
    a.weight_decay = weight_decay;
    a.beta1 = beta1;
    a.beta2 = beta2;
    return a;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw ValidationError("config: bad value '" + v + "' for key '" + key + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw ValidationError("config: non-finite value for key '" + key + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: bad boolean '" + v + "' for key '" + key + "'");
}

inline std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

/// All accepted keys, in canonical order.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_double;
  using detail::parse_bool;
  using detail::parse_number;
#define MGAE_REAL(field, help)                                                                                 \
  ConfigKey {                                                                                                  \
    #field, help, [](TrainConfig& c, const std::string& v) { c.field = parse_number<double>(#field, v); },     \
        [](const TrainConfig& c) { return format_double(c.field); }                                            \
  }
#define MGAE_COUNT(field, help)                                                                                \
  ConfigKey {                                                                                                  \
    #field, help,                                                                                              \
        [](TrainConfig& c, const std::string& v) { c.field = parse_number<decltype(c.field)>(#field, v); },    \
        [](const TrainConfig& c) { return std::to_string(c.field); }                                           \
  }
#define MGAE_FLAG(field, help)                                                                                 \
  ConfigKey {                                                                                                  \
    #field, help, [](TrainConfig& c, const std::string& v) { c.field = parse_bool(#field, v); },               \
        [](const TrainConfig& c) { return std::string(c.field ? "true" : "false"); }                           \
  }
  static const std::vector<ConfigKey> keys = {
      ConfigKey{"mode", "full_batch | local_cluster",
                [](TrainConfig& c, const std::string& v) { c.mode = parse_mode(v); },
                [](const TrainConfig& c) { return std::string(mode_name(c.mode)); }},
      MGAE_COUNT(max_epoch, "pretraining epochs"),
      MGAE_REAL(lr, "peak learning rate (cosine decay to 0, no warmup)"),
      MGAE_REAL(weight_decay, "AdamW decoupled weight decay"),
      MGAE_REAL(beta1, "AdamW beta1"),
      MGAE_REAL(beta2, "AdamW beta2"),
      MGAE_COUNT(seed, "global random seed"),
      MGAE_REAL(masking_rate, "fraction of nodes whose input features are masked"),
      MGAE_REAL(re_masking_rate, "fraction of nodes re-masked per decoding view"),
      MGAE_COUNT(num_re_masking, "number of re-mask decoding views K"),
      ConfigKey{"remask_mode", "random | fixed (fixed re-masks exactly the input-masked nodes)",
                [](TrainConfig& c, const std::string& v) {
                  if (v == "random")
                    c.remask_mode = RemaskMode::kRandom;
                  else if (v == "fixed")
                    c.remask_mode = RemaskMode::kFixed;
                  else
                    throw ValidationError("config: remask_mode must be random or fixed");
                },
                [](const TrainConfig& c) {
                  return std::string(c.remask_mode == RemaskMode::kRandom ? "random" : "fixed");
                }},
      MGAE_REAL(gamma, "scaled cosine error exponent (>= 1), shared by both loss terms"),
      MGAE_REAL(lambda, "weight of the latent prediction loss"),
      MGAE_FLAG(normalize_views, "divide the reconstruction loss by K as well"),
      MGAE_FLAG(input_recon, "keep the input reconstruction term (false = latent-only ablation)"),
      MGAE_REAL(ema_decay, "target network EMA decay tau"),
      MGAE_REAL(ppr_alpha, "PPR teleport probability"),
      MGAE_REAL(ppr_epsilon, "PPR push residual tolerance"),
      MGAE_COUNT(cluster_k, "local cluster size k"),
      MGAE_COUNT(min_cluster, "pad clusters smaller than this from push residuals"),
      MGAE_COUNT(batch_size, "clusters per optimizer step in local_cluster mode"),
      MGAE_COUNT(num_layer, "encoder GAT layers"),
      MGAE_COUNT(hidden_size, "encoder output width"),
      MGAE_COUNT(num_heads, "encoder attention heads"),
      ConfigKey{"activation", "prelu | elu | none",
                [](TrainConfig& c, const std::string& v) { c.activation = parse_activation(v); },
                [](const TrainConfig& c) { return std::string(activation_name(c.activation)); }},
      MGAE_REAL(in_drop, "feature dropout"),
      MGAE_REAL(attn_drop, "attention dropout"),
      MGAE_REAL(negative_slope, "leaky relu slope inside attention"),
      MGAE_COUNT(decoder_heads, "decoder attention heads"),
      MGAE_REAL(probe_lr, "linear probe learning rate"),
      MGAE_COUNT(probe_epochs, "linear probe epochs"),
      MGAE_REAL(probe_weight_decay, "linear probe weight decay"),
      MGAE_COUNT(num_seeds, "evaluation seeds"),
      MGAE_REAL(label_fraction, "fraction of train labels used by finetune"),
      MGAE_REAL(finetune_lr, "finetune learning rate"),
      MGAE_COUNT(finetune_epochs, "finetune epochs"),
      ConfigKey{"feature_precision", "64 | 32 (32 rounds features through float on load)",
                [](TrainConfig& c, const std::string& v) {
                  const int p = parse_number<int>("feature_precision", v);
                  if (p != 32 && p != 64) throw ValidationError("config: feature_precision must be 32 or 64");
                  c.feature_precision = p;
                },
                [](const TrainConfig& c) { return std::to_string(c.feature_precision); }},
  };
#undef MGAE_REAL
#undef MGAE_COUNT
#undef MGAE_FLAG
  return keys;
}

inline void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("config: lr must be > 0");
  if (max_epoch < 1) throw ValidationError("config: max_epoch must be >= 1");
  if (weight_decay < 0.0) throw ValidationError("config: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("config: betas must lie in [0, 1)");
  if (!(masking_rate > 0.0 && masking_rate <= 1.0)) throw ValidationError("config: masking_rate must lie in (0, 1]");
  if (!(re_masking_rate >= 0.0 && re_masking_rate <= 1.0))
    throw ValidationError("config: re_masking_rate must lie in [0, 1]");
  if (num_re_masking < 1) throw ValidationError("config: num_re_masking must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ValidationError("config: ema_decay must lie in [0, 1]");
  if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
  if (in_drop < 0.0 || in_drop >= 1.0 || attn_drop < 0.0 || attn_drop >= 1.0)
    throw ValidationError("config: dropout rates must lie in [0, 1)");
  if (decoder_heads < 1) throw ValidationError("config: decoder_heads must be >= 1");
  if (!(probe_lr > 0.0) || probe_epochs < 1) throw ValidationError("config: probe_lr and probe_epochs must be positive");
  if (num_seeds < 1) throw ValidationError("config: num_seeds must be >= 1");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0))
    throw ValidationError("config: label_fraction must lie in (0, 1]");
  if (!(finetune_lr > 0.0) || finetune_epochs < 1)
    throw ValidationError("config: finetune_lr and finetune_epochs must be positive");
  if (!input_recon && lambda == 0.0) throw ValidationError("config: input_recon=false with lambda=0 leaves no loss");
  objective().validate();
  cluster().validate();
  EncoderConfig probe_enc;
  probe_enc.in_dim = 1;
  probe_enc.num_layers = num_layer;
  probe_enc.hidden_size = hidden_size;
  probe_enc.heads = num_heads;
  probe_enc.validate();
}

inline const ConfigKey& find_config_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw ValidationError("config: unknown key '" + std::string(name) + "'");
}

/// Applies one `key=value` (or `key = value`) assignment.
inline void apply_override(TrainConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw UsageError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key = detail::trim(assignment.substr(0, eq));
  const std::string value = detail::trim(assignment.substr(eq + 1));
  if (value.empty()) throw ValidationError("config: empty value for key '" + key + "'");
  find_config_key(key).set(cfg, value);
}

/// Parses flat `key = value` text; `#` starts a comment. Later keys win.
inline TrainConfig parse_config(std::string_view text, TrainConfig base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t.find('=') == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_override(base, t);
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text: every key in registry order. parse_config(to_text(c)) == c.
inline std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

/// 64-bit FNV-1a of the canonical text.
inline std::uint64_t config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_text(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mgae
