// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mgae/checkpoint.hpp"
#include "mgae/config.hpp"
#include "mgae/dataset_io.hpp"
#include "mgae/gnn.hpp"
#include "mgae/masking.hpp"
#include "mgae/objective.hpp"
#include "mgae/optim.hpp"
#include "mgae/parallel.hpp"
#include "mgae/ppr.hpp"
#include "mgae/target.hpp"

namespace mgae {

struct LossTerms {
  double input = 0.0;
  double latent = 0.0;
  double total = 0.0;
};

struct EpochMetrics {
  std::uint64_t epoch = 0;
  double loss_input = 0.0;
  double loss_latent = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;
};

/// `epoch loss_input loss_latent loss_total lr`, tab separated.
inline std::string metrics_line(const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu\t%.8g\t%.8g\t%.8g\t%.8g", static_cast<unsigned long long>(m.epoch),
                m.loss_input, m.loss_latent, m.loss_total, m.lr);
  return buf;
}

struct TrainOptions {
  std::size_t threads = 1;
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(std::uint64_t step, const LossTerms&)> on_step;
};

struct StepResult {
  LossTerms loss;
  GradientMap grads;
};

/// Fresh checkpoint: random theta, xi = theta restricted to encoder and
/// projector, zero optimizer moments.
inline Checkpoint init_checkpoint(const TrainConfig& cfg, std::size_t feature_dim) {
  cfg.validate();
  Checkpoint ck;
  ck.config = cfg;
  ck.theta = init_model(cfg.model(feature_dim), cfg.seed);
  ck.xi = init_target(ck.theta, cfg.ema_decay).xi;
  ck.adam = AdamState::zeros_like(ck.theta);
  return ck;
}

/**
 * Records the masked-autoencoding loss of one graph (the whole graph, or one
 * local cluster) on `tape`. All randomness comes from `step_seed`; targets
 * come from the unmasked graph through xi. Returns nothing when no term
 * applies (a cluster with no masked node and lambda = 0).
 */
inline std::optional<Var> build_step_loss(Tape& tape, const ParameterSet& theta, const TargetState& target,
                                          const ModelConfig& model, const TrainConfig& cfg, const PreparedGraph& pg,
                                          const Matrix& x, std::uint64_t step_seed, LossTerms* terms = nullptr) {
  const ObjectiveConfig obj = cfg.objective();
  const bool use_latent = obj.lambda_mix != 0.0;
  const std::size_t n = x.rows();

  const MaskPlan plan = sample_mask_plan(n, cfg.masking_rate, cfg.re_masking_rate, cfg.num_re_masking,
                                         detail::mix_seed(step_seed, 11), cfg.remask_mode);
  std::mt19937_64 drop_rng(detail::mix_seed(step_seed, 17));
  ForwardMode mode{true, &drop_rng};

  ParamBinder bind(tape, theta, true);
  Var xv = tape.constant(x);
  MaskTokens tokens{bind("mask.input_token"), bind("mask.decode_token")};
  Var h = encoder_forward(bind, model.encoder, pg, apply_input_mask(xv, plan, tokens), mode);

  LossTerms lt;
  std::optional<Var> l_in, l_lat;
  // A cluster too small for floor(rate * n) >= 1 has nothing to reconstruct.
  if (obj.input_recon && !plan.input_masked.empty()) {
    std::vector<Var> views;
    views.reserve(plan.remask_sets.size());
    for (const auto& set : plan.remask_sets)
      views.push_back(decoder_forward(bind, model.decoder, pg, apply_remask(h, set, tokens), mode));
    l_in = input_recon_loss(xv, views, plan.input_masked, obj);
    lt.input = l_in->value()(0, 0);
  }
  if (use_latent) {
    const Matrix x_bar = target_forward(target, model, pg, x);
    Var z_bar = projector_forward(bind, model.projector, h);
    l_lat = latent_pred_loss(z_bar, tape.constant(x_bar), obj);
    lt.latent = l_lat->value()(0, 0);
  }

  std::optional<Var> total;
  if (l_in && l_lat)
    total = combined_loss(*l_in, *l_lat, obj.lambda_mix);
  else if (l_in)
    total = *l_in;
  else if (l_lat)
    total = scale(*l_lat, obj.lambda_mix);
  if (total) lt.total = total->value()(0, 0);
  if (terms) *terms = lt;
  return total;
}

/// Loss terms and gradients of one graph; see build_step_loss.
inline StepResult graph_step(const ParameterSet& theta, const TargetState& target, const ModelConfig& model,
                             const TrainConfig& cfg, const PreparedGraph& pg, const Matrix& x,
                             std::uint64_t step_seed) {
  Tape tape;
  StepResult out;
  const std::optional<Var> total = build_step_loss(tape, theta, target, model, cfg, pg, x, step_seed, &out.loss);
  if (total) out.grads = tape.backward(*total);
  return out;
}

/// Rows of `x` listed in `ids`, in that order.
inline Matrix gather_rows(const Matrix& x, std::span<const NodeId> ids) {
  Matrix out(ids.size(), x.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = x.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline Matrix dataset_features(const DatasetBundle& data, const TrainConfig& cfg) {
  FeatureMatrix f = data.features;
  if (cfg.feature_precision == 32) round_features_to_float(f);
  return to_matrix(f);
}

/**
 * Pretraining loop. Full-batch mode takes one step per epoch on the whole
 * graph; local-cluster mode precomputes one PPR cluster per node and takes
 * one step per batch of clusters, averaging per-cluster gradients in batch
 * order. Each step: losses, backward, AdamW with cosine lr, then EMA.
 */
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const DatasetBundle& data, TrainOptions opts = {})
      : Trainer(init_checkpoint(cfg, data.features.cols), data, std::move(opts)) {}

  Trainer(Checkpoint ck, const DatasetBundle& data, TrainOptions opts = {})
      : ck_(std::move(ck)), opts_(std::move(opts)) {
    const TrainConfig& cfg = ck_.config;
    cfg.validate();
    data.validate();
    model_ = cfg.model(data.features.cols);
    if (!init_model(model_, 0).compatible_with(ck_.theta))
      throw ValidationError("trainer: checkpoint parameters do not match the configured architecture");
    target_.xi = ck_.xi;
    target_.tau = cfg.ema_decay;
    x_ = dataset_features(data, cfg);
    if (cfg.mode == TrainMode::kFullBatch) {
      full_graph_.emplace(data.graph);
      steps_per_epoch_ = 1;
    } else {
      std::vector<NodeId> seeds(static_cast<std::size_t>(data.graph.num_nodes()));
      std::iota(seeds.begin(), seeds.end(), NodeId{0});
      clusters_ = compute_clusters(data.graph, seeds, cfg.cluster(), opts_.threads);
      steps_per_epoch_ = (clusters_.size() + cfg.batch_size - 1) / cfg.batch_size;
    }
  }

  std::uint64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::uint64_t total_steps() const { return ck_.config.max_epoch * steps_per_epoch_; }
  std::uint64_t epoch() const { return ck_.step / steps_per_epoch_; }
  const Checkpoint& checkpoint() {
    ck_.xi = target_.xi;
    return ck_;
  }
  const std::vector<Subgraph>& clusters() const { return clusters_; }
  const ModelConfig& model() const { return model_; }

  EpochMetrics run_epoch() {
    const TrainConfig& cfg = ck_.config;
    if (ck_.step >= total_steps()) throw ValidationError("trainer: all epochs already completed");
    EpochMetrics m;
    m.epoch = epoch();
    m.lr = cosine_lr(ck_.step, total_steps(), cfg.lr);
    if (cfg.mode == TrainMode::kFullBatch) {
      accumulate(m, step({}));
    } else {
      const auto batches = batch_clusters(clusters_, cfg.batch_size, detail::mix_seed(cfg.seed, 1000 + m.epoch));
      for (const auto& b : batches) accumulate(m, step(b));
    }
    const double k = static_cast<double>(steps_per_epoch_);
    m.loss_input /= k;
    m.loss_latent /= k;
    m.loss_total /= k;
    if (opts_.on_epoch) opts_.on_epoch(m);
    return m;
  }

  Checkpoint run() {
    while (ck_.step < total_steps()) run_epoch();
    return checkpoint();
  }

 private:
  static void accumulate(EpochMetrics& m, const LossTerms& l) {
    m.loss_input += l.input;
    m.loss_latent += l.latent;
    m.loss_total += l.total;
  }

  LossTerms step(const ClusterBatch& batch) {
    const TrainConfig& cfg = ck_.config;
    const std::uint64_t step_index = ck_.step;
    const std::uint64_t step_seed = detail::mix_seed(cfg.seed, step_index);
    LossTerms loss;
    GradientMap grads;
    try {
      if (full_graph_) {
        StepResult r = graph_step(ck_.theta, target_, model_, cfg, *full_graph_, x_, step_seed);
        loss = r.loss;
        grads = std::move(r.grads);
      } else {
        std::vector<StepResult> parts(batch.size());
        parallel_for(batch.size(), opts_.threads, [&](std::size_t i, std::size_t) {
          const Subgraph& c = batch[i];
          PreparedGraph pg(c.local_graph);
          parts[i] = graph_step(ck_.theta, target_, model_, cfg, pg, gather_rows(x_, c.node_ids),
                                detail::mix_seed(step_seed, i));
        });
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (auto& p : parts) {
          loss.input += p.loss.input * inv;
          loss.latent += p.loss.latent * inv;
          loss.total += p.loss.total * inv;
          for (auto& [name, g] : p.grads) {
            for (double& v : g.data()) v *= inv;
            auto it = grads.find(name);
            if (it == grads.end())
              grads.emplace(name, std::move(g));
            else
              it->second += g;
          }
        }
      }
      if (!std::isfinite(loss.total)) throw NumericalError("non-finite loss");
      const double lr = cosine_lr(step_index, total_steps(), cfg.lr);
      adamw_step(ck_.theta, grads, ck_.adam, lr, cfg.adamw());
      ema_update(target_, ck_.theta);
    } catch (const NumericalError& e) {
      throw NumericalError("step " + std::to_string(step_index) + ": " + e.what());
    }
    ck_.step = step_index + 1;
    if (opts_.on_step) opts_.on_step(step_index, loss);
    return loss;
  }

  Checkpoint ck_;
  TrainOptions opts_;
  ModelConfig model_;
  TargetState target_;
  Matrix x_;
  std::optional<PreparedGraph> full_graph_;
  std::vector<Subgraph> clusters_;
  std::uint64_t steps_per_epoch_ = 1;
};

inline Checkpoint pretrain(const TrainConfig& cfg, const DatasetBundle& data, TrainOptions opts = {}) {
  Trainer t(cfg, data, std::move(opts));
  return t.run();
}

/**
 * Frozen-encoder embeddings (no masking, dropout off). Full-batch encodes
 * the whole graph; local-cluster encodes the cluster seeded at each node
 * and keeps that node's row.
 */
inline Matrix embed(const Checkpoint& ck, const DatasetBundle& data, TrainMode mode, std::size_t threads = 1) {
  const TrainConfig& cfg = ck.config;
  const ModelConfig model = cfg.model(data.features.cols);
  if (!init_encoder(model.encoder, 0).compatible_with(ck.theta.subset({"encoder."})))
    throw ValidationError("embed: checkpoint encoder does not match feature width or architecture");
  const Matrix x = dataset_features(data, cfg);
  if (mode == TrainMode::kFullBatch) return encode(ck.theta, model.encoder, data.graph, x);

  const auto n = static_cast<std::size_t>(data.graph.num_nodes());
  Matrix out(n, model.encoder.out_dim());
  const ClusterConfig cc = cfg.cluster();
  cc.validate();
  const std::size_t workers = std::max<std::size_t>(1, threads == 0 ? default_threads() : threads);
  std::vector<PprWorkspace> ws(std::min(workers, std::max<std::size_t>(1, n)));
  parallel_for(n, ws.size(), [&](std::size_t v, std::size_t w) {
    const PPRVector p = ws[w].push(data.graph, static_cast<NodeId>(v), cc.alpha, cc.epsilon);
    const Subgraph c = topk_cluster(data.graph, p, cc.top_k, cc.min_cluster);
    const Matrix h = encode(ck.theta, model.encoder, c.local_graph, gather_rows(x, c.node_ids));
    const auto row = h.row(static_cast<std::size_t>(*c.anchor));
    std::copy(row.begin(), row.end(), out.row(v).begin());
  });
  return out;
}

}  // namespace mgae
