// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "mgae/checkpoint.hpp"
#include "mgae/gnn.hpp"
#include "mgae/optim.hpp"
#include "mgae/parallel.hpp"
#include "mgae/trainer.hpp"

namespace mgae {

struct ProbeConfig {
  double lr = 0.01;
  std::size_t epochs = 300;
  double weight_decay = 1e-4;
  std::size_t num_seeds = 20;
  std::uint64_t seed = 0;

  static ProbeConfig from(const TrainConfig& c) {
    ProbeConfig p;
    p.lr = c.probe_lr;
    p.epochs = c.probe_epochs;
    p.weight_decay = c.probe_weight_decay;
    p.num_seeds = c.num_seeds;
    p.seed = c.seed;
    return p;
  }
};

struct AccuracyStats {
  std::vector<double> per_seed;
  double mean = 0.0;
  double std = 0.0;  // sample std, n - 1 denominator
};

inline AccuracyStats summarize(std::vector<double> values) {
  AccuracyStats s;
  s.per_seed = std::move(values);
  if (s.per_seed.empty()) return s;
  const double n = static_cast<double>(s.per_seed.size());
  s.mean = std::accumulate(s.per_seed.begin(), s.per_seed.end(), 0.0) / n;
  if (s.per_seed.size() > 1) {
    double ss = 0.0;
    for (double v : s.per_seed) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

/// Fraction of nodes in `mask` with pred == truth.
inline double accuracy(std::span<const int> pred, std::span<const int> truth, std::span<const NodeId> mask) {
  if (pred.size() != truth.size()) throw ShapeError("accuracy: prediction and label counts differ");
  if (mask.empty()) throw ValidationError("accuracy: empty mask");
  std::size_t hit = 0;
  for (NodeId v : mask) {
    if (v < 0 || static_cast<std::size_t>(v) >= pred.size()) throw ValidationError("accuracy: node out of range");
    hit += pred[static_cast<std::size_t>(v)] == truth[static_cast<std::size_t>(v)];
  }
  return static_cast<double>(hit) / static_cast<double>(mask.size());
}

inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// Labeled nodes of the three evaluation splits.
struct EvalSplits {
  std::vector<NodeId> train, valid, test;
  int num_classes = 0;
};

inline EvalSplits eval_splits(std::span<const int> labels, std::span<const Split> splits) {
  if (labels.size() != splits.size()) throw ShapeError("eval: label and split counts differ");
  EvalSplits e;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    e.num_classes = std::max(e.num_classes, labels[i] + 1);
    const auto v = static_cast<NodeId>(i);
    switch (splits[i]) {
      case Split::kTrain: e.train.push_back(v); break;
      case Split::kValid: e.valid.push_back(v); break;
      case Split::kTest: e.test.push_back(v); break;
      case Split::kNone: break;
    }
  }
  if (e.train.empty() || e.valid.empty() || e.test.empty())
    throw ValidationError("eval: train, valid and test splits must each contain labeled nodes");
  std::set<int> train_classes;
  for (NodeId v : e.train) train_classes.insert(labels[static_cast<std::size_t>(v)]);
  if (train_classes.size() < 2) throw ValidationError("eval: train split has a single class");
  return e;
}

/// Columns shifted and scaled by train-node mean and std (std 0 -> 1).
inline Matrix standardize(const Matrix& emb, std::span<const NodeId> fit_rows) {
  Matrix out = emb;
  for (std::size_t c = 0; c < emb.cols(); ++c) {
    double mean = 0.0;
    for (NodeId v : fit_rows) mean += emb(static_cast<std::size_t>(v), c);
    mean /= static_cast<double>(fit_rows.size());
    double var = 0.0;
    for (NodeId v : fit_rows) {
      const double d = emb(static_cast<std::size_t>(v), c) - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(fit_rows.size()));
    const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (std::size_t r = 0; r < emb.rows(); ++r) out(r, c) = (emb(r, c) - mean) * inv;
  }
  return out;
}

namespace detail {

inline ParameterSet init_linear_head(std::size_t in, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet ps;
  ps.add("head.weight", xavier_uniform(in, classes, in, classes, rng));
  ps.add("head.bias", Matrix(1, classes));
  return ps;
}

inline Var linear_head(ParamBinder& bind, const Var& h) {
  return add_row(matmul(h, bind("head.weight")), bind("head.bias"));
}

/// Tracks test accuracy at the best valid accuracy (first epoch wins ties).
struct Selector {
  double best_valid = -1.0;
  double test_at_best = 0.0;
  void observe(double valid, double test) {
    if (valid > best_valid) {
      best_valid = valid;
      test_at_best = test;
    }
  }
};

}  // namespace detail

/**
 * Softmax regression on frozen, standardized embeddings. One run per seed
 * (different head initialization); each run trains on the train split with
 * AdamW and reports test accuracy at the epoch of best valid accuracy.
 */
inline AccuracyStats linear_probe(const Matrix& embeddings, std::span<const int> labels, std::span<const Split> splits,
                                  const ProbeConfig& cfg, std::size_t threads = 1) {
  if (embeddings.rows() != labels.size()) throw ShapeError("linear_probe: embedding rows != label count");
  if (cfg.num_seeds < 1) throw ValidationError("linear_probe: num_seeds must be >= 1");
  const EvalSplits sp = eval_splits(labels, splits);
  const Matrix x = standardize(embeddings, sp.train);
  const std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> accs(cfg.num_seeds);
  AdamWConfig opt;
  opt.weight_decay = cfg.weight_decay;

  parallel_for(cfg.num_seeds, threads, [&](std::size_t s, std::size_t) {
    ParameterSet head = detail::init_linear_head(x.cols(), static_cast<std::size_t>(sp.num_classes),
                                                 detail::mix_seed(cfg.seed, 500 + s));
    AdamState adam = AdamState::zeros_like(head);
    detail::Selector sel;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      Tape tape;
      ParamBinder bind(tape, head, true);
      Var logits = detail::linear_head(bind, tape.constant(x));
      GradientMap g = tape.backward(softmax_cross_entropy(logits, y, sp.train));
      adamw_step(head, g, adam, cfg.lr, opt);

      Tape eval_tape;
      ParamBinder frozen(eval_tape, head, false);
      const auto pred = argmax_rows(detail::linear_head(frozen, eval_tape.constant(x)).value());
      sel.observe(accuracy(pred, y, sp.valid), accuracy(pred, y, sp.test));
    }
    accs[s] = sel.test_at_best;
  });
  return summarize(std::move(accs));
}

/// Nodes drawn uniformly from the labeled train split, max(1, floor(fraction * n_train)).
inline std::vector<NodeId> sample_labeled(std::span<const NodeId> train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("label_fraction must lie in (0, 1]");
  std::vector<NodeId> pool(train.begin(), train.end());
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool.size()))));
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(m, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

struct FinetuneConfig {
  double lr = 0.005;
  std::size_t epochs = 100;
  double weight_decay = 1e-4;
  std::size_t num_seeds = 20;
  double label_fraction = 1.0;
  std::uint64_t seed = 0;

  static FinetuneConfig from(const TrainConfig& c) {
    FinetuneConfig f;
    f.lr = c.finetune_lr;
    f.epochs = c.finetune_epochs;
    f.weight_decay = c.probe_weight_decay;
    f.num_seeds = c.num_seeds;
    f.label_fraction = c.label_fraction;
    f.seed = c.seed;
    return f;
  }
};

/**
 * Encoder plus linear head trained end-to-end on a sampled fraction of the
 * train labels (full graph, dropout on while training). Selection on valid.
 */
inline AccuracyStats finetune(const Checkpoint& ck, const DatasetBundle& data, const FinetuneConfig& cfg,
                              std::size_t threads = 1) {
  if (cfg.num_seeds < 1) throw ValidationError("finetune: num_seeds must be >= 1");
  const EvalSplits sp = eval_splits(data.labels, data.splits);
  const ModelConfig model = ck.config.model(data.features.cols);
  if (!init_encoder(model.encoder, 0).compatible_with(ck.theta.subset({"encoder."})))
    throw ValidationError("finetune: checkpoint encoder does not match feature width or architecture");
  const Matrix x = dataset_features(data, ck.config);
  const PreparedGraph pg(data.graph);
  const std::vector<int> y = data.labels;
  AdamWConfig opt;
  opt.weight_decay = cfg.weight_decay;
  std::vector<double> accs(cfg.num_seeds);

  parallel_for(cfg.num_seeds, threads, [&](std::size_t s, std::size_t) {
    const std::uint64_t run_seed = detail::mix_seed(cfg.seed, 900 + s);
    const auto labeled = sample_labeled(sp.train, cfg.label_fraction, run_seed);
    ParameterSet params = ck.theta.subset({"encoder."});
    params.merge(detail::init_linear_head(model.encoder.out_dim(), static_cast<std::size_t>(sp.num_classes),
                                          detail::mix_seed(run_seed, 1)));
    AdamState adam = AdamState::zeros_like(params);
    std::mt19937_64 drop_rng(detail::mix_seed(run_seed, 2));
    detail::Selector sel;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      Tape tape;
      ParamBinder bind(tape, params, true);
      Var h = encoder_forward(bind, model.encoder, pg, tape.constant(x), ForwardMode{true, &drop_rng});
      GradientMap g = tape.backward(softmax_cross_entropy(detail::linear_head(bind, h), y, labeled));
      adamw_step(params, g, adam, cfg.lr, opt);

      Tape eval_tape;
      ParamBinder frozen(eval_tape, params, false);
      Var he = encoder_forward(frozen, model.encoder, pg, eval_tape.constant(x), ForwardMode{});
      const auto pred = argmax_rows(detail::linear_head(frozen, he).value());
      sel.observe(accuracy(pred, y, sp.valid), accuracy(pred, y, sp.test));
    }
    accs[s] = sel.test_at_best;
  });
  return summarize(std::move(accs));
}

}  // namespace mgae
