// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

// mgae command-line entry point: pretrain, embed, probe, finetune, cluster,
// gradcheck. Exit codes: 1 usage, 2 data/config validation, 3 numerical.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mgae/checkpoint.hpp"
#include "mgae/config.hpp"
#include "mgae/dataset_io.hpp"
#include "mgae/eval.hpp"
#include "mgae/gradcheck.hpp"
#include "mgae/ppr.hpp"
#include "mgae/synthetic.hpp"
#include "mgae/trainer.hpp"

namespace {

using namespace mgae;

struct Options {
  std::string config_path;
  std::string data_dir;
  std::string ckpt_path;
  std::string out_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string format = "tsv";
  std::string mode;
  std::string seed_nodes = "all";
  std::optional<std::size_t> k;
  bool random_init = false;
  std::optional<double> label_fraction;
};

std::string config_key_help() {
  std::string s = "Config keys (--config file or --set key=value, later wins):\n";
  for (const auto& k : config_keys()) {
    std::string name = "  " + k.name;
    name.resize(std::max<std::size_t>(name.size() + 1, 22), ' ');
    s += name + k.help + " [default " + k.get(TrainConfig{}) + "]\n";
  }
  return s;
}

/// base, then the --config file, then --set in order, then --seed.
TrainConfig resolve_config(const Options& o, TrainConfig base = {}) {
  if (!o.config_path.empty()) {
    std::ifstream f(o.config_path);
    if (!f) throw ValidationError("cannot open config '" + o.config_path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    base = parse_config(ss.str(), base);
  }
  for (const auto& s : o.sets) apply_override(base, s);
  if (o.seed) base.seed = *o.seed;
  base.validate();
  return base;
}

DatasetBundle require_data(const Options& o) {
  if (o.data_dir.empty()) throw UsageError("--data is required");
  return load_dataset(o.data_dir);
}

/// Checkpoint from --ckpt (config overrides applied on top of its stored
/// config) or, with --random-init, a freshly initialized one.
Checkpoint resolve_checkpoint(const Options& o, const DatasetBundle& data) {
  if (o.random_init) {
    if (!o.ckpt_path.empty()) throw UsageError("--ckpt and --random-init are mutually exclusive");
    return init_checkpoint(resolve_config(o), data.features.cols);
  }
  if (o.ckpt_path.empty()) throw UsageError("--ckpt is required (or pass --random-init)");
  Checkpoint ck = load_checkpoint(o.ckpt_path);
  ck.config = resolve_config(o, ck.config);
  return ck;
}

TrainMode resolve_mode(const Options& o, const TrainConfig& cfg) {
  return o.mode.empty() ? cfg.mode : parse_mode(o.mode);
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path, std::ios::trunc);
      if (!file_) throw ValidationError("cannot open '" + path + "' for writing");
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::string fmt(double v) { return detail::format_double(v); }

void write_stats(std::ostream& os, const AccuracyStats& s) {
  os << "seed\taccuracy\n";
  for (std::size_t i = 0; i < s.per_seed.size(); ++i) os << i << '\t' << fmt(s.per_seed[i]) << '\n';
  os << "mean\t" << fmt(s.mean) << '\n' << "std\t" << fmt(s.std) << '\n';
}

int cmd_pretrain(const Options& o) {
  if (o.out_path.empty()) throw UsageError("--out is required");
  const TrainConfig cfg = resolve_config(o);
  const DatasetBundle data = require_data(o);
  TrainOptions opts;
  opts.threads = o.threads;
  std::cout << "epoch\tloss_input\tloss_latent\tloss_total\tlr\n";
  opts.on_epoch = [](const EpochMetrics& m) { std::cout << metrics_line(m) << '\n' << std::flush; };
  const Checkpoint ck = pretrain(cfg, data, opts);
  save_checkpoint(ck, o.out_path);
  return 0;
}

int cmd_embed(const Options& o) {
  const DatasetBundle data = require_data(o);
  const Checkpoint ck = resolve_checkpoint(o, data);
  const Matrix h = embed(ck, data, resolve_mode(o, ck.config), o.threads);
  if (o.format == "bin") {
    if (o.out_path.empty() || o.out_path == "-") throw UsageError("--format bin needs --out <file>");
    ParameterSet ps;
    ps.add("embeddings", h);
    write_bytes(o.out_path, serialize_tensors(ps));
    return 0;
  }
  Output out(o.out_path);
  std::ostream& os = out.stream();
  for (std::size_t r = 0; r < h.rows(); ++r) {
    os << r;
    for (double v : h.row(r)) os << '\t' << fmt(v);
    os << '\n';
  }
  return 0;
}

int cmd_probe(const Options& o) {
  const DatasetBundle data = require_data(o);
  const Checkpoint ck = resolve_checkpoint(o, data);
  const Matrix h = embed(ck, data, resolve_mode(o, ck.config), o.threads);
  const AccuracyStats s = linear_probe(h, data.labels, data.splits, ProbeConfig::from(ck.config), o.threads);
  Output out(o.out_path);
  write_stats(out.stream(), s);
  return 0;
}

int cmd_finetune(const Options& o) {
  const DatasetBundle data = require_data(o);
  Checkpoint ck = resolve_checkpoint(o, data);
  if (o.label_fraction) {
    ck.config.label_fraction = *o.label_fraction;
    ck.config.validate();
  }
  const AccuracyStats s = finetune(ck, data, FinetuneConfig::from(ck.config), o.threads);
  Output out(o.out_path);
  write_stats(out.stream(), s);
  return 0;
}

std::vector<NodeId> parse_seed_nodes(const std::string& spec, NodeId n) {
  std::vector<NodeId> seeds;
  if (spec == "all") {
    seeds.resize(static_cast<std::size_t>(n));
    std::iota(seeds.begin(), seeds.end(), NodeId{0});
    return seeds;
  }
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    NodeId v = -1;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) throw UsageError("--seed-nodes: bad node id '" + tok + "'");
    if (v < 0 || v >= n) throw ValidationError("--seed-nodes: node " + tok + " out of range");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw UsageError("--seed-nodes: empty list");
  return seeds;
}

int cmd_cluster(const Options& o) {
  TrainConfig cfg = resolve_config(o);
  if (o.k) cfg.cluster_k = *o.k;
  const ClusterConfig cc = cfg.cluster();
  cc.validate();
  const DatasetBundle data = require_data(o);
  const auto seeds = parse_seed_nodes(o.seed_nodes, data.graph.num_nodes());
  const auto clusters = compute_clusters(data.graph, seeds, cc, o.threads);
  Output out(o.out_path);
  std::ostream& os = out.stream();
  os << "seed\tk\tcluster_size\tconductance\tvolume\n";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto& ids = clusters[i].node_ids;
    // A cluster covering every node has no complement to measure against.
    const std::string phi = ids.size() == static_cast<std::size_t>(data.graph.num_nodes())
                                ? std::string("nan")
                                : fmt(conductance(data.graph, ids));
    os << seeds[i] << '\t' << cc.top_k << '\t' << ids.size() << '\t' << phi << '\t' << fmt(volume(data.graph, ids))
       << '\n';
  }
  return 0;
}

DatasetBundle gradcheck_data(std::uint64_t seed) {
  SyntheticSpec s;
  s.num_nodes = 24;
  s.num_classes = 3;
  s.feature_dim = 10;
  s.words_per_node = 4;
  s.train_per_class = 2;
  s.num_valid = 6;
  s.num_test = 6;
  s.seed = seed;
  return make_synthetic(s);
}

int cmd_gradcheck(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const DatasetBundle data = o.data_dir.empty() ? gradcheck_data(cfg.seed) : load_dataset(o.data_dir);
  Checkpoint ck = init_checkpoint(cfg, data.features.cols);
  // Zero tokens and biases put isolated masked nodes exactly on the
  // activation kink; check at a jittered point instead.
  std::mt19937_64 rng(detail::mix_seed(cfg.seed, 77));
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (auto& [_, m] : ck.theta)
    for (double& v : m.data()) v += jitter(rng);
  const ModelConfig model = cfg.model(data.features.cols);
  TargetState target;
  target.xi = ck.xi;
  target.tau = cfg.ema_decay;

  // Full graph, or the first node's cluster in local-cluster mode.
  Graph g = data.graph;
  Matrix x = dataset_features(data, cfg);
  if (cfg.mode == TrainMode::kLocalCluster) {
    const PPRVector p = approx_ppr_push(data.graph, 0, cfg.ppr_alpha, cfg.ppr_epsilon);
    const Subgraph c = topk_cluster(data.graph, p, cfg.cluster_k, cfg.min_cluster);
    g = c.local_graph;
    x = gather_rows(x, c.node_ids);
  }
  const PreparedGraph pg(g);
  LossBuilder loss = [&](Tape& t, const ParameterSet& params) {
    auto v = build_step_loss(t, params, target, model, cfg, pg, x, detail::mix_seed(cfg.seed, 0));
    if (!v) throw ValidationError("gradcheck: the configuration yields no loss term on this graph");
    return *v;
  };
  GradCheckOptions opts;
  opts.max_entries_per_tensor = 16;
  opts.sample_seed = cfg.seed;
  const GradCheckReport r = finite_diff_check(loss, ck.theta, opts);
  std::cout << "max_rel_error\t" << fmt(r.max_rel_error) << '\n'
            << "worst_param\t" << r.worst_param << '\n'
            << "entries_checked\t" << r.entries_checked << '\n';
  constexpr double kTolerance = 1e-4;
  if (r.max_rel_error <= kTolerance) return 0;
  std::cerr << "mgae: gradcheck: max relative error " << fmt(r.max_rel_error) << " exceeds " << fmt(kTolerance)
            << '\n';
  return 3;
}

void add_common(CLI::App* sub, Options& o, bool data_required) {
  sub->add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
  auto* data = sub->add_option("--data", o.data_dir, "dataset directory (features/edges/labels/splits TSV)");
  if (data_required) data->required();
  sub->add_option("--set", o.sets, "config override key=value (repeatable, applied after --config)");
  sub->add_option("--seed", o.seed, "global random seed (overrides the config)");
  sub->add_option("--threads", o.threads, "worker thread cap")->check(CLI::PositiveNumber);
  sub->footer(config_key_help());
}

void add_checkpoint_inputs(CLI::App* sub, Options& o) {
  sub->add_option("--ckpt", o.ckpt_path, "checkpoint written by pretrain");
  sub->add_flag("--random-init", o.random_init, "use a freshly initialized encoder instead of --ckpt");
  sub->add_option("--mode", o.mode, "encoding mode: full_batch | local_cluster (default: config mode)")
      ->check(CLI::IsMember({"full_batch", "local_cluster"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked graph autoencoder with latent prediction and local-cluster training"};
  app.require_subcommand(1);
  Options o;

  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining; per-epoch TSV on stdout");
  add_common(pre, o, true);
  pre->add_option("--out", o.out_path, "checkpoint output path")->required();

  auto* emb = app.add_subcommand("embed", "frozen-encoder node embeddings");
  add_common(emb, o, true);
  add_checkpoint_inputs(emb, o);
  emb->add_option("--out", o.out_path, "output path (default stdout for tsv)");
  emb->add_option("--format", o.format, "tsv | bin")->check(CLI::IsMember({"tsv", "bin"}));

  auto* probe = app.add_subcommand("probe", "linear probe accuracy over num_seeds seeds");
  add_common(probe, o, true);
  add_checkpoint_inputs(probe, o);
  probe->add_option("--out", o.out_path, "output path (default stdout)");

  auto* ft = app.add_subcommand("finetune", "end-to-end finetuning accuracy over num_seeds seeds");
  add_common(ft, o, true);
  add_checkpoint_inputs(ft, o);
  ft->add_option("--out", o.out_path, "output path (default stdout)");
  ft->add_option("--label-fraction", o.label_fraction, "fraction of train labels used")
      ->check(CLI::Range(0.0, 1.0));

  auto* cl = app.add_subcommand("cluster", "PPR local cluster statistics per seed node");
  add_common(cl, o, true);
  cl->add_option("--seed-nodes", o.seed_nodes, "'all' or comma-separated node ids");
  cl->add_option("--k", o.k, "cluster size (overrides cluster_k)")->check(CLI::PositiveNumber);
  cl->add_option("--out", o.out_path, "output path (default stdout)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full training loss");
  add_common(gc, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*pre) return cmd_pretrain(o);
    if (*emb) return cmd_embed(o);
    if (*probe) return cmd_probe(o);
    if (*ft) return cmd_finetune(o);
    if (*cl) return cmd_cluster(o);
    if (*gc) return cmd_gradcheck(o);
  } catch (const std::exception& e) {
    std::cerr << "mgae: error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 1;
}
