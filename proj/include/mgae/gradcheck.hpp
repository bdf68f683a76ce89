// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>

#include "mgae/tensor.hpp"

namespace mgae {

/// Builds a scalar loss on `tape`, binding parameters with `tape.parameter`.
using LossBuilder = std::function<Var(Tape& tape, const ParameterSet& params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-6;
  /// 0 checks every entry; otherwise a seeded random sample per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

inline double evaluate_loss(const LossBuilder& f, const ParameterSet& params) {
  Tape tape;
  Var loss = f(tape, params);
  const Matrix& v = loss.value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("gradcheck: loss must be 1x1");
  return v(0, 0);
}

/**
 * Central-difference check of the reverse-mode gradient of `f`.
 *
 * Relative error per entry is |a - n| / max(|a|, |n|, 1e-8). Throws if two
 * evaluations at the same point disagree (non-deterministic `f`).
 */
inline GradCheckReport finite_diff_check(const LossBuilder& f, const ParameterSet& params,
                                         const GradCheckOptions& opts = {}) {
  GradientMap analytic;
  {
    Tape tape;
    Var loss = f(tape, params);
    analytic = tape.backward(loss);
  }
  const double base1 = evaluate_loss(f, params);
  const double base2 = evaluate_loss(f, params);
  if (base1 != base2) throw ValidationError("gradcheck: loss is not deterministic across evaluations");

  GradCheckReport report;
  report.worst_param = "";
  ParameterSet probe = params;
  std::mt19937_64 rng(opts.sample_seed);
  for (const auto& [name, value] : params) {
    auto it = analytic.find(name);
    const Matrix zero(value.rows(), value.cols());
    const Matrix& grad = it == analytic.end() ? zero : it->second;

    std::vector<std::size_t> entries(value.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (opts.max_entries_per_tensor && entries.size() > opts.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }

    Matrix& slot = probe.at(name);
    for (std::size_t idx : entries) {
      const double orig = slot[idx];
      slot[idx] = orig + opts.step;
      const double up = evaluate_loss(f, probe);
      slot[idx] = orig - opts.step;
      const double down = evaluate_loss(f, probe);
      slot[idx] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = grad[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_param = name;
          report.worst_index = idx;
          report.analytic = a;
          report.numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace mgae
