// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#include <gtest/gtest.h>

#include <cmath>

#include "mgae/target.hpp"
#include "test_util.hpp"

using namespace mgae;
using mgae::testing::connected_random_graph;
using mgae::testing::max_abs_diff;
using mgae::testing::random_matrix;

namespace {

ModelConfig small_model(std::size_t d_in) {
  ModelConfig m;
  m.encoder.num_layers = 2;
  m.encoder.hidden_size = 6;
  m.encoder.heads = 2;
  m.encoder.feat_dropout = 0.5;
  m.encoder.attn_dropout = 0.5;
  m.link(d_in);
  return m;
}

ParameterSet fill(const ParameterSet& like, double v) {
  ParameterSet out;
  for (const auto& [k, m] : like) out.add(k, Matrix(m.rows(), m.cols(), v));
  return out;
}

// Loop-based projector: linear, bias, prelu between layers.
Matrix reference_projector(const ParameterSet& ps, const ProjectorConfig& cfg, const Matrix& h) {
  Matrix z = h;
  for (std::size_t i = 0; i + 1 < cfg.layers.size(); ++i) {
    const std::string p = "projector.linear" + std::to_string(i);
    const Matrix& w = ps.at(p + ".weight");
    const Matrix& b = ps.at(p + ".bias");
    Matrix next(z.rows(), w.cols());
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double s = b(0, c);
        for (std::size_t k = 0; k < z.cols(); ++k) s += z(r, k) * w(k, c);
        if (i + 2 < cfg.layers.size() && s < 0) s *= ps.at(p + ".prelu")(0, 0);
        next(r, c) = s;
      }
    z = next;
  }
  return z;
}

}  // namespace

TEST(InitTarget, CopiesEncoderAndProjectorOnly) {
  const ModelConfig cfg = small_model(5);
  ParameterSet theta = init_model(cfg, 3);
  const TargetState s = init_target(theta);
  EXPECT_DOUBLE_EQ(s.tau, 0.996);
  for (const auto& name : theta.names()) {
    const bool kept = name.rfind("encoder.", 0) == 0 || name.rfind("projector.", 0) == 0;
    EXPECT_EQ(s.xi.contains(name), kept) << name;
    if (kept) EXPECT_EQ(s.xi.at(name), theta.at(name)) << name;
  }
  // Independent storage.
  theta.at("encoder.layer0.weight")(0, 0) += 1.0;
  EXPECT_NE(s.xi.at("encoder.layer0.weight"), theta.at("encoder.layer0.weight"));
}

TEST(InitTarget, Errors) {
  const ParameterSet theta = init_model(small_model(5), 3);
  EXPECT_THROW(init_target(theta, 1.5), ValidationError);
  EXPECT_THROW(init_target(theta, -0.1), ValidationError);
  EXPECT_THROW(init_target(theta.subset({"encoder."})), ValidationError);
  EXPECT_THROW(init_target(theta.subset({"projector."})), ValidationError);
}

TEST(TargetForward, MatchesOnlineEvalPass) {
  const Graph g = connected_random_graph(15, 0.2, 4);
  const PreparedGraph pg(g);
  const ModelConfig cfg = small_model(5);
  const ParameterSet theta = init_model(cfg, 8);
  const Matrix x = random_matrix(15, 5, 9);
  const TargetState s = init_target(theta);

  const Matrix out = target_forward(s, cfg, pg, x);
  ASSERT_EQ(out.rows(), 15u);
  ASSERT_EQ(out.cols(), cfg.projector.out_dim());
  // Dropout rates in the config are ignored: eval mode.
  EXPECT_EQ(target_forward(s, cfg, pg, x), out);

  const Matrix h = encode(theta, cfg.encoder, pg, x);
  EXPECT_LE(max_abs_diff(out, reference_projector(theta, cfg.projector, h)), 1e-12);
}

TEST(TargetForward, ProjectorReferenceWithNegativeSlope) {
  ProjectorConfig pc;
  pc.layers = {3, 4, 2};
  ParameterSet ps = init_projector(pc, 1);
  ps.at("projector.linear0.prelu")(0, 0) = -0.7;
  const Matrix h = random_matrix(6, 3, 2);
  Tape t;
  ParamBinder bind(t, ps, false);
  EXPECT_LE(max_abs_diff(projector_forward(bind, pc, t.constant(h)).value(), reference_projector(ps, pc, h)), 1e-13);
}

TEST(EmaUpdate, EndpointsAndMidpoint) {
  const ParameterSet theta = init_model(small_model(4), 1).subset({"encoder.", "projector."});
  const ParameterSet twos = fill(theta, 2.0), fours = fill(theta, 4.0);

  TargetState s = init_target(twos, 1.0);
  ema_update(s, fours);
  EXPECT_EQ(s.xi, twos);

  s = init_target(twos, 0.0);
  ema_update(s, fours);
  EXPECT_EQ(s.xi, fours);

  s = init_target(twos, 0.5);
  ema_update(s, fours);
  EXPECT_EQ(s.xi, fill(theta, 3.0));
}

TEST(EmaUpdate, ConvexCombination) {
  const ModelConfig cfg = small_model(4);
  const ParameterSet a = init_model(cfg, 1), b = init_model(cfg, 2);
  TargetState s = init_target(a, 0.9);
  ema_update(s, b);
  for (const auto& [name, xi] : s.xi) {
    const Matrix& x0 = a.at(name);
    const Matrix& th = b.at(name);
    for (std::size_t i = 0; i < xi.size(); ++i) {
      EXPECT_NEAR(xi[i], 0.9 * x0[i] + 0.1 * th[i], 1e-15);
      EXPECT_GE(xi[i], std::min(x0[i], th[i]) - 1e-15);
      EXPECT_LE(xi[i], std::max(x0[i], th[i]) + 1e-15);
    }
  }
}

TEST(EmaUpdate, GeometricConvergence) {
  const ModelConfig cfg = small_model(4);
  const ParameterSet a = init_model(cfg, 1), b = init_model(cfg, 2);
  TargetState s = init_target(a, 0.8);
  for (int t = 1; t <= 30; ++t) {
    ema_update(s, b);
    const double f = std::pow(0.8, t);
    for (const auto& [name, xi] : s.xi)
      for (std::size_t i = 0; i < xi.size(); ++i)
        ASSERT_NEAR(xi[i] - b.at(name)[i], f * (a.at(name)[i] - b.at(name)[i]), 1e-13) << name << " step " << t;
  }
}

TEST(EmaUpdate, Errors) {
  const ModelConfig cfg = small_model(4);
  TargetState s = init_target(init_model(cfg, 1));
  EXPECT_THROW(ema_update(s, init_model(cfg, 1).subset({"encoder."})), ValidationError);
  EXPECT_THROW(ema_update(s, init_model(small_model(5), 1)), ShapeError);
}
