// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mgae/gradcheck.hpp"
#include "mgae/objective.hpp"
#include "test_util.hpp"

using namespace mgae;
using mgae::testing::max_abs;
using mgae::testing::random_matrix;

namespace {

// Plain-loop reference for one row pair.
double ref_row(const Matrix& a, const Matrix& b, std::size_t r, double gamma) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    dot += a(r, c) * b(r, c);
    na += a(r, c) * a(r, c);
    nb += b(r, c) * b(r, c);
  }
  return std::pow(1.0 - dot / std::sqrt(na * nb), gamma);
}

double ref_input(const Matrix& x, const std::vector<Matrix>& views, const std::vector<NodeId>& masked, double gamma) {
  double s = 0;
  for (const Matrix& z : views)
    for (NodeId i : masked) s += ref_row(x, z, static_cast<std::size_t>(i), gamma);
  return s / static_cast<double>(masked.size());
}

double ref_latent(const Matrix& zb, const Matrix& xb, double gamma) {
  double s = 0;
  for (std::size_t r = 0; r < zb.rows(); ++r) s += ref_row(zb, xb, r, gamma);
  return s / static_cast<double>(zb.rows());
}

double scalar(const Var& v) { return v.value()(0, 0); }

double input_loss(const Matrix& x, const std::vector<Matrix>& views, const std::vector<NodeId>& masked,
                  const ObjectiveConfig& cfg) {
  Tape t;
  std::vector<Var> zs;
  for (const Matrix& z : views) zs.push_back(t.constant(z));
  return scalar(input_recon_loss(t.constant(x), zs, masked, cfg));
}

}  // namespace

TEST(ScaledCosineError, Examples) {
  const std::vector<double> a = {1, 2, 3};
  EXPECT_NEAR(scaled_cosine_error(a, a, 2.0), 0.0, 1e-15);
  const std::vector<double> e1 = {1, 0}, e2 = {0, 1}, neg = {-1, 0};
  EXPECT_NEAR(scaled_cosine_error(e1, e2, 1.0), 1.0, 1e-15);
  EXPECT_NEAR(scaled_cosine_error(e1, neg, 2.0), 4.0, 1e-15);
  EXPECT_NEAR(scaled_cosine_error(e1, neg, 3.0), 8.0, 1e-14);
}

TEST(ScaledCosineError, ScaleInvariantAndBounded) {
  const Matrix m = random_matrix(20, 6, 3);
  for (std::size_t r = 0; r + 1 < m.rows(); ++r) {
    std::vector<double> a(m.row(r).begin(), m.row(r).end()), b(m.row(r + 1).begin(), m.row(r + 1).end());
    const double base = scaled_cosine_error(a, b, 2.0);
    std::vector<double> a7 = a, b3 = b, na = a;
    for (auto& v : a7) v *= 7.5;
    for (auto& v : b3) v *= 0.003;
    for (auto& v : na) v = -v;
    EXPECT_NEAR(scaled_cosine_error(a7, b3, 2.0), base, 1e-12);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 4.0);
    EXPECT_NEAR(scaled_cosine_error(na, a, 2.0), 4.0, 1e-12);
  }
}

TEST(ScaledCosineError, GammaShrinksErrorsBelowOne) {
  const std::vector<double> a = {1, 0.2}, b = {0.3, 1};
  const double e1 = scaled_cosine_error(a, b, 1.0);
  ASSERT_GT(e1, 0.0);
  ASSERT_LT(e1, 1.0);
  double prev = e1;
  for (double g = 1.5; g <= 4.0; g += 0.5) {
    const double e = scaled_cosine_error(a, b, g);
    EXPECT_LT(e, prev);
    EXPECT_NEAR(e, std::pow(e1, g), 1e-14);
    prev = e;
  }
}

TEST(ScaledCosineError, Errors) {
  const std::vector<double> z = {0, 0}, a = {1, 0}, w = {1, 0, 0};
  EXPECT_THROW(scaled_cosine_error(z, a, 2.0), NumericalError);
  EXPECT_THROW(scaled_cosine_error(a, w, 2.0), ShapeError);
}

TEST(InputRecon, HandComputedRows) {
  const Matrix x = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  const Matrix z = Matrix::from_rows({{2, 0}, {1, 0}, {-1, -1}});
  ObjectiveConfig cfg;
  cfg.gamma = 2.0;
  const std::vector<NodeId> all = {0, 1, 2};
  // Rows contribute 0, 1 and 4.
  EXPECT_NEAR(input_loss(x, {z}, all, cfg), 5.0 / 3.0, 1e-14);
  EXPECT_NEAR(input_loss(x, {z}, {1, 2}, cfg), 5.0 / 2.0, 1e-14);
  cfg.gamma = 1.0;
  EXPECT_NEAR(input_loss(x, {z}, all, cfg), 3.0 / 3.0, 1e-14);
}

TEST(InputRecon, ViewsAddUnlessNormalized) {
  const Matrix x = random_matrix(9, 5, 1);
  const Matrix z = random_matrix(9, 5, 2);
  const std::vector<NodeId> m = {0, 4, 5, 8};
  ObjectiveConfig cfg;
  const double one = input_loss(x, {z}, m, cfg);
  EXPECT_NEAR(input_loss(x, {z, z}, m, cfg), 2.0 * one, 1e-13);
  EXPECT_NEAR(input_loss(x, {z, z, z}, m, cfg), 3.0 * one, 1e-13);
  cfg.normalize_views = true;
  EXPECT_NEAR(input_loss(x, {z, z, z}, m, cfg), one, 1e-13);
}

TEST(InputRecon, MatchesLoopReference) {
  const Matrix x = random_matrix(30, 7, 11);
  std::vector<Matrix> views = {random_matrix(30, 7, 12), random_matrix(30, 7, 13), random_matrix(30, 7, 14)};
  const std::vector<NodeId> m = {1, 2, 3, 9, 17, 22, 29};
  for (double g : {1.0, 2.0, 3.0}) {
    ObjectiveConfig cfg;
    cfg.gamma = g;
    EXPECT_NEAR(input_loss(x, views, m, cfg), ref_input(x, views, m, g), 1e-12) << "gamma " << g;
  }
}

TEST(InputRecon, DependsOnlyOnMaskedRows) {
  const Matrix x = random_matrix(10, 4, 5);
  Matrix z = random_matrix(10, 4, 6);
  const std::vector<NodeId> m = {2, 7};
  ObjectiveConfig cfg;
  const double before = input_loss(x, {z}, m, cfg);
  for (std::size_t r = 0; r < 10; ++r)
    if (r != 2 && r != 7)
      for (std::size_t c = 0; c < 4; ++c) z(r, c) = 100.0 * static_cast<double>(r + c) - 3.0;
  EXPECT_EQ(input_loss(x, {z}, m, cfg), before);

  Tape t;
  Var zv = t.parameter("z", z);
  const GradientMap g = t.backward(input_recon_loss(t.constant(x), std::vector<Var>{zv}, m, cfg));
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      if (r != 2 && r != 7) EXPECT_EQ(g.at("z")(r, c), 0.0);
}

TEST(InputRecon, ZeroModelRowCountsAsOrthogonal) {
  const Matrix x = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix z = Matrix::from_rows({{0, 0}, {0, 3}});
  ObjectiveConfig cfg;
  Tape t;
  Var zv = t.parameter("z", z);
  Var loss = input_recon_loss(t.constant(x), std::vector<Var>{zv}, std::vector<NodeId>{0, 1}, cfg);
  EXPECT_NEAR(scalar(loss), 0.5, 1e-15);
  const GradientMap g = t.backward(loss);
  EXPECT_EQ(g.at("z")(0, 0), 0.0);
  EXPECT_EQ(g.at("z")(0, 1), 0.0);
}

TEST(InputRecon, Errors) {
  ObjectiveConfig cfg;
  const Matrix x = random_matrix(4, 3, 1);
  EXPECT_THROW(input_loss(x, {x}, {}, cfg), ValidationError);
  EXPECT_THROW(input_loss(x, {}, {0}, cfg), ValidationError);
  EXPECT_THROW(input_loss(x, {random_matrix(4, 2, 2)}, {0}, cfg), ShapeError);
  Matrix xz = x;
  for (std::size_t c = 0; c < 3; ++c) xz(1, c) = 0.0;
  EXPECT_THROW(input_loss(xz, {x}, {1}, cfg), ValidationError);
  // The zero row is harmless when it is not masked.
  EXPECT_NO_THROW(input_loss(xz, {x}, {0, 2}, cfg));

  cfg.gamma = 0.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = ObjectiveConfig{};
  cfg.lambda_mix = -1;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(LatentPred, Examples) {
  ObjectiveConfig cfg;
  const Matrix a = random_matrix(6, 4, 8);
  Tape t;
  EXPECT_NEAR(scalar(latent_pred_loss(t.constant(a), t.constant(a), cfg)), 0.0, 1e-14);
  const Matrix e1 = Matrix::from_rows({{1, 0}, {0, 2}});
  const Matrix e2 = Matrix::from_rows({{0, 3}, {5, 0}});
  EXPECT_NEAR(scalar(latent_pred_loss(t.constant(e1), t.constant(e2), cfg)), 1.0, 1e-15);
  const Matrix b = random_matrix(6, 4, 9);
  EXPECT_NEAR(scalar(latent_pred_loss(t.constant(a), t.constant(b), cfg)), ref_latent(a, b, 2.0), 1e-12);
  EXPECT_THROW(latent_pred_loss(t.constant(a), t.constant(e1), cfg), ShapeError);
}

TEST(LatentPred, TargetReceivesNoGradient) {
  ObjectiveConfig cfg;
  Tape t;
  Var zb = t.parameter("zbar", random_matrix(5, 3, 1));
  Var xb = t.parameter("xbar", random_matrix(5, 3, 2));
  const GradientMap g = t.backward(latent_pred_loss(zb, xb, cfg));
  EXPECT_GT(max_abs(g.at("zbar")), 0.0);
  EXPECT_EQ(max_abs(g.at("xbar")), 0.0);
}

TEST(CombinedLoss, LambdaMixing) {
  Tape t;
  Var li = t.leaf(Matrix::from_rows({{1.0}}));
  Var ll = t.leaf(Matrix::from_rows({{0.5}}));
  EXPECT_EQ(combined_loss(li, ll, 0.0).id, li.id);
  EXPECT_DOUBLE_EQ(scalar(combined_loss(li, ll, 10.0)), 6.0);
  EXPECT_DOUBLE_EQ(scalar(combined_loss(li, ll, 0.1)), 1.05);
  Tape other;
  EXPECT_THROW(combined_loss(li, other.leaf(Matrix::from_rows({{1.0}})), 1.0), ValidationError);
}

TEST(CombinedLoss, LambdaZeroCutsLatentGradient) {
  Tape t;
  Var a = t.parameter("a", random_matrix(4, 3, 1));
  Var b = t.parameter("b", random_matrix(4, 3, 2));
  ObjectiveConfig cfg;
  Var li = input_recon_loss(t.constant(random_matrix(4, 3, 3)), std::vector<Var>{a}, std::vector<NodeId>{0, 2}, cfg);
  Var ll = latent_pred_loss(b, t.constant(random_matrix(4, 3, 4)), cfg);
  const GradientMap g = t.backward(combined_loss(li, ll, 0.0));
  EXPECT_GT(max_abs(g.at("a")), 0.0);
  EXPECT_EQ(max_abs(g.at("b")), 0.0);
}

TEST(Objective, GradCheck) {
  const Matrix x = random_matrix(8, 4, 21);
  const Matrix target = random_matrix(8, 3, 22);
  const std::vector<NodeId> m = {0, 3, 4, 7};
  ParameterSet ps;
  ps.add("z1", random_matrix(8, 4, 23));
  ps.add("z2", random_matrix(8, 4, 24));
  ps.add("zbar", random_matrix(8, 3, 25));
  for (double gamma : {1.0, 2.0, 3.0}) {
    ObjectiveConfig cfg;
    cfg.gamma = gamma;
    LossBuilder f = [&](Tape& t, const ParameterSet& p) {
      std::vector<Var> views = {t.parameter(p, "z1"), t.parameter(p, "z2")};
      Var li = input_recon_loss(t.constant(x), views, m, cfg);
      Var ll = latent_pred_loss(t.parameter(p, "zbar"), t.constant(target), cfg);
      return combined_loss(li, ll, 0.7);
    };
    const GradCheckReport r = finite_diff_check(f, ps);
    EXPECT_LE(r.max_rel_error, 1e-5) << "gamma " << gamma << " worst " << r.worst_param;
  }
}
