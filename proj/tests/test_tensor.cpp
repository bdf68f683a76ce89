// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "mgae/gradcheck.hpp"
#include "mgae/graph_ops.hpp"
#include "mgae/tensor.hpp"
#include "test_util.hpp"

using namespace mgae;
using mgae::testing::random_matrix;

namespace {

constexpr double kGradTol = 1e-4;

/// Contracts `out` against a fixed random weight so every output entry
/// carries a distinct upstream gradient.
Var contract(Tape& tape, const Var& out, std::uint64_t seed = 99) {
  return reduce_sum(hadamard(out, tape.constant(random_matrix(out.rows(), out.cols(), seed))));
}

/// Random parameters named a, b, ... with the given shapes.
ParameterSet params_of(std::initializer_list<std::pair<std::size_t, std::size_t>> shapes, std::uint64_t seed = 1) {
  ParameterSet ps;
  char name = 'a';
  for (auto [r, c] : shapes) ps.add(std::string(1, name++), random_matrix(r, c, seed++));
  return ps;
}

double check(const LossBuilder& f, const ParameterSet& ps) { return finite_diff_check(f, ps).max_rel_error; }

using UnaryOp = std::function<Var(const Var&)>;

double check_unary(const UnaryOp& op, std::size_t r = 4, std::size_t c = 3) {
  return check([&](Tape& t, const ParameterSet& p) { return contract(t, op(t.parameter(p, "a"))); },
               params_of({{r, c}}));
}

}  // namespace

TEST(Tensor, MatmulIdentity) {
  Tape t;
  const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(matmul(t.constant(Matrix::identity(2)), t.constant(m)).value(), m);
}

TEST(Tensor, LeakyReluZeroSlopeIsRelu) {
  Tape t;
  const Matrix out = leaky_relu(t.constant(Matrix::from_rows({{-1, 2}})), 0.0).value();
  EXPECT_EQ(out, Matrix::from_rows({{0, 2}}));
}

TEST(Tensor, L2NormalizeRows) {
  Tape t;
  const Matrix out = l2_normalize_rows(t.constant(Matrix::from_rows({{3, 4}, {0, 0}}))).value();
  EXPECT_DOUBLE_EQ(out(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(out(0, 1), 0.8);
  EXPECT_EQ(out(1, 0), 0.0);
}

TEST(Tensor, ShapeErrors) {
  Tape t;
  Var a = t.constant(Matrix(2, 3));
  Var b = t.constant(Matrix(2, 2));
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(hadamard(a, b), ShapeError);
  EXPECT_THROW(add_row(a, t.constant(Matrix(1, 2))), ShapeError);
  EXPECT_THROW(row_slice(a, std::vector<std::int64_t>{5}), ShapeError);
  EXPECT_THROW(head_mean(a, 2), ShapeError);
}

TEST(Tensor, NonFiniteOutputThrows) {
  Tape t;
  Var a = t.constant(Matrix(1, 1, 10.0));
  EXPECT_THROW(scale(a, 1e308), NumericalError);
}

TEST(Tensor, DanglingAndForeignHandles) {
  Tape t1, t2;
  Var a = t1.leaf(Matrix(1, 1, 1.0));
  Var b = t2.leaf(Matrix(1, 1, 1.0));
  EXPECT_THROW(add(a, b), ValidationError);
  t1.reset();
  EXPECT_THROW(a.value(), ValidationError);
}

TEST(Backward, LinearMap) {
  Tape t;
  Var w = t.parameter("w", Matrix::from_rows({{0.5, -1.0}}));
  Var x = t.constant(Matrix::from_rows({{1.0}, {2.0}}));
  GradientMap g = t.backward(reduce_sum(matmul(w, x)));
  EXPECT_EQ(g.at("w"), Matrix::from_rows({{1.0, 2.0}}));
}

TEST(Backward, IndependentParameterGetsZero) {
  Tape t;
  Var p = t.parameter("p", Matrix(2, 2, 3.0));
  Var q = t.parameter("q", Matrix(1, 1, 2.0));
  GradientMap g = t.backward(reduce_sum(scale(q, 3.0)));
  EXPECT_EQ(g.at("p"), Matrix(2, 2));
  EXPECT_EQ(g.at("q"), Matrix(1, 1, 3.0));
  (void)p;
}

TEST(Backward, NonScalarLossAndReset) {
  Tape t;
  Var p = t.parameter("p", Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(p), ShapeError);
  Var l = reduce_sum(p);
  t.backward(l);
  EXPECT_EQ(t.size(), 0u);
  EXPECT_THROW(l.value(), ValidationError);
}

TEST(Backward, LinearityOverLossSum) {
  const ParameterSet ps = params_of({{3, 4}, {4, 2}});
  auto first = [](Tape& t, const ParameterSet& p) {
    return contract(t, elu(matmul(t.parameter(p, "a"), t.parameter(p, "b"))), 5);
  };
  auto second = [](Tape& t, const ParameterSet& p) {
    return reduce_sum(hadamard(t.parameter(p, "a"), t.parameter(p, "a")));
  };
  Tape t1, t2, t3;
  GradientMap g1 = t1.backward(first(t1, ps));
  GradientMap g2 = t2.backward(second(t2, ps));
  GradientMap g12 = t3.backward(add(first(t3, ps), second(t3, ps)));
  for (const auto& [name, g] : g12) {
    Matrix expect = g1.at(name);
    if (g2.count(name)) expect += g2.at(name);
    EXPECT_LT(mgae::testing::max_abs_diff(g, expect), 1e-12) << name;
  }
}

TEST(Backward, ReplayIsBitIdentical) {
  const ParameterSet ps = params_of({{5, 3}});
  auto run = [&] {
    Tape t;
    std::mt19937_64 rng(4);
    return dropout(elu(t.parameter(ps, "a")), 0.5, true, rng).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, Quadratic) {
  const ParameterSet ps = params_of({{3, 3}});
  // Central differences are exact on quadratics, so a wide step only
  // trades away rounding error.
  GradCheckOptions opts;
  opts.step = 1e-3;
  const double err = finite_diff_check([](Tape& t, const ParameterSet& p) {
    Var a = t.parameter(p, "a");
    return reduce_sum(hadamard(a, a));
  }, ps, opts).max_rel_error;
  EXPECT_LE(err, 1e-9);
}

TEST(GradCheck, RejectsNonDeterministicLoss) {
  const ParameterSet ps = params_of({{2, 2}});
  int calls = 0;
  LossBuilder f = [&](Tape& t, const ParameterSet& p) {
    return scale(reduce_sum(t.parameter(p, "a")), 1.0 + 0.1 * ++calls);
  };
  EXPECT_THROW(finite_diff_check(f, ps), ValidationError);
}

TEST(GradCheck, TwoLayerNetwork) {
  const ParameterSet ps = params_of({{6, 5}, {5, 4}, {1, 5}, {4, 3}});
  const Matrix x = random_matrix(7, 6, 40);
  const double err = check([&](Tape& t, const ParameterSet& p) {
    Var h = add_row(matmul(t.constant(x), t.parameter(p, "a")), t.parameter(p, "c"));
    h = elu(matmul(h, t.parameter(p, "b")));
    return contract(t, matmul(h, t.parameter(p, "d")));
  }, ps);
  EXPECT_LE(err, kGradTol);
}

TEST(GradCheck, BinaryOps) {
  const ParameterSet ps = params_of({{4, 3}, {4, 3}, {3, 2}, {1, 3}});
  using Bin = std::function<Var(Tape&, const ParameterSet&)>;
  const std::vector<std::pair<const char*, Bin>> cases = {
      {"matmul", [](Tape& t, const ParameterSet& p) { return matmul(t.parameter(p, "a"), t.parameter(p, "c")); }},
      {"add", [](Tape& t, const ParameterSet& p) { return add(t.parameter(p, "a"), t.parameter(p, "b")); }},
      {"sub", [](Tape& t, const ParameterSet& p) { return sub(t.parameter(p, "a"), t.parameter(p, "b")); }},
      {"hadamard", [](Tape& t, const ParameterSet& p) { return hadamard(t.parameter(p, "a"), t.parameter(p, "b")); }},
      {"add_row", [](Tape& t, const ParameterSet& p) { return add_row(t.parameter(p, "a"), t.parameter(p, "d")); }},
      {"mul_row", [](Tape& t, const ParameterSet& p) { return mul_row(t.parameter(p, "a"), t.parameter(p, "d")); }},
      {"rowwise_dot",
       [](Tape& t, const ParameterSet& p) { return rowwise_dot(t.parameter(p, "a"), t.parameter(p, "b")); }},
      {"concat_cols",
       [](Tape& t, const ParameterSet& p) {
         const std::vector<Var> parts = {t.parameter(p, "a"), t.parameter(p, "b")};
         return concat_cols(parts);
       }},
      {"replace_rows",
       [](Tape& t, const ParameterSet& p) {
         return replace_rows(t.parameter(p, "a"), std::vector<std::int64_t>{1, 3}, t.parameter(p, "d"));
       }},
  };
  for (const auto& [name, op] : cases) {
    const double err = check([&](Tape& t, const ParameterSet& p) { return contract(t, op(t, p)); }, ps);
    EXPECT_LE(err, kGradTol) << name;
  }
}

TEST(GradCheck, UnaryOps) {
  EXPECT_LE(check_unary([](const Var& a) { return scale(a, -2.5); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return add_scalar(a, 0.7); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return leaky_relu(a, 0.2); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return elu(a); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return l2_normalize_rows(a); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return pow_nonneg(add_scalar(a, 1.5), 2.0); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return pow_nonneg(add_scalar(a, 1.5), 1.0); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return reduce_mean(a); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return row_slice(a, std::vector<std::int64_t>{2, 0, 2}); }), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return head_mean(a, 3); }, 4, 6), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) { return head_columns(a, 2); }, 1, 6), kGradTol);
  EXPECT_LE(check_unary([](const Var& a) {
              std::mt19937_64 rng(8);
              return dropout(a, 0.4, true, rng);
            }),
            kGradTol);
}

TEST(GradCheck, PreluBothInputs) {
  ParameterSet ps = params_of({{4, 3}});
  ps.add("s", Matrix(1, 1, 0.3));
  const double err = check([](Tape& t, const ParameterSet& p) {
    return contract(t, prelu(t.parameter(p, "a"), t.parameter(p, "s")));
  }, ps);
  EXPECT_LE(err, kGradTol);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  const ParameterSet ps = params_of({{5, 3}});
  const std::vector<int> labels = {0, 2, 1, 1, 0};
  const double err = check([&](Tape& t, const ParameterSet& p) {
    return softmax_cross_entropy(t.parameter(p, "a"), labels, std::vector<std::int64_t>{0, 1, 3});
  }, ps);
  EXPECT_LE(err, kGradTol);
}

TEST(HeadOps, ValuesMatchDefinition) {
  Tape t;
  const Matrix x = Matrix::from_rows({{1, 2, 3, 4, 5, 6}});
  EXPECT_EQ(head_mean(t.constant(x), 3).value(), Matrix::from_rows({{3, 4}}));
  const Matrix hc = head_columns(t.constant(x), 2).value();
  EXPECT_EQ(hc, Matrix::from_rows({{1, 0}, {2, 0}, {3, 0}, {0, 4}, {0, 5}, {0, 6}}));
}

TEST(Dropout, InvertedScalingAndIdentityAtEval) {
  Tape t;
  std::mt19937_64 rng(1);
  Var x = t.constant(Matrix(200, 50, 1.0));
  EXPECT_EQ(dropout(x, 0.5, false, rng).id, x.id);
  const Matrix y = dropout(x, 0.5, true, rng).value();
  double sum = 0.0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    sum += v;
  }
  EXPECT_NEAR(sum / static_cast<double>(y.size()), 1.0, 0.05);
}

namespace {

/// One node with `k` neighbours (CSR row 0), plus k leaf rows with self-loops.
Graph fan_in_graph(std::size_t k) {
  std::vector<std::size_t> off = {0, k};
  std::vector<NodeId> col;
  for (std::size_t j = 0; j < k; ++j) col.push_back(static_cast<NodeId>(j + 1));
  for (std::size_t j = 0; j < k; ++j) {
    off.push_back(off.back() + 1);
    col.push_back(static_cast<NodeId>(j + 1));
  }
  return Graph(static_cast<NodeId>(k + 1), off, col, false);
}

}  // namespace

TEST(NeighborSoftmax, UniformScoresGiveMean) {
  const Graph g = fan_in_graph(2);
  Tape t;
  Var s = t.constant(Matrix(4, 1));
  Var v = t.constant(Matrix::from_rows({{0, 0}, {1, 5}, {3, 7}}));
  const Matrix out = neighbor_softmax_aggregate(g, s, v).value();
  EXPECT_DOUBLE_EQ(out(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 6.0);
}

TEST(NeighborSoftmax, SelfLoopOnlyIsIdentity) {
  const Graph g(2, {0, 1, 2}, {0, 1}, false);
  Tape t;
  const Matrix vals = Matrix::from_rows({{1.5, -2}, {3, 4}});
  const Matrix out = neighbor_softmax_aggregate(g, t.constant(Matrix::from_rows({{7}, {-3}})), t.constant(vals)).value();
  EXPECT_EQ(out, vals);
}

TEST(NeighborSoftmax, HandSoftmaxOneTwoFour) {
  const Graph g = fan_in_graph(3);
  Tape t;
  Matrix s(6, 1);
  s(0, 0) = 0.0;
  s(1, 0) = std::log(2.0);
  s(2, 0) = std::log(4.0);
  Var v = t.constant(Matrix::from_rows({{0}, {1}, {2}, {3}}));
  const Matrix out = neighbor_softmax_aggregate(g, t.constant(s), v).value();
  EXPECT_NEAR(out(0, 0), 17.0 / 7.0, 1e-14);
}

TEST(NeighborSoftmax, Errors) {
  const Graph isolated(2, {0, 1, 1}, {0}, false);
  Tape t;
  EXPECT_THROW(neighbor_softmax_aggregate(isolated, t.constant(Matrix(1, 1)), t.constant(Matrix(2, 1))),
               ValidationError);
  const Graph g(2, {0, 1, 2}, {0, 1}, false);
  EXPECT_THROW(neighbor_softmax_aggregate(g, t.constant(Matrix(3, 1)), t.constant(Matrix(2, 1))), ShapeError);
}

TEST(NeighborSoftmax, GradCheckMultiHead) {
  const Graph g = add_self_loops(mgae::testing::connected_random_graph(7, 0.3, 3));
  ParameterSet ps;
  ps.add("s", random_matrix(g.num_edges(), 2, 11, -2.0, 2.0));
  ps.add("v", random_matrix(7, 6, 12));
  const double err = check([&](Tape& t, const ParameterSet& p) {
    return contract(t, neighbor_softmax_aggregate(g, t.parameter(p, "s"), t.parameter(p, "v")));
  }, ps);
  EXPECT_LE(err, kGradTol);

  const double err_drop = check([&](Tape& t, const ParameterSet& p) {
    std::mt19937_64 rng(21);
    return contract(t, neighbor_softmax_aggregate(g, t.parameter(p, "s"), t.parameter(p, "v"), 0.3, true, &rng));
  }, ps);
  EXPECT_LE(err_drop, kGradTol);
}
