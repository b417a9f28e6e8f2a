#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "salign/ad/gradcheck.hpp"
#include "salign/ad/ops.hpp"
#include "salign/error.hpp"

using namespace salign;
using namespace salign::ad;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Contract a result with fixed random weights so every output coordinate
// contributes to the checked scalar.
Var weighted_sum(Tape& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var w = tape.constant(random_tensor(rng, y.shape()));
  return sum(mul(y, w));
}

constexpr double kEps = 1e-4;
constexpr double kTol = 1e-5;
constexpr int kInstances = 20;

}  // namespace

TEST(Softmax, SymmetricInputIsUniform) {
  Tape t;
  Var y = softmax(t.leaf(Tensor::vector({0.0, 0.0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
}

TEST(Softmax, MatchesScalarOracle) {
  // exp / sum written out without the library.
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  const double z = e1 + e2 + e3;
  Tape t;
  Var y = softmax(t.leaf(Tensor::vector({1.0, 2.0, 3.0})));
  EXPECT_NEAR(y.value()[0], e1 / z, 1e-12);
  EXPECT_NEAR(y.value()[1], e2 / z, 1e-12);
  EXPECT_NEAR(y.value()[2], e3 / z, 1e-12);
}

TEST(Softmax, RowsAreDistributions) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    Tape t;
    Var y = softmax(t.leaf(random_tensor(rng, Shape{4, 7}, -30.0, 30.0)));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(y.value().at(r, j), 0.0);
        s += y.value().at(r, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tape t;
  Var y = softmax(t.leaf(Tensor::vector({1000.0, 0.0, -1000.0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 1.0);
  EXPECT_EQ(y.value()[2], 0.0);
}

TEST(RowLookup, ZeroTableAndSparseBackward) {
  Tape t;
  Var table = t.leaf(Tensor(Shape{3, 2}));
  Var r = row_lookup(table, 1);
  EXPECT_EQ(r.shape(), (Shape{2}));
  EXPECT_EQ(r.value()[0], 0.0);
  EXPECT_EQ(r.value()[1], 0.0);
  auto g = backward(t, sum(r));
  const Tensor& dt = g[table];
  EXPECT_EQ(dt.storage(), (std::vector<double>{0, 0, 1, 1, 0, 0}));
}

TEST(Backward, SumOfVector) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2, 3, 4}));
  auto g = backward(t, sum(x));
  EXPECT_EQ(g[x].storage(), (std::vector<double>{1, 1, 1, 1}));
}

TEST(Backward, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 10; ++k) {
    Tape t;
    Var z = t.leaf(random_tensor(rng, Shape{6}, -3, 3));
    const std::size_t cls = static_cast<std::size_t>(k % 6);
    Var loss = scale(pick(log_softmax(z), cls), -1.0);
    auto g = backward(t, loss);
    double zmax = z.value()[0];
    for (double v : z.value().data()) zmax = std::max(zmax, v);
    double total = 0.0;
    for (double v : z.value().data()) total += std::exp(v - zmax);
    for (std::size_t i = 0; i < 6; ++i) {
      const double p = std::exp(z.value()[i] - zmax) / total;
      EXPECT_NEAR(g[z][i], p - (i == cls ? 1.0 : 0.0), 1e-12);
    }
  }
}

TEST(Backward, NonScalarOutputIsRejected) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(backward(t, x), ContractError);
}

TEST(Backward, EmptyTapeGivesEmptyStore) {
  Tape t;
  EXPECT_TRUE(backward(t, Var{}).empty());
}

TEST(Backward, UnusedLeafHasZeroGradient) {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}));
  Var unused = t.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  auto g = backward(t, sum(tanh(x)));
  EXPECT_EQ(g[unused], Tensor(Shape{2, 2}));
  EXPECT_EQ(g[unused].shape(), unused.shape());
}

TEST(Backward, GradientsAccumulateOverConsumers) {
  // y = tanh(u) + u*u; dy/du = (1 - tanh^2) + 2u
  Tape t;
  Var u = t.leaf(Tensor::vector({0.3, -0.7}));
  Var y = sum(add(tanh(u), mul(u, u)));
  auto g = backward(t, y);
  for (std::size_t i = 0; i < 2; ++i) {
    const double v = u.value()[i];
    const double th = std::tanh(v);
    EXPECT_NEAR(g[u][i], 1.0 - th * th + 2.0 * v, 1e-14);
  }
}

TEST(Backward, IsDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(5);
    Tape t;
    Var a = t.leaf(random_tensor(rng, Shape{3, 4}));
    Var b = t.leaf(random_tensor(rng, Shape{4, 5}));
    Var y = sum(softmax(tanh(matmul(a, b))));
    auto g = backward(t, weighted_sum(t, softmax(matmul(a, b)), 9));
    return std::make_pair(y.value().item(), g[a].storage());
  };
  EXPECT_EQ(run(), run());
}

TEST(Ops, ShapeMismatchNamesPrimitive) {
  Tape t;
  Var a = t.leaf(Tensor(Shape{2, 3}));
  Var b = t.leaf(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, t.leaf(Tensor(Shape{3, 2}))), ShapeError);
}

TEST(Ops, NonFiniteOutputIsReported) {
  Tape t;
  Var x = t.leaf(Tensor::vector({800.0}));
  EXPECT_THROW(salign::ad::exp(x), NumericError);
  EXPECT_THROW(salign::ad::log(t.leaf(Tensor::vector({0.0}))), NumericError);
}

TEST(GradCheck, Quadratic) {
  ScalarFunction f = [](Tape&, Var x) { return sum(mul(x, x)); };
  EXPECT_LT(finite_difference_check(f, Tensor::vector({3.0}), 1e-4), 1e-8);
}

TEST(GradCheck, ConstantFunction) {
  ScalarFunction f = [](Tape& t, Var) { return sum(t.constant(Tensor::vector({2.0, 5.0}))); };
  EXPECT_LT(finite_difference_check(f, Tensor::vector({1.0, -1.0}), 1e-4), 1e-8);
}

TEST(GradCheck, RejectsNonDeterministicFunction) {
  int calls = 0;
  ScalarFunction f = [&calls](Tape& t, Var x) {
    ++calls;
    return sum(scale(x, static_cast<double>(calls)));
  };
  EXPECT_THROW(finite_difference_check(f, Tensor::vector({1.0}), 1e-4), OracleInvalid);
  EXPECT_THROW(finite_difference_check([](Tape&, Var x) { return sum(x); },
                                       Tensor::vector({1.0}), 0.0),
               ContractError);
}

// Every primitive, checked against central differences on random instances.
class PrimitiveGradient : public ::testing::Test {
 protected:
  void check(const char* name, Shape shape, const ScalarFunction& f, double lo = -1.0,
             double hi = 1.0) {
    std::mt19937_64 rng(std::hash<std::string>{}(name));
    for (int k = 0; k < kInstances; ++k) {
      const Tensor point = random_tensor(rng, shape, lo, hi);
      const double err = finite_difference_check(f, point, kEps);
      EXPECT_LT(err, kTol) << name << " instance " << k;
    }
  }
};

TEST_F(PrimitiveGradient, MatMulBothSides) {
  std::mt19937_64 rng(1);
  const Tensor b = random_tensor(rng, Shape{4, 3});
  const Tensor a = random_tensor(rng, Shape{2, 4});
  check("matmul-lhs", Shape{2, 4}, [&](Tape& t, Var x) {
    return weighted_sum(t, matmul(x, t.constant(b)), 1);
  });
  check("matmul-rhs", Shape{4, 3}, [&](Tape& t, Var x) {
    return weighted_sum(t, matmul(t.constant(a), x), 2);
  });
  check("matvec", Shape{4}, [&](Tape& t, Var x) {
    return weighted_sum(t, matmul(x, t.constant(b)), 3);
  });
}

TEST_F(PrimitiveGradient, Elementwise) {
  std::mt19937_64 rng(2);
  const Tensor other = random_tensor(rng, Shape{3, 3});
  check("add", Shape{3, 3}, [&](Tape& t, Var x) { return weighted_sum(t, add(x, t.constant(other)), 4); });
  check("sub", Shape{3, 3}, [&](Tape& t, Var x) { return weighted_sum(t, sub(t.constant(other), x), 5); });
  check("mul", Shape{3, 3}, [&](Tape& t, Var x) { return weighted_sum(t, mul(x, t.constant(other)), 6); });
  check("mul-self", Shape{3, 3}, [&](Tape& t, Var x) { return weighted_sum(t, mul(x, x), 7); });
  check("scale", Shape{5}, [&](Tape& t, Var x) { return weighted_sum(t, scale(x, -2.5), 8); });
}

TEST_F(PrimitiveGradient, RowBroadcast) {
  std::mt19937_64 rng(3);
  const Tensor m = random_tensor(rng, Shape{3, 4});
  const Tensor r = random_tensor(rng, Shape{4});
  check("add_row-matrix", Shape{3, 4}, [&](Tape& t, Var x) { return weighted_sum(t, add_row(x, t.constant(r)), 9); });
  check("add_row-row", Shape{4}, [&](Tape& t, Var x) { return weighted_sum(t, add_row(t.constant(m), x), 10); });
  check("mul_row-matrix", Shape{3, 4}, [&](Tape& t, Var x) { return weighted_sum(t, mul_row(x, t.constant(r)), 11); });
  check("mul_row-row", Shape{4}, [&](Tape& t, Var x) { return weighted_sum(t, mul_row(t.constant(m), x), 12); });
}

TEST_F(PrimitiveGradient, Nonlinearities) {
  check("tanh", Shape{2, 5}, [](Tape& t, Var x) { return weighted_sum(t, tanh(x), 13); }, -2, 2);
  check("sigmoid", Shape{2, 5}, [](Tape& t, Var x) { return weighted_sum(t, sigmoid(x), 14); }, -3, 3);
  check("exp", Shape{6}, [](Tape& t, Var x) { return weighted_sum(t, salign::ad::exp(x), 15); });
  check("log", Shape{6}, [](Tape& t, Var x) { return weighted_sum(t, salign::ad::log(x), 16); }, 0.5, 2.0);
  // Kink at zero is avoided by shifting the sampled range away from it.
  check("relu", Shape{6}, [](Tape& t, Var x) {
    Var shifted = add(x, t.constant(Tensor::vector({0.5, -0.5, 0.5, -0.5, 0.5, -0.5})));
    return weighted_sum(t, relu(shifted), 17);
  }, -0.4, 0.4);
}

TEST_F(PrimitiveGradient, Normalizers) {
  check("softmax", Shape{3, 4}, [](Tape& t, Var x) { return weighted_sum(t, softmax(x), 18); }, -2, 2);
  check("log_softmax", Shape{3, 4}, [](Tape& t, Var x) { return weighted_sum(t, log_softmax(x), 19); }, -2, 2);
  check("layer_norm", Shape{3, 6}, [](Tape& t, Var x) { return weighted_sum(t, layer_norm(x), 20); });
}

TEST_F(PrimitiveGradient, IndexingAndLayout) {
  const std::vector<std::size_t> ids = {2, 0, 2};
  check("row_lookup", Shape{3, 4}, [](Tape& t, Var x) { return weighted_sum(t, row_lookup(x, 1), 21); });
  check("gather_rows", Shape{3, 4}, [&](Tape& t, Var x) { return weighted_sum(t, gather_rows(x, ids), 22); });
  check("stack_rows", Shape{4}, [](Tape& t, Var x) {
    Var y = stack_rows({x, tanh(x), x});
    return weighted_sum(t, y, 23);
  });
  check("concat", Shape{2, 3}, [](Tape& t, Var x) { return weighted_sum(t, concat({x, sigmoid(x)}), 24); });
  check("slice_rows", Shape{4, 3}, [](Tape& t, Var x) { return weighted_sum(t, slice_rows(x, 1, 3), 25); });
  check("row", Shape{4, 3}, [](Tape& t, Var x) { return weighted_sum(t, row(x, 2), 26); });
  check("slice_cols", Shape{3, 5}, [](Tape& t, Var x) { return weighted_sum(t, slice_cols(x, 1, 4), 27); });
  check("transpose", Shape{2, 5}, [](Tape& t, Var x) { return weighted_sum(t, transpose(x), 28); });
  check("reshape", Shape{2, 6}, [](Tape& t, Var x) { return weighted_sum(t, reshape(x, Shape{3, 4}), 29); });
}

TEST_F(PrimitiveGradient, Reductions) {
  check("sum", Shape{3, 3}, [](Tape&, Var x) { return sum(tanh(x)); });
  check("mean", Shape{3, 3}, [](Tape&, Var x) { return mean(mul(x, x)); });
  check("mean_rows", Shape{4, 3}, [](Tape& t, Var x) { return weighted_sum(t, mean_rows(x), 30); });
  check("pick", Shape{3, 3}, [](Tape&, Var x) { return pick(softmax(x), 4); });
}

TEST_F(PrimitiveGradient, RandomComposedGraph) {
  // Random five-node graphs mixing tanh, matmul and softmax.
  std::mt19937_64 rng(99);
  for (int k = 0; k < kInstances; ++k) {
    const Tensor w1 = random_tensor(rng, Shape{4, 5});
    const Tensor w2 = random_tensor(rng, Shape{5, 3});
    const std::size_t target = static_cast<std::size_t>(k % 3);
    ScalarFunction f = [&](Tape& t, Var x) {
      Var h = tanh(matmul(x, t.constant(w1)));
      Var p = softmax(matmul(h, t.constant(w2)));
      return salign::ad::log(pick(p, target));
    };
    EXPECT_LT(finite_difference_check(f, random_tensor(rng, Shape{4}), kEps), kTol);
  }
}
