#include <gtest/gtest.h>

#include <cmath>

#include "mapr/error.hpp"
#include "mapr/tensor.hpp"
#include "support.hpp"

using namespace mapr;
using mapr::testing::numeric_gradient;
using mapr::testing::random_values;
using mapr::testing::relative_error;

namespace {

// Gradient of a scalar function of one leaf, by the tape.
std::vector<double> tape_gradient(const std::function<Tensor(const Tensor&)>& f, const Shape& shape,
                                  const std::vector<double>& x) {
  Tensor leaf = Tensor::from(shape, x, true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = f(leaf);
  }
  tape.backward(loss);
  return {leaf.grad().begin(), leaf.grad().end()};
}

void expect_gradcheck(const std::function<Tensor(const Tensor&)>& f, const Shape& shape, std::uint64_t seed,
                      double tol = 1e-5, double lo = -2.0, double hi = 2.0) {
  const auto x = random_values(shape_numel(shape), seed, lo, hi);
  const auto analytic = tape_gradient(f, shape, x);
  const auto numeric = numeric_gradient([&](const std::vector<double>& v) { return f(Tensor::from(shape, v)).item(); }, x,
                                        1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_LT(relative_error(analytic[i], numeric[i], 1e-6), tol) << "index " << i;
  }
}

}  // namespace

TEST(TensorOps, ReluExample) {
  const Tensor r = relu(Tensor::from({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{0, 0, 2}));
}

TEST(TensorOps, SoftmaxOfEqualLogitsIsUniform) {
  const Tensor s = softmax(Tensor::from({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(s.at(0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(1), 0.5);
}

TEST(TensorOps, MatmulIdentity) {
  const auto x = random_values(12, 3);
  const Tensor xt = Tensor::from({4, 3}, x);
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor y = matmul(xt, eye);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.at(i), x[i]);
}

TEST(TensorOps, BroadcastAddOverLeadingAxes) {
  const Tensor a = Tensor::from({2, 2, 3}, std::vector<double>(12, 1.0));
  const Tensor b = Tensor::from({3}, {1, 2, 3});
  const Tensor c = add(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(c.at(5), 4.0);
}

TEST(TensorOps, ShapeMismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4});
  try {
    (void)add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(TensorOps, LogAndSoftmaxRejectNonFinite) {
  EXPECT_THROW((void)log(Tensor::from({2}, {1.0, NAN})), Error);
  EXPECT_THROW((void)softmax(Tensor::from({2}, {INFINITY, 0.0})), Error);
  EXPECT_THROW((void)log_softmax(Tensor::from({2}, {NAN, 0.0})), Error);
}

TEST(TensorOps, CheckFiniteFlagsNan) {
  EXPECT_THROW(Tensor::from({2}, {0.0, NAN}).check_finite("t"), ShapeError);
  EXPECT_NO_THROW(Tensor::from({2}, {0.0, 1.0}).check_finite("t"));
}

TEST(TensorOps, FromRejectsWrongLength) { EXPECT_THROW((void)Tensor::from({2, 2}, {1, 2, 3}), ShapeError); }

TEST(Backward, SumOfSquares) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = sum(mul(x, x));
  }
  tape.backward(loss);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, MaxRoutesToFirstArgmax) {
  Tensor x = Tensor::from({1, 3, 1}, {3, 1, 3}, true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = sum(max_over_axis(x, 1));
  }
  tape.backward(loss);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0}));
}

TEST(Backward, DetachedLossIsAnError) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = sum(x);
  }
  EXPECT_THROW(tape.backward(loss.detach()), Error);
}

TEST(Backward, NonScalarLossIsAnError) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor y;
  {
    Tape::Scope scope(tape);
    y = mul(x, x);
  }
  EXPECT_THROW(tape.backward(y), Error);
}

TEST(Backward, FanOutAccumulates) {
  Tensor x = Tensor::from({2}, {1.5, -2}, true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = sum(add(mul(x, x), scale(x, 3.0)));
  }
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 3);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4 + 3);
}

TEST(Backward, EachOpVisitedOnceInReverse) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = sum(relu(scale(x, 2.0)));
  }
  ASSERT_EQ(tape.size(), 3u);
  // Inputs of every op precede it on the tape.
  for (std::size_t i = 0; i < tape.ops().size(); ++i) {
    for (const auto& in : tape.ops()[i].inputs) {
      if (in->is_leaf) continue;
      bool earlier = false;
      for (std::size_t j = 0; j < i; ++j) earlier = earlier || tape.ops()[j].output == in;
      EXPECT_TRUE(earlier);
    }
  }
  tape.backward(loss);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, NothingRecordedWithoutTapeOrGrad) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = Tensor::from({2}, {1, 2});
  Tape tape;
  {
    Tape::Scope scope(tape);
    (void)mul(y, y);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)mul(x, x);  // no active tape
  EXPECT_EQ(tape.size(), 0u);
}

// Finite-difference checks per differentiable op on inputs in [-2, 2].
TEST(GradCheck, Elementwise) {
  const Tensor w = Tensor::from({2, 3}, random_values(6, 99));
  expect_gradcheck([&](const Tensor& x) { return sum(mul(add(x, w), sub(x, w))); }, {2, 3}, 1);
  expect_gradcheck([](const Tensor& x) { return sum(scale(exp(x), 0.5)); }, {2, 3}, 2);
  expect_gradcheck([](const Tensor& x) { return sum(log(x)); }, {2, 3}, 3, 1e-5, 0.5, 2.0);
}

TEST(GradCheck, ReluAwayFromKink) {
  auto x = random_values(12, 4);
  for (double& v : x)
    if (std::abs(v) < 1e-2) v = 0.5;
  const auto analytic = tape_gradient([](const Tensor& t) { return sum(mul(relu(t), relu(t))); }, {12}, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(analytic[i], x[i] > 0 ? 2 * x[i] : 0.0);
}

TEST(GradCheck, MatmulBothOperands) {
  const Tensor w = Tensor::from({3, 4}, random_values(12, 5));
  expect_gradcheck([&](const Tensor& x) { return sum(mul(matmul(x, w), matmul(x, w))); }, {2, 5, 3}, 6);
  const Tensor a = Tensor::from({2, 3}, random_values(6, 7));
  expect_gradcheck([&](const Tensor& m) { return sum(exp(scale(matmul(a, m), 0.3))); }, {3, 4}, 8);
}

TEST(GradCheck, ReductionsAndSoftmax) {
  expect_gradcheck([](const Tensor& x) { return sum(mul(max_over_axis(x, 1), max_over_axis(x, 1))); }, {2, 4, 3}, 9);
  expect_gradcheck([](const Tensor& x) { return sum(exp(sum_over_axis(x, 1))); }, {2, 3, 2}, 10);
  const Tensor w = Tensor::from({2, 4}, random_values(8, 11));
  expect_gradcheck([&](const Tensor& x) { return sum(mul(softmax(x), w)); }, {2, 4}, 12);
  expect_gradcheck([&](const Tensor& x) { return sum(mul(log_softmax(x), w)); }, {2, 4}, 13);
  expect_gradcheck([](const Tensor& x) { return mean(mul(x, x)); }, {3, 2}, 14);
}

TEST(GradCheck, StructuralOps) {
  const Tensor w = Tensor::from({2, 3, 5}, random_values(30, 15));
  expect_gradcheck(
      [&](const Tensor& x) {
        const Tensor other = Tensor::from({2, 3, 2}, random_values(12, 16));
        return sum(mul(concat_channels(x, other), w));
      },
      {2, 3, 3}, 17);
  expect_gradcheck([](const Tensor& x) { return sum(mul(reshape(x, {3, 2}), reshape(x, {3, 2}))); }, {2, 3}, 18);
  const std::vector<int> idx = {2, 0};
  expect_gradcheck([&](const Tensor& x) { return sum(exp(gather_rows(x, idx))); }, {2, 3}, 19);
  expect_gradcheck([](const Tensor& x) { return sum(exp(clamp_min(x, -0.5))); }, {8}, 20);
}

TEST(GradCheck, FourLayerMlp) {
  // Random 4-layer MLP; checks every weight against central differences.
  const Shape in_shape{5, 4};
  const auto input = random_values(20, 21);
  const std::vector<Shape> shapes = {{4, 6}, {6, 6}, {6, 5}, {5, 3}};
  std::vector<std::vector<double>> weights;
  for (std::size_t l = 0; l < shapes.size(); ++l) weights.push_back(random_values(shape_numel(shapes[l]), 30 + l, -1, 1));

  auto forward = [&](const std::vector<Tensor>& w) {
    Tensor h = Tensor::from(in_shape, input);
    for (std::size_t l = 0; l < w.size(); ++l) {
      h = matmul(h, w[l]);
      if (l + 1 < w.size()) h = relu(h);
    }
    return sum(mul(h, h));
  };

  std::vector<Tensor> leaves;
  for (std::size_t l = 0; l < shapes.size(); ++l) leaves.push_back(Tensor::from(shapes[l], weights[l], true));
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = forward(leaves);
  }
  tape.backward(loss);

  const double h = 1e-4;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    for (std::size_t i = 0; i < weights[l].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Tensor> w;
        for (std::size_t m = 0; m < shapes.size(); ++m) {
          auto v = weights[m];
          if (m == l) v[i] += delta;
          w.push_back(Tensor::from(shapes[m], v));
        }
        return forward(w).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      EXPECT_LT(relative_error(leaves[l].grad()[i], numeric, 1e-6), 1e-5) << "layer " << l << " index " << i;
    }
  }
}

TEST(Properties, BackwardIsLinearInTheLoss) {
  const auto x0 = random_values(6, 40);
  auto grad_of = [&](double a, double b) {
    Tensor x = Tensor::from({6}, x0, true);
    Tape tape;
    Tensor loss;
    {
      Tape::Scope scope(tape);
      const Tensor l1 = sum(mul(x, x));
      const Tensor l2 = sum(exp(x));
      loss = add(scale(l1, a), scale(l2, b));
    }
    tape.backward(loss);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto g1 = grad_of(1, 0);
  const auto g2 = grad_of(0, 1);
  const auto g = grad_of(2.5, -0.75);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], 2.5 * g1[i] - 0.75 * g2[i], 1e-12);
}

TEST(Properties, DeterministicDataAndGrad) {
  auto run = [] {
    Tensor w = Tensor::from({4, 3}, random_values(12, 50), true);
    const Tensor x = Tensor::from({5, 4}, random_values(20, 51));
    Tape tape;
    Tensor loss;
    {
      Tape::Scope scope(tape);
      loss = mean(log_softmax(matmul(x, w)));
    }
    tape.backward(loss);
    return std::make_pair(loss.item(), std::vector<double>(w.grad().begin(), w.grad().end()));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Properties, LeafGradsAccumulateAcrossBackwardCalls) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    Tensor loss;
    {
      Tape::Scope scope(tape);
      loss = sum(x);
    }
    tape.backward(loss);
  }
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad() && x.grad()[0] != 0.0);
}
