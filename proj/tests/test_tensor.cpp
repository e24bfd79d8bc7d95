#include <cmath>

#include <gtest/gtest.h>

#include "aesth/gradcheck.hpp"
#include "aesth/layers.hpp"
#include "aesth/reference.hpp"
#include "test_util.hpp"

using namespace aesth;
using aesth::test::max_abs_diff;
using aesth::test::random_tensor;

TEST(Matmul, IdentityAndZero) {
  Rng rng(1);
  const Tensord a = random_tensor({3, 4}, rng);
  Tensord eye({4, 4});
  eye.matrix().setIdentity();
  EXPECT_EQ(matmul(a, eye), a);
  const Tensord z = matmul(a, Tensord({4, 2}));
  EXPECT_EQ(z.shape(), (Shape{3, 2}));
  EXPECT_EQ(z.values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Matmul, MatchesNaiveLoops) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const Index m = rng.uniform_int(1, 6), k = rng.uniform_int(1, 6), n = rng.uniform_int(1, 6);
    const Tensord a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    EXPECT_LE(max_abs_diff(matmul(a, b), reference::matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, InnerExtentMismatchThrows) {
  EXPECT_THROW(matmul(Tensord({2, 3}), Tensord({2, 3})), DimensionError);
}

TEST(Tensor, ZeroExtentAndRankChecks) {
  EXPECT_NO_THROW(Tensord({3, 0}));
  EXPECT_THROW(Tensord(Shape{}), DimensionError);
  EXPECT_THROW(Tensord({1, 1, 1, 1, 1}), DimensionError);
  EXPECT_THROW(Tensord({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(3);
  const Tensord x = random_tensor({2, 3, 5, 4}, rng);
  Tensord w({3, 3, 1, 1});
  for (Index c = 0; c < 3; ++c) w(c, c, 0, 0) = 1.0;
  EXPECT_EQ(conv2d_forward(x, w, Tensord({3}), {}), x);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  Rng rng(4);
  const Tensord x = random_tensor({1, 2, 6, 6}, rng);
  const Tensord y = conv2d_forward(x, Tensord({1, 2, 3, 3}), Tensord({1}, {7.0}), {1, 1});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 6, 6}));
  for (Index i = 0; i < y.size(); ++i) EXPECT_EQ(y.values()[i], 7.0);
}

TEST(Conv2d, StrideTwoMatchesOracle) {
  Rng rng(5);
  const Tensord x = random_tensor({2, 3, 8, 8}, rng);
  const Tensord w = random_tensor({4, 3, 3, 3}, rng);
  const Tensord b = random_tensor({4}, rng);
  const Tensord y = conv2d_forward(x, w, b, {2, 1});
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  EXPECT_LE(max_abs_diff(y, reference::conv2d(x, w, b, 2, 1)), 1e-12);
}

TEST(Conv2d, RandomInstancesMatchOracle) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const Index n = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
    const Index k = 2 * rng.uniform_int(0, 1) + 1, stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
    const Index h = rng.uniform_int(k, 9), w = rng.uniform_int(k, 9);
    const Tensord x = random_tensor({n, cin, h, w}, rng);
    const Tensord wt = random_tensor({cout, cin, k, k}, rng);
    const Tensord b = random_tensor({cout}, rng);
    EXPECT_LE(max_abs_diff(conv2d_forward(x, wt, b, {stride, pad}), reference::conv2d(x, wt, b, stride, pad)),
              1e-12);
  }
}

TEST(Conv2d, BiasGradientIsChannelSum) {
  Rng rng(7);
  const Tensord x = random_tensor({2, 2, 6, 6}, rng);
  Conv2dContext<double> ctx;
  const Tensord y = conv2d_forward(x, random_tensor({3, 2, 3, 3}, rng), Tensord({3}), {1, 1}, &ctx);
  const Tensord go = random_tensor(y.shape(), rng);
  const auto g = conv2d_backward(ctx, go);
  for (Index c = 0; c < 3; ++c) {
    double sum = 0;
    for (Index n = 0; n < 2; ++n)
      for (Index i = 0; i < 6; ++i)
        for (Index j = 0; j < 6; ++j) sum += go(n, c, i, j);
    EXPECT_NEAR(g.bias(c), sum, 1e-12);
  }
}

TEST(Conv2d, GradientsPassFiniteDifferences) {
  Rng rng(8);
  const Tensord x = random_tensor({2, 2, 5, 5}, rng);
  const Tensord w = random_tensor({3, 2, 3, 3}, rng);
  const Tensord b = random_tensor({3}, rng);
  const Tensord go = random_tensor({2, 3, 3, 3}, rng);
  const ConvGeometry geom{2, 1};
  auto loss = [&](const Tensord& xx, const Tensord& ww, const Tensord& bb) {
    return conv2d_forward(xx, ww, bb, geom).values().dot(go.values());
  };
  Conv2dContext<double> ctx;
  conv2d_forward(x, w, b, geom, &ctx);
  const auto g = conv2d_backward(ctx, go);
  auto fx = [&](const Tensord& v, Tensord* grad) {
    if (grad) *grad = g.input;
    return loss(v, w, b);
  };
  auto fw = [&](const Tensord& v, Tensord* grad) {
    if (grad) *grad = g.weight;
    return loss(x, v, b);
  };
  auto fb = [&](const Tensord& v, Tensord* grad) {
    if (grad) *grad = g.bias;
    return loss(x, w, v);
  };
  EXPECT_LE(gradcheck(fx, x).max_rel_error, 1e-6);
  EXPECT_LE(gradcheck(fw, w).max_rel_error, 1e-6);
  EXPECT_LE(gradcheck(fb, b).max_rel_error, 1e-6);
}

TEST(Conv2d, BackwardWithoutForwardThrows) {
  Conv2dContext<double> ctx;
  EXPECT_THROW(conv2d_backward(ctx, Tensord({1, 1, 1, 1})), UsageError);
}

TEST(MaxPool2d, IotaPicksBottomRight) {
  Tensord x({1, 1, 4, 4});
  for (Index i = 0; i < 16; ++i) x.values()[i] = static_cast<double>(i);
  const Tensord y = maxpool2d_forward(x, 2, 2);
  EXPECT_EQ(y, Tensord({1, 1, 2, 2}, {5.0, 7.0, 13.0, 15.0}));
}

TEST(MaxPool2d, RandomInstancesMatchOracle) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const Index win = rng.uniform_int(1, 3), stride = rng.uniform_int(1, 3);
    const Tensord x = random_tensor({rng.uniform_int(1, 2), rng.uniform_int(1, 3), rng.uniform_int(win, 9),
                                     rng.uniform_int(win, 9)},
                                    rng);
    EXPECT_EQ(maxpool2d_forward(x, win, stride), reference::maxpool2d(x, win, stride));
  }
}

TEST(MaxPool2d, TiesGoToFirstInScanOrder) {
  const Tensord x({1, 1, 2, 2}, {3.0, 3.0, 3.0, 3.0});
  MaxPoolContext<double> ctx;
  maxpool2d_forward(x, 2, 2, &ctx);
  const Tensord g = maxpool2d_backward(ctx, Tensord({1, 1, 1, 1}, {1.0}));
  EXPECT_EQ(g, Tensord({1, 1, 2, 2}, {1.0, 0.0, 0.0, 0.0}));
}

TEST(MaxPool2d, OverlappingWindowsAccumulate) {
  // 3x3 plane with its maximum in the centre, window 2 stride 1: all four
  // windows pick the centre, which collects the four upstream gradients.
  Tensord x({1, 1, 3, 3});
  x(0, 0, 1, 1) = 10.0;
  MaxPoolContext<double> ctx;
  maxpool2d_forward(x, 2, 1, &ctx);
  const Tensord g = maxpool2d_backward(ctx, Tensord({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
  EXPECT_EQ(g(0, 0, 1, 1), 10.0);
  EXPECT_EQ(g.values().sum(), 10.0);
}

TEST(MaxPool2d, WindowLargerThanInputThrows) {
  EXPECT_THROW(maxpool2d_forward(Tensord({1, 1, 2, 2}), 3, 1), DimensionError);
}

TEST(Affine, IdentityWeightsPassThrough) {
  Rng rng(10);
  const Tensord x = random_tensor({3, 4}, rng);
  Tensord w({4, 4});
  w.matrix().setIdentity();
  EXPECT_EQ(affine_forward(x, w, Tensord({4})), x);
}

TEST(Affine, GradientsPassFiniteDifferences) {
  Rng rng(11);
  const Tensord x = random_tensor({3, 5}, rng), w = random_tensor({5, 2}, rng), b = random_tensor({2}, rng);
  const Tensord go = random_tensor({3, 2}, rng);
  AffineContext<double> ctx;
  affine_forward(x, w, b, &ctx);
  const auto g = affine_backward(ctx, go);
  auto fx = [&](const Tensord& v, Tensord* grad) {
    if (grad) *grad = g.input;
    return affine_forward(v, w, b).values().dot(go.values());
  };
  auto fw = [&](const Tensord& v, Tensord* grad) {
    if (grad) *grad = g.weight;
    return affine_forward(x, v, b).values().dot(go.values());
  };
  EXPECT_LE(gradcheck(fx, x).max_rel_error, 1e-6);
  EXPECT_LE(gradcheck(fw, w).max_rel_error, 1e-6);
}

TEST(Relu, ForwardAndSubgradient) {
  const Tensord x({1, 4}, {-2.0, 0.0, 0.5, 3.0});
  ReluContext<double> ctx;
  EXPECT_EQ(relu_forward(x, &ctx), Tensord({1, 4}, {0.0, 0.0, 0.5, 3.0}));
  EXPECT_EQ(relu_backward(ctx, Tensord({1, 4}, 1.0)), Tensord({1, 4}, {0.0, 0.0, 1.0, 1.0}));
}

TEST(Softmax, EqualLogitsGiveUniform) {
  const Tensord p = softmax_forward(Tensord({1, 3}));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(p(0, i), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    const Tensord c = random_tensor({3, 10}, rng, -20.0, 20.0);
    Tensord shifted = c;
    shifted.values().array() += rng.uniform(-50.0, 50.0);
    const Tensord p = softmax_forward(c), q = softmax_forward(shifted);
    for (Index r = 0; r < 3; ++r) EXPECT_NEAR(p.matrix().row(r).sum(), 1.0, 1e-12);
    EXPECT_LE(max_abs_diff(p, q), 1e-12);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Tensord p = softmax_forward(Tensord({1, 2}, {1000.0, 0.0}));
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p(0, 0), 1.0, 1e-15);
}

TEST(Softmax, NonFiniteLogitThrows) {
  EXPECT_THROW(softmax_forward(Tensord({1, 2}, {NAN, 0.0})), NumericError);
}

TEST(Softmax, GradientPassesFiniteDifferences) {
  Rng rng(13);
  const Tensord c = random_tensor({2, 6}, rng, -2.0, 2.0);
  const Tensord go = random_tensor({2, 6}, rng);
  SoftmaxContext<double> ctx;
  softmax_forward(c, &ctx);
  const Tensord g = softmax_backward(ctx, go);
  auto f = [&](const Tensord& v, Tensord* grad) {
    if (grad) *grad = g;
    return softmax_forward(v).values().dot(go.values());
  };
  EXPECT_LE(gradcheck(f, c).max_rel_error, 1e-6);
}

TEST(Concat, EmptyRightOperandIsNeutral) {
  Rng rng(14);
  const Tensord a = random_tensor({2, 3}, rng);
  EXPECT_EQ(concat_forward(a, Tensord({2, 0})), a);
}

TEST(Concat, ShapesAndSplit) {
  Rng rng(15);
  const Tensord a = random_tensor({2, 3}, rng), b = random_tensor({2, 2}, rng);
  const Tensord y = concat_forward(a, b);
  EXPECT_EQ(y.shape(), (Shape{2, 5}));
  EXPECT_EQ(y(1, 3), b(1, 0));
  const auto [ga, gb] = concat_backward(y, 3);
  EXPECT_EQ(ga, a);
  EXPECT_EQ(gb, b);
  EXPECT_THROW(concat_forward(a, Tensord({3, 2})), DimensionError);
}

TEST(Gradcheck, SumOfSquares) {
  Rng rng(16);
  const Tensord x = random_tensor({7}, rng);
  auto f = [](const Tensord& v, Tensord* grad) {
    if (grad) grad->values() = 2.0 * v.values();
    return v.values().squaredNorm();
  };
  EXPECT_LE(gradcheck(f, x).max_rel_error, 1e-8);
}

TEST(Gradcheck, ConstantFunctionHasZeroError) {
  auto f = [](const Tensord&, Tensord* grad) {
    if (grad) grad->set_zero();
    return 3.0;
  };
  const auto r = gradcheck(f, Tensord({4}, 1.0));
  EXPECT_EQ(r.max_abs_error, 0.0);
  EXPECT_EQ(r.checked, 4);
}

TEST(Gradcheck, DetectsWrongGradient) {
  auto f = [](const Tensord& v, Tensord* grad) {
    if (grad) grad->values() = v.values();  // should be 2v
    return v.values().squaredNorm();
  };
  EXPECT_GT(gradcheck(f, Tensord({3}, 1.0)).max_rel_error, 0.1);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  Rng rng(17);
  const Tensord x = random_tensor({2, 3, 9, 9}, rng), w = random_tensor({4, 3, 3, 3}, rng);
  const Tensord b = random_tensor({4}, rng);
  EXPECT_EQ(conv2d_forward(x, w, b, {2, 1}), conv2d_forward(x, w, b, {2, 1}));
}
