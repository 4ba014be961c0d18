#include <gtest/gtest.h>

#include <cmath>

#include "hypertea/gradcheck.hpp"
#include "hypertea/ops.hpp"
#include "hypertea/optim.hpp"
#include "hypertea/tensor.hpp"
#include "test_util.hpp"

using namespace hypertea;
using testutil::rand_tensor;
using testutil::rand_tensor_off_zero;

using D = double;
constexpr double kGradTol = 1e-4;

TEST(Backward, SumGradIsOnes) {
  auto p = rand_tensor<D>({2, 3}, *(new Rng(1)));
  sum_all(p).backward();
  for (D g : p.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, QuadraticGrad) {
  auto p = Tensor<D>::from({3}, {1, 2, 3}, true);
  sum_all(mul(p, p)).backward();
  EXPECT_DOUBLE_EQ(p.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], 4.0);
  EXPECT_DOUBLE_EQ(p.grad()[2], 6.0);
}

TEST(Backward, FanOutAccumulates) {
  auto x = Tensor<D>::scalar(3.0, true);
  auto y = add(x, x);  // dy/dx = 2
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Backward, AdditiveAcrossCalls) {
  auto x = Tensor<D>::from({2}, {1.0, 2.0}, true);
  sum_all(mul(x, x)).backward();
  sum_all(x).backward();
  // grad(sum(x^2)) + grad(sum(x)) accumulated without a zero_grad between.
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 5.0);
  x.zero_grad();
  EXPECT_TRUE(x.grad().empty());
}

TEST(Backward, GradOfSumEqualsSumOfGrads) {
  Rng rng(7);
  auto x = rand_tensor<D>({4}, rng);
  auto w = rand_tensor<D>({4}, rng);

  auto f = [&] { return sum_all(mul(x, x)); };
  auto g = [&] { return sum_all(mul(w, x)); };

  x.zero_grad();
  f().backward();
  auto gf = x.grad_or_zeros();
  x.zero_grad();
  g().backward();
  auto gg = x.grad_or_zeros();
  x.zero_grad();
  add(f(), g()).backward();
  auto gsum = x.grad_or_zeros();
  for (size_t i = 0; i < gsum.size(); ++i) EXPECT_DOUBLE_EQ(gsum[i], gf[i] + gg[i]);
}

TEST(Backward, RejectsNonScalar) {
  auto x = rand_tensor<D>({3}, *(new Rng(2)));
  EXPECT_THROW(mul(x, x).backward(), NumericsError);
}

TEST(Backward, NoGradGuardDropsGraph) {
  auto x = Tensor<D>::from({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Numerics, NonFiniteForwardThrows) {
  auto x = Tensor<D>::scalar(1000.0, true);
  try {
    exp_op(x);
    FAIL() << "expected NumericsError";
  } catch (const NumericsError& e) {
    EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos);
  }
}

TEST(Sigmoid, QuarterSlopeAtZero) {
  auto x = Tensor<D>::scalar(0.0, true);
  auto report = grad_check<D>([&] { return sigmoid(x); },
                              {{"x", x}});
  EXPECT_LE(report.max_rel_err, 1e-7);
  x.zero_grad();
  sigmoid(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Softmax, UniformOnEqualInputs) {
  auto x = Tensor<D>::from({1, 2}, {0.0, 0.0});
  auto y = softmax_rows(x);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.5);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(11);
  auto x = rand_tensor<D>({5, 7}, rng, -30.0, 30.0, false);
  auto y = softmax_rows(x);
  for (int64_t i = 0; i < 5; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 7; ++j) s += y.data()[i * 7 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Matmul, HandValues) {
  auto a = Tensor<D>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<D>::from({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(c.data()[0], 58.0);
  EXPECT_DOUBLE_EQ(c.data()[1], 64.0);
  EXPECT_DOUBLE_EQ(c.data()[2], 139.0);
  EXPECT_DOUBLE_EQ(c.data()[3], 154.0);
  EXPECT_THROW(matmul(a, a), NumericsError);
}

TEST(ShapeOps, ChunkConcatRoundTrip) {
  Rng rng(3);
  auto x = rand_tensor<D>({1, 8, 2, 2}, rng, -1.0, 1.0, false);
  auto parts = chunk_channels(x, 4);
  ASSERT_EQ(parts.size(), 4u);
  for (const auto& p : parts) EXPECT_EQ(p.dim(1), 2);
  auto back = concat_channels(parts);
  EXPECT_EQ(back.shape(), x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(back.data()[i], x.data()[i]);
  EXPECT_THROW(chunk_channels(x, 3), NumericsError);
}

TEST(ShapeOps, TokensRoundTrip) {
  Rng rng(4);
  auto x = rand_tensor<D>({3, 5, 2, 4}, rng, -1.0, 1.0, false);
  auto t = tokens_from_maps(x);
  EXPECT_EQ(t.shape(), (Shape{3 * 2 * 4, 5}));
  auto back = map_from_tokens(t, 2, 4);
  EXPECT_EQ(back.shape(), x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(back.data()[i], x.data()[i]);
}

TEST(MinMax, TieRoutesToFirst) {
  auto a = Tensor<D>::from({2}, {1.0, 5.0}, true);
  auto b = Tensor<D>::from({2}, {1.0, 2.0}, true);
  sum_all(minimum(a, b)).backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 1.0);  // tie -> first operand
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 0.0);
  EXPECT_DOUBLE_EQ(b.grad()[1], 1.0);
}

TEST(Bce, MatchesNaiveCrossEntropy) {
  Rng rng(5);
  auto x = rand_tensor<D>({6}, rng, -4.0, 4.0, false);
  std::vector<D> targets = {0, 1, 0.3, 1, 0, 0.9};
  auto loss = bce_with_logits(x, targets);
  for (int64_t i = 0; i < 6; ++i) {
    double s = sigmoid_value(x.data()[i]);
    double naive = -(targets[i] * std::log(s) + (1 - targets[i]) * std::log(1 - s));
    EXPECT_NEAR(loss.data()[i], naive, 1e-12);
  }
}

TEST(Sgd, SpecExamples) {
  // grad = 0, wd = 0 -> fixed point.
  {
    ParamRegistry<D> reg;
    auto p = Tensor<D>::from({1}, {1.0}, true);
    reg.add_param("p", p);
    Sgd<D> opt(reg, {0.01, 0.937, 0.0});
    opt.step();
    EXPECT_DOUBLE_EQ(p.data()[0], 1.0);
  }
  // Constant grad = 1: v1 = 1, p = 0.99; v2 = 1.937, p = 0.97063.
  {
    ParamRegistry<D> reg;
    auto p = Tensor<D>::from({1}, {1.0}, true);
    reg.add_param("p", p);
    Sgd<D> opt(reg, {0.01, 0.937, 0.0});
    p.node()->grad = {1.0};
    opt.step();
    EXPECT_DOUBLE_EQ(opt.velocity()[0][0], 1.0);
    EXPECT_DOUBLE_EQ(p.data()[0], 0.99);
    p.zero_grad();
    p.node()->grad = {1.0};
    opt.step();
    EXPECT_DOUBLE_EQ(opt.velocity()[0][0], 1.937);
    EXPECT_NEAR(p.data()[0], 0.97063, 1e-12);
  }
}

TEST(Sgd, LrSchedule) {
  EXPECT_DOUBLE_EQ(lr_at_step(0.01, 0, 100), 0.01);
  EXPECT_DOUBLE_EQ(lr_at_step(0.01, 79, 100), 0.01);
  EXPECT_DOUBLE_EQ(lr_at_step(0.01, 80, 100), 0.001);
  EXPECT_DOUBLE_EQ(lr_at_step(0.01, 99, 100), 0.001);
}

// ---------------------------------------------------------------------------
// Finite-difference sweeps over every primitive.
// ---------------------------------------------------------------------------

TEST(GradCheck, ElementwiseBinary) {
  Rng rng(21);
  auto a = rand_tensor_off_zero<D>({3, 4}, rng);
  auto b = rand_tensor_off_zero<D>({3, 4}, rng);
  auto params = std::vector<std::pair<std::string, Tensor<D>>>{{"a", a}, {"b", b}};

  for (auto fn : {+[](const Tensor<D>& x, const Tensor<D>& y) { return add(x, y); },
                  +[](const Tensor<D>& x, const Tensor<D>& y) { return sub(x, y); },
                  +[](const Tensor<D>& x, const Tensor<D>& y) { return mul(x, y); },
                  +[](const Tensor<D>& x, const Tensor<D>& y) { return div(x, y); },
                  +[](const Tensor<D>& x, const Tensor<D>& y) { return minimum(x, y); },
                  +[](const Tensor<D>& x, const Tensor<D>& y) { return maximum(x, y); }}) {
    auto report = grad_check<D>([&] { return sum_all(mul(fn(a, b), fn(a, b))); }, params);
    EXPECT_LE(report.max_rel_err, kGradTol) << report.worst;
  }
}

TEST(GradCheck, ElementwiseUnary) {
  Rng rng(22);
  auto a = rand_tensor_off_zero<D>({2, 5}, rng);
  auto params = std::vector<std::pair<std::string, Tensor<D>>>{{"a", a}};

  for (auto fn : {+[](const Tensor<D>& x) { return relu(x); },
                  +[](const Tensor<D>& x) { return sigmoid(x); },
                  +[](const Tensor<D>& x) { return tanh_act(x); },
                  +[](const Tensor<D>& x) { return silu(x); },
                  +[](const Tensor<D>& x) { return exp_op(x); },
                  +[](const Tensor<D>& x) { return add_scalar(x, 0.7); },
                  +[](const Tensor<D>& x) { return mul_scalar(x, -1.3); },
                  +[](const Tensor<D>& x) { return sub_from_scalar(2.0, x); },
                  +[](const Tensor<D>& x) { return neg(x); }}) {
    auto report = grad_check<D>([&] { return mean_all(mul(fn(a), fn(a))); }, params);
    EXPECT_LE(report.max_rel_err, kGradTol) << report.worst;
  }
}

TEST(GradCheck, BceLogits) {
  Rng rng(23);
  auto x = rand_tensor<D>({7}, rng, -3.0, 3.0);
  std::vector<D> t = {0, 1, 1, 0, 0.5, 1, 0};
  auto report = grad_check<D>([&] { return mean_all(bce_with_logits(x, t)); }, {{"x", x}});
  EXPECT_LE(report.max_rel_err, kGradTol) << report.worst;
}

TEST(GradCheck, MatrixOps) {
  Rng rng(24);
  auto a = rand_tensor<D>({3, 4}, rng);
  auto b = rand_tensor<D>({4, 2}, rng);
  auto w = rand_tensor<D>({4, 2}, rng);
  auto bias = rand_tensor<D>({2}, rng);

  auto r1 = grad_check<D>([&] { return sum_all(mul(matmul(a, b), matmul(a, b))); },
                          {{"a", a}, {"b", b}});
  EXPECT_LE(r1.max_rel_err, kGradTol) << r1.worst;

  auto r2 = grad_check<D>([&] { return sum_all(mul(linear(a, w, bias), linear(a, w, bias))); },
                          {{"a", a}, {"w", w}, {"bias", bias}});
  EXPECT_LE(r2.max_rel_err, kGradTol) << r2.worst;

  auto r3 = grad_check<D>([&] { return sum_all(mul(transpose2d(a), transpose2d(a))); }, {{"a", a}});
  EXPECT_LE(r3.max_rel_err, kGradTol) << r3.worst;

  auto r4 = grad_check<D>([&] { return sum_all(mul(softmax_rows(a), softmax_rows(a))); },
                          {{"a", a}});
  EXPECT_LE(r4.max_rel_err, kGradTol) << r4.worst;
}

TEST(GradCheck, ShapeAndBroadcastOps) {
  Rng rng(25);
  auto x = rand_tensor<D>({2, 4, 3, 3}, rng);
  auto y = rand_tensor<D>({2, 4, 3, 3}, rng);
  auto s = rand_tensor<D>({4}, rng);
  auto m = rand_tensor<D>({2, 1, 3, 3}, rng);

  auto quad = [](const Tensor<D>& t) { return sum_all(mul(t, t)); };

  auto r1 = grad_check<D>([&] { return quad(concat_channels<D>({x, y})); }, {{"x", x}, {"y", y}});
  EXPECT_LE(r1.max_rel_err, kGradTol) << r1.worst;

  auto r2 = grad_check<D>([&] { return quad(slice(x, 1, 1, 3)); }, {{"x", x}});
  EXPECT_LE(r2.max_rel_err, kGradTol) << r2.worst;

  auto r3 = grad_check<D>([&] { return quad(scale_channels(x, s)); }, {{"x", x}, {"s", s}});
  EXPECT_LE(r3.max_rel_err, kGradTol) << r3.worst;

  auto r4 = grad_check<D>([&] { return quad(mul_spatial(x, m)); }, {{"x", x}, {"m", m}});
  EXPECT_LE(r4.max_rel_err, kGradTol) << r4.worst;

  auto r5 = grad_check<D>([&] { return quad(tokens_from_maps(x)); }, {{"x", x}});
  EXPECT_LE(r5.max_rel_err, kGradTol) << r5.worst;

  auto r6 = grad_check<D>([&] { return quad(reshape(x, {4, 18})); }, {{"x", x}});
  EXPECT_LE(r6.max_rel_err, kGradTol) << r6.worst;
}

TEST(GradCheck, StatsAndGatherOps) {
  Rng rng(26);
  auto x = rand_tensor<D>({1, 3, 4, 4}, rng);
  auto t = rand_tensor<D>({5, 3}, rng);
  std::vector<std::pair<int64_t, int64_t>> cells = {{0, 0}, {3, 2}, {1, 1}};

  auto quad = [](const Tensor<D>& v) { return sum_all(mul(v, v)); };

  auto r1 = grad_check<D>([&] { return quad(channel_max_hw(x)); }, {{"x", x}});
  EXPECT_LE(r1.max_rel_err, kGradTol) << r1.worst;

  auto r2 = grad_check<D>([&] { return quad(channel_std_hw(x)); }, {{"x", x}});
  EXPECT_LE(r2.max_rel_err, kGradTol) << r2.worst;

  auto r3 = grad_check<D>([&] { return quad(gather_cells(x, cells)); }, {{"x", x}});
  EXPECT_LE(r3.max_rel_err, kGradTol) << r3.worst;

  auto r4 = grad_check<D>([&] { return quad(column(t, 1)); }, {{"t", t}});
  EXPECT_LE(r4.max_rel_err, kGradTol) << r4.worst;
}

TEST(GradCheck, ReportsWorstEntry) {
  auto x = Tensor<D>::from({2}, {0.5, -0.25}, true);
  auto report = grad_check<D>([&] { return sum_all(mul(x, x)); }, {{"x", x}});
  EXPECT_GT(report.checked, 0);
  EXPECT_FALSE(report.worst.empty());
  EXPECT_LE(report.mean_rel_err, report.max_rel_err);
}
