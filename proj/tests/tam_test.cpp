#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "hypertea/gradcheck.hpp"
#include "hypertea/tam.hpp"
#include "test_util.hpp"

using namespace hypertea;
using testutil::rand_tensor;

using D = double;
constexpr double kGradTol = 1e-4;

TEST(Attention, RowsSumToOne) {
  Rng rng(1);
  auto q = rand_tensor<D>({7, 4}, rng, -2.0, 2.0, false);
  auto k = rand_tensor<D>({13, 4}, rng, -2.0, 2.0, false);
  auto v = rand_tensor<D>({13, 4}, rng, -2.0, 2.0, false);
  Tensor<D> weights;
  auto out = attention<D>(q, k, v, 0.5, &weights);
  EXPECT_EQ(out.shape(), (Shape{7, 4}));
  EXPECT_EQ(weights.shape(), (Shape{7, 13}));
  for (int64_t r = 0; r < 7; ++r) {
    double row_sum = 0.0;
    for (int64_t j = 0; j < 13; ++j) row_sum += weights.data()[r * 13 + j];
    EXPECT_NEAR(row_sum, 1.0, 1e-6);
  }
}

TEST(Attention, SingleKeyReturnsValueExactly) {
  auto q = Tensor<D>::from({1, 3}, {0.3, -1.7, 2.2});
  auto k = Tensor<D>::from({1, 3}, {1.1, 0.4, -0.9});
  auto v = Tensor<D>::from({1, 3}, {5.0, -2.5, 0.125});
  Tensor<D> weights;
  auto out = attention<D>(q, k, v, 1.0 / std::sqrt(3.0), &weights);
  EXPECT_EQ(weights.data()[0], 1.0);  // softmax over one key is exactly 1
  for (int64_t j = 0; j < 3; ++j) EXPECT_EQ(out.data()[j], v.data()[j]);
}

TEST(Glta, ShapeAndTokenCounts) {
  Rng rng(2);
  Glta<D> glta(4, 2, rng);
  auto g_st = rand_tensor<D>({5, 4, 8, 8}, rng, -1.0, 1.0, false);
  auto l_st = rand_tensor<D>({1, 4, 8, 8}, rng, -1.0, 1.0, false);
  Tensor<D> weights;
  auto r = glta.forward(g_st, l_st, &weights);
  EXPECT_EQ(r.shape(), (Shape{1, 4, 8, 8}));
  // 16 local queries attend over 5 frames x 16 tokens = 80 keys.
  EXPECT_EQ(weights.shape(), (Shape{16, 80}));
  for (int64_t row = 0; row < 16; ++row) {
    double row_sum = 0.0;
    for (int64_t j = 0; j < 80; ++j) row_sum += weights.data()[row * 80 + j];
    EXPECT_NEAR(row_sum, 1.0, 1e-6);
  }
}

TEST(Glta, SingleTokenAttentionIsIdentityWeight) {
  Rng rng(3);
  Glta<D> glta(3, 2, rng);
  auto g_st = rand_tensor<D>({1, 3, 2, 2}, rng, -1.0, 1.0, false);
  auto l_st = rand_tensor<D>({1, 3, 2, 2}, rng, -1.0, 1.0, false);
  Tensor<D> weights;
  auto r = glta.forward(g_st, l_st, &weights);
  EXPECT_EQ(r.shape(), (Shape{1, 3, 2, 2}));
  EXPECT_EQ(weights.shape(), (Shape{1, 1}));
  EXPECT_EQ(weights.data()[0], 1.0);
}

TEST(Csam, SpatialGateAttenuates) {
  Rng rng(4);
  Csam<D> csam(3, rng);
  auto x = rand_tensor<D>({1, 3, 6, 6}, rng, -1.5, 1.5, false);
  auto e = csam.entry.forward(x);
  auto x_s = csam.merge.forward(concat_channels<D>({csam.dwc3.forward(e), csam.dwc5.forward(e)}));
  auto x_sa = mul_spatial(x_s, sigmoid(csam.sa.forward(x_s)));
  // The spatial gate is a sigmoid, so it can only shrink magnitudes.
  for (int64_t i = 0; i < x_s.numel(); ++i)
    EXPECT_LE(std::abs(x_sa.data()[i]), std::abs(x_s.data()[i]));
}

TEST(Csam, ZeroChannelGateParamsHalveSpatialBranch) {
  Rng rng(5);
  Csam<D> csam(3, rng);
  for (auto& v : csam.fc.weight.data()) v = 0.0;
  for (auto& v : csam.fc.bias.data()) v = 0.0;
  auto x = rand_tensor<D>({1, 3, 6, 6}, rng, -1.5, 1.5, false);

  auto e = csam.entry.forward(x);
  auto x_s = csam.merge.forward(concat_channels<D>({csam.dwc3.forward(e), csam.dwc5.forward(e)}));
  auto x_sa = mul_spatial(x_s, sigmoid(csam.sa.forward(x_s)));

  auto y = csam.forward(x);
  // sigmoid(0) = 0.5 on every channel gate.
  for (int64_t i = 0; i < y.numel(); ++i)
    EXPECT_NEAR(y.data()[i], 0.5 * x_sa.data()[i] + x.data()[i], 1e-9);
}

TEST(Csam, ShapePreserved) {
  Rng rng(6);
  Csam<D> csam(5, rng);
  auto x = rand_tensor<D>({1, 5, 7, 9}, rng, -1.0, 1.0, false);
  EXPECT_EQ(csam.forward(x).shape(), (Shape{1, 5, 7, 9}));
}

TEST(Tam, ForwardShape) {
  Rng rng(7);
  Tam<D> tam(4, 2, rng);
  auto g_st = rand_tensor<D>({5, 4, 8, 8}, rng, -1.0, 1.0, false);
  auto l_st = rand_tensor<D>({1, 4, 8, 8}, rng, -1.0, 1.0, false);
  EXPECT_EQ(tam.forward(g_st, l_st).shape(), (Shape{1, 4, 8, 8}));
}

TEST(Tam, DeterministicFromSeed) {
  auto run = [] {
    Rng rng(42);
    Tam<D> tam(2, 2, rng);
    Rng data_rng(9);
    auto g_st = rand_tensor<D>({3, 2, 4, 4}, data_rng, -1.0, 1.0, false);
    auto l_st = rand_tensor<D>({1, 2, 4, 4}, data_rng, -1.0, 1.0, false);
    return tam.forward(g_st, l_st);
  };
  auto a = run();
  auto b = run();
  for (int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(Tam, GradCheckEndToEnd) {
  Rng rng(8);
  Tam<D> tam(2, 2, rng);
  auto g_st = rand_tensor<D>({2, 2, 8, 8}, rng, -0.5, 0.5);
  auto l_st = rand_tensor<D>({1, 2, 8, 8}, rng, -0.5, 0.5);
  ParamRegistry<D> reg;
  tam.collect("tam", reg);
  auto params = reg.params;
  params.emplace_back("g_st", g_st);
  params.emplace_back("l_st", l_st);
  auto report = grad_check<D>(
      [&] {
        auto y = tam.forward(g_st, l_st);
        return mean_all(mul(y, y));
      },
      params);
  EXPECT_LE(report.max_rel_err, kGradTol) << report.worst;
}
