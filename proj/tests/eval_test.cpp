#include <gtest/gtest.h>

#include "hypertea/eval.hpp"

using namespace hypertea;

TEST(Match, GreedyCounting) {
  Box gt{0, 0, 8, 8};
  auto exact = match({{gt, 0.9}}, {gt});
  EXPECT_EQ(exact.tp, 1);
  EXPECT_EQ(exact.fp, 0);
  EXPECT_EQ(exact.fn, 0);
  EXPECT_EQ(exact.det_match[0], 0);

  // The second detection on an already-claimed gt is a duplicate.
  auto dup = match({{gt, 0.9}, {gt, 0.8}}, {gt});
  EXPECT_EQ(dup.tp, 1);
  EXPECT_EQ(dup.fp, 1);
  EXPECT_EQ(dup.fn, 0);
  EXPECT_EQ(dup.det_match[1], -1);

  auto missed = match({}, {gt, Box{20, 20, 28, 28}});
  EXPECT_EQ(missed.tp, 0);
  EXPECT_EQ(missed.fp, 0);
  EXPECT_EQ(missed.fn, 2);
}

TEST(Match, CountingIdentities) {
  std::vector<Box> gts = {{0, 0, 8, 8}, {20, 20, 26, 26}, {40, 40, 44, 48}};
  DetectionSet dets = {{Box{0, 0, 8, 8}, 0.9},
                       {Box{21, 20, 27, 26}, 0.7},
                       {Box{50, 50, 55, 55}, 0.6},
                       {Box{1, 1, 9, 9}, 0.5}};
  auto m = match(dets, gts);
  EXPECT_EQ(m.tp + m.fn, static_cast<int64_t>(gts.size()));
  EXPECT_EQ(m.tp + m.fp, static_cast<int64_t>(dets.size()));
}

TEST(Prf1, HandCases) {
  auto r = prf1(MatchResult{2, 1, 0, {}});
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 0.8);

  auto zero = prf1(MatchResult{0, 0, 0, {}});
  EXPECT_DOUBLE_EQ(zero.precision, 0.0);
  EXPECT_DOUBLE_EQ(zero.recall, 0.0);
  EXPECT_DOUBLE_EQ(zero.f1, 0.0);

  // Equal precision and recall: the harmonic mean collapses to that value.
  auto eq = prf1(MatchResult{3, 1, 1, {}});
  EXPECT_DOUBLE_EQ(eq.precision, eq.recall);
  EXPECT_DOUBLE_EQ(eq.f1, eq.precision);
}

TEST(AveragePrecision, HandSweep) {
  // 2 gts; ranked detections [TP, FP, TP] ->
  // recall 0.5 @ P=1.0, then 1.0 @ P=2/3; AP = 0.5*1 + 0.5*(2/3) = 5/6.
  std::vector<std::vector<Box>> gts = {{{0, 0, 4, 4}, {10, 10, 14, 14}}};
  std::vector<RankedDetection> dets = {{0, Box{0, 0, 4, 4}, 0.9},
                                       {0, Box{20, 20, 24, 24}, 0.8},
                                       {0, Box{10, 10, 14, 14}, 0.7}};
  EXPECT_NEAR(average_precision(dets, gts), 5.0 / 6.0, 1e-12);
}

TEST(AveragePrecision, PerfectAndEmpty) {
  std::vector<std::vector<Box>> gts = {{{0, 0, 4, 4}}, {{8, 8, 12, 12}}};
  std::vector<RankedDetection> perfect = {{0, Box{0, 0, 4, 4}, 0.6}, {1, Box{8, 8, 12, 12}, 0.9}};
  EXPECT_DOUBLE_EQ(average_precision(perfect, gts), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({}, gts), 0.0);

  // Score order cannot hurt a detector whose every detection is a true positive.
  std::vector<RankedDetection> shuffled = {{1, Box{8, 8, 12, 12}, 0.2}, {0, Box{0, 0, 4, 4}, 0.8}};
  EXPECT_DOUBLE_EQ(average_precision(shuffled, gts), 1.0);
}

TEST(PrCurve, RowsPerDistinctScore) {
  std::vector<std::vector<Box>> gts = {{{0, 0, 4, 4}}};
  std::vector<RankedDetection> perfect = {{0, Box{0, 0, 4, 4}, 0.7}};
  auto rows = pr_curve(perfect, gts);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(rows[0].recall, 1.0);
  EXPECT_DOUBLE_EQ(rows[0].score, 0.7);

  EXPECT_TRUE(pr_curve({}, gts).empty());

  std::vector<RankedDetection> mixed = {{0, Box{0, 0, 4, 4}, 0.9},
                                        {0, Box{9, 9, 12, 12}, 0.5},
                                        {0, Box{20, 20, 24, 24}, 0.5}};
  auto rows3 = pr_curve(mixed, gts);
  EXPECT_EQ(rows3.size(), 2u);  // distinct scores: 0.9 and 0.5
  for (size_t i = 1; i < rows3.size(); ++i) EXPECT_GE(rows3[i].recall, rows3[i - 1].recall);
}

TEST(SequenceMse, HandCases) {
  std::vector<std::vector<double>> same = {{10, 20, 30, 40}, {10, 20, 30, 40}};
  EXPECT_DOUBLE_EQ(sequence_mse(same), 0.0);

  std::vector<std::vector<double>> plus_one = {{10, 20, 30, 40}, {11, 21, 31, 41}};
  EXPECT_DOUBLE_EQ(sequence_mse(plus_one), 1.0);

  std::vector<std::vector<double>> single = {{1, 2, 3, 4}};
  EXPECT_THROW(sequence_mse(single), NumericsError);
}
