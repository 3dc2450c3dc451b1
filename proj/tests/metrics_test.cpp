#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gradcheck.hpp"
#include "magup/errors.hpp"
#include "magup/losses.hpp"
#include "magup/metrics.hpp"
#include "metric_oracles.hpp"

using namespace magup;
using magup::testing::gradcheck;

namespace {

Tensor disk(std::size_t n, double cy, double cx, double r) {
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
      m[i * n + j] = dy * dy + dx * dx <= r * r ? 1.0 : 0.0;
    }
  }
  return Tensor({n, n}, m);
}

Tensor dilate4(const Tensor& m) {
  const std::size_t H = m.dim(0), W = m.dim(1);
  std::vector<double> out(H * W, 0.0);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      bool on = m[i * W + j] > 0.5;
      if (i > 0) on = on || m[(i - 1) * W + j] > 0.5;
      if (i + 1 < H) on = on || m[(i + 1) * W + j] > 0.5;
      if (j > 0) on = on || m[i * W + j - 1] > 0.5;
      if (j + 1 < W) on = on || m[i * W + j + 1] > 0.5;
      out[i * W + j] = on ? 1.0 : 0.0;
    }
  }
  return Tensor({H, W}, out);
}

Tensor half(bool left) {
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) v[i * 4 + j] = (left ? j < 2 : i < 2) ? 1.0 : 0.0;
  return Tensor({4, 4}, v);
}

Tensor invert(const Tensor& m) {
  std::vector<double> v(m.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 - m[i];
  return Tensor(m.shape(), v);
}

}  // namespace

// ---- losses ------------------------------------------------------------

TEST(Loss, DiceAtOptimum) {
  std::vector<double> v(400, 0.0);
  for (std::size_t i = 0; i < 100; ++i) v[i * 4] = 1.0;
  const Tensor M({20, 20}, v);
  const double eps = 1e-8;
  EXPECT_NEAR(dice_loss(M, M).item(), eps / (200.0 + eps), 1e-15);
}

TEST(Loss, DiceDisjoint) {
  const Tensor M = disk(8, 3.5, 3.5, 2.5);
  EXPECT_NEAR(dice_loss(invert(M), M).item(), 1.0, 1e-12);
}

TEST(Loss, DiceHalfOverlap) {
  EXPECT_NEAR(dice_loss(half(false), half(true)).item(), 0.5, 1e-9);
}

TEST(Loss, BceConstantHalf) {
  const Tensor M = disk(8, 3.5, 3.5, 2.5);
  EXPECT_NEAR(bce_loss(Tensor::full({8, 8}, 0.5), M).item(), std::log(2.0), 1e-12);
}

TEST(Loss, BceAtOptimum) {
  const Tensor M = disk(8, 3.5, 3.5, 2.5);
  EXPECT_NEAR(bce_loss(M, M).item(), -std::log(1.0 - 1e-7), 1e-15);
}

TEST(Loss, BceMatchesLoop) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> p(9), m(9);
    for (std::size_t i = 0; i < 9; ++i) {
      p[i] = rng.uniform(0.01, 0.99);
      m[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    double ref = 0.0;
    for (std::size_t i = 0; i < 9; ++i) ref += m[i] * std::log(p[i]) + (1 - m[i]) * std::log(1 - p[i]);
    ref = -ref / 9.0;
    EXPECT_NEAR(bce_loss(Tensor({3, 3}, p), Tensor({3, 3}, m)).item(), ref, 1e-12);
  }
}

TEST(Loss, CombinedIsSum) {
  auto [P, M] = oracle::random_pair(12, 12, 8);
  EXPECT_EQ(combined_loss(P, M).item(), dice_loss(P, M).item() + bce_loss(P, M).item());
  EXPECT_NEAR(combined_loss(M, M).item(), 0.0, 1e-6);
}

TEST(Loss, CombinedGradient) {
  Rng rng(6);
  Tensor P = Tensor::parameter({3, 3}, rng.uniform_vector(9, 0.05, 0.95));
  const Tensor M({3, 3}, {1, 0, 1, 1, 0, 0, 0, 1, 1});
  const auto r = gradcheck([&] { return combined_loss(P, M); }, {P}, 0, 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-5);
  EXPECT_EQ(r.checked, 9u);
}

TEST(Loss, ShapeMismatchThrows) {
  EXPECT_THROW(dice_loss(Tensor::zeros({3, 3}), Tensor::zeros({3, 4})), ShapeError);
  EXPECT_THROW(bce_loss(Tensor::zeros({3, 3}), Tensor::zeros({4, 3})), ShapeError);
}

TEST(Loss, BoundaryWeightsOffByDefault) {
  const Tensor M = disk(16, 7.5, 7.5, 5.0);
  const Tensor w = boundary_weights(M, LossOptions{});
  for (double v : w.data()) EXPECT_EQ(v, 1.0);
}

TEST(Loss, BoundaryWeightsPeakAtEdge) {
  const Tensor M = disk(32, 15.5, 15.5, 8.0);
  LossOptions opt;
  opt.boundary_gain = 5.0;
  opt.boundary_kernel = 7;
  const Tensor w = boundary_weights(M, opt);
  // far background and deep interior are flat, edge pixels are emphasised
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[15 * 32 + 15], 1.0);
  EXPECT_GT(w[15 * 32 + 8], 1.5);
  // weighted dice reduces to the plain one when P == M
  EXPECT_NEAR(dice_loss(M, M, opt).item(), 0.0, 1e-9);
}

// ---- metrics: oracle agreement ----------------------------------------

TEST(Metrics, OracleAgreementRandomPairs) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto [P, M] = oracle::random_pair(16, 16, seed);
    const auto di = mdice_miou(P, M);
    const auto ref = oracle::dice_iou(P, M);
    EXPECT_NEAR(di.dice, ref.first, 1e-9) << seed;
    EXPECT_NEAR(di.iou, ref.second, 1e-9) << seed;
    EXPECT_NEAR(mae(P, M), oracle::mae(P, M), 1e-9) << seed;
    EXPECT_NEAR(s_measure(P, M), oracle::s_measure(P, M), 1e-9) << seed;
    EXPECT_NEAR(e_measure_max(P, M), oracle::e_measure_max(P, M), 1e-9) << seed;
    EXPECT_NEAR(weighted_fmeasure(P, M), oracle::weighted_f(P, M), 1e-9) << seed;
  }
}

TEST(Metrics, OracleAgreementNonSquare) {
  for (std::uint64_t seed = 30; seed < 35; ++seed) {
    auto [P, M] = oracle::random_pair(11, 19, seed);
    EXPECT_NEAR(s_measure(P, M), oracle::s_measure(P, M), 1e-9);
    EXPECT_NEAR(e_measure_max(P, M), oracle::e_measure_max(P, M), 1e-9);
    EXPECT_NEAR(weighted_fmeasure(P, M), oracle::weighted_f(P, M), 1e-9);
  }
}

TEST(Metrics, PerfectPair) {
  const Tensor M = disk(16, 7.5, 7.5, 5.0);
  const MetricReport r = evaluate_pair(M, M);
  EXPECT_DOUBLE_EQ(r.mdice, 1.0);
  EXPECT_DOUBLE_EQ(r.miou, 1.0);
  EXPECT_NEAR(r.wfm, 1.0, 1e-12);
  EXPECT_NEAR(r.s_alpha, 1.0, 1e-12);
  EXPECT_NEAR(r.e_max, 1.0, 1e-12);
  EXPECT_EQ(r.mae, 0.0);
}

TEST(Metrics, DiceIouCases) {
  const auto hh = mdice_miou(half(false), half(true));
  EXPECT_NEAR(hh.dice, 0.5, 1e-12);
  EXPECT_NEAR(hh.iou, 1.0 / 3.0, 1e-12);
  const Tensor M = disk(8, 3.5, 3.5, 2.5);
  const auto dj = mdice_miou(invert(M), M);
  EXPECT_EQ(dj.dice, 0.0);
  EXPECT_EQ(dj.iou, 0.0);
  const auto ee = mdice_miou(Tensor::zeros({4, 4}), Tensor::zeros({4, 4}));
  EXPECT_EQ(ee.dice, 1.0);
  EXPECT_EQ(ee.iou, 1.0);
}

TEST(Metrics, MaeCases) {
  EXPECT_NEAR(mae(Tensor::full({5, 5}, 0.25), Tensor::zeros({5, 5})), 0.25, 1e-15);
}

TEST(Metrics, SMeasureInverted) {
  const Tensor M = disk(8, 3.5, 3.5, 2.5);
  const double s = s_measure(invert(M), M);
  EXPECT_LT(s, 0.5);
  EXPECT_GE(s, 0.0);
  EXPECT_NEAR(s, oracle::s_measure(invert(M), M), 1e-12);
}

TEST(Metrics, EMeasureZeroPrediction) {
  const Tensor M = disk(8, 3.5, 3.5, 2.5);
  const Tensor P = Tensor::zeros({8, 8});
  const double e = e_measure_max(P, M);
  EXPECT_NEAR(e, oracle::e_measure_max(P, M), 1e-12);
  EXPECT_LT(e, 0.5);
}

TEST(Metrics, EMeasureMaxDominates) {
  for (std::uint64_t seed = 50; seed < 55; ++seed) {
    auto [P, M] = oracle::random_pair(16, 16, seed);
    EXPECT_GE(e_measure_max(P, M), oracle::e_measure_at(P, M, 0.5));
  }
}

TEST(Metrics, WeightedFZeroPrediction) {
  const Tensor M = disk(16, 7.5, 7.5, 5.0);
  EXPECT_NEAR(weighted_fmeasure(Tensor::zeros({16, 16}), M), 0.0, 1e-12);
}

TEST(Metrics, WeightedFDilatedDisk) {
  const Tensor M = disk(16, 7.5, 7.5, 5.0);
  const Tensor P = dilate4(M);
  const double wf = weighted_fmeasure(P, M);
  const double f1 = mdice_miou(P, M).dice;
  EXPECT_NEAR(wf, oracle::weighted_f(P, M), 1e-9);
  // Recall stays 1 and every false positive carries its distance weight
  // B = 2 - 0.5^(1/5) > 1, so the weighted score sits just below plain F1.
  const double b1 = 2.0 - std::exp(std::log(0.5) / 5.0);
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < 256; ++i) {
    tp += P[i] * M[i];
    fp += P[i] * (1.0 - M[i]);
  }
  const double pw = tp / (tp + b1 * fp);
  EXPECT_NEAR(wf, 2.0 * pw / (1.0 + pw), 1e-12);
  EXPECT_GT(wf, 0.0);
  EXPECT_LT(wf, f1);
}

TEST(Metrics, WeightedFEmptyGroundTruth) {
  EXPECT_EQ(weighted_fmeasure(Tensor::zeros({6, 6}), Tensor::zeros({6, 6})), 1.0);
  EXPECT_EQ(weighted_fmeasure(Tensor::full({6, 6}, 0.1), Tensor::zeros({6, 6})), 0.0);
}

TEST(Metrics, BoundsOnRandomPairs) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    auto [P, M] = oracle::random_pair(16, 16, seed);
    const MetricReport r = evaluate_pair(P, M);
    for (double v : {r.mdice, r.miou, r.wfm, r.s_alpha, r.e_max, r.mae}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, NestedDisksMonotone) {
  const Tensor M = disk(32, 15.5, 15.5, 6.0);
  MetricReport prev{};
  bool first = true;
  for (double r = 12.0; r >= 6.0; r -= 1.0) {
    const MetricReport cur = evaluate_pair(disk(32, 15.5, 15.5, r), M);
    if (!first) {
      EXPECT_GE(cur.mdice, prev.mdice);
      EXPECT_GE(cur.miou, prev.miou);
      EXPECT_GE(cur.wfm, prev.wfm);
    }
    prev = cur;
    first = false;
  }
  EXPECT_DOUBLE_EQ(prev.mdice, 1.0);
}

TEST(Metrics, MaeLinear) {
  const Tensor M = disk(8, 3.5, 3.5, 2.5);
  const double a = mae(Tensor::full({8, 8}, 0.2), M);
  const double b = mae(Tensor::full({8, 8}, 0.4), Tensor::zeros({8, 8}));
  EXPECT_NEAR(b, 0.4, 1e-15);
  EXPECT_GT(a, 0.0);
}

TEST(Metrics, ShapeErrors) {
  EXPECT_THROW(mdice_miou(Tensor::zeros({3, 3}), Tensor::zeros({3, 4})), ShapeError);
  EXPECT_THROW(s_measure(Tensor::zeros({3, 3}), Tensor::zeros({4, 3})), ShapeError);
}

// ---- dataset aggregation ----------------------------------------------

TEST(Dataset, SinglePerfect) {
  const Tensor M = disk(16, 7.5, 7.5, 5.0);
  const MetricReport r = evaluate_dataset({{M, M}});
  EXPECT_EQ(r.count, 1u);
  EXPECT_DOUBLE_EQ(r.mdice, 1.0);
  EXPECT_EQ(r.mae, 0.0);
}

TEST(Dataset, AveragesSingles) {
  auto a = oracle::random_pair(16, 16, 61);
  auto b = oracle::random_pair(16, 16, 62);
  const MetricReport ra = evaluate_pair(a.first, a.second);
  const MetricReport rb = evaluate_pair(b.first, b.second);
  const MetricReport r = evaluate_dataset({a, b});
  EXPECT_EQ(r.count, 2u);
  EXPECT_NEAR(r.mdice, (ra.mdice + rb.mdice) / 2, 1e-15);
  EXPECT_NEAR(r.miou, (ra.miou + rb.miou) / 2, 1e-15);
  EXPECT_NEAR(r.wfm, (ra.wfm + rb.wfm) / 2, 1e-15);
  EXPECT_NEAR(r.s_alpha, (ra.s_alpha + rb.s_alpha) / 2, 1e-15);
  EXPECT_NEAR(r.e_max, (ra.e_max + rb.e_max) / 2, 1e-15);
  EXPECT_NEAR(r.mae, (ra.mae + rb.mae) / 2, 1e-15);
}

TEST(Dataset, EmptyThrows) {
  EXPECT_THROW(evaluate_dataset({}), ContractError);
}

TEST(Dataset, ReportWriters) {
  const Tensor M = disk(16, 7.5, 7.5, 5.0);
  const MetricReport r = evaluate_dataset({{M, M}});
  std::ostringstream csv, table;
  write_report_csv(csv, {{"train", r}});
  write_report_table(table, {{"train", r}});
  EXPECT_NE(csv.str().find("name,mDice,mIoU,wFm,Sm,Em,MAE,count"), std::string::npos);
  EXPECT_NE(csv.str().find("train,"), std::string::npos);
  EXPECT_NE(table.str().find("mDice"), std::string::npos);
}
