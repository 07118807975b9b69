/* Copyright 2026 The obbssl Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "obbssl/losses.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace obbssl {
namespace {

CellPrediction RandomCell(int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> s(0.05, 0.95), r(0.2, 4.0), a(-1.3, 1.3);
  CellPrediction p;
  for (int i = 0; i < k; ++i) p.scores.push_back(s(rng));
  for (double& v : p.ltrb) v = r(rng);
  p.angle = Angle::FromRadians(a(rng));
  p.centerness = s(rng);
  return p;
}

std::vector<PairRecord> RandomPairs(size_t n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cell(0, 63);
  std::vector<PairRecord> out(n);
  for (size_t i = 0; i < n; ++i) {
    out[i].cell = cell(rng);
    out[i].position = {static_cast<double>(out[i].cell % 8),
                       static_cast<double>(out[i].cell / 8)};
    out[i].teacher = RandomCell(k, rng);
    out[i].student = RandomCell(k, rng);
  }
  return out;
}

// Reads channel ch of the student prediction.
double& StudentChannel(CellPrediction& p, int ch, std::vector<double>& angle_store) {
  const int k = static_cast<int>(p.scores.size());
  if (ch < k) return p.scores[ch];
  if (ch < k + 4) return p.ltrb[ch - k];
  if (ch == k + 4) return angle_store[0];
  return p.centerness;
}

// ---------------------------------------------------------------------------

TEST(RawWeightTest, EqualAnglesGiveOne) {
  for (double a : {-kHalfPi, -0.3, 0.0, 1.2}) {
    const RawWeight w = raw_weight(Angle::FromRadians(a), Angle::FromRadians(a), 50.0);
    EXPECT_EQ(w.omega, 1.0);
    EXPECT_EQ(w.sigma, 0.0);
  }
}

TEST(RawWeightTest, QuarterTurnEachWay) {
  const RawWeight w =
      raw_weight(Angle::FromRadians(kPi / 4), Angle::FromRadians(-kPi / 4), 50.0);
  EXPECT_NEAR(w.omega, 26.0, 1e-12);
}

TEST(RawWeightTest, AffineInGapOnRandomPairs) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-kHalfPi, kHalfPi), al(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng), alpha = al(rng);
    const Angle ra = Angle::FromRadians(a), rb = Angle::FromRadians(b);
    const double want = 1.0 + alpha * std::abs(ra.radians() - rb.radians()) / kPi;
    ASSERT_NEAR(raw_weight(ra, rb, alpha).omega, want, 4 * std::numeric_limits<double>::epsilon() * want);
  }
}

TEST(RawWeightTest, AlphaZeroAndInvalidAlpha) {
  EXPECT_EQ(raw_weight(Angle::FromRadians(1.0), Angle::FromRadians(-1.0), 0.0).omega, 1.0);
  EXPECT_THROW(raw_weight(Angle{}, Angle{}, -1.0), std::invalid_argument);
  EXPECT_THROW(raw_weight(Angle{}, Angle{}, std::nan("")), std::invalid_argument);
}

TEST(RawWeightTest, CircularGapNeverExceedsLiteral) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-kHalfPi, kHalfPi);
  for (int i = 0; i < 1000; ++i) {
    const Angle a = Angle::FromRadians(u(rng)), b = Angle::FromRadians(u(rng));
    ASSERT_LE(raw_weight(a, b, 50.0, true).omega, raw_weight(a, b, 50.0).omega + 1e-12);
  }
}

// ---------------------------------------------------------------------------

TEST(BaseLossTest, MatchesScalarFormulas) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 200; ++i) {
    PairRecord p;
    p.teacher = RandomCell(3, rng);
    p.student = RandomCell(3, rng);
    double want = 0;
    for (int k = 0; k < 3; ++k) want += oracle::bce(p.student.scores[k], p.teacher.scores[k]);
    for (int m = 0; m < 4; ++m) want += oracle::smooth_l1(p.student.ltrb[m] - p.teacher.ltrb[m]);
    want += oracle::smooth_l1(p.student.angle.radians() - p.teacher.angle.radians());
    want += oracle::bce(p.student.centerness, p.teacher.centerness);
    ASSERT_NEAR(base_unsup_loss(p).total(), want, 1e-12);
  }
}

TEST(BaseLossTest, IdenticalRegressionGivesZeroRegTerm) {
  std::mt19937_64 rng(14);
  PairRecord p;
  p.teacher = RandomCell(2, rng);
  p.student = p.teacher;
  EXPECT_EQ(base_unsup_loss(p).reg, 0.0);
}

TEST(BaseLossTest, RejectsClassMismatch) {
  std::mt19937_64 rng(15);
  PairRecord p;
  p.teacher = RandomCell(2, rng);
  p.student = RandomCell(3, rng);
  EXPECT_THROW(base_unsup_loss(p), std::invalid_argument);
}

TEST(BaseLossTest, ElementGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> p(0.02, 0.98), x(-3, 3);
  for (int i = 0; i < 500; ++i) {
    const double pv = p(rng), q = p(rng), xv = x(rng);
    const double h = 1e-6;
    ASSERT_NEAR(bce_grad(pv, q), (bce(pv + h, q) - bce(pv - h, q)) / (2 * h), 1e-5);
    if (std::abs(std::abs(xv) - 1.0) > 1e-3) {
      ASSERT_NEAR(smooth_l1_grad(xv), (smooth_l1(xv + h) - smooth_l1(xv - h)) / (2 * h), 1e-6);
    }
  }
}

TEST(BceTest, ClampedRegionHasZeroGradient) {
  EXPECT_EQ(bce_grad(0.0, 0.5), 0.0);
  EXPECT_EQ(bce_grad(1.0, 0.5), 0.0);
  EXPECT_TRUE(std::isfinite(bce(0.0, 1.0)));
}

// ---------------------------------------------------------------------------

TEST(RawLossTest, EmptyIsZero) {
  EXPECT_EQ(raw_loss({}, 50.0), 0.0);
  const UnsupResult r = unsup_loss({}, UnsupConfig{});
  EXPECT_TRUE(r.label_free);
  EXPECT_EQ(r.loss.total, 0.0);
}

TEST(RawLossTest, AlphaZeroIsPlainSum) {
  std::mt19937_64 rng(17);
  const auto pairs = RandomPairs(9, 2, rng);
  double want = 0;
  for (const auto& p : pairs) want += base_unsup_loss(p).total();
  EXPECT_NEAR(raw_loss(pairs, 0.0), want, 1e-12);
  EXPECT_NEAR(raw_loss(pairs, 0.0, RawNormalize::kMean), want / 9, 1e-12);
  EXPECT_NEAR(raw_loss(pairs, 0.0, RawNormalize::kSumWeights), want / 9, 1e-12);
}

TEST(RawLossTest, WeightedSumByHand) {
  std::mt19937_64 rng(18);
  const auto pairs = RandomPairs(6, 1, rng);
  double want = 0, sw = 0;
  for (const auto& p : pairs) {
    const double gap = std::abs(p.teacher.angle.radians() - p.student.angle.radians());
    const double w = 1 + 10.0 * gap / kPi;
    want += w * base_unsup_loss(p).total();
    sw += w;
  }
  EXPECT_NEAR(raw_loss(pairs, 10.0), want, 1e-10);
  EXPECT_NEAR(raw_loss(pairs, 10.0, RawNormalize::kSumWeights), want / sw, 1e-12);
}

TEST(RawLossTest, NeverBelowUnweighted) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 100; ++i) {
    const auto pairs = RandomPairs(1 + i % 10, 2, rng);
    ASSERT_GE(raw_loss(pairs, 50.0), raw_loss(pairs, 0.0) - 1e-12);
  }
}

TEST(RawNormalizeTest, ParseRoundTrip) {
  for (auto n : {RawNormalize::kNone, RawNormalize::kMean, RawNormalize::kSumWeights}) {
    EXPECT_EQ(parse_raw_normalize(to_string(n)), n);
  }
  EXPECT_THROW(parse_raw_normalize("avg"), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(DistributionTest, TeacherArgmaxSelectsBothSides) {
  PairRecord p;
  p.teacher.scores = {0.2, 0.7, 0.1};
  p.student.scores = {0.9, 0.3, 0.5};
  const std::vector<PairRecord> v{p};
  EXPECT_EQ(selected_classes(v)[0], 1);
  EXPECT_NEAR(scores_to_distribution(v, Side::kTeacher).weights()[0], std::exp(0.7), 1e-15);
  EXPECT_NEAR(scores_to_distribution(v, Side::kStudent).weights()[0], std::exp(0.3), 1e-15);
  EXPECT_THROW(scores_to_distribution({}, Side::kStudent), std::invalid_argument);
}

TEST(UnsupLossTest, ComponentsAddUp) {
  std::mt19937_64 rng(20);
  const auto pairs = RandomPairs(12, 2, rng);
  UnsupConfig cfg;
  const UnsupResult r = unsup_loss(pairs, cfg);
  EXPECT_NEAR(r.loss.raw, raw_loss(pairs, cfg.alpha), 1e-10);
  EXPECT_NEAR(r.loss.unsup, r.loss.raw + r.loss.gc, 1e-15);
  ASSERT_TRUE(r.transport.has_value());
  EXPECT_NEAR(r.loss.gc,
              gc_loss(scores_to_distribution(pairs, Side::kTeacher),
                      scores_to_distribution(pairs, Side::kStudent), *r.transport),
              1e-15);
}

TEST(UnsupLossTest, FlagsDisableTerms) {
  std::mt19937_64 rng(21);
  const auto pairs = RandomPairs(8, 1, rng);
  UnsupConfig cfg;
  cfg.use_gc = false;
  cfg.use_raw = false;
  const UnsupResult r = unsup_loss(pairs, cfg);
  EXPECT_EQ(r.loss.gc, 0.0);
  EXPECT_FALSE(r.transport.has_value());
  for (double w : r.omegas) EXPECT_EQ(w, 1.0);
  EXPECT_NEAR(r.loss.raw, raw_loss(pairs, 0.0), 1e-12);

  cfg.use_gc = true;
  cfg.cost = {false, false};
  EXPECT_FALSE(unsup_loss(pairs, cfg).transport.has_value());
}

TEST(UnsupLossTest, GradientMatchesFiniteDifferencesWithFrozenTerms) {
  std::mt19937_64 rng(22);
  const RawNormalize norms[] = {RawNormalize::kNone, RawNormalize::kMean,
                                RawNormalize::kSumWeights};
  for (int rep = 0; rep < 30; ++rep) {
    const int k = 1 + rep % 3;
    auto pairs = RandomPairs(2 + rep % 6, k, rng);
    UnsupConfig cfg;
    cfg.raw_normalize = norms[rep % 3];
    const UnsupResult base = unsup_loss(pairs, cfg);
    FrozenTerms frozen{base.omegas, base.transport};
    const ChannelLayout lay{k};
    for (size_t i = 0; i < pairs.size(); ++i) {
      for (int ch = 0; ch < lay.count(); ++ch) {
        auto eval = [&](double delta) {
          auto q = pairs;
          std::vector<double> angle{q[i].student.angle.radians()};
          StudentChannel(q[i].student, ch, angle) += delta;
          q[i].student.angle = Angle::FromRadians(angle[0]);
          return unsup_loss(q, cfg, &frozen).loss.total;
        };
        const double h = 1e-6;
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        const double an = base.student_grads[i][ch];
        ASSERT_NEAR(an, fd, 1e-5 * std::max(1.0, std::abs(fd)))
            << "rep " << rep << " pair " << i << " channel " << ch;
      }
    }
  }
}

TEST(UnsupLossTest, FrozenTermsReproduceLiveValue) {
  std::mt19937_64 rng(23);
  const auto pairs = RandomPairs(7, 2, rng);
  const UnsupConfig cfg;
  const UnsupResult live = unsup_loss(pairs, cfg);
  FrozenTerms frozen{live.omegas, live.transport};
  const UnsupResult again = unsup_loss(pairs, cfg, &frozen);
  EXPECT_EQ(live.loss.total, again.loss.total);
  EXPECT_EQ(live.student_grads, again.student_grads);
}

// ---------------------------------------------------------------------------

TEST(SupervisedLossTest, NormalizedByPositives) {
  const GridSpec g{2, 2, 8.0};
  DensePredictionMap pred(g, 1);
  TargetMap t(g, 1);
  for (int c = 0; c < 4; ++c) {
    auto v = pred.cell(c);
    v[0] = 0.5;
    v[1] = v[2] = v[3] = v[4] = 1.0;
    v[6] = 0.5;
  }
  // Background only: 4 cells of BCE(0.5, 0) divided by max(1, 0).
  SupervisedResult r = supervised_loss(pred, t);
  EXPECT_EQ(r.positives, 0);
  EXPECT_NEAR(r.loss.cls, 4 * std::log(2.0), 1e-12);
  EXPECT_EQ(r.loss.reg, 0.0);

  t.foreground[0] = t.foreground[3] = 1;
  t.class_id[0] = t.class_id[3] = 0;
  t.ltrb[0] = t.ltrb[3] = {1.0, 1.0, 1.0, 1.0};
  t.centerness[0] = t.centerness[3] = 0.5;
  r = supervised_loss(pred, t);
  EXPECT_EQ(r.positives, 2);
  EXPECT_NEAR(r.loss.cls, 4 * std::log(2.0) / 2, 1e-12);
  EXPECT_NEAR(r.loss.ctr, 2 * std::log(2.0) / 2, 1e-12);
  EXPECT_NEAR(r.loss.reg, 0.0, 1e-15);
}

TEST(SupervisedLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> s(0.05, 0.95), r(0.2, 3.0), a(-1.2, 1.2);
  const GridSpec g{3, 3, 8.0};
  for (int rep = 0; rep < 10; ++rep) {
    DensePredictionMap pred(g, 2);
    TargetMap t(g, 2);
    for (int c = 0; c < g.cells(); ++c) {
      auto v = pred.cell(c);
      v[0] = s(rng);
      v[1] = s(rng);
      for (int m = 0; m < 4; ++m) v[2 + m] = r(rng);
      v[6] = a(rng);
      v[7] = s(rng);
      if (c % 2 == 0) {
        t.foreground[c] = 1;
        t.class_id[c] = c % 4 == 0 ? 0 : 1;
        for (int m = 0; m < 4; ++m) t.ltrb[c][m] = r(rng);
        t.angle[c] = a(rng);
        t.centerness[c] = s(rng);
      }
    }
    const SupervisedResult base = supervised_loss(pred, t);
    std::vector<double> x(pred.values().begin(), pred.values().end());
    const auto fd = oracle::numeric_gradient(
        [&](const oracle::Vec& v) {
          DensePredictionMap p = pred;
          std::copy(v.begin(), v.end(), p.values().begin());
          return supervised_loss(p, t).loss.total();
        },
        x, 1e-6);
    ASSERT_LE(oracle::rel_error(base.grad, fd), 1e-5) << rep;
  }
}

TEST(SupervisedLossTest, RejectsShapeMismatch) {
  EXPECT_THROW(supervised_loss(DensePredictionMap({2, 2, 8.0}, 1), TargetMap({2, 3, 8.0}, 1)),
               std::invalid_argument);
}

}  // namespace
}  // namespace obbssl
