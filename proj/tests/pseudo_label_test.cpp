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

#include "obbssl/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <map>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "obbssl/rng.hpp"

namespace obbssl {
namespace {

void SetCell(DensePredictionMap& m, int c, double score, double l, double t, double r,
             double b, double angle, double ctr = 0.9) {
  auto v = m.cell(c);
  const auto& lay = m.layout();
  for (int k = 0; k < m.num_classes(); ++k) v[lay.score(k)] = 0.01;
  v[lay.score(0)] = score;
  v[lay.reg(0)] = l;
  v[lay.reg(1)] = t;
  v[lay.reg(2)] = r;
  v[lay.reg(3)] = b;
  v[lay.angle()] = angle;
  v[lay.centerness()] = ctr;
}

DensePredictionMap Blank(GridSpec g, int k = 1) {
  DensePredictionMap m(g, k);
  for (int c = 0; c < m.cells(); ++c) SetCell(m, c, 0.01, 1, 1, 1, 1, 0.0, 0.01);
  return m;
}

TEST(DecodeCellTest, SymmetricOffsetsCenterOnCell) {
  DensePredictionMap m = Blank({4, 4, 8.0});
  SetCell(m, 5, 0.9, 1.5, 0.5, 1.5, 0.5, 0.3);
  const auto box = decode_cell(m, 5);
  ASSERT_TRUE(box.has_value());
  EXPECT_NEAR(box->cx, 12.0, 1e-12);
  EXPECT_NEAR(box->cy, 12.0, 1e-12);
  EXPECT_NEAR(box->w, 24.0, 1e-12);
  EXPECT_NEAR(box->h, 8.0, 1e-12);
  EXPECT_NEAR(box->angle.radians(), 0.3, 1e-15);
}

TEST(DecodeCellTest, OffsetsAreInTheBoxFrame) {
  DensePredictionMap m = Blank({4, 4, 8.0});
  // r - l = 2 along the box's w axis, which points along +y at angle pi/2.
  SetCell(m, 0, 0.9, 0.0, 1.0, 2.0, 1.0, -kHalfPi);
  const auto box = decode_cell(m, 0);
  ASSERT_TRUE(box.has_value());
  const double c = std::cos(-kHalfPi), s = std::sin(-kHalfPi);
  EXPECT_NEAR(box->cx, 4.0 + c * 8.0, 1e-12);
  EXPECT_NEAR(box->cy, 4.0 + s * 8.0, 1e-12);
  // The cell center sits on the box's left edge.
  EXPECT_NEAR(signed_edge_distance(*box, {4.0, 4.0}), 0.0, 1e-9);
}

TEST(DecodeCellTest, DegenerateSizeIsSkipped) {
  DensePredictionMap m = Blank({2, 2, 8.0});
  SetCell(m, 0, 0.9, 0.0, 1.0, 0.0, 1.0, 0.0);
  EXPECT_FALSE(decode_cell(m, 0).has_value());
}

TEST(DecodeBoxesTest, ThresholdOnScoreTimesCenterness) {
  DensePredictionMap m = Blank({3, 3, 8.0});
  SetCell(m, 2, 0.5, 1, 1, 1, 1, 0.0, 0.5);   // 0.25
  SetCell(m, 7, 0.5, 1, 1, 1, 1, 0.0, 0.15);  // 0.075
  const auto boxes = decode_boxes(m, 0.1);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0].cell, 2);
  EXPECT_NEAR(boxes[0].score, 0.25, 1e-15);
}

TEST(RotatedNmsTest, DuplicateIsSuppressed) {
  const OrientedBox b(10, 10, 8, 4, 0.2);
  const auto kept = rotated_nms({{b, 0.6, 3}, {b, 0.9, 1}}, 0.1);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].cell, 1);
}

TEST(RotatedNmsTest, DisjointBoxesSurviveInScoreOrder) {
  const auto kept = rotated_nms(
      {{OrientedBox(0, 0, 2, 2, 0.0), 0.2, 0}, {OrientedBox(10, 0, 2, 2, 0.0), 0.7, 1},
       {OrientedBox(20, 0, 2, 2, 0.0), 0.5, 2}},
      0.1);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].cell, 1);
  EXPECT_EQ(kept[1].cell, 2);
  EXPECT_EQ(kept[2].cell, 0);
}

TEST(RotatedNmsTest, TiesKeepLowerCell) {
  const OrientedBox b(0, 0, 4, 4, 0.0);
  const auto kept = rotated_nms({{b, 0.5, 9}, {b, 0.5, 4}}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].cell, 4);
}

TEST(RotatedNmsTest, KeptBoxesPairwiseBelowThreshold) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> p(0, 40), s(2, 12), a(-1.5, 1.5), sc(0, 1);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<ScoredBox> cands;
    for (int i = 0; i < 30; ++i) {
      cands.push_back({OrientedBox(p(rng), p(rng), s(rng), s(rng), a(rng)), sc(rng), i});
    }
    const auto kept = rotated_nms(cands, 0.3);
    for (size_t i = 0; i < kept.size(); ++i) {
      for (size_t j = i + 1; j < kept.size(); ++j) {
        ASSERT_LE(rotated_iou(kept[i].box, kept[j].box), 0.3);
      }
    }
    // Every dropped box overlaps a kept one with a higher score.
    for (const auto& c : cands) {
      if (std::any_of(kept.begin(), kept.end(), [&](const auto& k) { return k.cell == c.cell; })) {
        continue;
      }
      ASSERT_TRUE(std::any_of(kept.begin(), kept.end(), [&](const auto& k) {
        return k.score >= c.score && rotated_iou(k.box, c.box) > 0.3;
      }));
    }
  }
}

TEST(InformativeCellsTest, CellsInsideBox) {
  const GridSpec g{4, 4, 8.0};
  // Covers the centers of cells in rows 1..2, columns 1..2.
  const std::vector<ScoredBox> boxes{{OrientedBox(16, 16, 15, 15, 0.0), 0.9, 0}};
  EXPECT_EQ(informative_cells(g, boxes), (std::vector<int>{5, 6, 9, 10}));
  EXPECT_TRUE(informative_cells(g, {}).empty());
}

TEST(SampleCountTest, Examples) {
  EXPECT_EQ(sample_count(0, 0.25), 0u);
  EXPECT_EQ(sample_count(8, 0.25), 2u);
  EXPECT_EQ(sample_count(9, 0.25), 3u);
  EXPECT_EQ(sample_count(3, 0.125), 1u);
  EXPECT_EQ(sample_count(10, 1.0), 10u);
  EXPECT_EQ(sample_count(40, 0.1), 4u);  // no round-up from 4.000...01
}

TEST(SampleDenseLabelsTest, SizeSubsetOrderAndDeterminism) {
  DensePredictionMap m = Blank({8, 8, 8.0});
  const std::vector<ScoredBox> boxes{{OrientedBox(32, 32, 40, 24, 0.4), 0.9, 0}};
  const auto region = informative_cells(m.grid(), boxes);
  ASSERT_GT(region.size(), 10u);
  for (double ratio : {0.125, 0.25, 0.5, 1.0}) {
    for (bool weighted : {false, true}) {
      SamplerConfig cfg;
      cfg.sample_ratio = ratio;
      cfg.weighted_by_score = weighted;
      Rng r1 = make_stream(5, Stream::kSample), r2 = make_stream(5, Stream::kSample);
      const auto s1 = sample_dense_labels(m, boxes, cfg, r1);
      const auto s2 = sample_dense_labels(m, boxes, cfg, r2);
      EXPECT_EQ(s1, s2);
      EXPECT_EQ(s1.size(), sample_count(region.size(), ratio));
      EXPECT_TRUE(std::is_sorted(s1.begin(), s1.end()));
      EXPECT_EQ(std::set<int>(s1.begin(), s1.end()).size(), s1.size());
      for (int c : s1) EXPECT_TRUE(std::binary_search(region.begin(), region.end(), c));
    }
  }
}

TEST(SampleDenseLabelsTest, UniformSamplingCoversRegion) {
  DensePredictionMap m = Blank({6, 6, 8.0});
  const std::vector<ScoredBox> boxes{{OrientedBox(24, 24, 30, 30, 0.0), 0.9, 0}};
  const auto region = informative_cells(m.grid(), boxes);
  SamplerConfig cfg;
  cfg.sample_ratio = 0.25;
  std::map<int, int> hits;
  Rng rng = make_stream(9, Stream::kSample);
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    for (int c : sample_dense_labels(m, boxes, cfg, rng)) ++hits[c];
  }
  const double expect = trials * static_cast<double>(sample_count(region.size(), 0.25)) /
                        region.size();
  for (int c : region) EXPECT_NEAR(hits[c], expect, 0.15 * expect) << c;
}

TEST(SampleDenseLabelsTest, EmptyRegionGivesNoPairs) {
  DensePredictionMap m = Blank({4, 4, 8.0});
  Rng rng = make_stream(1, Stream::kSample);
  EXPECT_TRUE(sample_dense_labels(m, {}, SamplerConfig{}, rng).empty());
}

TEST(SamplerConfigTest, Validation) {
  SamplerConfig c;
  c.sample_ratio = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.sample_ratio = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SamplerConfig{};
  c.nms_iou = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(PairWithStudentTest, ReadsBothMapsAtTheSameCell) {
  DensePredictionMap t = Blank({3, 3, 8.0}, 2), s = Blank({3, 3, 8.0}, 2);
  SetCell(t, 4, 0.8, 1, 2, 3, 4, 0.5);
  SetCell(s, 4, 0.3, 4, 3, 2, 1, -0.5);
  const std::vector<int> pos{4};
  const auto pairs = pair_with_student(pos, t, s);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].position.x, 1.0);
  EXPECT_EQ(pairs[0].position.y, 1.0);
  EXPECT_EQ(pairs[0].teacher.scores[0], 0.8);
  EXPECT_EQ(pairs[0].student.ltrb[0], 4.0);
  EXPECT_EQ(pairs[0].student.angle.radians(), -0.5);
  const std::vector<int> bad{9};
  EXPECT_THROW(pair_with_student(bad, t, s), std::invalid_argument);
  EXPECT_THROW(pair_with_student(pos, t, Blank({3, 4, 8.0}, 2)), std::invalid_argument);
}

}  // namespace
}  // namespace obbssl
