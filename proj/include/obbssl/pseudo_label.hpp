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

// Dense pseudo-labels from a teacher prediction map.
//
// The teacher map is decoded to boxes and filtered by rotated NMS. Cells
// whose centers fall inside a surviving box form the informative region; a
// random subset of them (sample_ratio of the region, rounded up) becomes the
// pseudo-label set, and the student is read at the same cells.

#ifndef OBBSSL_PSEUDO_LABEL_HPP_
#define OBBSSL_PSEUDO_LABEL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "obbssl/grid.hpp"
#include "obbssl/losses.hpp"
#include "obbssl/obb.hpp"

namespace obbssl {

struct SamplerConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.1;
  double sample_ratio = 0.25;
  uint64_t seed = 0;
  bool weighted_by_score = false;

  void validate() const {
    if (!(score_threshold > 0.0 && score_threshold < 1.0)) {
      throw std::invalid_argument("SamplerConfig: score_threshold must be in (0,1)");
    }
    if (!(nms_iou > 0.0 && nms_iou < 1.0)) {
      throw std::invalid_argument("SamplerConfig: nms_iou must be in (0,1)");
    }
    if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) {
      throw std::invalid_argument("SamplerConfig: sample_ratio must be in (0,1]");
    }
  }
};

struct ScoredBox {
  OrientedBox box;
  double score = 0.0;
  int cell = -1;
};

/// Box predicted at `cell`: offsets are measured from the cell center in the
/// box frame and scaled by the stride. nullopt for a degenerate size.
inline std::optional<OrientedBox> decode_cell(const DensePredictionMap& map,
                                              int cell) {
  const double s = map.grid().stride;
  const double l = map.reg(cell, 0), t = map.reg(cell, 1);
  const double r = map.reg(cell, 2), b = map.reg(cell, 3);
  const double w = (l + r) * s, h = (t + b) * s;
  if (!(w > 1e-9) || !(h > 1e-9)) return std::nullopt;
  const Angle a = Angle::FromRadians(map.angle(cell));
  const Point2 p = map.grid().center(cell);
  const double c = std::cos(a.radians()), sn = std::sin(a.radians());
  const double du = 0.5 * (r - l) * s, dv = 0.5 * (b - t) * s;
  return OrientedBox(p.x + c * du - sn * dv, p.y + sn * du + c * dv, w, h, a,
                     map.best_class(cell));
}

/// One box per cell whose max-class score x centerness exceeds the
/// threshold, in cell order.
inline std::vector<ScoredBox> decode_boxes(const DensePredictionMap& map,
                                           double score_threshold) {
  std::vector<ScoredBox> out;
  for (int c = 0; c < map.cells(); ++c) {
    const double score = map.score(c, map.best_class(c)) * map.centerness(c);
    if (!(score > score_threshold)) continue;
    auto box = decode_cell(map, c);
    if (!box) continue;
    out.push_back({*box, score, c});
  }
  return out;
}

/// Greedy score-descending suppression: a box is dropped when its rotated
/// IoU with an already kept box exceeds `iou_thresh`. Equal scores keep the
/// lower cell index first.
inline std::vector<ScoredBox> rotated_nms(std::vector<ScoredBox> candidates,
                                          double iou_thresh) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const ScoredBox& a, const ScoredBox& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.cell < b.cell;
                   });
  std::vector<ScoredBox> kept;
  for (const auto& cand : candidates) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (rotated_iou(cand.box, k.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

/// Cells whose centers lie inside at least one box, ascending.
inline std::vector<int> informative_cells(const GridSpec& grid,
                                          std::span<const ScoredBox> boxes) {
  std::vector<int> out;
  for (int c = 0; c < grid.cells(); ++c) {
    const Point2 p = grid.center(c);
    for (const auto& b : boxes) {
      if (contains_point(b.box, p)) {
        out.push_back(c);
        break;
      }
    }
  }
  return out;
}

inline size_t sample_count(size_t candidates, double ratio) {
  if (candidates == 0) return 0;
  const double raw = ratio * static_cast<double>(candidates);
  size_t k = static_cast<size_t>(std::ceil(raw - 1e-9));
  return std::clamp<size_t>(k, 1, candidates);
}

/// Random subset of the informative region, ceil(ratio * |region|) cells,
/// returned in ascending cell order.
template <typename Rng>
std::vector<int> sample_dense_labels(const DensePredictionMap& map,
                                     std::span<const ScoredBox> boxes,
                                     const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<int> cand = informative_cells(map.grid(), boxes);
  const size_t k = sample_count(cand.size(), cfg.sample_ratio);
  if (k == 0) return {};
  if (cfg.weighted_by_score) {
    // Efraimidis-Spirakis: keep the k largest u^(1/w).
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::pair<double, int>> keyed;
    keyed.reserve(cand.size());
    for (int c : cand) {
      const double w = map.score(c, map.best_class(c)) * map.centerness(c);
      const double u = std::max(unif(rng), 1e-300);
      keyed.emplace_back(std::log(u) / std::max(w, 1e-12), c);
    }
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    cand.clear();
    for (size_t i = 0; i < k; ++i) cand.push_back(keyed[i].second);
  } else {
    for (size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<size_t> pick(i, cand.size() - 1);
      std::swap(cand[i], cand[pick(rng)]);
    }
    cand.resize(k);
  }
  std::sort(cand.begin(), cand.end());
  return cand;
}

/// One pair per position, reading both maps at the same cell.
inline std::vector<PairRecord> pair_with_student(
    std::span<const int> positions, const DensePredictionMap& teacher_map,
    const DensePredictionMap& student_map) {
  if (!(teacher_map.grid() == student_map.grid()) ||
      teacher_map.num_classes() != student_map.num_classes()) {
    throw std::invalid_argument("pair_with_student: map shape mismatch");
  }
  std::vector<PairRecord> pairs;
  pairs.reserve(positions.size());
  for (int c : positions) {
    if (c < 0 || c >= teacher_map.cells()) {
      throw std::invalid_argument("pair_with_student: cell out of range");
    }
    PairRecord p;
    p.cell = c;
    p.position = teacher_map.grid().position(c);
    p.teacher = CellPrediction::FromMap(teacher_map, c);
    p.student = CellPrediction::FromMap(student_map, c);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace obbssl

#endif  // OBBSSL_PSEUDO_LABEL_HPP_
