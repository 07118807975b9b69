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

// Dense per-cell containers shared by the scene generator, the model, the
// pseudo-labeler and the losses.

#ifndef OBBSSL_GRID_HPP_
#define OBBSSL_GRID_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "obbssl/obb.hpp"

namespace obbssl {

struct GridSpec {
  int height = 32;
  int width = 32;
  double stride = 8.0;  // scene units per cell

  int cells() const { return height * width; }
  int row(int cell) const { return cell / width; }
  int col(int cell) const { return cell % width; }
  int index(int row, int col) const { return row * width + col; }

  /// Cell center in scene coordinates.
  Point2 center(int cell) const {
    return {(col(cell) + 0.5) * stride, (row(cell) + 0.5) * stride};
  }
  /// Cell position in grid coordinates (x = column, y = row).
  Point2 position(int cell) const {
    return {static_cast<double>(col(cell)), static_cast<double>(row(cell))};
  }
  /// Cell index after a horizontal mirror of the grid.
  int mirrored(int cell) const {
    return index(row(cell), width - 1 - col(cell));
  }

  void validate() const {
    if (height < 1 || width < 1 || !(stride > 0.0)) {
      throw std::invalid_argument("GridSpec: need height, width >= 1, stride > 0");
    }
  }

  bool operator==(const GridSpec&) const = default;
};

/// H x W x F real feature grid. Channels flagged odd change sign under a
/// horizontal mirror (e.g. sin 2θ and the along-w coordinate).
struct FeatureField {
  GridSpec grid;
  int channels = 0;
  std::vector<double> data;    // cell-major
  std::vector<uint8_t> odd;    // per channel

  FeatureField() = default;
  FeatureField(GridSpec g, int f)
      : grid(g), channels(f),
        data(static_cast<size_t>(g.cells()) * f, 0.0), odd(f, 0) {}

  std::span<const double> cell(int c) const {
    return {data.data() + static_cast<size_t>(c) * channels,
            static_cast<size_t>(channels)};
  }
  std::span<double> cell(int c) {
    return {data.data() + static_cast<size_t>(c) * channels,
            static_cast<size_t>(channels)};
  }
  double& at(int c, int f) { return data[static_cast<size_t>(c) * channels + f]; }
  double at(int c, int f) const {
    return data[static_cast<size_t>(c) * channels + f];
  }
};

/// Mirror the field horizontally, flipping the sign of odd channels.
inline FeatureField flip_horizontal(const FeatureField& in) {
  FeatureField out = in;
  for (int c = 0; c < in.grid.cells(); ++c) {
    const int src = in.grid.mirrored(c);
    for (int f = 0; f < in.channels; ++f) {
      out.at(c, f) = in.odd[f] ? -in.at(src, f) : in.at(src, f);
    }
  }
  return out;
}

/// Per-cell channel layout of a dense prediction:
/// [scores x K][l t r b][angle][centerness]. Offsets are in stride units.
struct ChannelLayout {
  int classes = 1;

  int count() const { return classes + 6; }
  int score(int k) const { return k; }
  int reg(int m) const { return classes + m; }  // m in 0..3 -> l, t, r, b
  int angle() const { return classes + 4; }
  int centerness() const { return classes + 5; }
};

/// Per-cell class scores, (l, t, r, b, angle) regression and centerness.
class DensePredictionMap {
 public:
  DensePredictionMap() = default;
  DensePredictionMap(GridSpec grid, int num_classes)
      : grid_(grid), layout_{num_classes},
        data_(static_cast<size_t>(grid.cells()) * layout_.count(), 0.0) {
    grid_.validate();
    if (num_classes < 1) {
      throw std::invalid_argument("DensePredictionMap: need >= 1 class");
    }
  }

  const GridSpec& grid() const { return grid_; }
  const ChannelLayout& layout() const { return layout_; }
  int num_classes() const { return layout_.classes; }
  int channels() const { return layout_.count(); }
  int cells() const { return grid_.cells(); }

  std::span<double> cell(int c) {
    return {data_.data() + static_cast<size_t>(c) * channels(),
            static_cast<size_t>(channels())};
  }
  std::span<const double> cell(int c) const {
    return {data_.data() + static_cast<size_t>(c) * channels(),
            static_cast<size_t>(channels())};
  }

  double score(int c, int k) const { return cell(c)[layout_.score(k)]; }
  double reg(int c, int m) const { return cell(c)[layout_.reg(m)]; }
  double angle(int c) const { return cell(c)[layout_.angle()]; }
  double centerness(int c) const { return cell(c)[layout_.centerness()]; }

  /// Index of the largest class score; ties go to the lowest index.
  int best_class(int c) const {
    int best = 0;
    for (int k = 1; k < num_classes(); ++k) {
      if (score(c, k) > score(c, best)) best = k;
    }
    return best;
  }

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const {
    for (int c = 0; c < cells(); ++c) {
      for (double v : cell(c)) {
        if (!std::isfinite(v)) throw std::invalid_argument("prediction: non-finite");
      }
      for (int k = 0; k < num_classes(); ++k) {
        const double s = score(c, k);
        if (!(s > 0.0 && s < 1.0)) {
          throw std::invalid_argument("prediction: score outside (0,1)");
        }
      }
      for (int m = 0; m < 4; ++m) {
        if (reg(c, m) < 0.0) throw std::invalid_argument("prediction: offset < 0");
      }
      const double a = angle(c);
      if (a < -kHalfPi || a >= kHalfPi) {
        throw std::invalid_argument("prediction: angle outside [-pi/2, pi/2)");
      }
      const double ctr = centerness(c);
      if (!(ctr > 0.0 && ctr < 1.0)) {
        throw std::invalid_argument("prediction: centerness outside (0,1)");
      }
    }
  }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

 private:
  GridSpec grid_;
  ChannelLayout layout_;
  std::vector<double> data_;
};

/// Mirror a prediction map horizontally: cells are permuted, l and r swap,
/// and the angle changes sign.
inline DensePredictionMap flip_horizontal(const DensePredictionMap& in) {
  DensePredictionMap out(in.grid(), in.num_classes());
  const ChannelLayout& lay = in.layout();
  for (int c = 0; c < in.cells(); ++c) {
    const auto src = in.cell(in.grid().mirrored(c));
    auto dst = out.cell(c);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[lay.reg(0)] = src[lay.reg(2)];
    dst[lay.reg(2)] = src[lay.reg(0)];
    dst[lay.angle()] = Angle::FromRadians(-src[lay.angle()]).radians();
  }
  return out;
}

/// Dense training targets on the prediction grid.
struct TargetMap {
  GridSpec grid;
  int num_classes = 1;
  std::vector<uint8_t> foreground;  // per cell
  std::vector<int> class_id;        // -1 on background
  std::vector<std::array<double, 4>> ltrb;  // stride units
  std::vector<double> angle;
  std::vector<double> centerness;
  std::vector<int> box_index;  // source box, -1 on background

  TargetMap() = default;
  TargetMap(GridSpec g, int k)
      : grid(g), num_classes(k), foreground(g.cells(), 0),
        class_id(g.cells(), -1), ltrb(g.cells(), {0.0, 0.0, 0.0, 0.0}),
        angle(g.cells(), 0.0), centerness(g.cells(), 0.0),
        box_index(g.cells(), -1) {}

  int positives() const {
    int n = 0;
    for (uint8_t f : foreground) n += f;
    return n;
  }
};

}  // namespace obbssl

#endif  // OBBSSL_GRID_HPP_
