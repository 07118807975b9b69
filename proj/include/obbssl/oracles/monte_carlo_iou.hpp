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

#ifndef OBBSSL_ORACLES_MONTE_CARLO_IOU_HPP_
#define OBBSSL_ORACLES_MONTE_CARLO_IOU_HPP_

#include <algorithm>
#include <cmath>
#include <random>

#include "obbssl/obb.hpp"

namespace obbssl {

/// IoU estimated by uniform point sampling over the bounding rectangle of
/// both boxes.
template <typename RngT>
double monte_carlo_iou(const OrientedBox& a, const OrientedBox& b, long samples, RngT& rng) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto* box : {&a, &b}) {
    for (const Point2& p : obb_to_polygon(*box)) {
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
  }
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
  long inter = 0, uni = 0;
  for (long i = 0; i < samples; ++i) {
    const Point2 p{ux(rng), uy(rng)};
    const bool ia = contains_point(a, p), ib = contains_point(b, p);
    inter += ia && ib;
    uni += ia || ib;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace obbssl

#endif  // OBBSSL_ORACLES_MONTE_CARLO_IOU_HPP_
