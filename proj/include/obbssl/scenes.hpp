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

// Synthetic aerial-style scenes: dense, regularly arranged oriented boxes,
// hand-built feature fields standing in for backbone features, and dense
// anchor-free training targets.

#ifndef OBBSSL_SCENES_HPP_
#define OBBSSL_SCENES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "obbssl/grid.hpp"
#include "obbssl/obb.hpp"
#include "obbssl/rng.hpp"

namespace obbssl {

enum class LayoutKind { kGrid, kRows, kClusters, kScattered };

inline std::string to_string(LayoutKind k) {
  switch (k) {
    case LayoutKind::kGrid: return "grid";
    case LayoutKind::kRows: return "rows";
    case LayoutKind::kClusters: return "clusters";
    case LayoutKind::kScattered: return "scattered";
  }
  return "grid";
}

inline LayoutKind parse_layout(const std::string& s) {
  if (s == "grid") return LayoutKind::kGrid;
  if (s == "rows") return LayoutKind::kRows;
  if (s == "clusters") return LayoutKind::kClusters;
  if (s == "scattered") return LayoutKind::kScattered;
  throw std::invalid_argument("unknown layout kind: " + s);
}

struct SceneConfig {
  double canvas_height = 256.0;
  double canvas_width = 256.0;
  LayoutKind layout = LayoutKind::kGrid;
  int min_count = 3;
  int max_count = 9;
  double min_scale = 0.9;  // multiplier on the per-class base size
  double max_scale = 1.1;
  double angle_jitter = 0.05;  // radians, uniform +-jitter around the shared angle
  int num_classes = 3;
  uint64_t seed = 0;

  void validate() const {
    if (!(canvas_height > 0.0 && canvas_width > 0.0)) {
      throw std::invalid_argument("SceneConfig: canvas must be positive");
    }
    if (min_count < 1 || max_count < min_count) {
      throw std::invalid_argument("SceneConfig: need 1 <= min_count <= max_count");
    }
    if (!(min_scale > 0.0) || max_scale < min_scale) {
      throw std::invalid_argument("SceneConfig: bad size range");
    }
    if (!(angle_jitter >= 0.0)) {
      throw std::invalid_argument("SceneConfig: angle_jitter must be >= 0");
    }
    if (num_classes < 1) throw std::invalid_argument("SceneConfig: num_classes < 1");
  }
};

/// Base (w, h) of class k in scene units; classes differ in size and aspect.
inline std::pair<double, double> class_base_size(int k) {
  return {36.0 + 8.0 * k, 16.0 + 4.0 * k};
}

struct Scene {
  std::vector<OrientedBox> boxes;
  SceneConfig config;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline bool inside_canvas(const OrientedBox& b, const SceneConfig& cfg) {
  for (const Point2& p : obb_to_polygon(b)) {
    if (p.x < 0.0 || p.y < 0.0 || p.x > cfg.canvas_width ||
        p.y > cfg.canvas_height) {
      return false;
    }
  }
  return true;
}

inline bool overlaps(const OrientedBox& b, std::span<const OrientedBox> placed) {
  for (const auto& o : placed) {
    if (rotated_iou(b, o) > 0.0) return true;
  }
  return false;
}

struct Proto {
  double w, h;
  int cls;
};

// A rows x cols lattice of boxes around `center`, lattice axes rotated by
// `axis`, each box at angle axis + box_turn + jitter.
inline std::vector<OrientedBox> lattice(const std::vector<Proto>& protos,
                                        Point2 center, double axis,
                                        double box_turn, int cols,
                                        double pitch_u, double pitch_v,
                                        const std::vector<double>& jitter) {
  const int n = static_cast<int>(protos.size());
  const int rows = (n + cols - 1) / cols;
  std::vector<OrientedBox> out;
  const double c = std::cos(axis), s = std::sin(axis);
  for (int i = 0; i < n; ++i) {
    const int r = i / cols, q = i % cols;
    const double u = (q - 0.5 * (cols - 1)) * pitch_u;
    const double v = (r - 0.5 * (rows - 1)) * pitch_v;
    out.emplace_back(center.x + c * u - s * v, center.y + s * u + c * v,
                     protos[i].w, protos[i].h,
                     Angle::FromRadians(axis + box_turn + jitter[i]),
                     protos[i].cls);
  }
  return out;
}

}  // namespace detail

/// Places min_count..max_count boxes according to cfg.layout. Throws
/// GenerationError when the objects cannot be packed on the canvas.
template <typename RngT>
Scene generate_scene(const SceneConfig& cfg, RngT& rng) {
  cfg.validate();
  std::uniform_int_distribution<int> count_dist(cfg.min_count, cfg.max_count);
  std::uniform_int_distribution<int> class_dist(0, cfg.num_classes - 1);
  std::uniform_real_distribution<double> scale_dist(cfg.min_scale, cfg.max_scale);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle_dist(-kHalfPi, kHalfPi);
  std::uniform_real_distribution<double> jitter_dist(-cfg.angle_jitter,
                                                     cfg.angle_jitter);

  const int n = count_dist(rng);
  std::vector<detail::Proto> protos;
  std::vector<double> jitter;
  double max_w = 0.0, max_h = 0.0;
  for (int i = 0; i < n; ++i) {
    const int cls = class_dist(rng);
    const auto [bw, bh] = class_base_size(cls);
    const double sc = scale_dist(rng);
    protos.push_back({bw * sc, bh * sc, cls});
    jitter.push_back(cfg.angle_jitter > 0.0 ? jitter_dist(rng) : 0.0);
    max_w = std::max(max_w, bw * sc);
    max_h = std::max(max_h, bh * sc);
  }

  Scene scene;
  scene.config = cfg;
  constexpr int kAttempts = 400;
  auto random_point = [&] {
    return Point2{unit(rng) * cfg.canvas_width, unit(rng) * cfg.canvas_height};
  };
  auto try_group = [&](const std::vector<OrientedBox>& group) {
    for (const auto& b : group) {
      if (!detail::inside_canvas(b, cfg) || detail::overlaps(b, scene.boxes)) {
        return false;
      }
    }
    for (size_t i = 0; i < group.size(); ++i) {
      for (size_t j = i + 1; j < group.size(); ++j) {
        if (rotated_iou(group[i], group[j]) > 0.0) return false;
      }
    }
    scene.boxes.insert(scene.boxes.end(), group.begin(), group.end());
    return true;
  };
  const double gap = 6.0 + 0.5 * cfg.angle_jitter * max_w;

  auto place_lattice = [&](const std::vector<detail::Proto>& ps,
                           const std::vector<double>& jit, int cols,
                           double row_gap_factor, bool perpendicular) {
    const double turn = perpendicular ? kHalfPi : 0.0;
    const double along = perpendicular ? max_h : max_w;
    const double across = perpendicular ? max_w : max_h;
    const double pu = along + gap;
    const double pv = row_gap_factor * (across + gap);
    for (int a = 0; a < kAttempts; ++a) {
      const double axis = angle_dist(rng);
      if (try_group(detail::lattice(ps, random_point(), axis, turn, cols, pu,
                                    pv, jit))) {
        return true;
      }
    }
    return false;
  };

  bool ok = true;
  switch (cfg.layout) {
    case LayoutKind::kGrid: {
      const int cols = static_cast<int>(std::ceil(std::sqrt(double(n))));
      ok = place_lattice(protos, jitter, cols, 1.0, false);
      break;
    }
    case LayoutKind::kRows: {
      const int rows = n <= 3 ? 1 : (n <= 8 ? 2 : 3);
      const int cols = (n + rows - 1) / rows;
      ok = place_lattice(protos, jitter, cols, 1.3, unit(rng) < 0.5);
      break;
    }
    case LayoutKind::kClusters: {
      const int k = std::min(n, n < 6 ? 2 : 3);
      for (int g = 0; g < k && ok; ++g) {
        const int lo = g * n / k, hi = (g + 1) * n / k;
        std::vector<detail::Proto> ps(protos.begin() + lo, protos.begin() + hi);
        std::vector<double> jit(jitter.begin() + lo, jitter.begin() + hi);
        const int cols = static_cast<int>(std::ceil(std::sqrt(double(ps.size()))));
        ok = place_lattice(ps, jit, cols, 1.0, false);
      }
      break;
    }
    case LayoutKind::kScattered: {
      for (int i = 0; i < n && ok; ++i) {
        bool placed = false;
        for (int a = 0; a < kAttempts && !placed; ++a) {
          const Point2 p = random_point();
          placed = try_group({OrientedBox(p.x, p.y, protos[i].w, protos[i].h,
                                          Angle::FromRadians(angle_dist(rng)),
                                          protos[i].cls)});
        }
        ok = placed;
      }
      break;
    }
  }
  if (!ok) {
    throw GenerationError("generate_scene: cannot pack " + std::to_string(n) +
                          " objects on the canvas");
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Targets.

inline double fcos_centerness(double l, double t, double r, double b) {
  const double lr = std::max(l, r) > 0.0 ? std::min(l, r) / std::max(l, r) : 0.0;
  const double tb = std::max(t, b) > 0.0 ? std::min(t, b) / std::max(t, b) : 0.0;
  return std::sqrt(lr * tb);
}

/// Index of the smallest-area box containing `p`, or nullopt.
inline std::optional<size_t> owning_box(std::span<const OrientedBox> boxes,
                                        const Point2& p) {
  std::optional<size_t> best;
  for (size_t i = 0; i < boxes.size(); ++i) {
    if (!contains_point(boxes[i], p)) continue;
    if (!best || boxes[i].area() < boxes[*best].area()) best = i;
  }
  return best;
}

/// Offsets (l, t, r, b) in stride units from `p` to the edges of `box`.
inline std::array<double, 4> box_offsets(const OrientedBox& box, const Point2& p,
                                         double stride) {
  const Point2 q = to_box_frame(box, p);
  return {(q.x + box.w / 2.0) / stride, (q.y + box.h / 2.0) / stride,
          (box.w / 2.0 - q.x) / stride, (box.h / 2.0 - q.y) / stride};
}

inline TargetMap encode_targets(const Scene& scene, const GridSpec& grid) {
  grid.validate();
  TargetMap t(grid, scene.config.num_classes);
  for (int c = 0; c < grid.cells(); ++c) {
    const Point2 p = grid.center(c);
    const auto owner = owning_box(scene.boxes, p);
    if (!owner) continue;
    const OrientedBox& box = scene.boxes[*owner];
    auto off = box_offsets(box, p, grid.stride);
    for (double& v : off) v = std::max(v, 0.0);
    t.foreground[c] = 1;
    t.class_id[c] = box.class_id;
    t.ltrb[c] = off;
    t.angle[c] = box.angle.radians();
    t.centerness[c] = fcos_centerness(off[0], off[1], off[2], off[3]);
    t.box_index[c] = static_cast<int>(*owner);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Features.

struct RenderConfig {
  double noise_sigma = 0.1;  // additive Gaussian noise on every channel
  double gain_jitter = 0.0;  // per-scene, per-channel gain in [1-g, 1+g]
};

/// Channel layout of rendered features.
struct FeatureLayout {
  int classes = 1;

  static constexpr int kEdgeDistance = 0;
  static constexpr int kSin2 = 1;
  static constexpr int kCos2 = 2;
  static constexpr int kAlongW = 3;
  static constexpr int kAlongH = 4;
  int class_signature(int k) const { return 5 + k; }
  int noise() const { return 5 + classes; }
  int count() const { return 6 + classes; }
};

inline constexpr double kEdgeDistanceClip = 2.0;  // stride units

/// Noise-free features of one cell: signed edge distance, gated orientation
/// (sin 2θ, cos 2θ), gated box-frame coordinates and gated class one-hot.
/// The gate is 1 inside a box and fades to 0 one stride outside it.
inline void render_cell(const Scene& scene, const GridSpec& grid, int cell,
                        std::span<double> out) {
  const FeatureLayout lay{scene.config.num_classes};
  std::fill(out.begin(), out.end(), 0.0);
  const Point2 p = grid.center(cell);
  out[FeatureLayout::kEdgeDistance] = -kEdgeDistanceClip;
  if (scene.boxes.empty()) return;

  std::optional<size_t> ref = owning_box(scene.boxes, p);
  double sd = 0.0;
  if (ref) {
    sd = signed_edge_distance(scene.boxes[*ref], p);
  } else {
    double best = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < scene.boxes.size(); ++i) {
      const double d = signed_edge_distance(scene.boxes[i], p);
      if (d > best) {
        best = d;
        ref = i;
      }
    }
    sd = best;
  }
  const OrientedBox& box = scene.boxes[*ref];
  const double sd_cells = sd / grid.stride;
  out[FeatureLayout::kEdgeDistance] =
      std::clamp(sd_cells, -kEdgeDistanceClip, kEdgeDistanceClip);
  const double gate = sd_cells >= 0.0 ? 1.0 : std::max(0.0, 1.0 + sd_cells);
  if (gate == 0.0) return;
  const double two = 2.0 * box.angle.radians();
  out[FeatureLayout::kSin2] = gate * std::sin(two);
  out[FeatureLayout::kCos2] = gate * std::cos(two);
  const Point2 q = to_box_frame(box, p);
  out[FeatureLayout::kAlongW] = gate * q.x / grid.stride;
  out[FeatureLayout::kAlongH] = gate * q.y / grid.stride;
  out[lay.class_signature(box.class_id)] = gate;
}

template <typename RngT>
FeatureField render_features(const Scene& scene, const GridSpec& grid,
                             const RenderConfig& rcfg, RngT& rng) {
  grid.validate();
  const FeatureLayout lay{scene.config.num_classes};
  FeatureField field(grid, lay.count());
  field.odd[FeatureLayout::kSin2] = 1;
  field.odd[FeatureLayout::kAlongW] = 1;
  std::vector<double> gain(lay.count(), 1.0);
  if (rcfg.gain_jitter > 0.0) {
    std::uniform_real_distribution<double> g(1.0 - rcfg.gain_jitter,
                                             1.0 + rcfg.gain_jitter);
    for (double& v : gain) v = g(rng);
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int c = 0; c < grid.cells(); ++c) {
    auto cell = field.cell(c);
    render_cell(scene, grid, c, cell);
    for (int f = 0; f < lay.count(); ++f) {
      cell[f] *= gain[f];
      if (rcfg.noise_sigma > 0.0) cell[f] += rcfg.noise_sigma * noise(rng);
    }
  }
  return field;
}

/// Mirror image of a scene about the vertical center line of the canvas.
inline Scene mirror_scene(const Scene& scene) {
  Scene out = scene;
  for (auto& b : out.boxes) {
    b = OrientedBox(scene.config.canvas_width - b.cx, b.cy, b.w, b.h,
                    Angle::FromRadians(-b.angle.radians()), b.class_id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset helpers.

struct DatasetSplit {
  std::vector<int> labeled;
  std::vector<int> unlabeled;
};

/// Random partition of scene indices [0, n) with max(1, round(fraction * n))
/// labeled scenes. Both lists ascending.
inline DatasetSplit split_dataset(int n, double labeled_fraction, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("split_dataset: need n >= 1");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw std::invalid_argument("split_dataset: fraction must be in (0,1]");
  }
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_stream(seed, Stream::kSplit);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  const int k = std::clamp(static_cast<int>(std::lround(labeled_fraction * n)), 1, n);
  DatasetSplit s;
  s.labeled.assign(idx.begin(), idx.begin() + k);
  s.unlabeled.assign(idx.begin() + k, idx.end());
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  return s;
}

/// One JSON record per scene: {"config_hash", "boxes": [[cx, cy, w, h,
/// angle, class], ...]}.
inline std::string serialize_scene(const Scene& scene, const std::string& config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["boxes"] = nlohmann::json::array();
  for (const auto& b : scene.boxes) {
    j["boxes"].push_back({b.cx, b.cy, b.w, b.h, b.angle.radians(), b.class_id});
  }
  return j.dump();
}

inline std::vector<OrientedBox> parse_scene_boxes(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  std::vector<OrientedBox> boxes;
  for (const auto& r : j.at("boxes")) {
    boxes.emplace_back(r.at(0).get<double>(), r.at(1).get<double>(),
                       r.at(2).get<double>(), r.at(3).get<double>(),
                       Angle::FromRadians(r.at(4).get<double>()),
                       r.at(5).get<int>());
  }
  return boxes;
}

}  // namespace obbssl

#endif  // OBBSSL_SCENES_HPP_
