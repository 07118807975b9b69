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

// Losses on pseudo-label / prediction pairs and on ground-truth targets.
//
// The per-pair base loss is BCE on class scores (soft teacher targets),
// smooth-L1 on (l, t, r, b, angle) and BCE on centerness. The rotation-aware
// weight scales each pair's base loss by 1 + alpha * |r_t - r_s| / pi. The
// global-consistency term is the dual OT objective between exp-score
// distributions of teacher and student; its gradient reaches the student
// only through the selected class scores.

#ifndef OBBSSL_LOSSES_HPP_
#define OBBSSL_LOSSES_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "obbssl/grid.hpp"
#include "obbssl/obb.hpp"
#include "obbssl/ot.hpp"

namespace obbssl {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kSmoothL1Beta = 1.0;

/// One cell's prediction, copied out of a DensePredictionMap.
struct CellPrediction {
  std::vector<double> scores;       // K post-sigmoid class scores
  std::array<double, 4> ltrb{};     // stride units
  Angle angle;
  double centerness = 0.5;

  static CellPrediction FromMap(const DensePredictionMap& map, int cell) {
    CellPrediction p;
    const auto& lay = map.layout();
    const auto v = map.cell(cell);
    p.scores.assign(v.begin(), v.begin() + map.num_classes());
    for (int m = 0; m < 4; ++m) p.ltrb[m] = v[lay.reg(m)];
    p.angle = Angle::FromRadians(v[lay.angle()]);
    p.centerness = v[lay.centerness()];
    return p;
  }

  /// argmax over classes, lowest index on ties.
  int best_class() const {
    int best = 0;
    for (size_t k = 1; k < scores.size(); ++k) {
      if (scores[k] > scores[best]) best = static_cast<int>(k);
    }
    return best;
  }
};

/// A pseudo-label (teacher) and a prediction (student) at the same cell.
struct PairRecord {
  int cell = 0;
  Point2 position;  // grid coordinates
  CellPrediction teacher;
  CellPrediction student;
};

// ---------------------------------------------------------------------------
// Elementwise pieces.

inline double clamp_prob(double p) {
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

/// Binary cross-entropy of prediction p against soft target q.
inline double bce(double p, double q) {
  const double pc = clamp_prob(p);
  const double qc = clamp_prob(q);
  return -(qc * std::log(pc) + (1.0 - qc) * std::log(1.0 - pc));
}

/// d bce / d p; zero where the clamp is active.
inline double bce_grad(double p, double q) {
  if (p <= kProbClamp || p >= 1.0 - kProbClamp) return 0.0;
  const double qc = clamp_prob(q);
  return -qc / p + (1.0 - qc) / (1.0 - p);
}

inline double smooth_l1(double x, double beta = kSmoothL1Beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

inline double smooth_l1_grad(double x, double beta = kSmoothL1Beta) {
  if (std::abs(x) < beta) return x / beta;
  return x > 0.0 ? 1.0 : -1.0;
}

// ---------------------------------------------------------------------------
// Base per-pair loss.

struct BaseLoss {
  double cls = 0.0;
  double reg = 0.0;
  double ctr = 0.0;

  double total() const { return cls + reg + ctr; }
};

inline BaseLoss base_unsup_loss(const PairRecord& pair) {
  const auto& t = pair.teacher;
  const auto& s = pair.student;
  if (t.scores.size() != s.scores.size() || t.scores.empty()) {
    throw std::invalid_argument("base_unsup_loss: class count mismatch");
  }
  BaseLoss out;
  for (size_t k = 0; k < t.scores.size(); ++k) {
    out.cls += bce(s.scores[k], t.scores[k]);
  }
  for (int m = 0; m < 4; ++m) out.reg += smooth_l1(s.ltrb[m] - t.ltrb[m]);
  out.reg += smooth_l1(s.angle.radians() - t.angle.radians());
  out.ctr = bce(s.centerness, t.centerness);
  return out;
}

/// Gradient of base_unsup_loss with respect to the student's channels, in
/// ChannelLayout order.
inline std::vector<double> base_unsup_grad(const PairRecord& pair) {
  const auto& t = pair.teacher;
  const auto& s = pair.student;
  const ChannelLayout lay{static_cast<int>(s.scores.size())};
  std::vector<double> g(lay.count(), 0.0);
  for (int k = 0; k < lay.classes; ++k) {
    g[lay.score(k)] = bce_grad(s.scores[k], t.scores[k]);
  }
  for (int m = 0; m < 4; ++m) {
    g[lay.reg(m)] = smooth_l1_grad(s.ltrb[m] - t.ltrb[m]);
  }
  g[lay.angle()] = smooth_l1_grad(s.angle.radians() - t.angle.radians());
  g[lay.centerness()] = bce_grad(s.centerness, t.centerness);
  return g;
}

// ---------------------------------------------------------------------------
// Rotation-aware weighting.

struct RawWeight {
  double sigma = 0.0;
  double omega = 1.0;
};

inline constexpr double kDefaultRawAlpha = 50.0;

/// sigma = alpha * |r_t - r_s| / pi, omega = 1 + sigma. With `circular` the
/// pi-periodic gap replaces the literal one.
inline RawWeight raw_weight(Angle r_t, Angle r_s, double alpha,
                            bool circular = false) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("raw_weight: alpha must be finite and >= 0");
  }
  const double gap = circular ? circular_angle_gap(r_t, r_s) : angle_gap(r_t, r_s);
  RawWeight w;
  w.sigma = alpha * gap / kPi;
  w.omega = 1.0 + w.sigma;
  return w;
}

enum class RawNormalize { kNone, kMean, kSumWeights };

inline RawNormalize parse_raw_normalize(const std::string& s) {
  if (s == "none") return RawNormalize::kNone;
  if (s == "mean") return RawNormalize::kMean;
  if (s == "sum_weights") return RawNormalize::kSumWeights;
  throw std::invalid_argument("unknown raw_normalize: " + s);
}

inline std::string to_string(RawNormalize n) {
  switch (n) {
    case RawNormalize::kNone: return "none";
    case RawNormalize::kMean: return "mean";
    case RawNormalize::kSumWeights: return "sum_weights";
  }
  return "none";
}

namespace detail {

inline double raw_denominator(RawNormalize norm, size_t n, double sum_omega) {
  switch (norm) {
    case RawNormalize::kNone: return 1.0;
    case RawNormalize::kMean: return static_cast<double>(n);
    case RawNormalize::kSumWeights: return sum_omega;
  }
  return 1.0;
}

}  // namespace detail

/// sum_i omega_i * L_u^i. An empty pair set gives 0.
inline double raw_loss(std::span<const PairRecord> pairs, double alpha,
                       RawNormalize norm = RawNormalize::kNone,
                       bool circular = false) {
  if (pairs.empty()) return 0.0;
  double acc = 0.0, sum_omega = 0.0;
  for (const auto& p : pairs) {
    const RawWeight w = raw_weight(p.teacher.angle, p.student.angle, alpha, circular);
    acc += w.omega * base_unsup_loss(p).total();
    sum_omega += w.omega;
  }
  return acc / detail::raw_denominator(norm, pairs.size(), sum_omega);
}

// ---------------------------------------------------------------------------
// Score distributions.

enum class Side { kTeacher, kStudent };

/// c(i): teacher argmax class at each pair.
inline std::vector<int> selected_classes(std::span<const PairRecord> pairs) {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.teacher.best_class());
  return out;
}

/// d_i = exp(s_{i, c(i)}) on the requested side, with c from the teacher.
inline DiscreteDistribution scores_to_distribution(
    std::span<const PairRecord> pairs, Side side) {
  if (pairs.empty()) {
    throw std::invalid_argument("scores_to_distribution: empty pair set");
  }
  std::vector<double> w;
  std::vector<Point2> support;
  w.reserve(pairs.size());
  for (const auto& p : pairs) {
    const int c = p.teacher.best_class();
    const auto& pred = side == Side::kTeacher ? p.teacher : p.student;
    w.push_back(std::exp(pred.scores[c]));
    support.push_back(p.position);
  }
  return DiscreteDistribution(std::move(w), std::move(support));
}

// ---------------------------------------------------------------------------
// Loss bookkeeping.

/// Loss components of one step. raw is the (possibly unweighted) per-pair
/// term, unsup = raw + gc, total = unsup + sup.
struct LossBreakdown {
  double cls = 0.0;
  double reg = 0.0;
  double ctr = 0.0;
  double raw = 0.0;
  double gc = 0.0;
  double unsup = 0.0;
  double sup = 0.0;
  double total = 0.0;

  void finalize() {
    unsup = raw + gc;
    total = unsup + sup;
  }

  LossBreakdown& operator+=(const LossBreakdown& o) {
    cls += o.cls;
    reg += o.reg;
    ctr += o.ctr;
    raw += o.raw;
    gc += o.gc;
    sup += o.sup;
    finalize();
    return *this;
  }
};

struct UnsupConfig {
  double alpha = kDefaultRawAlpha;
  bool use_raw = true;
  bool use_gc = true;
  CostComposition cost;
  RawNormalize raw_normalize = RawNormalize::kNone;
  bool circular_angle_gap = false;
  SinkhornConfig sinkhorn;
};

/// Values held fixed when differentiating: the RAW weights and the transport
/// solution of a previous evaluation.
struct FrozenTerms {
  std::vector<double> omegas;
  std::optional<TransportSolution> transport;
};

struct UnsupResult {
  LossBreakdown loss;
  size_t num_pairs = 0;
  bool label_free = false;
  // d L_u / d(student channels) per pair, ChannelLayout order.
  std::vector<std::vector<double>> student_grads;
  std::vector<double> omegas;
  std::optional<TransportSolution> transport;
};

/// L_u = L_RAW + L_GC on one image's pair set, plus its gradient with
/// respect to every student channel at the paired cells. omega and the
/// transport duals are treated as constants in the gradient; the GC term
/// reaches the selected score through d_s = exp(s).
/// With `frozen`, its omegas and transport solution replace the ones that
/// would be computed from `pairs`.
inline UnsupResult unsup_loss(std::span<const PairRecord> pairs,
                              const UnsupConfig& cfg,
                              const FrozenTerms* frozen = nullptr) {
  UnsupResult res;
  res.num_pairs = pairs.size();
  if (pairs.empty()) {
    res.label_free = true;
    return res;
  }
  const size_t n = pairs.size();
  const double alpha = cfg.use_raw ? cfg.alpha : 0.0;

  std::vector<BaseLoss> base(n);
  res.omegas.resize(n);
  double sum_omega = 0.0;
  for (size_t i = 0; i < n; ++i) {
    base[i] = base_unsup_loss(pairs[i]);
    res.omegas[i] = frozen ? frozen->omegas.at(i)
                           : raw_weight(pairs[i].teacher.angle, pairs[i].student.angle,
                                        alpha, cfg.circular_angle_gap)
                                 .omega;
    sum_omega += res.omegas[i];
    res.loss.cls += base[i].cls;
    res.loss.reg += base[i].reg;
    res.loss.ctr += base[i].ctr;
  }
  const double denom =
      detail::raw_denominator(cfg.raw_normalize, n, sum_omega);
  res.student_grads.resize(n);
  for (size_t i = 0; i < n; ++i) {
    res.loss.raw += res.omegas[i] * base[i].total();
    res.student_grads[i] = base_unsup_grad(pairs[i]);
    for (double& g : res.student_grads[i]) g *= res.omegas[i] / denom;
  }
  res.loss.raw /= denom;

  if (cfg.use_gc && cfg.cost.any()) {
    const std::vector<int> cls = selected_classes(pairs);
    const DiscreteDistribution d_t = scores_to_distribution(pairs, Side::kTeacher);
    const DiscreteDistribution d_s = scores_to_distribution(pairs, Side::kStudent);
    PairView tv, sv;
    for (size_t i = 0; i < n; ++i) {
      tv.positions.push_back(pairs[i].position);
      sv.positions.push_back(pairs[i].position);
      tv.scores.push_back(pairs[i].teacher.scores[cls[i]]);
      sv.scores.push_back(pairs[i].student.scores[cls[i]]);
    }
    TransportSolution sol;
    if (frozen && frozen->transport) {
      sol = *frozen->transport;
    } else {
      const CostMatrix c = build_cost_matrix(tv, sv, cfg.cost);
      sol = sinkhorn(d_t.normalized(), d_s.normalized(), c, cfg.sinkhorn);
    }
    res.loss.gc = gc_loss(d_t, d_s, sol);
    const std::vector<double> g = gc_gradient(d_s, sol.dual_col);
    const ChannelLayout lay{static_cast<int>(pairs[0].student.scores.size())};
    for (size_t i = 0; i < n; ++i) {
      res.student_grads[i][lay.score(cls[i])] += g[i] * d_s.weights()[i];
    }
    res.transport = std::move(sol);
  }
  res.loss.finalize();
  return res;
}

// ---------------------------------------------------------------------------
// Supervised loss against encoded ground truth.

struct SupervisedResult {
  BaseLoss loss;
  int positives = 0;
  std::vector<double> grad;  // per cell x channel, same layout as the map
};

/// Dense detection loss against hard targets: BCE with one-hot class
/// targets on every cell, smooth-L1 regression and centerness BCE on
/// foreground cells; all terms divided by max(1, #foreground).
inline SupervisedResult supervised_loss(const DensePredictionMap& pred,
                                        const TargetMap& target) {
  if (!(pred.grid() == target.grid) || pred.num_classes() != target.num_classes) {
    throw std::invalid_argument("supervised_loss: prediction/target shape mismatch");
  }
  const ChannelLayout& lay = pred.layout();
  SupervisedResult res;
  res.positives = target.positives();
  const double norm = std::max(1, res.positives);
  res.grad.assign(pred.values().size(), 0.0);
  for (int c = 0; c < pred.cells(); ++c) {
    const auto v = pred.cell(c);
    double* g = res.grad.data() + static_cast<size_t>(c) * lay.count();
    const bool fg = target.foreground[c] != 0;
    for (int k = 0; k < lay.classes; ++k) {
      const double q = fg && target.class_id[c] == k ? 1.0 : 0.0;
      res.loss.cls += bce(v[lay.score(k)], q) / norm;
      g[lay.score(k)] = bce_grad(v[lay.score(k)], q) / norm;
    }
    if (!fg) continue;
    for (int m = 0; m < 4; ++m) {
      const double d = v[lay.reg(m)] - target.ltrb[c][m];
      res.loss.reg += smooth_l1(d) / norm;
      g[lay.reg(m)] = smooth_l1_grad(d) / norm;
    }
    const double da = v[lay.angle()] - target.angle[c];
    res.loss.reg += smooth_l1(da) / norm;
    g[lay.angle()] = smooth_l1_grad(da) / norm;
    res.loss.ctr += bce(v[lay.centerness()], target.centerness[c]) / norm;
    g[lay.centerness()] = bce_grad(v[lay.centerness()], target.centerness[c]) / norm;
  }
  return res;
}

}  // namespace obbssl

#endif  // OBBSSL_LOSSES_HPP_
