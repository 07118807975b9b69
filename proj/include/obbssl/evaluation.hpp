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

// Rotated-IoU detection matching and average precision.

#ifndef OBBSSL_EVALUATION_HPP_
#define OBBSSL_EVALUATION_HPP_

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "obbssl/obb.hpp"
#include "obbssl/pseudo_label.hpp"
#include "obbssl/toy_model.hpp"

namespace obbssl {

struct Detection {
  OrientedBox box;
  double confidence = 0.0;

  int class_id() const { return box.class_id; }
};

enum class ApInterpolation { kAllPoint, kElevenPoint };

inline ApInterpolation parse_ap_interpolation(const std::string& s) {
  if (s == "all_point") return ApInterpolation::kAllPoint;
  if (s == "11_point") return ApInterpolation::kElevenPoint;
  throw std::invalid_argument("unknown AP interpolation: " + s);
}

inline std::string to_string(ApInterpolation a) {
  return a == ApInterpolation::kAllPoint ? "all_point" : "11_point";
}

/// Greedy matching of confidence-sorted detections: each one takes the
/// highest-IoU unmatched ground truth of its class with IoU >= thresh.
/// Returns one TP flag per detection.
inline std::vector<bool> match_detections(std::span<const Detection> dets,
                                          std::span<const OrientedBox> gts,
                                          double iou_thresh) {
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (size_t d = 0; d < dets.size(); ++d) {
    double best = -1.0;
    size_t best_g = gts.size();
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].class_id != dets[d].class_id()) continue;
      const double iou = rotated_iou(dets[d].box, gts[g]);
      if (iou >= iou_thresh && iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      used[best_g] = true;
      tp[d] = true;
    }
  }
  return tp;
}

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// Precision/recall after each detection, in the given (confidence) order.
inline std::vector<PrPoint> pr_curve(const std::vector<bool>& flags, int n_gt) {
  std::vector<PrPoint> out;
  out.reserve(flags.size());
  int tp = 0;
  for (size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i] ? 1 : 0;
    out.push_back({static_cast<double>(tp) / n_gt, static_cast<double>(tp) / (i + 1)});
  }
  return out;
}

/// Area under the interpolated PR curve. Detections must be ordered by
/// descending confidence; `confidences` fixes that order by a stable sort.
inline double average_precision(const std::vector<bool>& flags,
                                std::span<const double> confidences, int n_gt,
                                ApInterpolation interp = ApInterpolation::kAllPoint) {
  if (n_gt <= 0) throw std::invalid_argument("average_precision: n_gt must be > 0");
  if (confidences.size() != flags.size()) {
    throw std::invalid_argument("average_precision: flags/confidences size mismatch");
  }
  std::vector<size_t> order(flags.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return confidences[a] > confidences[b]; });
  std::vector<bool> sorted(flags.size());
  for (size_t i = 0; i < order.size(); ++i) sorted[i] = flags[order[i]];
  const std::vector<PrPoint> pr = pr_curve(sorted, n_gt);

  if (interp == ApInterpolation::kElevenPoint) {
    double ap = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double r = t / 10.0;
      double p = 0.0;
      for (const auto& pt : pr) {
        if (pt.recall >= r - 1e-12) p = std::max(p, pt.precision);
      }
      ap += p / 11.0;
    }
    return ap;
  }
  // All-point: recall rises by exactly 1/n_gt at each TP, so the area is the
  // sum of the precision envelope at TP ranks divided by n_gt.
  // Accumulated in long double so short cases round to the nearest double.
  std::vector<long double> envelope(sorted.size());
  long double best = 0.0L;
  int tp = 0;
  for (size_t i = 0; i < sorted.size(); ++i) tp += sorted[i] ? 1 : 0;
  for (size_t i = sorted.size(); i > 0; --i) {
    best = std::max(best, static_cast<long double>(tp) / static_cast<long double>(i));
    envelope[i - 1] = best;
    tp -= sorted[i - 1] ? 1 : 0;
  }
  long double sum = 0.0L;
  for (size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i]) sum += envelope[i];
  }
  return static_cast<double>(sum / n_gt);
}

struct ClassReport {
  int class_id = 0;
  int n_gt = 0;
  int tp = 0;
  int fp = 0;
  double ap = 0.0;
  std::vector<PrPoint> pr;
};

struct EvalReport {
  std::vector<ClassReport> classes;  // classes present in ground truth
  double map = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;

  nlohmann::json to_json(bool with_pr = false) const {
    nlohmann::json j;
    j["mAP"] = map;
    j["tp"] = tp;
    j["fp"] = fp;
    j["fn"] = fn;
    j["per_class"] = nlohmann::json::array();
    for (const auto& c : classes) {
      nlohmann::json cj{{"class", c.class_id}, {"ap", c.ap}, {"n_gt", c.n_gt},
                        {"tp", c.tp}, {"fp", c.fp}};
      if (with_pr) {
        cj["pr"] = nlohmann::json::array();
        for (const auto& p : c.pr) cj["pr"].push_back({p.recall, p.precision});
      }
      j["per_class"].push_back(cj);
    }
    return j;
  }
};

struct EvalImage {
  std::vector<Detection> detections;
  std::vector<OrientedBox> ground_truth;
};

/// Matches each image separately, then pools detections per class across
/// images for AP. mAP is the mean over classes that have ground truth.
inline EvalReport evaluate(std::span<const EvalImage> images, double iou_thresh = 0.5,
                           ApInterpolation interp = ApInterpolation::kAllPoint) {
  struct Pooled {
    std::vector<bool> flags;
    std::vector<double> conf;
    int n_gt = 0;
  };
  std::map<int, Pooled> per_class;
  for (const auto& img : images) {
    for (const auto& g : img.ground_truth) per_class[g.class_id].n_gt++;
    std::vector<size_t> order(img.detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return img.detections[a].confidence > img.detections[b].confidence;
    });
    std::vector<Detection> sorted;
    for (size_t i : order) sorted.push_back(img.detections[i]);
    const std::vector<bool> tp = match_detections(sorted, img.ground_truth, iou_thresh);
    for (size_t i = 0; i < sorted.size(); ++i) {
      auto& pc = per_class[sorted[i].class_id()];
      pc.flags.push_back(tp[i]);
      pc.conf.push_back(sorted[i].confidence);
    }
  }
  EvalReport rep;
  double sum = 0.0;
  for (auto& [cls, pc] : per_class) {
    const int tp = static_cast<int>(std::count(pc.flags.begin(), pc.flags.end(), true));
    const int fp = static_cast<int>(pc.flags.size()) - tp;
    rep.tp += tp;
    rep.fp += fp;
    if (pc.n_gt == 0) continue;
    rep.fn += pc.n_gt - tp;
    ClassReport cr;
    cr.class_id = cls;
    cr.n_gt = pc.n_gt;
    cr.tp = tp;
    cr.fp = fp;
    cr.ap = average_precision(pc.flags, pc.conf, pc.n_gt, interp);
    std::vector<size_t> order(pc.flags.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return pc.conf[a] > pc.conf[b]; });
    std::vector<bool> sorted;
    for (size_t i : order) sorted.push_back(pc.flags[i]);
    cr.pr = pr_curve(sorted, pc.n_gt);
    sum += cr.ap;
    rep.classes.push_back(std::move(cr));
  }
  rep.map = rep.classes.empty() ? 0.0 : sum / rep.classes.size();
  return rep;
}

struct EvalConfig {
  double iou_threshold = 0.5;
  double score_threshold = 0.05;
  double nms_iou = 0.1;
  ApInterpolation interpolation = ApInterpolation::kAllPoint;

  void validate() const {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
      throw std::invalid_argument("eval.iou_threshold must be in (0,1]");
    }
    if (!(score_threshold > 0.0 && score_threshold < 1.0)) {
      throw std::invalid_argument("eval.score_threshold must be in (0,1)");
    }
    if (!(nms_iou > 0.0 && nms_iou < 1.0)) {
      throw std::invalid_argument("eval.nms_iou must be in (0,1)");
    }
  }
};

/// Post-processed detections of one prediction map.
inline std::vector<Detection> detect(const DensePredictionMap& map, const EvalConfig& cfg) {
  std::vector<Detection> out;
  for (const auto& s :
       rotated_nms(decode_boxes(map, cfg.score_threshold), cfg.nms_iou)) {
    out.push_back({s.box, s.score});
  }
  return out;
}

/// Runs `model` on every feature field and scores it against `gts`.
inline EvalReport evaluate_model(const ToyModel& model,
                                 std::span<const FeatureField> features,
                                 std::span<const std::vector<OrientedBox>> gts,
                                 const EvalConfig& cfg) {
  if (features.size() != gts.size()) {
    throw std::invalid_argument("evaluate_model: features/ground-truth count mismatch");
  }
  std::vector<EvalImage> images;
  images.reserve(features.size());
  for (size_t i = 0; i < features.size(); ++i) {
    images.push_back({detect(model.forward(features[i]), cfg), gts[i]});
  }
  return evaluate(images, cfg.iou_threshold, cfg.interpolation);
}

}  // namespace obbssl

#endif  // OBBSSL_EVALUATION_HPP_
