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

// Teacher-student training loop.
//
// Iterations [0, burn_in) train the student on labeled scenes only. At
// burn_in the teacher becomes a copy of the student; from then on each step
// draws labeled and unlabeled scenes, the teacher labels a weak view of each
// unlabeled scene, the student is trained on a strong view against those
// dense pseudo-labels plus the supervised loss, and the teacher follows the
// student by EMA.
//
// All per-step randomness comes from streams keyed by (seed, iteration,
// image slot), so a run restored from a checkpoint continues bit-identically.

#ifndef OBBSSL_MEAN_TEACHER_HPP_
#define OBBSSL_MEAN_TEACHER_HPP_

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "obbssl/grid.hpp"
#include "obbssl/losses.hpp"
#include "obbssl/ot.hpp"
#include "obbssl/params.hpp"
#include "obbssl/pseudo_label.hpp"
#include "obbssl/rng.hpp"
#include "obbssl/toy_model.hpp"

namespace obbssl {

/// theta_t <- m * theta_t + (1 - m) * theta_s, element-wise.
inline ParamVector ema_update(const ParamVector& teacher, const ParamVector& student,
                              double m) {
  if (!teacher.same_shape(student)) {
    throw std::invalid_argument("ema_update: teacher/student shape mismatch");
  }
  if (!(m >= 0.0 && m <= 1.0)) {
    throw std::invalid_argument("ema_update: momentum must be in [0,1]");
  }
  ParamVector out = teacher;
  auto t = out.values();
  auto s = student.values();
  for (size_t i = 0; i < t.size(); ++i) t[i] = std::lerp(s[i], t[i], m);
  return out;
}

struct TrainerConfig {
  // Unsupervised loss.
  double alpha = kDefaultRawAlpha;
  bool use_raw = true;
  bool use_gc = true;
  bool cost_use_dist = true;
  bool cost_use_score = true;
  RawNormalize raw_normalize = RawNormalize::kNone;
  bool circular_angle_gap = false;
  double unsup_weight = 1.0;
  SinkhornConfig sinkhorn;

  // Pseudo-labels.
  double sample_ratio = 0.25;
  double score_threshold = 0.05;
  double nms_iou = 0.1;
  bool weighted_by_score = false;

  // Schedule and optimizer.
  int total_iters = 5000;
  int burn_in_iters = -1;  // < 0: 10% of total_iters
  double ema_momentum = 0.999;
  double lr = 0.0025;
  std::vector<int> lr_decay_iters;
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int labeled_per_step = 2;
  int unlabeled_per_step = 1;

  // Strong view: random flip, additive noise and per-channel gain.
  double strong_noise_sigma = 0.1;
  double strong_gain_jitter = 0.1;
  bool flip_views = true;

  int hidden = 32;
  uint64_t seed = 0;

  int burn_in() const {
    return burn_in_iters >= 0 ? burn_in_iters : total_iters / 10;
  }

  UnsupConfig unsup() const {
    UnsupConfig u;
    u.alpha = alpha;
    u.use_raw = use_raw;
    u.use_gc = use_gc;
    u.cost = {cost_use_dist, cost_use_score};
    u.raw_normalize = raw_normalize;
    u.circular_angle_gap = circular_angle_gap;
    u.sinkhorn = sinkhorn;
    return u;
  }

  SamplerConfig sampler() const {
    SamplerConfig s;
    s.score_threshold = score_threshold;
    s.nms_iou = nms_iou;
    s.sample_ratio = sample_ratio;
    s.seed = seed;
    s.weighted_by_score = weighted_by_score;
    return s;
  }

  double lr_at(int iteration) const {
    double out = lr;
    for (int it : lr_decay_iters) {
      if (iteration >= it) out *= lr_decay_factor;
    }
    return out;
  }

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("trainer.alpha must be >= 0");
    if (!(unsup_weight >= 0.0)) throw std::invalid_argument("trainer.unsup_weight must be >= 0");
    sinkhorn.validate();
    sampler().validate();
    if (total_iters < 1) throw std::invalid_argument("trainer.total_iters must be >= 1");
    if (burn_in() >= total_iters) {
      throw std::invalid_argument("trainer.burn_in_iters must be < total_iters");
    }
    if (!(ema_momentum > 0.0 && ema_momentum < 1.0)) {
      throw std::invalid_argument("trainer.ema_momentum must be in (0,1)");
    }
    if (!(lr > 0.0)) throw std::invalid_argument("trainer.lr must be > 0");
    if (!(lr_decay_factor > 0.0)) throw std::invalid_argument("trainer.lr_decay_factor must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw std::invalid_argument("trainer.momentum must be in [0,1)");
    }
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("trainer.weight_decay must be >= 0");
    if (labeled_per_step < 1 || unlabeled_per_step < 0) {
      throw std::invalid_argument("trainer: need labeled_per_step >= 1, unlabeled_per_step >= 0");
    }
    if (!(strong_noise_sigma >= 0.0) || !(strong_gain_jitter >= 0.0 && strong_gain_jitter < 1.0)) {
      throw std::invalid_argument("trainer: bad strong perturbation");
    }
    if (hidden < 0) throw std::invalid_argument("trainer.hidden must be >= 0");
  }
};

struct StepReport {
  int iteration = 0;
  LossBreakdown loss;
  size_t num_pairs = 0;
  double grad_norm = 0.0;
  double wall_time = 0.0;  // seconds
  bool burn_in = false;
};

struct LabeledSample {
  FeatureField features;
  TargetMap targets;
  TargetMap mirrored_targets;  // targets of the horizontally mirrored scene
};

struct TrainingSet {
  std::vector<LabeledSample> labeled;
  std::vector<FeatureField> unlabeled;
};

// ---------------------------------------------------------------------------
// Per-image gradients.

struct ImageGradient {
  UnsupResult detail;
  ParamVector grad;
};

/// L_u of one unlabeled view and its parameter gradient. `teacher_map` must
/// already be in the student's frame.
inline ImageGradient unsup_image_gradient(const ToyModel& student,
                                          const FeatureField& view,
                                          const DensePredictionMap& teacher_map,
                                          std::span<const int> positions,
                                          const UnsupConfig& cfg,
                                          const FrozenTerms* frozen = nullptr) {
  ToyModel::Cache cache;
  const DensePredictionMap smap = student.forward(view, &cache);
  const std::vector<PairRecord> pairs = pair_with_student(positions, teacher_map, smap);
  ImageGradient out;
  out.detail = unsup_loss(pairs, cfg, frozen);
  std::vector<double> upstream(smap.values().size(), 0.0);
  const int nch = smap.layout().count();
  for (size_t i = 0; i < pairs.size(); ++i) {
    double* u = upstream.data() + static_cast<size_t>(pairs[i].cell) * nch;
    const auto& g = out.detail.student_grads[i];
    for (int ch = 0; ch < nch; ++ch) u[ch] += g[ch];
  }
  out.grad = student.backward(view, cache, upstream);
  return out;
}

struct SupervisedGradient {
  SupervisedResult detail;
  ParamVector grad;
};

inline SupervisedGradient supervised_image_gradient(const ToyModel& model,
                                                    const FeatureField& view,
                                                    const TargetMap& targets) {
  ToyModel::Cache cache;
  const DensePredictionMap map = model.forward(view, &cache);
  SupervisedGradient out;
  out.detail = supervised_loss(map, targets);
  out.grad = model.backward(view, cache, out.detail.grad);
  return out;
}

/// Strong view: gain in [1-g, 1+g] per channel, then additive noise.
template <typename RngT>
FeatureField strong_perturb(const FeatureField& in, double noise_sigma,
                            double gain_jitter, RngT& rng) {
  FeatureField out = in;
  std::vector<double> gain(in.channels, 1.0);
  if (gain_jitter > 0.0) {
    std::uniform_real_distribution<double> g(1.0 - gain_jitter, 1.0 + gain_jitter);
    for (double& v : gain) v = g(rng);
  }
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int c = 0; c < out.grid.cells(); ++c) {
    auto cell = out.cell(c);
    for (int f = 0; f < out.channels; ++f) {
      cell[f] *= gain[f];
      if (noise_sigma > 0.0) cell[f] += noise_sigma * n01(rng);
    }
  }
  return out;
}

/// Decode, suppress and sample the teacher's map.
template <typename RngT>
std::vector<int> pseudo_label_positions(const DensePredictionMap& teacher_map,
                                        const SamplerConfig& cfg, RngT& rng) {
  const std::vector<ScoredBox> kept =
      rotated_nms(decode_boxes(teacher_map, cfg.score_threshold), cfg.nms_iou);
  return sample_dense_labels(teacher_map, kept, cfg, rng);
}

// ---------------------------------------------------------------------------
// Trainer.

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(int iteration, const std::string& what)
      : std::runtime_error("training diverged at iteration " +
                           std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

inline constexpr int kCheckpointVersion = 1;

class Trainer {
 public:
  Trainer(TrainerConfig cfg, ModelShape shape, const TrainingSet& data)
      : cfg_(std::move(cfg)), data_(&data), student_(shape), teacher_(shape) {
    cfg_.validate();
    if (data.labeled.empty()) throw std::invalid_argument("Trainer: no labeled scenes");
    Rng init = make_stream(cfg_.seed, Stream::kInit);
    student_ = ToyModel::Random(shape, init);
    teacher_ = student_;
    velocity_ = student_.params().zeros_like();
    if (cfg_.burn_in() == 0) teacher_ready_ = true;
  }

  const TrainerConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }
  bool done() const { return iteration_ >= cfg_.total_iters; }
  bool teacher_ready() const { return teacher_ready_; }
  const ToyModel& student() const { return student_; }
  const ToyModel& teacher() const { return teacher_; }

  /// One optimizer step. Throws TrainingDivergedError on a non-finite loss
  /// or gradient.
  StepReport step() {
    const auto t0 = std::chrono::steady_clock::now();
    const int it = iteration_;
    const bool burn = it < cfg_.burn_in();
    StepReport rep;
    rep.iteration = it;
    rep.burn_in = burn;

    ParamVector grad = student_.params().zeros_like();
    Rng batch = make_stream(cfg_.seed, Stream::kTrain, {static_cast<uint64_t>(it)});

    // Supervised part: mean over the labeled images of the batch.
    std::uniform_int_distribution<size_t> pick_l(0, data_->labeled.size() - 1);
    std::bernoulli_distribution coin(0.5);
    const double wl = 1.0 / cfg_.labeled_per_step;
    for (int b = 0; b < cfg_.labeled_per_step; ++b) {
      const LabeledSample& s = data_->labeled[pick_l(batch)];
      const bool flip = cfg_.flip_views && coin(batch);
      const FeatureField view = flip ? flip_horizontal(s.features) : s.features;
      const SupervisedGradient g = supervised_image_gradient(
          student_, view, flip ? s.mirrored_targets : s.targets);
      rep.loss.sup += wl * g.detail.loss.total();
      grad.axpy(wl, g.grad);
    }

    // Unsupervised part: mean over the unlabeled images of the batch.
    if (!burn && cfg_.unlabeled_per_step > 0 && !data_->unlabeled.empty() &&
        cfg_.unsup_weight > 0.0) {
      std::uniform_int_distribution<size_t> pick_u(0, data_->unlabeled.size() - 1);
      const double wu = cfg_.unsup_weight / cfg_.unlabeled_per_step;
      const UnsupConfig ucfg = cfg_.unsup();
      const SamplerConfig scfg = cfg_.sampler();
      for (int b = 0; b < cfg_.unlabeled_per_step; ++b) {
        const size_t idx = pick_u(batch);
        const uint64_t slot[] = {static_cast<uint64_t>(it), static_cast<uint64_t>(b)};
        Rng perturb = make_stream(cfg_.seed, Stream::kPerturb, {slot[0], slot[1]});
        Rng sample = make_stream(cfg_.seed, Stream::kSample, {slot[0], slot[1]});
        const FeatureField& x = data_->unlabeled[idx];
        const bool flip_t = cfg_.flip_views && coin(perturb);
        const bool flip_s = cfg_.flip_views && coin(perturb);
        const FeatureField weak = flip_t ? flip_horizontal(x) : x;
        const FeatureField strong =
            strong_perturb(flip_s ? flip_horizontal(x) : x, cfg_.strong_noise_sigma,
                           cfg_.strong_gain_jitter, perturb);
        DensePredictionMap tmap = teacher_.forward(weak);
        if (flip_t != flip_s) tmap = flip_horizontal(tmap);
        const std::vector<int> pos = pseudo_label_positions(tmap, scfg, sample);
        if (pos.empty()) continue;
        const ImageGradient g = unsup_image_gradient(student_, strong, tmap, pos, ucfg);
        LossBreakdown part = g.detail.loss;
        part.cls *= wu;
        part.reg *= wu;
        part.ctr *= wu;
        part.raw *= wu;
        part.gc *= wu;
        rep.loss += part;
        rep.num_pairs += g.detail.num_pairs;
        grad.axpy(wu, g.grad);
      }
    }
    rep.loss.finalize();
    rep.grad_norm = grad.norm();

    if (!std::isfinite(rep.loss.total)) {
      throw TrainingDivergedError(it, "non-finite loss");
    }
    try {
      sgd_step(student_.params(), grad, velocity_, cfg_.lr_at(it), cfg_.momentum,
               cfg_.weight_decay);
    } catch (const NonFiniteError& e) {
      throw TrainingDivergedError(it, e.what());
    }
    if (!student_.params().all_finite()) {
      throw TrainingDivergedError(it, "non-finite parameters");
    }

    ++iteration_;
    if (!teacher_ready_ && iteration_ >= cfg_.burn_in()) {
      teacher_ = student_;
      teacher_ready_ = true;
    } else if (!burn) {
      teacher_.set_params(
          ema_update(teacher_.params(), student_.params(), cfg_.ema_momentum));
    }
    rep.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
  }

  nlohmann::json checkpoint() const {
    nlohmann::json j;
    j["version"] = kCheckpointVersion;
    j["iteration"] = iteration_;
    j["teacher_ready"] = teacher_ready_;
    j["seed"] = cfg_.seed;
    j["student"] = params_json(student_.params());
    j["teacher"] = params_json(teacher_.params());
    j["velocity"] = params_json(velocity_);
    // Per-step streams are derived from (seed, iteration), so this pair is
    // the complete generator state.
    j["rng"] = {{"seed", cfg_.seed}, {"next_iteration", iteration_}};
    return j;
  }

  void restore(const nlohmann::json& j) {
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw std::runtime_error("checkpoint: unsupported version");
    }
    if (j.at("seed").get<uint64_t>() != cfg_.seed) {
      throw std::runtime_error("checkpoint: seed does not match config");
    }
    ParamVector s = student_.params(), t = teacher_.params(), v = velocity_;
    load_params(j.at("student"), s);
    load_params(j.at("teacher"), t);
    load_params(j.at("velocity"), v);
    student_.set_params(s);
    teacher_.set_params(t);
    velocity_ = v;
    iteration_ = j.at("iteration").get<int>();
    teacher_ready_ = j.at("teacher_ready").get<bool>();
  }

 private:
  static nlohmann::json params_json(const ParamVector& p) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& seg : p.segments()) {
      const auto v = p.segment(seg.name);
      j[seg.name] = std::vector<double>(v.begin(), v.end());
    }
    return j;
  }

  static void load_params(const nlohmann::json& j, ParamVector& p) {
    for (const auto& seg : p.segments()) {
      const auto v = j.at(seg.name).get<std::vector<double>>();
      if (v.size() != seg.size) {
        throw std::runtime_error("checkpoint: segment " + seg.name + " has wrong size");
      }
      std::copy(v.begin(), v.end(), p.segment(seg.name).begin());
    }
  }

  TrainerConfig cfg_;
  const TrainingSet* data_;
  ToyModel student_;
  ToyModel teacher_;
  ParamVector velocity_;
  int iteration_ = 0;
  bool teacher_ready_ = false;
};

}  // namespace obbssl

#endif  // OBBSSL_MEAN_TEACHER_HPP_
