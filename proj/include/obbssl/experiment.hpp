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

// Experiment configs, runs and sweeps.
//
// A config is a nested JSON object. Every key is optional; unknown keys are
// errors. The config hash is FNV-1a over the dump of the fully populated
// config, whose keys are sorted, so field order in the file does not matter.
//
// A run writes into its output directory:
//   config.json      resolved config
//   scenes.jsonl     one line per generated scene
//   steps.jsonl      subsampled step reports, one per line
//   checkpoint.json  final teacher/student state
//   metrics.json     deterministic results (no timings)
//   record.json      metrics plus wall-clock timings

#ifndef OBBSSL_EXPERIMENT_HPP_
#define OBBSSL_EXPERIMENT_HPP_

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "obbssl/evaluation.hpp"
#include "obbssl/grid.hpp"
#include "obbssl/mean_teacher.hpp"
#include "obbssl/rng.hpp"
#include "obbssl/scenes.hpp"
#include "obbssl/toy_model.hpp"

#ifndef OBBSSL_VERSION
#define OBBSSL_VERSION "0.1.0"
#endif

namespace obbssl {

using nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::string run_id = "run";
  std::string output_dir = "runs";
  uint64_t seed = 0;
  double labeled_fraction = 0.1;
  int num_train_scenes = 40;
  int num_test_scenes = 20;
  int report_every = 50;

  SceneConfig scene;
  std::vector<LayoutKind> layouts{LayoutKind::kGrid, LayoutKind::kRows,
                                  LayoutKind::kClusters, LayoutKind::kScattered};
  GridSpec grid;
  RenderConfig render;
  TrainerConfig trainer;
  EvalConfig eval;

  void validate() const {
    if (run_id.empty()) throw ConfigError("run_id must not be empty");
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
      throw ConfigError("labeled_fraction must be in (0,1]");
    }
    if (num_train_scenes < 1 || num_test_scenes < 1) {
      throw ConfigError("need at least one train and one test scene");
    }
    if (report_every < 1) throw ConfigError("report_every must be >= 1");
    if (layouts.empty()) throw ConfigError("scene.layouts must not be empty");
    if (!(render.noise_sigma >= 0.0) || !(render.gain_jitter >= 0.0 && render.gain_jitter < 1.0)) {
      throw ConfigError("bad render settings");
    }
    if (std::abs(grid.width * grid.stride - scene.canvas_width) > 1e-9 ||
        std::abs(grid.height * grid.stride - scene.canvas_height) > 1e-9) {
      throw ConfigError("grid must cover the canvas exactly");
    }
    try {
      scene.validate();
      grid.validate();
      trainer.validate();
      eval.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// JSON mapping.

namespace detail {

// Reads keys of one object and rejects whatever was not read.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key = "") const {
    std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return p.empty() ? "config" : "'" + p + "'";
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key " + where(it.key()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["labeled_fraction"] = c.labeled_fraction;
  j["num_train_scenes"] = c.num_train_scenes;
  j["num_test_scenes"] = c.num_test_scenes;
  j["report_every"] = c.report_every;

  const SceneConfig& s = c.scene;
  json layouts = json::array();
  for (auto k : c.layouts) layouts.push_back(to_string(k));
  j["scene"] = {{"canvas_height", s.canvas_height}, {"canvas_width", s.canvas_width},
                {"layouts", layouts},          {"min_count", s.min_count},
                {"max_count", s.max_count},    {"min_scale", s.min_scale},
                {"max_scale", s.max_scale},    {"angle_jitter", s.angle_jitter},
                {"num_classes", s.num_classes}};
  j["grid"] = {{"height", c.grid.height}, {"width", c.grid.width}, {"stride", c.grid.stride}};
  j["render"] = {{"noise_sigma", c.render.noise_sigma},
                 {"gain_jitter", c.render.gain_jitter}};

  const TrainerConfig& t = c.trainer;
  j["trainer"] = {
      {"alpha", t.alpha},
      {"use_raw", t.use_raw},
      {"use_gc", t.use_gc},
      {"cost_use_dist", t.cost_use_dist},
      {"cost_use_score", t.cost_use_score},
      {"raw_normalize", to_string(t.raw_normalize)},
      {"circular_angle_gap", t.circular_angle_gap},
      {"unsup_weight", t.unsup_weight},
      {"sinkhorn",
       {{"epsilon", t.sinkhorn.epsilon},
        {"max_iters", t.sinkhorn.max_iters},
        {"tolerance", t.sinkhorn.tolerance}}},
      {"sample_ratio", t.sample_ratio},
      {"score_threshold", t.score_threshold},
      {"nms_iou", t.nms_iou},
      {"weighted_by_score", t.weighted_by_score},
      {"total_iters", t.total_iters},
      {"burn_in_iters", t.burn_in()},
      {"ema_momentum", t.ema_momentum},
      {"lr", t.lr},
      {"lr_decay_iters", t.lr_decay_iters},
      {"lr_decay_factor", t.lr_decay_factor},
      {"momentum", t.momentum},
      {"weight_decay", t.weight_decay},
      {"labeled_per_step", t.labeled_per_step},
      {"unlabeled_per_step", t.unlabeled_per_step},
      {"strong_noise_sigma", t.strong_noise_sigma},
      {"strong_gain_jitter", t.strong_gain_jitter},
      {"flip_views", t.flip_views},
      {"hidden", t.hidden},
  };
  j["eval"] = {{"iou_threshold", c.eval.iou_threshold},
               {"score_threshold", c.eval.score_threshold},
               {"nms_iou", c.eval.nms_iou},
               {"interpolation", to_string(c.eval.interpolation)}};
  return j;
}

/// Parses and validates a config. Missing keys keep their defaults.
inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::ObjectReader r(j, "");
  r.get("run_id", c.run_id);
  r.get("output_dir", c.output_dir);
  r.get("seed", c.seed);
  r.get("labeled_fraction", c.labeled_fraction);
  r.get("num_train_scenes", c.num_train_scenes);
  r.get("num_test_scenes", c.num_test_scenes);
  r.get("report_every", c.report_every);

  if (const json* sj = r.child("scene")) {
    detail::ObjectReader s(*sj, "scene");
    s.get("canvas_height", c.scene.canvas_height);
    s.get("canvas_width", c.scene.canvas_width);
    std::vector<std::string> layouts;
    s.get("layouts", layouts);
    if (s.child("layouts")) {
      c.layouts.clear();
      for (const auto& name : layouts) {
        try {
          c.layouts.push_back(parse_layout(name));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      }
    }
    s.get("min_count", c.scene.min_count);
    s.get("max_count", c.scene.max_count);
    s.get("min_scale", c.scene.min_scale);
    s.get("max_scale", c.scene.max_scale);
    s.get("angle_jitter", c.scene.angle_jitter);
    s.get("num_classes", c.scene.num_classes);
    s.finish();
  }
  if (const json* gj = r.child("grid")) {
    detail::ObjectReader g(*gj, "grid");
    g.get("height", c.grid.height);
    g.get("width", c.grid.width);
    g.get("stride", c.grid.stride);
    g.finish();
  }
  if (const json* rj = r.child("render")) {
    detail::ObjectReader rr(*rj, "render");
    rr.get("noise_sigma", c.render.noise_sigma);
    rr.get("gain_jitter", c.render.gain_jitter);
    rr.finish();
  }
  if (const json* tj = r.child("trainer")) {
    TrainerConfig& t = c.trainer;
    detail::ObjectReader tr(*tj, "trainer");
    tr.get("alpha", t.alpha);
    tr.get("use_raw", t.use_raw);
    tr.get("use_gc", t.use_gc);
    tr.get("cost_use_dist", t.cost_use_dist);
    tr.get("cost_use_score", t.cost_use_score);
    std::string norm = to_string(t.raw_normalize);
    tr.get("raw_normalize", norm);
    try {
      t.raw_normalize = parse_raw_normalize(norm);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    tr.get("circular_angle_gap", t.circular_angle_gap);
    tr.get("unsup_weight", t.unsup_weight);
    if (const json* kj = tr.child("sinkhorn")) {
      detail::ObjectReader k(*kj, "trainer.sinkhorn");
      k.get("epsilon", t.sinkhorn.epsilon);
      k.get("max_iters", t.sinkhorn.max_iters);
      k.get("tolerance", t.sinkhorn.tolerance);
      k.finish();
    }
    tr.get("sample_ratio", t.sample_ratio);
    tr.get("score_threshold", t.score_threshold);
    tr.get("nms_iou", t.nms_iou);
    tr.get("weighted_by_score", t.weighted_by_score);
    tr.get("total_iters", t.total_iters);
    tr.get("burn_in_iters", t.burn_in_iters);
    tr.get("ema_momentum", t.ema_momentum);
    tr.get("lr", t.lr);
    tr.get("lr_decay_iters", t.lr_decay_iters);
    tr.get("lr_decay_factor", t.lr_decay_factor);
    tr.get("momentum", t.momentum);
    tr.get("weight_decay", t.weight_decay);
    tr.get("labeled_per_step", t.labeled_per_step);
    tr.get("unlabeled_per_step", t.unlabeled_per_step);
    tr.get("strong_noise_sigma", t.strong_noise_sigma);
    tr.get("strong_gain_jitter", t.strong_gain_jitter);
    tr.get("flip_views", t.flip_views);
    tr.get("hidden", t.hidden);
    tr.finish();
  }
  if (const json* ej = r.child("eval")) {
    detail::ObjectReader e(*ej, "eval");
    e.get("iou_threshold", c.eval.iou_threshold);
    e.get("score_threshold", c.eval.score_threshold);
    e.get("nms_iou", c.eval.nms_iou);
    std::string interp = to_string(c.eval.interpolation);
    e.get("interpolation", interp);
    try {
      c.eval.interpolation = parse_ap_interpolation(interp);
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
    e.finish();
  }
  r.finish();
  c.trainer.seed = c.seed;
  c.scene.seed = c.seed;
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline std::string fnv1a_hex(const std::string& s) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Hash of the experiment content. Output location and run name do not
/// take part.
inline std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("run_id");
  j.erase("output_dir");
  return fnv1a_hex(j.dump());
}

/// Sets one dotted key. `trainer.cost_composition` is an alias taking
/// none | score | dist | both.
inline ExperimentConfig with_override(const ExperimentConfig& base, const std::string& key,
                                      const json& value) {
  json j = to_json(base);
  if (key == "trainer.cost_composition") {
    const std::string v = value.is_string() ? value.get<std::string>() : "";
    bool dist = false, score = false;
    if (v == "none") {
    } else if (v == "score") {
      score = true;
    } else if (v == "dist") {
      dist = true;
    } else if (v == "both") {
      dist = score = true;
    } else {
      throw ConfigError("trainer.cost_composition must be none|score|dist|both");
    }
    j["trainer"]["cost_use_dist"] = dist;
    j["trainer"]["cost_use_score"] = score;
    return config_from_json(j);
  }
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (const auto& p : parts) {
    if (!node->is_object() || !node->contains(p)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    node = &(*node)[p];
  }
  *node = value;
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Data.

struct Dataset {
  std::vector<Scene> train_scenes;
  std::vector<Scene> test_scenes;
  DatasetSplit split;
  TrainingSet training;
  std::vector<FeatureField> test_features;
  std::vector<std::vector<OrientedBox>> test_boxes;
};

inline Scene make_scene(const ExperimentConfig& c, int index) {
  SceneConfig sc = c.scene;
  sc.layout = c.layouts[static_cast<size_t>(index) % c.layouts.size()];
  Rng rng = make_stream(c.seed, Stream::kScene, {static_cast<uint64_t>(index)});
  return generate_scene(sc, rng);
}

inline FeatureField make_features(const ExperimentConfig& c, const Scene& scene, int index) {
  Rng rng = make_stream(c.seed, Stream::kRender, {static_cast<uint64_t>(index)});
  return render_features(scene, c.grid, c.render, rng);
}

/// Scenes [0, num_train) are split into labeled/unlabeled; the next
/// num_test scenes are held out.
inline Dataset build_dataset(const ExperimentConfig& c) {
  Dataset d;
  for (int i = 0; i < c.num_train_scenes; ++i) d.train_scenes.push_back(make_scene(c, i));
  for (int i = 0; i < c.num_test_scenes; ++i) {
    d.test_scenes.push_back(make_scene(c, c.num_train_scenes + i));
  }
  d.split = split_dataset(c.num_train_scenes, c.labeled_fraction, c.seed);
  for (int i : d.split.labeled) {
    const Scene& s = d.train_scenes[i];
    d.training.labeled.push_back({make_features(c, s, i), encode_targets(s, c.grid),
                                  encode_targets(mirror_scene(s), c.grid)});
  }
  for (int i : d.split.unlabeled) {
    d.training.unlabeled.push_back(make_features(c, d.train_scenes[i], i));
  }
  for (int i = 0; i < c.num_test_scenes; ++i) {
    const Scene& s = d.test_scenes[i];
    d.test_features.push_back(make_features(c, s, c.num_train_scenes + i));
    d.test_boxes.push_back(s.boxes);
  }
  return d;
}

inline ModelShape model_shape(const ExperimentConfig& c) {
  return {FeatureLayout{c.scene.num_classes}.count(), c.trainer.hidden, c.scene.num_classes};
}

// ---------------------------------------------------------------------------
// Runs.

struct RunRecord {
  std::string run_id;
  std::string config_hash;
  std::string version = OBBSSL_VERSION;
  uint64_t seed = 0;
  json config;
  std::vector<StepReport> steps;  // subsampled
  EvalReport teacher_eval;
  EvalReport student_eval;
  bool diverged = false;
  int diverged_at = -1;
  std::string error;
  double wall_clock = 0.0;
  std::filesystem::path out_dir;

  double map() const { return teacher_eval.map; }

  static json step_json(const StepReport& s, bool with_time) {
    json j{{"iteration", s.iteration},
           {"burn_in", s.burn_in},
           {"num_pairs", s.num_pairs},
           {"grad_norm", s.grad_norm},
           {"loss",
            {{"cls", s.loss.cls},
             {"reg", s.loss.reg},
             {"ctr", s.loss.ctr},
             {"raw", s.loss.raw},
             {"gc", s.loss.gc},
             {"unsup", s.loss.unsup},
             {"sup", s.loss.sup},
             {"total", s.loss.total}}}};
    if (with_time) j["wall_time"] = s.wall_time;
    return j;
  }

  /// Everything except timings; byte-identical across repeated runs.
  json metrics_json() const {
    json j;
    j["run_id"] = run_id;
    j["config_hash"] = config_hash;
    j["version"] = version;
    j["seed"] = seed;
    j["diverged"] = diverged;
    if (diverged) {
      j["diverged_at"] = diverged_at;
      j["error"] = error;
    }
    j["teacher"] = teacher_eval.to_json();
    j["student"] = student_eval.to_json();
    j["steps"] = json::array();
    for (const auto& s : steps) j["steps"].push_back(step_json(s, false));
    return j;
  }

  json record_json() const {
    json j = metrics_json();
    j["config"] = config;
    j["teacher"] = teacher_eval.to_json(true);
    j["wall_clock_seconds"] = wall_clock;
    j["steps"] = json::array();
    for (const auto& s : steps) j["steps"].push_back(step_json(s, true));
    j["checkpoint"] = "checkpoint.json";
    return j;
  }
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

}  // namespace detail

struct RunOptions {
  bool write_outputs = true;
  std::filesystem::path out_dir;  // empty: output_dir / run_id
  std::function<void(const StepReport&)> on_report;
};

inline std::filesystem::path run_directory(const ExperimentConfig& c, const RunOptions& o) {
  return o.out_dir.empty() ? std::filesystem::path(c.output_dir) / c.run_id : o.out_dir;
}

/// Builds the data, trains, evaluates teacher and student on the held-out
/// scenes and (optionally) writes the run directory. A divergence is
/// recorded in the result rather than thrown.
inline RunRecord run(const ExperimentConfig& c, const RunOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  c.validate();
  RunRecord rec;
  rec.run_id = c.run_id;
  rec.config_hash = config_hash(c);
  rec.seed = c.seed;
  rec.config = to_json(c);

  const Dataset data = build_dataset(c);
  Trainer trainer(c.trainer, model_shape(c), data.training);
  std::ofstream steps_out;
  if (opts.write_outputs) {
    rec.out_dir = run_directory(c, opts);
    std::error_code ec;
    std::filesystem::create_directories(rec.out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + rec.out_dir.string() + ": " + ec.message());
    detail::write_text(rec.out_dir / "config.json", rec.config.dump(2) + "\n");
    std::string scenes;
    for (const auto& s : data.train_scenes) scenes += serialize_scene(s, rec.config_hash) + "\n";
    for (const auto& s : data.test_scenes) scenes += serialize_scene(s, rec.config_hash) + "\n";
    detail::write_text(rec.out_dir / "scenes.jsonl", scenes);
    steps_out.open(rec.out_dir / "steps.jsonl", std::ios::binary);
    if (!steps_out) throw std::runtime_error("cannot write " + (rec.out_dir / "steps.jsonl").string());
  }

  try {
    while (!trainer.done()) {
      const StepReport r = trainer.step();
      if (r.iteration % c.report_every == 0 || trainer.done()) {
        rec.steps.push_back(r);
        if (steps_out.is_open()) steps_out << RunRecord::step_json(r, true).dump() << "\n";
        if (opts.on_report) opts.on_report(r);
      }
    }
  } catch (const TrainingDivergedError& e) {
    rec.diverged = true;
    rec.diverged_at = e.iteration();
    rec.error = e.what();
  }

  if (!rec.diverged) {
    rec.teacher_eval =
        evaluate_model(trainer.teacher(), data.test_features, data.test_boxes, c.eval);
    rec.student_eval =
        evaluate_model(trainer.student(), data.test_features, data.test_boxes, c.eval);
  }
  rec.wall_clock =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (opts.write_outputs) {
    detail::write_text(rec.out_dir / "checkpoint.json", trainer.checkpoint().dump() + "\n");
    detail::write_text(rec.out_dir / "metrics.json", rec.metrics_json().dump(2) + "\n");
    detail::write_text(rec.out_dir / "record.json", rec.record_json().dump(2) + "\n");
  }
  return rec;
}

struct ReevalResult {
  double stored_map = 0.0;
  double recomputed_map = 0.0;
  bool match = false;
};

/// Rebuilds the held-out scenes from a record's embedded config, loads its
/// checkpoint and recomputes the teacher mAP.
inline ReevalResult reevaluate_record(const std::filesystem::path& record_path) {
  std::ifstream in(record_path);
  if (!in) throw std::runtime_error("cannot open record " + record_path.string());
  const json rec = json::parse(in);
  const ExperimentConfig c = config_from_json(rec.at("config"));
  if (rec.at("diverged").get<bool>()) {
    throw std::runtime_error("record " + record_path.string() + " is from a diverged run");
  }
  const auto ck_path = record_path.parent_path() / rec.at("checkpoint").get<std::string>();
  std::ifstream ck_in(ck_path);
  if (!ck_in) throw std::runtime_error("cannot open checkpoint " + ck_path.string());
  const json ck = json::parse(ck_in);

  const Dataset data = build_dataset(c);
  Trainer trainer(c.trainer, model_shape(c), data.training);
  trainer.restore(ck);
  ReevalResult out;
  out.stored_map = rec.at("teacher").at("mAP").get<double>();
  out.recomputed_map =
      evaluate_model(trainer.teacher(), data.test_features, data.test_boxes, c.eval).map;
  out.match = out.stored_map == out.recomputed_map;
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepAxis {
  std::string key;
  std::vector<json> values;
};

struct SweepVariant {
  ExperimentConfig config;
  std::vector<std::pair<std::string, json>> assignment;
};

inline std::string value_label(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

/// Grid file: {"dotted.key": [v1, v2, ...], ...}. Every combination is
/// validated before anything runs.
inline std::vector<SweepAxis> parse_grid(const json& g) {
  if (!g.is_object() || g.empty()) throw ConfigError("sweep grid must be a non-empty object");
  std::vector<SweepAxis> axes;
  for (auto it = g.begin(); it != g.end(); ++it) {
    if (!it->is_array() || it->empty()) {
      throw ConfigError("sweep grid '" + it.key() + "' must be a non-empty array");
    }
    axes.push_back({it.key(), std::vector<json>(it->begin(), it->end())});
  }
  return axes;
}

inline std::vector<SweepVariant> expand_grid(const ExperimentConfig& base,
                                             const std::vector<SweepAxis>& axes) {
  std::vector<SweepVariant> out;
  std::vector<size_t> idx(axes.size(), 0);
  while (true) {
    SweepVariant v;
    v.config = base;
    std::string name = base.run_id;
    for (size_t a = 0; a < axes.size(); ++a) {
      const json& val = axes[a].values[idx[a]];
      v.config = with_override(v.config, axes[a].key, val);
      v.assignment.emplace_back(axes[a].key, val);
      std::string label = value_label(val);
      std::replace(label.begin(), label.end(), '/', '_');
      name += "__" + axes[a].key + "=" + label;
    }
    v.config.run_id = name;
    out.push_back(std::move(v));
    size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++idx[a] < axes[a].values.size()) break;
      idx[a] = 0;
    }
    if (a == axes.size()) break;
  }
  return out;
}

struct SweepResult {
  std::vector<SweepVariant> variants;
  std::vector<RunRecord> records;
};

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

/// Runs every variant (jobs workers), then writes runs.csv and one
/// summary_<axis>.csv per axis into `dir`.
inline SweepResult sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes,
                         const std::filesystem::path& dir, int jobs = 1,
                         bool write_runs = true) {
  SweepResult res;
  res.variants = expand_grid(base, axes);
  res.records.resize(res.variants.size());
  std::vector<std::string> errors(res.variants.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t i = next++; i < res.variants.size(); i = next++) {
      RunOptions o;
      o.write_outputs = write_runs;
      o.out_dir = dir / res.variants[i].config.run_id;
      try {
        res.records[i] = run(res.variants[i].config, o);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(res.variants.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) {
      throw std::runtime_error("sweep run " + res.variants[i].config.run_id + ": " + errors[i]);
    }
  }

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream runs;
  runs << "run_id";
  for (const auto& a : axes) runs << "," << csv_field(a.key);
  runs << ",seed,config_hash,map_teacher,map_student,diverged,diverged_at\n";
  for (size_t i = 0; i < res.variants.size(); ++i) {
    const auto& r = res.records[i];
    runs << csv_field(r.run_id);
    for (const auto& [k, v] : res.variants[i].assignment) runs << "," << csv_field(value_label(v));
    runs << std::setprecision(17) << "," << r.seed << "," << r.config_hash << ","
         << r.teacher_eval.map << "," << r.student_eval.map << "," << (r.diverged ? 1 : 0)
         << "," << r.diverged_at << "\n";
  }
  detail::write_text(dir / "runs.csv", runs.str());

  for (size_t a = 0; a < axes.size(); ++a) {
    std::ostringstream sum;
    sum << csv_field(axes[a].key) << ",runs,diverged,mean_map,std_map,min_map,max_map\n";
    for (const json& val : axes[a].values) {
      std::vector<double> maps;
      int div = 0;
      for (size_t i = 0; i < res.variants.size(); ++i) {
        if (res.variants[i].assignment[a].second != val) continue;
        if (res.records[i].diverged) {
          ++div;
          continue;
        }
        maps.push_back(res.records[i].teacher_eval.map);
      }
      double mean = 0.0, var = 0.0;
      for (double m : maps) mean += m;
      if (!maps.empty()) mean /= maps.size();
      for (double m : maps) var += (m - mean) * (m - mean);
      const double sd = maps.size() > 1 ? std::sqrt(var / (maps.size() - 1)) : 0.0;
      const auto [mn, mx] = maps.empty() ? std::pair<double, double>{0.0, 0.0}
                                         : std::pair<double, double>{
                                               *std::min_element(maps.begin(), maps.end()),
                                               *std::max_element(maps.begin(), maps.end())};
      sum << std::setprecision(17) << csv_field(value_label(val)) << ","
          << maps.size() + div << "," << div << "," << mean << "," << sd << "," << mn << ","
          << mx << "\n";
    }
    std::string fname = axes[a].key;
    std::replace(fname.begin(), fname.end(), '.', '_');
    detail::write_text(dir / ("summary_" + fname + ".csv"), sum.str());
  }
  return res;
}

}  // namespace obbssl

#endif  // OBBSSL_EXPERIMENT_HPP_
