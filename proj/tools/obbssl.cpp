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

// obbssl command line: train, sweep, eval, selftest.
//
// Exit codes: 0 success, 1 oracle or validation failure, 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "obbssl/experiment.hpp"
#include "obbssl/selftest.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed,
              const std::string& out, bool quiet) {
  obbssl::ExperimentConfig cfg = obbssl::load_config(config_path);
  if (seed) cfg = obbssl::with_override(cfg, "seed", *seed);
  obbssl::RunOptions opts;
  if (!out.empty()) opts.out_dir = out;
  if (!quiet) {
    opts.on_report = [](const obbssl::StepReport& r) {
      std::cout << "iter " << r.iteration << (r.burn_in ? " [burn-in]" : "")
                << "  total " << r.loss.total << "  sup " << r.loss.sup << "  raw "
                << r.loss.raw << "  gc " << r.loss.gc << "  pairs " << r.num_pairs << "\n";
    };
  }
  const obbssl::RunRecord rec = obbssl::run(cfg, opts);
  if (rec.diverged) {
    std::cerr << "error: " << rec.error << "\n";
    return kRuntime;
  }
  std::cout << "run " << rec.run_id << " (config " << rec.config_hash << ")\n"
            << "teacher mAP " << rec.teacher_eval.map << "  student mAP "
            << rec.student_eval.map << "\n"
            << "wrote " << rec.out_dir.string() << "\n";
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path,
              const std::string& out, int jobs) {
  const obbssl::ExperimentConfig base = obbssl::load_config(config_path);
  std::ifstream in(grid_path);
  if (!in) throw std::runtime_error("cannot open grid " + grid_path);
  nlohmann::json g;
  try {
    g = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw obbssl::ConfigError(grid_path + ": " + e.what());
  }
  const auto axes = obbssl::parse_grid(g);
  // Rejects bad keys and values before any run starts.
  const auto variants = obbssl::expand_grid(base, axes);
  const std::filesystem::path dir =
      out.empty() ? std::filesystem::path(base.output_dir) / (base.run_id + "_sweep")
                  : std::filesystem::path(out);
  std::cout << "sweep: " << variants.size() << " runs into " << dir.string() << "\n";
  const obbssl::SweepResult res = obbssl::sweep(base, axes, dir, jobs);
  int diverged = 0;
  for (const auto& r : res.records) {
    std::cout << r.run_id << "  mAP " << r.teacher_eval.map
              << (r.diverged ? "  DIVERGED" : "") << "\n";
    diverged += r.diverged ? 1 : 0;
  }
  return diverged ? kRuntime : kOk;
}

int cmd_eval(const std::string& record_path) {
  const obbssl::ReevalResult r = obbssl::reevaluate_record(record_path);
  std::cout << "stored mAP " << r.stored_map << "  recomputed mAP " << r.recomputed_map
            << (r.match ? "  MATCH" : "  MISMATCH") << "\n";
  return r.match ? kOk : kValidation;
}

int cmd_selftest(const obbssl::SelftestOptions& o) {
  const auto checks = obbssl::run_selftest(o);
  obbssl::print_selftest(checks, std::cout);
  for (const auto& c : checks) {
    if (!c.pass) return kValidation;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised oriented detection lab"};
  app.require_subcommand(1);

  std::string config, out, grid, record;
  uint64_t seed = 0;
  bool quiet = false;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  auto* train = app.add_subcommand("train", "Run one experiment");
  train->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out, "Output directory (default: output_dir/run_id)");
  train->add_flag("--quiet", quiet, "Do not print step reports");

  auto* sw = app.add_subcommand("sweep", "Run a Cartesian grid of variants");
  sw->add_option("--config", config, "Base experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sw->add_option("--grid", grid, "Grid file: {\"dotted.key\": [values]}")->required()->check(CLI::ExistingFile);
  sw->add_option("--out", out, "Sweep directory");
  sw->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "Re-evaluate a run record's checkpoint");
  ev->add_option("--record", record, "record.json of a run")->required()->check(CLI::ExistingFile);

  obbssl::SelftestOptions st;
  auto* self = app.add_subcommand("selftest", "Run the oracle suites");
  self->add_option("--epsilon", st.epsilon, "Regularization for the OT agreement check");
  self->add_option("--grad-bias", st.grad_bias, "Bias added to analytic gradients");
  self->add_option("--seed", st.seed, "Seed for random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }

  try {
    if (*train) {
      return cmd_train(config, *seed_opt ? std::optional<uint64_t>(seed) : std::nullopt, out,
                       quiet);
    }
    if (*sw) return cmd_sweep(config, grid, out, jobs);
    if (*ev) return cmd_eval(record);
    if (*self) return cmd_selftest(st);
  } catch (const obbssl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
