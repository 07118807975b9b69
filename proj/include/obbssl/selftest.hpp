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

// Oracle suites run by `obbssl selftest`.
//
// Two hooks exist to show the oracles can fail: `epsilon` replaces the
// regularization used in the OT agreement check, and `grad_bias` is added to
// every analytic gradient component before it is compared to finite
// differences.

#ifndef OBBSSL_SELFTEST_HPP_
#define OBBSSL_SELFTEST_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "obbssl/evaluation.hpp"
#include "obbssl/grid.hpp"
#include "obbssl/obb.hpp"
#include "obbssl/oracles/exact_ot.hpp"
#include "obbssl/oracles/finite_difference.hpp"
#include "obbssl/oracles/monte_carlo_iou.hpp"
#include "obbssl/ot.hpp"
#include "obbssl/rng.hpp"
#include "obbssl/toy_model.hpp"

namespace obbssl {

struct SelftestOptions {
  double epsilon = 0.005;
  double grad_bias = 0.0;
  uint64_t seed = 7;
  int ot_instances = 30;
  int gradient_instances = 20;
  int iou_pairs = 8;
  long iou_samples = 1000000;
};

struct OracleCheck {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace detail {

inline Matrix random_cost(size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Matrix c(n, n);
  for (double& v : c.values()) v = u(rng);
  return c;
}

inline DiscreteDistribution random_distribution(size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(n);
  for (double& v : w) v = u(rng);
  return DiscreteDistribution(std::move(w)).normalized();
}

}  // namespace detail

inline OracleCheck check_ot_agreement(const SelftestOptions& o) {
  Rng rng = make_stream(o.seed, Stream::kTest, {1});
  std::uniform_int_distribution<int> size(2, 6);
  SinkhornConfig cfg;
  cfg.epsilon = o.epsilon;
  cfg.max_iters = 20000;
  cfg.tolerance = 1e-10;
  double worst = 0.0;
  for (int k = 0; k < o.ot_instances; ++k) {
    const size_t n = size(rng);
    const Matrix c = detail::random_cost(n, rng);
    const auto a = detail::random_distribution(n, rng);
    const auto b = detail::random_distribution(n, rng);
    const double exact = exact_ot_oracle(a, b, c);
    const double approx = sinkhorn(a, b, c, cfg).primal_cost;
    const double err = exact > 1e-3 ? std::abs(approx - exact) / exact
                                    : std::abs(approx - exact) / 1e-1;
    worst = std::max(worst, err);
  }
  return {"sinkhorn vs exact OT (rel)", worst, 1e-2, worst <= 1e-2};
}

inline OracleCheck check_gc_gradient(const SelftestOptions& o) {
  Rng rng = make_stream(o.seed, Stream::kTest, {2});
  std::uniform_int_distribution<int> size(2, 8);
  std::uniform_real_distribution<double> w(0.1, 3.0);
  double worst = 0.0;
  for (int k = 0; k < o.gradient_instances; ++k) {
    const size_t n = size(rng);
    std::vector<double> dt(n), ds(n);
    for (size_t i = 0; i < n; ++i) {
      dt[i] = w(rng);
      ds[i] = w(rng);
    }
    const DiscreteDistribution d_t(dt);
    const TransportSolution sol =
        sinkhorn(d_t, DiscreteDistribution(ds), detail::random_cost(n, rng), SinkhornConfig{});
    std::vector<double> g = gc_gradient(ds, sol.dual_col);
    for (double& v : g) v += o.grad_bias;
    const auto fd = central_difference(
        [&](const std::vector<double>& x) {
          return gc_loss(d_t, DiscreteDistribution(x), sol);
        },
        ds, 1e-5);
    worst = std::max(worst, max_relative_error(g, fd));
  }
  return {"GC gradient vs finite differences (rel)", worst, 1e-6, worst <= 1e-6};
}

inline OracleCheck check_model_gradient(const SelftestOptions& o) {
  Rng rng = make_stream(o.seed, Stream::kTest, {3});
  std::normal_distribution<double> n01(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < o.gradient_instances; ++k) {
    const ModelShape shape{3, k % 2 == 0 ? 4 : 0, 2};
    ToyModel model = ToyModel::Random(shape, rng);
    for (double& v : model.params().values()) v += 0.3 * n01(rng);
    FeatureField x(GridSpec{3, 3, 8.0}, shape.features);
    for (double& v : x.data) v = n01(rng);
    ToyModel::Cache cache;
    const DensePredictionMap map = model.forward(x, &cache);
    std::vector<double> up(map.values().size());
    for (double& v : up) v = n01(rng);
    // Stay clear of the angle wrap, where the output jumps by pi.
    for (int c = 0; c < map.cells(); ++c) {
      if (std::abs(map.angle(c)) > kHalfPi - 1e-3) {
        up[static_cast<size_t>(c) * map.layout().count() + map.layout().angle()] = 0.0;
      }
    }
    ParamVector g = model.backward(x, cache, up);
    for (double& v : g.values()) v += o.grad_bias;
    const std::vector<double> p0(model.params().values().begin(),
                                 model.params().values().end());
    const auto fd = central_difference(
        [&](const std::vector<double>& p) {
          ToyModel m = model;
          std::copy(p.begin(), p.end(), m.params().values().begin());
          const DensePredictionMap out = m.forward(x);
          double s = 0.0;
          for (size_t i = 0; i < up.size(); ++i) s += up[i] * out.values()[i];
          return s;
        },
        p0, 1e-6);
    worst = std::max(worst, max_relative_error(g.values(), fd));
  }
  return {"model backward vs finite differences (rel)", worst, 1e-5, worst <= 1e-5};
}

inline OracleCheck check_iou(const SelftestOptions& o) {
  Rng rng = make_stream(o.seed, Stream::kTest, {4});
  std::uniform_real_distribution<double> pos(-1.5, 1.5), size(0.5, 3.0), ang(-kPi, kPi);
  double worst = 0.0;
  for (int k = 0; k < o.iou_pairs; ++k) {
    const OrientedBox a(pos(rng), pos(rng), size(rng), size(rng), ang(rng), 0);
    const OrientedBox b(pos(rng), pos(rng), size(rng), size(rng), ang(rng), 0);
    worst = std::max(worst,
                     std::abs(rotated_iou(a, b) - monte_carlo_iou(a, b, o.iou_samples, rng)));
  }
  const OrientedBox u(0, 0, 1, 1, 0.0, 0), v(0.5, 0, 1, 1, 0.0, 0);
  const double exact_err =
      std::max(std::abs(rotated_iou(u, u) - 1.0), std::abs(rotated_iou(u, v) - 1.0 / 3.0));
  const bool pass = worst <= 1e-2 && exact_err <= 1e-9;
  return {"rotated IoU vs Monte Carlo (abs)", worst, 1e-2, pass};
}

inline OracleCheck check_ap_hand_case(const SelftestOptions&) {
  const std::vector<double> conf{0.9, 0.8, 0.7};
  const double ap = average_precision({true, false, true}, conf, 2);
  std::vector<EvalImage> images(1);
  for (int k = 0; k < 3; ++k) {
    const OrientedBox b(20.0 + 30.0 * k, 20.0, 10.0, 5.0, 0.3 * k, k);
    images[0].ground_truth.push_back(b);
    images[0].detections.push_back({b, 1.0});
  }
  const double identity = evaluate(images).map;
  const double err = std::max(std::abs(ap - 5.0 / 6.0), std::abs(identity - 1.0));
  return {"AP hand case and identity mAP (abs)", err, 1e-12, err <= 1e-12};
}

inline std::vector<OracleCheck> run_selftest(const SelftestOptions& o) {
  return {check_ot_agreement(o), check_gc_gradient(o), check_model_gradient(o),
          check_iou(o), check_ap_hand_case(o)};
}

inline void print_selftest(const std::vector<OracleCheck>& checks, std::ostream& os) {
  os << std::left << std::setw(46) << "oracle" << std::setw(14) << "measured"
     << std::setw(12) << "tolerance" << "result\n";
  for (const auto& c : checks) {
    os << std::left << std::setw(46) << c.name << std::setw(14) << std::setprecision(4)
       << std::scientific << c.measured << std::setw(12) << c.tolerance
       << (c.pass ? "PASS" : "FAIL") << "\n";
    os << std::defaultfloat;
  }
}

}  // namespace obbssl

#endif  // OBBSSL_SELFTEST_HPP_
