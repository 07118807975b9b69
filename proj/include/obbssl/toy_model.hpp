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

// A per-cell dense predictor: features -> tanh hidden layer -> heads.
//
// Heads per cell (pre-activation order): K class logits, 4 offset
// pre-activations, (sin 2θ, cos 2θ) angle pair, centerness logit. Scores and
// centerness go through a sigmoid, offsets through softplus, the angle is
// atan2(sin, cos) / 2. With hidden == 0 the model is a single affine map.

#ifndef OBBSSL_TOY_MODEL_HPP_
#define OBBSSL_TOY_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "obbssl/grid.hpp"
#include "obbssl/params.hpp"

namespace obbssl {

struct ModelShape {
  int features = 1;
  int hidden = 32;
  int classes = 1;

  int outputs() const { return classes + 7; }
  int input_to_head() const { return hidden > 0 ? hidden : features; }
  bool operator==(const ModelShape&) const = default;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Clamped to the open interval: saturated pre-activations would otherwise
// round to exactly 0 or 1.
inline double sigmoid(double x) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  return std::clamp(s, lo, hi);
}

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

class ToyModel {
 public:
  // Intermediate activations kept by forward() for backward().
  struct Cache {
    std::vector<double> hidden;  // cells x hidden
    std::vector<double> head;    // cells x outputs, pre-activation
  };

  explicit ToyModel(ModelShape shape) : shape_(shape) {
    if (shape.features < 1 || shape.hidden < 0 || shape.classes < 1) {
      throw std::invalid_argument("ToyModel: bad shape");
    }
    if (shape.hidden > 0) {
      params_.add_segment("hidden.weight",
                          static_cast<size_t>(shape.hidden) * shape.features);
      params_.add_segment("hidden.bias", shape.hidden);
    }
    params_.add_segment("head.weight",
                        static_cast<size_t>(shape.outputs()) * shape.input_to_head());
    params_.add_segment("head.bias", shape.outputs());
  }

  /// Scaled-normal weights; biases put scores near `prior`, offsets near 1
  /// stride and the angle at 0.
  template <typename RngT>
  static ToyModel Random(ModelShape shape, RngT& rng, double prior = 0.01) {
    ToyModel m(shape);
    std::normal_distribution<double> n01(0.0, 1.0);
    auto fill = [&](const std::string& name, double scale) {
      for (double& v : m.params_.segment(name)) v = scale * n01(rng);
    };
    if (shape.hidden > 0) fill("hidden.weight", 1.0 / std::sqrt(double(shape.features)));
    fill("head.weight", 0.1 / std::sqrt(double(shape.input_to_head())));
    auto bias = m.params_.segment("head.bias");
    const double logit = std::log(prior / (1.0 - prior));
    for (int k = 0; k < shape.classes; ++k) bias[k] = logit;
    for (int r = 0; r < 4; ++r) bias[shape.classes + r] = std::log(std::expm1(1.0));
    bias[shape.classes + 4] = 0.0;
    bias[shape.classes + 5] = 1.0;
    bias[shape.classes + 6] = 0.0;
    return m;
  }

  const ModelShape& shape() const { return shape_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }
  void set_params(const ParamVector& p) {
    if (!p.same_shape(params_)) throw std::invalid_argument("ToyModel: param shape");
    params_ = p;
  }

  DensePredictionMap forward(const FeatureField& x, Cache* cache = nullptr) const {
    if (x.channels != shape_.features) {
      throw std::invalid_argument("ToyModel::forward: feature channel mismatch");
    }
    const int cells = x.grid.cells();
    const int hid = shape_.hidden, out = shape_.outputs(), in = shape_.input_to_head();
    DensePredictionMap map(x.grid, shape_.classes);
    const ChannelLayout& lay = map.layout();
    Cache local;
    Cache& c = cache ? *cache : local;
    c.hidden.assign(static_cast<size_t>(cells) * hid, 0.0);
    c.head.assign(static_cast<size_t>(cells) * out, 0.0);
    const auto wh = hid > 0 ? params_.segment("hidden.weight") : std::span<const double>{};
    const auto bh = hid > 0 ? params_.segment("hidden.bias") : std::span<const double>{};
    const auto wo = params_.segment("head.weight");
    const auto bo = params_.segment("head.bias");
    for (int cell = 0; cell < cells; ++cell) {
      const auto f = x.cell(cell);
      const double* input = f.data();
      if (hid > 0) {
        double* h = c.hidden.data() + static_cast<size_t>(cell) * hid;
        for (int j = 0; j < hid; ++j) {
          double a = bh[j];
          const double* w = wh.data() + static_cast<size_t>(j) * shape_.features;
          for (int i = 0; i < shape_.features; ++i) a += w[i] * f[i];
          h[j] = std::tanh(a);
        }
        input = h;
      }
      double* o = c.head.data() + static_cast<size_t>(cell) * out;
      for (int k = 0; k < out; ++k) {
        double a = bo[k];
        const double* w = wo.data() + static_cast<size_t>(k) * in;
        for (int i = 0; i < in; ++i) a += w[i] * input[i];
        o[k] = a;
      }
      auto dst = map.cell(cell);
      const int kc = shape_.classes;
      for (int k = 0; k < kc; ++k) dst[lay.score(k)] = sigmoid(o[k]);
      for (int r = 0; r < 4; ++r) dst[lay.reg(r)] = softplus(o[kc + r]);
      dst[lay.angle()] =
          Angle::FromRadians(0.5 * std::atan2(o[kc + 4], o[kc + 5])).radians();
      dst[lay.centerness()] = sigmoid(o[kc + 6]);
    }
    return map;
  }

  /// Parameter gradient of sum_cells <upstream_cell, prediction_cell>, where
  /// `upstream` is laid out like the prediction map (cells x channels).
  ParamVector backward(const FeatureField& x, const Cache& cache,
                       std::span<const double> upstream) const {
    const int cells = x.grid.cells();
    const int hid = shape_.hidden, out = shape_.outputs(), in = shape_.input_to_head();
    const ChannelLayout lay{shape_.classes};
    if (upstream.size() != static_cast<size_t>(cells) * lay.count()) {
      throw std::invalid_argument("ToyModel::backward: upstream shape mismatch");
    }
    if (cache.head.size() != static_cast<size_t>(cells) * out) {
      throw std::invalid_argument("ToyModel::backward: stale cache");
    }
    ParamVector grad = params_.zeros_like();
    auto gwh = hid > 0 ? grad.segment("hidden.weight") : std::span<double>{};
    auto gbh = hid > 0 ? grad.segment("hidden.bias") : std::span<double>{};
    auto gwo = grad.segment("head.weight");
    auto gbo = grad.segment("head.bias");
    const auto wo = params_.segment("head.weight");
    std::vector<double> dout(out), dh(std::max(hid, 1));
    const int kc = shape_.classes;
    for (int cell = 0; cell < cells; ++cell) {
      const double* up = upstream.data() + static_cast<size_t>(cell) * lay.count();
      bool any = false;
      for (int ch = 0; ch < lay.count(); ++ch) any |= up[ch] != 0.0;
      if (!any) continue;
      const double* o = cache.head.data() + static_cast<size_t>(cell) * out;
      for (int k = 0; k < kc; ++k) {
        const double s = sigmoid(o[k]);
        dout[k] = up[lay.score(k)] * s * (1.0 - s);
      }
      for (int r = 0; r < 4; ++r) dout[kc + r] = up[lay.reg(r)] * sigmoid(o[kc + r]);
      const double as = o[kc + 4], ac = o[kc + 5];
      const double r2 = std::max(as * as + ac * ac, 1e-300);
      dout[kc + 4] = up[lay.angle()] * ac / (2.0 * r2);
      dout[kc + 5] = -up[lay.angle()] * as / (2.0 * r2);
      const double sc = sigmoid(o[kc + 6]);
      dout[kc + 6] = up[lay.centerness()] * sc * (1.0 - sc);

      const auto f = x.cell(cell);
      const double* input =
          hid > 0 ? cache.hidden.data() + static_cast<size_t>(cell) * hid : f.data();
      for (int k = 0; k < out; ++k) {
        if (dout[k] == 0.0) continue;
        double* g = gwo.data() + static_cast<size_t>(k) * in;
        for (int i = 0; i < in; ++i) g[i] += dout[k] * input[i];
        gbo[k] += dout[k];
      }
      if (hid == 0) continue;
      for (int j = 0; j < hid; ++j) {
        double a = 0.0;
        for (int k = 0; k < out; ++k) a += wo[static_cast<size_t>(k) * in + j] * dout[k];
        dh[j] = a * (1.0 - input[j] * input[j]);
      }
      for (int j = 0; j < hid; ++j) {
        if (dh[j] == 0.0) continue;
        double* g = gwh.data() + static_cast<size_t>(j) * shape_.features;
        for (int i = 0; i < shape_.features; ++i) g[i] += dh[j] * f[i];
        gbh[j] += dh[j];
      }
    }
    return grad;
  }

 private:
  ModelShape shape_;
  ParamVector params_;
};

/// Classical momentum SGD with a decoupled weight-decay term:
/// v <- momentum * v + g;  theta <- theta - lr * v - lr * wd * theta.
/// Throws NonFiniteError on non-finite gradients.
inline void sgd_step(ParamVector& params, const ParamVector& grads,
                     ParamVector& velocity, double lr, double momentum,
                     double weight_decay) {
  if (!params.same_shape(grads) || !params.same_shape(velocity)) {
    throw std::invalid_argument("sgd_step: shape mismatch");
  }
  if (!grads.all_finite()) {
    throw NonFiniteError("sgd_step: non-finite gradient");
  }
  auto p = params.values();
  auto g = grads.values();
  auto v = velocity.values();
  for (size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i] + lr * weight_decay * p[i];
  }
}

}  // namespace obbssl

#endif  // OBBSSL_TOY_MODEL_HPP_
