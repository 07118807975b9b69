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

// Discrete optimal transport between teacher and student score
// distributions: normalized cost maps, an entropic Sinkhorn solver that
// reports dual potentials, and the dual-form consistency loss with its
// gradient in the student distribution.

#ifndef OBBSSL_OT_HPP_
#define OBBSSL_OT_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "obbssl/matrix.hpp"
#include "obbssl/obb.hpp"

namespace obbssl {

/// Nonnegative weights on N points, optionally with 2D support positions.
class DiscreteDistribution {
 public:
  explicit DiscreteDistribution(std::vector<double> weights,
                                std::vector<Point2> support = {})
      : weights_(std::move(weights)), support_(std::move(support)) {
    if (weights_.empty()) {
      throw std::invalid_argument("DiscreteDistribution: empty");
    }
    if (!support_.empty() && support_.size() != weights_.size()) {
      throw std::invalid_argument("DiscreteDistribution: support size mismatch");
    }
    bool any_positive = false;
    for (double w : weights_) {
      if (!std::isfinite(w) || w < 0.0) {
        throw std::invalid_argument(
            "DiscreteDistribution: weights must be finite and >= 0");
      }
      any_positive |= w > 0.0;
    }
    if (!any_positive) {
      throw std::invalid_argument("DiscreteDistribution: all weights are zero");
    }
  }

  size_t size() const { return weights_.size(); }
  std::span<const double> weights() const { return weights_; }
  std::span<const Point2> support() const { return support_; }

  double l1_norm() const {
    return std::accumulate(weights_.begin(), weights_.end(), 0.0);
  }

  DiscreteDistribution normalized() const {
    const double total = l1_norm();
    std::vector<double> w(weights_.size());
    for (size_t i = 0; i < w.size(); ++i) w[i] = weights_[i] / total;
    return DiscreteDistribution(std::move(w), support_);
  }

 private:
  std::vector<double> weights_;
  std::vector<Point2> support_;
};

using CostMatrix = Matrix;

/// One side of a pair set as seen by the cost map: position z_i and the
/// score of the teacher-selected class at that position.
struct PairView {
  std::vector<Point2> positions;
  std::vector<double> scores;

  size_t size() const { return positions.size(); }
};

/// Which components enter the cost map.
struct CostComposition {
  bool use_dist = true;
  bool use_score = true;

  bool any() const { return use_dist || use_score; }
};

/// C = C_dist + C_score, each max-normalized over all (i, j) into [0, 1].
/// A component whose maximum is zero is the zero matrix.
inline CostMatrix build_cost_matrix(const PairView& teacher,
                                    const PairView& student,
                                    CostComposition comp = {}) {
  const size_t n = teacher.size();
  if (n == 0 || student.size() != n || teacher.scores.size() != n ||
      student.scores.size() != n) {
    throw std::invalid_argument(
        "build_cost_matrix: teacher/student views must have equal, non-zero "
        "length");
  }
  CostMatrix dist(n, n), score(n, n);
  double max_dist = 0.0, max_score = 0.0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      const Point2 d = teacher.positions[i] - student.positions[j];
      dist(i, j) = d.x * d.x + d.y * d.y;
      score(i, j) = std::abs(teacher.scores[i] - student.scores[j]);
      max_dist = std::max(max_dist, dist(i, j));
      max_score = std::max(max_score, score(i, j));
    }
  }
  CostMatrix c(n, n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double v = 0.0;
      if (comp.use_dist && max_dist > 0.0) v += dist(i, j) / max_dist;
      if (comp.use_score && max_score > 0.0) v += score(i, j) / max_score;
      c(i, j) = v;
    }
  }
  return c;
}

struct SinkhornConfig {
  double epsilon = 0.05;
  int max_iters = 200;
  double tolerance = 1e-6;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      throw std::invalid_argument("SinkhornConfig: epsilon must be > 0");
    }
    if (max_iters < 1) {
      throw std::invalid_argument("SinkhornConfig: max_iters must be >= 1");
    }
    if (!(tolerance > 0.0)) {
      throw std::invalid_argument("SinkhornConfig: tolerance must be > 0");
    }
  }
};

// Below this epsilon the solver always iterates on log-potentials.
inline constexpr double kLogDomainEpsilon = 0.01;

struct TransportSolution {
  Matrix plan;
  std::vector<double> dual_row;  // lambda*
  std::vector<double> dual_col;  // mu*
  double primal_cost = 0.0;
  int iterations_used = 0;
  bool converged = false;
  double marginal_error = 0.0;
  bool log_domain = false;
};

namespace detail {

// Largest absolute row- or column-sum violation of `plan`.
inline double marginal_violation(const Matrix& plan, std::span<const double> a,
                                 std::span<const double> b) {
  double err = 0.0;
  std::vector<double> col(b.size(), 0.0);
  for (size_t i = 0; i < plan.rows(); ++i) {
    double r = 0.0;
    for (size_t j = 0; j < plan.cols(); ++j) {
      r += plan(i, j);
      col[j] += plan(i, j);
    }
    err = std::max(err, std::abs(r - a[i]));
  }
  for (size_t j = 0; j < b.size(); ++j) {
    err = std::max(err, std::abs(col[j] - b[j]));
  }
  return err;
}

struct ScalingResult {
  bool ok = false;
  int iterations = 0;
  bool converged = false;
  std::vector<double> u, v;
};

// Multiplicative Sinkhorn. Reports !ok on underflow / non-finite scalings.
inline ScalingResult sinkhorn_scaling(std::span<const double> a,
                                      std::span<const double> b,
                                      const Matrix& c,
                                      const SinkhornConfig& cfg) {
  const size_t n = a.size(), m = b.size();
  Matrix k(n, m);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) k(i, j) = std::exp(-c(i, j) / cfg.epsilon);
  }
  ScalingResult res;
  res.u.assign(n, 1.0);
  res.v.assign(m, 1.0);
  std::vector<double> kv(n), ktu(m);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    for (size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < m; ++j) s += k(i, j) * res.v[j];
      kv[i] = s;
    }
    if (it > 1) {
      double err = 0.0;
      for (size_t i = 0; i < n; ++i) {
        err = std::max(err, std::abs(res.u[i] * kv[i] - a[i]));
      }
      if (err <= cfg.tolerance) {
        res.iterations = it - 1;
        res.converged = true;
        res.ok = true;
        return res;
      }
    }
    for (size_t i = 0; i < n; ++i) {
      if (!(kv[i] > 0.0) || !std::isfinite(kv[i])) return res;
      res.u[i] = a[i] / kv[i];
    }
    std::fill(ktu.begin(), ktu.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < m; ++j) ktu[j] += k(i, j) * res.u[i];
    }
    for (size_t j = 0; j < m; ++j) {
      if (!(ktu[j] > 0.0) || !std::isfinite(ktu[j])) return res;
      res.v[j] = b[j] / ktu[j];
      if (!std::isfinite(res.v[j])) return res;
    }
    res.iterations = it;
  }
  res.ok = true;
  return res;
}

inline double log_sum_exp(std::span<const double> x) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double v : x) s += std::exp(v - hi);
  return hi + std::log(s);
}

}  // namespace detail

/// Entropic OT between `source` and `target` (normalized internally) under
/// cost `c`. Duals are the log-scalings times epsilon, re-centered so that
/// <lambda, source> == <mu, target>.
inline TransportSolution sinkhorn(const DiscreteDistribution& source,
                                  const DiscreteDistribution& target,
                                  const CostMatrix& c,
                                  const SinkhornConfig& cfg) {
  cfg.validate();
  const size_t n = source.size(), m = target.size();
  if (c.rows() != n || c.cols() != m) {
    throw std::invalid_argument("sinkhorn: cost matrix shape mismatch");
  }
  for (double v : c.values()) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("sinkhorn: non-finite cost entry");
    }
  }
  const DiscreteDistribution src = source.normalized();
  const DiscreteDistribution tgt = target.normalized();
  const auto a = src.weights();
  const auto b = tgt.weights();
  const double eps = cfg.epsilon;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  TransportSolution sol;
  std::vector<double> f(n, 0.0), g(m, 0.0);

  bool need_log = eps < kLogDomainEpsilon;
  if (!need_log) {
    detail::ScalingResult sr = detail::sinkhorn_scaling(a, b, c, cfg);
    if (sr.ok) {
      for (size_t i = 0; i < n; ++i) f[i] = eps * std::log(sr.u[i]);
      for (size_t j = 0; j < m; ++j) g[j] = eps * std::log(sr.v[j]);
      sol.iterations_used = sr.iterations;
      sol.converged = sr.converged;
    } else {
      need_log = true;
    }
  }

  if (need_log) {
    sol.log_domain = true;
    std::fill(f.begin(), f.end(), 0.0);
    std::fill(g.begin(), g.end(), 0.0);
    std::vector<double> scratch(std::max(n, m));
    auto update_f = [&] {
      for (size_t i = 0; i < n; ++i) {
        if (a[i] == 0.0) {
          f[i] = kNegInf;
          continue;
        }
        for (size_t j = 0; j < m; ++j) scratch[j] = (g[j] - c(i, j)) / eps;
        f[i] = eps * std::log(a[i]) -
               eps * detail::log_sum_exp({scratch.data(), m});
      }
    };
    auto update_g = [&] {
      for (size_t j = 0; j < m; ++j) {
        if (b[j] == 0.0) {
          g[j] = kNegInf;
          continue;
        }
        for (size_t i = 0; i < n; ++i) scratch[i] = (f[i] - c(i, j)) / eps;
        g[j] = eps * std::log(b[j]) -
               eps * detail::log_sum_exp({scratch.data(), n});
      }
    };
    auto row_error = [&] {
      double err = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double r = 0.0;
        if (std::isfinite(f[i])) {
          for (size_t j = 0; j < m; ++j) {
            if (std::isfinite(g[j])) r += std::exp((f[i] + g[j] - c(i, j)) / eps);
          }
        }
        err = std::max(err, std::abs(r - a[i]));
      }
      return err;
    };
    sol.converged = false;
    sol.iterations_used = 0;
    for (int it = 1; it <= cfg.max_iters; ++it) {
      update_f();
      update_g();
      sol.iterations_used = it;
      if (row_error() <= cfg.tolerance) {
        sol.converged = true;
        break;
      }
    }
  }

  sol.plan = Matrix(n, m);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) {
      const double e = f[i] + g[j] - c(i, j);
      sol.plan(i, j) = std::isfinite(e) ? std::exp(e / eps) : 0.0;
    }
  }

  // Potentials on zero-mass points are -inf; replace them by their
  // c-transform, which keeps lambda_i + mu_j <= C_ij.
  for (size_t j = 0; j < m; ++j) {
    if (std::isfinite(g[j])) continue;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
      if (std::isfinite(f[i])) best = std::min(best, c(i, j) - f[i]);
    }
    g[j] = std::isfinite(best) ? best : 0.0;
  }
  for (size_t i = 0; i < n; ++i) {
    if (std::isfinite(f[i])) continue;
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < m; ++j) best = std::min(best, c(i, j) - g[j]);
    f[i] = best;
  }

  double fa = 0.0, gb = 0.0;
  for (size_t i = 0; i < n; ++i) fa += f[i] * a[i];
  for (size_t j = 0; j < m; ++j) gb += g[j] * b[j];
  const double shift = 0.5 * (fa + gb) - fa;
  for (double& v : f) v += shift;
  for (double& v : g) v -= shift;

  sol.dual_row = std::move(f);
  sol.dual_col = std::move(g);
  sol.marginal_error = detail::marginal_violation(sol.plan, a, b);
  sol.converged = sol.marginal_error <= cfg.tolerance;
  double cost = 0.0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) cost += c(i, j) * sol.plan(i, j);
  }
  sol.primal_cost = cost;
  return sol;
}

/// <lambda*, d_t / |d_t|_1> + <mu*, d_s / |d_s|_1>.
inline double gc_loss(const DiscreteDistribution& d_t,
                      const DiscreteDistribution& d_s,
                      const TransportSolution& sol) {
  if (sol.dual_row.size() != d_t.size() || sol.dual_col.size() != d_s.size()) {
    throw std::invalid_argument("gc_loss: dual / distribution size mismatch");
  }
  const double nt = d_t.l1_norm();
  const double ns = d_s.l1_norm();
  double loss = 0.0;
  for (size_t i = 0; i < d_t.size(); ++i) {
    loss += sol.dual_row[i] * d_t.weights()[i] / nt;
  }
  for (size_t j = 0; j < d_s.size(); ++j) {
    loss += sol.dual_col[j] * d_s.weights()[j] / ns;
  }
  return loss;
}

/// d gc_loss / d d_s with the duals held fixed:
/// mu*_i / |d_s|_1 - <mu*, d_s> / |d_s|_1^2.
inline std::vector<double> gc_gradient(std::span<const double> d_s,
                                       std::span<const double> mu_star) {
  if (d_s.size() != mu_star.size()) {
    throw std::invalid_argument("gc_gradient: size mismatch");
  }
  const double norm = std::accumulate(d_s.begin(), d_s.end(), 0.0);
  if (!(norm > 0.0)) {
    throw std::invalid_argument("gc_gradient: zero distribution");
  }
  double dot = 0.0;
  for (size_t i = 0; i < d_s.size(); ++i) dot += mu_star[i] * d_s[i];
  std::vector<double> grad(d_s.size());
  for (size_t i = 0; i < d_s.size(); ++i) {
    grad[i] = mu_star[i] / norm - dot / (norm * norm);
  }
  return grad;
}

inline std::vector<double> gc_gradient(const DiscreteDistribution& d_s,
                                       std::span<const double> mu_star) {
  return gc_gradient(d_s.weights(), mu_star);
}

}  // namespace obbssl

#endif  // OBBSSL_OT_HPP_
