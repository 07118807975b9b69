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

// Exact transportation-problem solver for small instances. Used as a test
// oracle for the entropic solver; not on any training path.

#ifndef OBBSSL_ORACLES_EXACT_OT_HPP_
#define OBBSSL_ORACLES_EXACT_OT_HPP_

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "obbssl/matrix.hpp"
#include "obbssl/ot.hpp"

namespace obbssl {

inline constexpr size_t kExactOtMaxSize = 8;

class UnsupportedSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

// min c^T x  s.t.  A x = b, x >= 0, with b >= 0. Two-phase tableau simplex
// with Bland's rule (no cycling). Returns the optimal objective.
class EqualitySimplex {
 public:
  EqualitySimplex(const Matrix& a, std::vector<double> b, std::vector<double> c)
      : m_(a.rows()), n_(a.cols()), tab_(a.rows() + 1, a.cols() + a.rows() + 1) {
    for (size_t r = 0; r < m_; ++r) {
      double sign = b[r] < 0.0 ? -1.0 : 1.0;
      for (size_t j = 0; j < n_; ++j) tab_(r, j) = sign * a(r, j);
      tab_(r, n_ + r) = 1.0;
      tab_(r, rhs()) = sign * b[r];
      basis_.push_back(n_ + r);
    }
    cost_ = std::move(c);
  }

  double solve() {
    // Phase I: minimize the sum of artificials.
    set_objective([&](size_t j) { return j >= n_ && j < n_ + m_ ? 1.0 : 0.0; });
    run(n_ + m_);
    if (-tab_(m_, rhs()) > 1e-9) {
      throw std::runtime_error("exact OT: infeasible marginals");
    }
    drive_out_artificials();
    // Phase II on structural columns only.
    set_objective([&](size_t j) { return j < n_ ? cost_[j] : 0.0; });
    run(n_);
    return -tab_(m_, rhs());
  }

 private:
  size_t rhs() const { return n_ + m_; }

  template <typename F>
  void set_objective(F coeff) {
    for (size_t j = 0; j <= rhs(); ++j) {
      tab_(m_, j) = j < rhs() ? coeff(j) : 0.0;
    }
    for (size_t r = 0; r < m_; ++r) {
      const double cb = coeff(basis_[r]);
      if (cb == 0.0) continue;
      for (size_t j = 0; j <= rhs(); ++j) tab_(m_, j) -= cb * tab_(r, j);
    }
  }

  void pivot(size_t row, size_t col) {
    const double p = tab_(row, col);
    for (size_t j = 0; j <= rhs(); ++j) tab_(row, j) /= p;
    for (size_t r = 0; r <= m_; ++r) {
      if (r == row) continue;
      const double f = tab_(r, col);
      if (f == 0.0) continue;
      for (size_t j = 0; j <= rhs(); ++j) tab_(r, j) -= f * tab_(row, j);
    }
    basis_[row] = col;
  }

  void run(size_t allowed_cols) {
    constexpr double kTol = 1e-12;
    for (int guard = 0; guard < 100000; ++guard) {
      size_t enter = allowed_cols;
      for (size_t j = 0; j < allowed_cols; ++j) {
        if (tab_(m_, j) < -kTol) {
          enter = j;
          break;
        }
      }
      if (enter == allowed_cols) return;
      size_t leave = m_;
      double best = std::numeric_limits<double>::infinity();
      for (size_t r = 0; r < m_; ++r) {
        if (tab_(r, enter) > kTol) {
          const double ratio = tab_(r, rhs()) / tab_(r, enter);
          if (ratio < best - kTol ||
              (leave < m_ && std::abs(ratio - best) <= kTol &&
               basis_[r] < basis_[leave])) {
            best = ratio;
            leave = r;
          }
        }
      }
      if (leave == m_) throw std::runtime_error("exact OT: unbounded LP");
      pivot(leave, enter);
    }
    throw std::runtime_error("exact OT: simplex iteration limit");
  }

  void drive_out_artificials() {
    for (size_t r = 0; r < m_; ++r) {
      if (basis_[r] < n_) continue;
      for (size_t j = 0; j < n_; ++j) {
        if (std::abs(tab_(r, j)) > 1e-9) {
          pivot(r, j);
          break;
        }
      }
      // A row with no structural entry is redundant and stays degenerate.
    }
  }

  size_t m_, n_;
  Matrix tab_;
  std::vector<size_t> basis_;
  std::vector<double> cost_;
};

}  // namespace detail

/// Exact min <C, P> over the transport polytope of (source, target), both
/// normalized internally. Supports N <= 8 per side.
inline double exact_ot_oracle(const DiscreteDistribution& source,
                              const DiscreteDistribution& target,
                              const CostMatrix& c) {
  const size_t n = source.size(), m = target.size();
  if (n > kExactOtMaxSize || m > kExactOtMaxSize) {
    throw UnsupportedSizeError("exact_ot_oracle: supports at most 8 points");
  }
  if (c.rows() != n || c.cols() != m) {
    throw std::invalid_argument("exact_ot_oracle: cost shape mismatch");
  }
  const auto a = source.normalized();
  const auto b = target.normalized();
  // Row-sum constraints for every i, column sums for all but the last j
  // (the dropped one is implied by total mass).
  const size_t rows = n + m - 1;
  Matrix lhs(rows, n * m);
  std::vector<double> rhs(rows), cost(n * m);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) {
      lhs(i, i * m + j) = 1.0;
      if (j + 1 < m) lhs(n + j, i * m + j) = 1.0;
      cost[i * m + j] = c(i, j);
    }
    rhs[i] = a.weights()[i];
  }
  for (size_t j = 0; j + 1 < m; ++j) rhs[n + j] = b.weights()[j];
  detail::EqualitySimplex lp(lhs, std::move(rhs), std::move(cost));
  return lp.solve();
}

}  // namespace obbssl

#endif  // OBBSSL_ORACLES_EXACT_OT_HPP_
