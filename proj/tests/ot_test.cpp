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

#include "obbssl/ot.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "obbssl/oracles/exact_ot.hpp"
#include "oracles.hpp"

namespace obbssl {
namespace {

std::vector<double> RandomWeights(size_t n, std::mt19937_64& rng, double lo = 0.05) {
  std::uniform_real_distribution<double> u(lo, 1.0);
  std::vector<double> w(n);
  for (double& v : w) v = u(rng);
  return w;
}

Matrix RandomCost(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Matrix c(n, n);
  for (double& v : c.values()) v = u(rng);
  return c;
}

oracle::Mat ToMat(const Matrix& c) {
  oracle::Mat m(c.rows(), oracle::Vec(c.cols()));
  for (size_t i = 0; i < c.rows(); ++i) {
    for (size_t j = 0; j < c.cols(); ++j) m[i][j] = c(i, j);
  }
  return m;
}

// ---------------------------------------------------------------------------

TEST(DiscreteDistributionTest, Validation) {
  EXPECT_THROW(DiscreteDistribution({}), std::invalid_argument);
  EXPECT_THROW(DiscreteDistribution({0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(DiscreteDistribution({1.0, -0.1}), std::invalid_argument);
  EXPECT_THROW(DiscreteDistribution({1.0, std::nan("")}), std::invalid_argument);
  EXPECT_THROW(DiscreteDistribution({1.0}, {{0, 0}, {1, 1}}), std::invalid_argument);
}

TEST(DiscreteDistributionTest, NormalizedSumsToOne) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto d = DiscreteDistribution(RandomWeights(1 + i % 9, rng, 0.0)).normalized();
    double s = 0;
    for (double w : d.weights()) s += w;
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

// ---------------------------------------------------------------------------

TEST(CostMatrixTest, SinglePointIsZero) {
  PairView v{{{3, 4}}, {0.7}};
  const Matrix c = build_cost_matrix(v, v);
  ASSERT_EQ(c.rows(), 1u);
  EXPECT_EQ(c(0, 0), 0.0);
}

TEST(CostMatrixTest, TwoPositionsEqualScores) {
  PairView v{{{0, 0}, {0, 1}}, {0.4, 0.4}};
  const Matrix c = build_cost_matrix(v, v);
  EXPECT_EQ(c(0, 0), 0.0);
  EXPECT_EQ(c(0, 1), 1.0);
  EXPECT_EQ(c(1, 0), 1.0);
  EXPECT_EQ(c(1, 1), 0.0);
}

TEST(CostMatrixTest, MatchesScalarRecomputation) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0), s(0.01, 0.99);
  for (int rep = 0; rep < 50; ++rep) {
    PairView t, st;
    for (int i = 0; i < 3; ++i) {
      t.positions.push_back({u(rng), u(rng)});
      st.positions.push_back({u(rng), u(rng)});
      t.scores.push_back(s(rng));
      st.scores.push_back(s(rng));
    }
    const Matrix c = build_cost_matrix(t, st);
    double md = 0, ms = 0;
    double d[3][3], e[3][3];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double dx = t.positions[i].x - st.positions[j].x;
        const double dy = t.positions[i].y - st.positions[j].y;
        d[i][j] = dx * dx + dy * dy;
        e[i][j] = std::fabs(t.scores[i] - st.scores[j]);
        md = std::max(md, d[i][j]);
        ms = std::max(ms, e[i][j]);
      }
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        ASSERT_NEAR(c(i, j), d[i][j] / md + e[i][j] / ms, 1e-14);
        ASSERT_GE(c(i, j), 0.0);
        ASSERT_LE(c(i, j), 2.0);
      }
    }
  }
}

TEST(CostMatrixTest, CompositionSwitchesComponents) {
  PairView t{{{0, 0}, {2, 0}}, {0.1, 0.9}};
  PairView s{{{0, 0}, {1, 0}}, {0.5, 0.9}};
  const Matrix dist = build_cost_matrix(t, s, {true, false});
  const Matrix score = build_cost_matrix(t, s, {false, true});
  const Matrix both = build_cost_matrix(t, s, {true, true});
  const Matrix none = build_cost_matrix(t, s, {false, false});
  for (size_t i = 0; i < 2; ++i) {
    for (size_t j = 0; j < 2; ++j) {
      EXPECT_DOUBLE_EQ(both(i, j), dist(i, j) + score(i, j));
      EXPECT_EQ(none(i, j), 0.0);
    }
  }
  EXPECT_DOUBLE_EQ(dist(1, 0), 1.0);  // 4 / max 4
}

TEST(CostMatrixTest, IdenticalViewsHaveZeroDiagonal) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 10.0), s(0.01, 0.99);
  PairView v;
  for (int i = 0; i < 7; ++i) {
    v.positions.push_back({u(rng), u(rng)});
    v.scores.push_back(s(rng));
  }
  const Matrix c = build_cost_matrix(v, v);
  for (size_t i = 0; i < 7; ++i) EXPECT_EQ(c(i, i), 0.0);
}

TEST(CostMatrixTest, RejectsMismatchedLengths) {
  PairView a{{{0, 0}}, {0.5}}, b{{{0, 0}, {1, 1}}, {0.5, 0.5}};
  EXPECT_THROW(build_cost_matrix(a, b), std::invalid_argument);
  EXPECT_THROW(build_cost_matrix(PairView{}, PairView{}), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(SinkhornTest, TwoPointDiagonal) {
  const DiscreteDistribution a({0.5, 0.5});
  Matrix c(2, 2);
  c(0, 1) = c(1, 0) = 1.0;
  SinkhornConfig cfg;
  cfg.epsilon = 0.01;
  cfg.max_iters = 1000;
  const TransportSolution sol = sinkhorn(a, a, c, cfg);
  EXPECT_LE(sol.primal_cost, 0.02);
  EXPECT_NEAR(sol.plan(0, 0), 0.5, 1e-6);
  EXPECT_NEAR(sol.plan(1, 1), 0.5, 1e-6);
  EXPECT_TRUE(sol.converged);
}

TEST(SinkhornTest, SinglePoint) {
  Matrix c(1, 1, 0.75);
  const TransportSolution sol =
      sinkhorn(DiscreteDistribution({2.0}), DiscreteDistribution({5.0}), c, {});
  EXPECT_DOUBLE_EQ(sol.plan(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(sol.primal_cost, 0.75);
}

TEST(SinkhornTest, RejectsBadInput) {
  Matrix c(2, 2);
  c(0, 1) = std::numeric_limits<double>::infinity();
  const DiscreteDistribution a({1.0, 1.0});
  EXPECT_THROW(sinkhorn(a, a, c, {}), std::invalid_argument);
  EXPECT_THROW(sinkhorn(a, a, Matrix(3, 2), {}), std::invalid_argument);
  SinkhornConfig bad;
  bad.epsilon = 0.0;
  EXPECT_THROW(sinkhorn(a, a, Matrix(2, 2), bad), std::invalid_argument);
}

TEST(SinkhornTest, FeasibilityAndPrimalCost) {
  std::mt19937_64 rng(4);
  int converged = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const size_t n = 1 + rep % 8;
    const auto a = DiscreteDistribution(RandomWeights(n, rng)).normalized();
    const auto b = DiscreteDistribution(RandomWeights(n, rng)).normalized();
    const Matrix c = RandomCost(n, rng);
    SinkhornConfig cfg;
    cfg.epsilon = rep % 2 ? 0.05 : 0.005;
    cfg.max_iters = 5000;
    const TransportSolution sol = sinkhorn(a, b, c, cfg);
    if (!sol.converged) continue;
    ++converged;
    double recomputed = 0;
    for (size_t i = 0; i < n; ++i) {
      double row = 0;
      for (size_t j = 0; j < n; ++j) {
        ASSERT_GE(sol.plan(i, j), 0.0);
        row += sol.plan(i, j);
        recomputed += c(i, j) * sol.plan(i, j);
      }
      ASSERT_LE(std::abs(row - a.weights()[i]), cfg.tolerance);
    }
    for (size_t j = 0; j < n; ++j) {
      double col = 0;
      for (size_t i = 0; i < n; ++i) col += sol.plan(i, j);
      ASSERT_LE(std::abs(col - b.weights()[j]), cfg.tolerance);
    }
    ASSERT_NEAR(sol.primal_cost, recomputed, 1e-9);
  }
  EXPECT_GE(converged, 150);
}

TEST(SinkhornTest, SmallEpsilonUsesLogDomainAndStaysFinite) {
  std::mt19937_64 rng(5);
  const auto a = DiscreteDistribution(RandomWeights(6, rng)).normalized();
  const auto b = DiscreteDistribution(RandomWeights(6, rng)).normalized();
  Matrix c = RandomCost(6, rng);
  for (double& v : c.values()) v *= 500.0;  // exp(-C/eps) underflows
  SinkhornConfig cfg;
  cfg.epsilon = 0.001;
  cfg.max_iters = 3000;
  const TransportSolution sol = sinkhorn(a, b, c, cfg);
  EXPECT_TRUE(sol.log_domain);
  for (double v : sol.plan.values()) EXPECT_TRUE(std::isfinite(v));
  for (double v : sol.dual_row) EXPECT_TRUE(std::isfinite(v));
  for (double v : sol.dual_col) EXPECT_TRUE(std::isfinite(v));
}

TEST(SinkhornTest, UnderflowInScalingFallsBackToLogDomain) {
  const DiscreteDistribution a({0.5, 0.5});
  Matrix c(2, 2);
  c(0, 0) = c(1, 1) = 0.0;
  c(0, 1) = c(1, 0) = 2.0;
  Matrix big = c;
  for (double& v : big.values()) v *= 1e3;  // exp(-2000/0.05) == 0
  SinkhornConfig cfg;
  cfg.epsilon = 0.05;
  const TransportSolution sol = sinkhorn(a, a, big, cfg);
  for (double v : sol.dual_row) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(sol.plan(0, 0), 0.5, 1e-9);
}

TEST(SinkhornTest, DualsAreCenteredAndNearlyFeasible) {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    const size_t n = 2 + rep % 6;
    const auto a = DiscreteDistribution(RandomWeights(n, rng)).normalized();
    const auto b = DiscreteDistribution(RandomWeights(n, rng)).normalized();
    const Matrix c = RandomCost(n, rng);
    SinkhornConfig cfg;
    cfg.epsilon = 0.01;
    cfg.max_iters = 5000;
    const TransportSolution sol = sinkhorn(a, b, c, cfg);
    double la = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) la += sol.dual_row[i] * a.weights()[i];
    for (size_t j = 0; j < n; ++j) mb += sol.dual_col[j] * b.weights()[j];
    ASSERT_NEAR(la, mb, 1e-9);
    const double slack = 3 * cfg.epsilon * std::log(static_cast<double>(n));
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) {
        ASSERT_LE(sol.dual_row[i] + sol.dual_col[j], c(i, j) + slack + 1e-9);
      }
    }
  }
}

TEST(SinkhornTest, ApproachesExactCostAsEpsilonShrinks) {
  std::mt19937_64 rng(7);
  const double eps_list[] = {0.1, 0.05, 0.01, 0.005};
  double mean_err[4] = {0, 0, 0, 0};
  const int reps = 40;
  for (int rep = 0; rep < reps; ++rep) {
    const size_t n = 2 + rep % 3;  // enumeration cost grows as C(n*n, 2n-1)
    const auto a = DiscreteDistribution(RandomWeights(n, rng)).normalized();
    const auto b = DiscreteDistribution(RandomWeights(n, rng)).normalized();
    const Matrix c = RandomCost(n, rng);
    const double exact = oracle::transport_by_vertex_enumeration(
        {a.weights().begin(), a.weights().end()}, {b.weights().begin(), b.weights().end()},
        ToMat(c));
    for (int k = 0; k < 4; ++k) {
      SinkhornConfig cfg;
      cfg.epsilon = eps_list[k];
      cfg.max_iters = 20000;
      cfg.tolerance = 1e-10;
      const double got = sinkhorn(a, b, c, cfg).primal_cost;
      mean_err[k] += std::abs(got - exact) / reps;
      if (k == 3) {
        ASSERT_LE(std::abs(got - exact), std::max(1e-2 * exact, 1e-3)) << rep;
      }
    }
  }
  for (int k = 1; k < 4; ++k) EXPECT_LT(mean_err[k], mean_err[k - 1]);
}

// ---------------------------------------------------------------------------

TEST(GcLossTest, ZeroAndConstantDuals) {
  TransportSolution sol;
  sol.dual_row = {0, 0, 0};
  sol.dual_col = {0, 0, 0};
  const DiscreteDistribution t({1, 2, 3}), s({0.5, 0.1, 4});
  EXPECT_EQ(gc_loss(t, s, sol), 0.0);
  sol.dual_row = {1.5, 1.5, 1.5};
  sol.dual_col = {-0.25, -0.25, -0.25};
  EXPECT_NEAR(gc_loss(t, s, sol), 1.25, 1e-15);
}

TEST(GcLossTest, RejectsSizeMismatch) {
  TransportSolution sol;
  sol.dual_row = {0, 0};
  sol.dual_col = {0, 0, 0};
  EXPECT_THROW(gc_loss(DiscreteDistribution({1, 1, 1}), DiscreteDistribution({1, 1, 1}), sol),
               std::invalid_argument);
}

TEST(GcLossTest, EqualsDualObjectiveFromScalings) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const auto dt = DiscreteDistribution(RandomWeights(4, rng, 0.5));
    const auto ds = DiscreteDistribution(RandomWeights(4, rng, 0.5));
    const Matrix c = RandomCost(4, rng);
    SinkhornConfig cfg;
    cfg.epsilon = 0.05;
    cfg.max_iters = 5000;
    cfg.tolerance = 1e-12;
    const TransportSolution sol = sinkhorn(dt, ds, c, cfg);
    const auto a = dt.normalized(), b = ds.normalized();
    const oracle::Vec av(a.weights().begin(), a.weights().end());
    const oracle::Vec bv(b.weights().begin(), b.weights().end());
    const auto sc = oracle::plain_sinkhorn(av, bv, ToMat(c), cfg.epsilon, 5000);
    double want = 0;
    for (size_t i = 0; i < 4; ++i) {
      want += cfg.epsilon * std::log(sc.u[i]) * av[i] + cfg.epsilon * std::log(sc.v[i]) * bv[i];
    }
    ASSERT_NEAR(gc_loss(dt, ds, sol), want, 1e-9) << rep;
  }
}

TEST(GcGradientTest, Examples) {
  const auto g0 = gc_gradient(std::vector<double>{0.2, 0.3, 0.5}, std::vector<double>{4, 4, 4});
  for (double v : g0) EXPECT_NEAR(v, 0.0, 1e-15);
  const auto g1 = gc_gradient(std::vector<double>{1, 0}, std::vector<double>{1, 0});
  EXPECT_DOUBLE_EQ(g1[0], 0.0);
  EXPECT_DOUBLE_EQ(g1[1], -1.0);
}

TEST(GcGradientTest, RejectsZeroOrMismatched) {
  EXPECT_THROW(gc_gradient(std::vector<double>{0, 0}, std::vector<double>{1, 1}),
               std::invalid_argument);
  EXPECT_THROW(gc_gradient(std::vector<double>{1, 0}, std::vector<double>{1}),
               std::invalid_argument);
}

TEST(GcGradientTest, MatchesFiniteDifferencesWithFrozenDuals) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    const size_t n = 2 + rep % 7;
    const auto dt = DiscreteDistribution(RandomWeights(n, rng, 0.3));
    const std::vector<double> ds = RandomWeights(n, rng, 0.3);
    const TransportSolution sol = sinkhorn(dt, DiscreteDistribution(ds), RandomCost(n, rng), {});
    const auto g = gc_gradient(ds, sol.dual_col);
    const auto fd = oracle::numeric_gradient(
        [&](const oracle::Vec& x) { return gc_loss(dt, DiscreteDistribution(x), sol); }, ds,
        1e-5);
    ASSERT_LE(oracle::rel_error(g, fd), 1e-6) << rep;
  }
}

TEST(GcGradientTest, ScalesInverselyWithMass) {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 50; ++rep) {
    const std::vector<double> ds = RandomWeights(5, rng);
    const std::vector<double> mu = RandomWeights(5, rng);
    const double k = 0.1 + rep;
    std::vector<double> scaled = ds;
    for (double& v : scaled) v *= k;
    const auto g = gc_gradient(ds, mu), gk = gc_gradient(scaled, mu);
    for (size_t i = 0; i < 5; ++i) ASSERT_NEAR(gk[i], g[i] / k, 1e-12 * (1 + std::abs(g[i])));
  }
}

}  // namespace
}  // namespace obbssl
