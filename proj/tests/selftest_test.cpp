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

#include "obbssl/selftest.hpp"

#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace obbssl {
namespace {

const OracleCheck& Find(const std::vector<OracleCheck>& checks, const std::string& prefix) {
  for (const auto& c : checks) {
    if (c.name.rfind(prefix, 0) == 0) return c;
  }
  throw std::runtime_error("no check " + prefix);
}

TEST(SelftestTest, DefaultsPass) {
  const auto checks = run_selftest(SelftestOptions{});
  ASSERT_EQ(checks.size(), 5u);
  for (const auto& c : checks) {
    EXPECT_TRUE(c.pass) << c.name << " measured " << c.measured;
    EXPECT_LE(c.measured, c.tolerance) << c.name;
  }
}

TEST(SelftestTest, LargeEpsilonFailsOtAgreement) {
  SelftestOptions o;
  o.epsilon = 0.5;
  const auto checks = run_selftest(o);
  EXPECT_FALSE(Find(checks, "sinkhorn").pass);
  EXPECT_TRUE(Find(checks, "GC gradient").pass);
}

TEST(SelftestTest, GradientBiasFailsFiniteDifferenceChecks) {
  SelftestOptions o;
  o.grad_bias = 1e-3;
  const auto checks = run_selftest(o);
  EXPECT_FALSE(Find(checks, "GC gradient").pass);
  EXPECT_FALSE(Find(checks, "model backward").pass);
  EXPECT_TRUE(Find(checks, "sinkhorn").pass);
}

TEST(SelftestTest, PrintsOneRowPerCheck) {
  std::ostringstream os;
  print_selftest(run_selftest(SelftestOptions{}), os);
  const std::string s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 6);
  EXPECT_EQ(s.find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace obbssl
