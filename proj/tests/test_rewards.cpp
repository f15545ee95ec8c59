#include <gtest/gtest.h>

#include <cmath>

#include "rsslab/rewards.hpp"
#include "rsslab/rng.hpp"

using namespace rsslab;

namespace {
GameParams p10(double alpha) { return GameParams::make(100, 10, 1.0, alpha); }
}  // namespace

TEST(Rewards, Fair) {
  auto p = p10(0);
  EXPECT_DOUBLE_EQ(reward_fair(0.3, p), 0.3);
  EXPECT_EQ(reward_fair(0.0, p), 0.0);
  EXPECT_EQ(reward_fair(1.0, p), 1.0);
}

TEST(Rewards, CapMarginValues) {
  // oracle values from 30-digit mpmath evaluation
  auto p = p10(0.5);
  EXPECT_EQ(reward(0, 0, p), 0.0);
  EXPECT_NEAR(reward(0.05, 0.02, p), 0.036, 1e-15);
  EXPECT_NEAR(reward(0.2, 0.05, p), 0.0833333333333333333, 1e-15);
  EXPECT_NEAR(reward(0.1, 0.1, p), 0.1, 1e-15);
}

TEST(Rewards, AlphaZeroIgnoresPledge) {
  auto p = p10(0);
  for (double l : {0.0, 0.01, 0.05, 0.1}) {
    EXPECT_DOUBLE_EQ(reward(0.07, std::min(l, 0.07), p), 0.07);
    EXPECT_DOUBLE_EQ(reward(0.5, l, p), 0.1);
  }
}

TEST(Rewards, PledgeAbovePoolRejected) {
  EXPECT_THROW(reward(0.05, 0.06, p10(0.5)), std::invalid_argument);
}

TEST(Rewards, CapIsExact) {
  Rng rng(3);
  for (double a : {0.0, 0.02, 0.5, 3.0}) {
    auto p = p10(a);
    for (int i = 0; i < 2000; ++i) {
      double l = rng.uniform() * 0.1;
      double s = 0.1 + rng.uniform() * 0.9;
      ASSERT_EQ(reward(s, l, p), reward(0.1, l, p));
    }
  }
}

TEST(Rewards, PotentialProfit) {
  auto p = p10(0.5);
  EXPECT_NEAR(potential_profit(0.02, 0.001, p), 0.0723333333333333333, 1e-15);
  double r = reward(0.1, 0.03, p);
  EXPECT_EQ(potential_profit(0.03, r, p), 0.0);
  auto q = p10(0);
  EXPECT_DOUBLE_EQ(potential_profit(0.01, 0.002, q), potential_profit(0.09, 0.002, q));
  // pledges above beta are clamped
  EXPECT_EQ(potential_profit(0.3, 0.001, p), potential_profit(0.1, 0.001, p));
}

TEST(Rewards, PledgeMonotone) {
  for (double a : {0.02, 0.5, 2.0}) {
    auto p = p10(a);
    double prev = -1;
    for (int i = 0; i <= 1000; ++i) {
      double r = reward(0.1, 0.1 * i / 1000, p);
      ASSERT_GE(r, prev);
      prev = r;
    }
  }
}

TEST(Budget, Examples) {
  auto p = p10(0.5);
  std::vector<std::pair<double, double>> ten(10, {0.1, 0.1});
  EXPECT_NEAR(budget_check(ten, p), 1.0, 1e-12);
  EXPECT_EQ(budget_check(std::vector<std::pair<double, double>>{}, p), 0.0);
  // one oversaturated pool pays the saturated full-pledge reward R*beta
  EXPECT_NEAR(budget_check({{1.0, 0.1}}, p), 0.1, 1e-15);
  EXPECT_NEAR(budget_check({{1.0, 0.05}}, p), 0.0833333333333333333, 1e-15);
  EXPECT_THROW(budget_check({{0.1, 0.2}}, p), std::invalid_argument);
  EXPECT_THROW(budget_check({{0.7, 0.1}, {0.7, 0.1}}, p), std::invalid_argument);
}

TEST(Budget, RandomPartitionsStayWithinR) {
  Rng rng(17);
  for (int trial = 0; trial < 10000; ++trial) {
    int k = 1 + static_cast<int>(rng.below(20));
    GameParams p{k + 1, k, 0.5 + rng.uniform() * 2, rng.uniform() * 5};
    int pools = 1 + static_cast<int>(rng.below(30));
    std::vector<double> w(pools + 1);
    double tot = 0;
    for (auto& x : w) tot += (x = -std::log(1 - rng.uniform()));
    std::vector<std::pair<double, double>> part;
    for (int i = 0; i < pools; ++i) {
      double s = w[i] / tot;
      part.push_back({s, s * rng.uniform()});
    }
    ASSERT_LE(budget_check(part, p), p.R + 1e-12);
  }
}

TEST(Rewards, ProfitPerStakePeaksAtSaturation) {
  Rng rng(23);
  int checked = 0;
  while (checked < 100) {
    GameParams p{100, 10, 1.0, rng.uniform() * 2};
    double lam = 0.1 * rng.uniform();
    double c = 0.1 * rng.uniform();
    if (potential_profit(lam, c, p) <= 0) continue;
    ++checked;
    auto g = [&](double x) { return (reward(x, std::min(lam, x), p) - c) / x; };
    double best = -1e9, argmax = 0, prev = -1e9;
    for (int i = 1; i <= 10000; ++i) {
      double x = i * 1e-4;
      double v = g(x);
      if (x <= 0.1 + 1e-12) {
        ASSERT_GT(v, prev) << "x=" << x;
      } else if (v > 0) {
        ASSERT_LE(v, prev + 1e-15) << "x=" << x;
      }
      if (v > best) best = v, argmax = x;
      prev = v;
    }
    EXPECT_NEAR(argmax, 0.1, 1e-9);
  }
}

TEST(Rewards, SmoothingHook) {
  RewardScheme s{SchemeKind::CapMargin, p10(0.5), 0.0};
  EXPECT_EQ(s(0.05, 0.02), reward(0.05, 0.02, s.params));
  s.smoothing = 0.01;
  EXPECT_LT(s(0.1, 0.05), reward(0.1, 0.05, s.params));
  EXPECT_EQ(s(0.03, 0.01), reward(0.03, 0.01, s.params));
  RewardScheme f{SchemeKind::Fair, p10(0.5)};
  EXPECT_DOUBLE_EQ(f(0.4, 0.1), 0.4);
}
