#pragma once
#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "params.hpp"

namespace rsslab {

enum class SchemeKind { Fair, CapMargin };

namespace detail {
// min(a,b) with a quadratic blend of half-width h around a == b
inline double smooth_min(double a, double b, double h) {
  if (h <= 0) return std::min(a, b);
  double w = std::max(h - std::abs(a - b), 0.0) / h;
  return std::min(a, b) - w * w * h / 4;
}
constexpr double kPledgeSlack = 1e-12;
}  // namespace detail

inline double reward_fair(double sigma, const GameParams& p) { return sigma * p.R; }

// Sybil-resilient capped reward. Takes raw (sigma, lambda); the caps are
// applied here, callers never pre-clamp.
inline double reward(double sigma, double lambda, const GameParams& p,
                     double smoothing = 0.0) {
  if (lambda > sigma + detail::kPledgeSlack)
    throw std::invalid_argument("reward: pledge exceeds pool stake");
  const double b = p.beta();
  double s = detail::smooth_min(sigma, b, smoothing);
  double l = detail::smooth_min(std::min(lambda, sigma), b, smoothing);
  return p.R / (1 + p.alpha) * (s + l * p.alpha * (s - l * (1 - s / b)) / b);
}

// Profit of a saturated pool with pledge lambda.
inline double potential_profit(double lambda, double cost, const GameParams& p) {
  const double b = p.beta();
  return reward(b, std::min(lambda, b), p) - cost;
}

struct RewardScheme {
  SchemeKind kind = SchemeKind::CapMargin;
  GameParams params;
  double smoothing = 0.0;

  double operator()(double sigma, double lambda) const {
    if (kind == SchemeKind::Fair) return reward_fair(sigma, params);
    return reward(sigma, lambda, params, smoothing);
  }
};

// Sum of pool rewards; each entry is (sigma, pledge).
inline double budget_check(std::span<const std::pair<double, double>> pools,
                           const GameParams& p) {
  double ssum = 0, lsum = 0, total = 0;
  for (auto [s, l] : pools) {
    if (s < 0 || l < 0 || l > s + detail::kPledgeSlack)
      throw std::invalid_argument("budget_check: need 0 <= pledge <= sigma");
    ssum += s;
    lsum += l;
  }
  if (ssum > 1 + 1e-12 || lsum > 1 + 1e-12)
    throw std::invalid_argument("budget_check: stake sums exceed 1");
  for (auto [s, l] : pools) total += reward(s, l, p);
  if (total > p.R + 1e-12) throw std::logic_error("budget_check: rewards exceed R");
  return total;
}

inline double budget_check(const std::vector<std::pair<double, double>>& pools,
                           const GameParams& p) {
  return budget_check(std::span<const std::pair<double, double>>(pools), p);
}

}  // namespace rsslab
