#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "pareto.hpp"
#include "population.hpp"
#include "rewards.hpp"
#include "rng.hpp"

namespace rsslab {

// ------------------------------------------------------------ Sybil bounds

enum class SybilKind { NonMaximizer, Maximizer };

struct StakeCost {
  double stake = 0;
  double cost = 0;
};

struct SybilScenario {
  SybilKind kind = SybilKind::NonMaximizer;
  int t = 2;                 // Sybil identities
  double agent_stake = 0;    // s-bar
  double agent_cost = 0;     // c-bar
  std::vector<StakeCost> rest_profile;  // players outside the agent, any order

  void validate(const GameParams& p) const {
    if (t < 2) throw std::invalid_argument("sybil: t must be >= 2");
    if (t > p.k) throw std::invalid_argument("sybil: t must be <= k");
    if (kind == SybilKind::NonMaximizer && t != p.k / 2)
      throw std::invalid_argument("sybil: the non-maximizer scenario uses t = k/2");
    if (static_cast<int>(rest_profile.size()) < p.k - t + 1)
      throw std::invalid_argument("sybil: rest profile shorter than k - t + 1");
  }

  // Rest profile ordered by potential profit at the game's alpha, best first.
  std::vector<StakeCost> ordered(const GameParams& p) const {
    auto v = rest_profile;
    std::stable_sort(v.begin(), v.end(), [&](const StakeCost& a, const StakeCost& b) {
      return potential_profit(a.stake, a.cost, p) > potential_profit(b.stake, b.cost, p);
    });
    return v;
  }
  double c_max() const {
    double c = 0;
    for (auto& x : rest_profile) c = std::max(c, x.cost);
    return c;
  }
  double s_min() const {
    double s = INFINITY;
    for (auto& x : rest_profile) s = std::min(s, x.stake);
    return s;
  }
};

namespace detail {
inline void require_alpha(const GameParams& p) {
  if (!(p.alpha > 0))
    throw std::domain_error("sybil bounds need alpha > 0 (the bound diverges at alpha = 0)");
}
}  // namespace detail

// Stake below which the agent controls fewer than t saturated pools.
// `s_ref` is the (k-t+1)-th rest player's stake, c_max the largest rest cost.
inline double min_stake_bound(SybilKind kind, int t, double s_ref, double c_max, double agent_cost,
                              const GameParams& p) {
  detail::require_alpha(p);
  const double w = (1 + 1 / p.alpha) / p.R;
  if (kind == SybilKind::NonMaximizer) return t * (s_ref - c_max * w);
  return t * (s_ref - (c_max - agent_cost / t) * w);
}

inline double min_stake_bound(const SybilScenario& sc, const GameParams& p) {
  detail::require_alpha(p);
  sc.validate(p);
  auto ord = sc.ordered(p);
  return min_stake_bound(sc.kind, sc.t, ord[p.k - sc.t].stake, sc.c_max(), sc.agent_cost, p);
}

// Per-identity stake at which an identity with cost c ties the reference player.
inline double sybil_stake_threshold(double s_ref, double c_ref, double c, const GameParams& p) {
  detail::require_alpha(p);
  return s_ref - (c_ref - c) * (1 + 1 / p.alpha) / p.R;
}

struct SybilSuccess {
  bool success = false;      // potential-profit comparison
  bool closed_form = false;  // stake-threshold form of the same test
  double threshold = 0;      // per-identity stake threshold
};

// Whether t identical identities (stake s, cost c) all make the top k.
inline SybilSuccess sybil_success(double s, double c, double s_ref, double c_ref,
                                  const GameParams& p) {
  SybilSuccess r;
  r.success = potential_profit(s, c, p) >= potential_profit(s_ref, c_ref, p);
  r.threshold = sybil_stake_threshold(s_ref, c_ref, c, p);
  r.closed_form = s >= r.threshold;
  // the two forms are algebraically equal; only a rounding-level tie may split them
  if (r.success != r.closed_form && std::abs(s - r.threshold) > 1e-12 * std::max(1.0, s))
    throw std::logic_error("sybil_success: potential-profit and threshold forms disagree");
  return r;
}

inline SybilSuccess sybil_success(double s, double c, int t, const std::vector<StakeCost>& rest,
                                  const GameParams& p) {
  SybilScenario sc;
  sc.kind = SybilKind::Maximizer;
  sc.t = t;
  sc.rest_profile = rest;
  sc.validate(p);
  auto ref = sc.ordered(p)[p.k - t];
  return sybil_success(s, c, ref.stake, ref.cost, p);
}

// -------------------------------------------------------- whale tail bound

struct WhaleQuery {
  ParetoTail tail;  // n_agents is the number of agents
  double k = 100;   // real-valued so the k-monotonicity can be probed

  void validate() const {
    tail.validate();
    if (!(k >= 2)) throw std::invalid_argument("whale query: k must be >= 2");
    if (!(2 * tail.n_agents > k)) throw std::invalid_argument("whale query: need n > k/2");
  }
};

struct WhaleDeltaMu {
  double delta = 0;
  double mu = 0;
  bool clamped = false;  // 2T/k beyond T, so F_X was clamped to 1
};

inline WhaleDeltaMu whale_delta_mu(const WhaleQuery& q) {
  q.validate();
  const auto& t = q.tail;
  const double x = 2 * t.T / q.k;
  if (x < t.theta) throw std::domain_error("whale_delta_mu: 2T/k below theta");
  const double a = t.shape, n = static_cast<double>(t.n_agents);
  WhaleDeltaMu r;
  double head = -std::expm1(a * std::log(t.theta / t.T));
  double denom = -std::expm1(a * std::log(t.theta * q.k / (2 * t.T)));
  if (denom == 0) throw std::domain_error("whale_delta_mu: 1 - (theta k / 2T)^a is zero");
  r.delta = head / denom * (1 - q.k / (2 * n)) - 1;
  r.clamped = x > t.T;
  r.mu = n * (r.clamped ? 1.0 : truncated_pareto_cdf(x, t));
  return r;
}

struct TailBound {
  double bound = 1;
  bool vacuous = false;  // delta <= 0: the Chernoff step says nothing
};

inline TailBound whale_tail_bound(double delta, double mu) {
  if (!(delta > 0)) return {1.0, true};
  return {std::exp(-delta * delta * mu / 3), false};
}

inline TailBound whale_tail_bound(const WhaleQuery& q) {
  auto dm = whale_delta_mu(q);
  return whale_tail_bound(dm.delta, dm.mu);
}

// P(X_r <= x) for the r-th smallest of n iid draws with P(X <= x) = F.
inline double order_stat_cdf_from_F(double F, long r, long n) {
  if (n < 1 || r < 1 || r > n) throw std::invalid_argument("order statistic index out of range");
  if (!(F >= 0 && F <= 1)) throw std::domain_error("order_stat_cdf: F outside [0,1]");
  if (F == 0) return 0;
  if (F == 1) return 1;
  if (r == 1) return -std::expm1(static_cast<double>(n) * std::log1p(-F));
  if (r == n) return std::exp(static_cast<double>(n) * std::log(F));
  // binomial upper tail sum_{j>=r} = I_F(r, n - r + 1)
  return boost::math::ibeta(static_cast<double>(r), static_cast<double>(n - r + 1), F);
}

inline double order_stat_cdf(double x, long r, const ParetoTail& tail) {
  return order_stat_cdf_from_F(truncated_pareto_cdf(x, tail), r, tail.n_agents);
}

struct MonteCarlo {
  double probability = 0;
  double std_error = 0;
  long trials = 0;
};

// Fraction of sampled populations whose largest relative stake exceeds
// (k/2) times the (k/2+1)-th largest.
inline MonteCarlo mc_domination_probability(const ParetoTail& tail, int k, long trials,
                                            std::uint64_t seed) {
  tail.validate();
  if (trials < 100) throw std::invalid_argument("mc_domination_probability: trials must be >= 100");
  if (k < 2) throw std::invalid_argument("mc_domination_probability: k must be >= 2");
  const long n = tail.n_agents;
  const int h = k / 2;
  if (n <= h) throw std::invalid_argument("mc_domination_probability: need more agents than k/2");
  long hits = 0;
  std::vector<double> s(n);
  for (long tr = 0; tr < trials; ++tr) {
    Rng rng(seed, kTrialStreamBase + static_cast<std::uint64_t>(tr));
    double total = 0;
    for (auto& x : s) total += x = sample_truncated_pareto(rng.uniform(), tail);
    for (auto& x : s) x /= total;
    std::nth_element(s.begin(), s.begin() + h, s.end(), std::greater<>());
    double top = *std::max_element(s.begin(), s.begin() + h);
    if (top > h * s[h]) ++hits;
  }
  MonteCarlo mc;
  mc.trials = trials;
  mc.probability = static_cast<double>(hits) / trials;
  mc.std_error = std::sqrt(mc.probability * (1 - mc.probability) / trials);
  return mc;
}

}  // namespace rsslab
