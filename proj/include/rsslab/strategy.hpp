#pragma once
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"
#include "population.hpp"
#include "rewards.hpp"

namespace rsslab {

// Sparse stake allocation, entries kept sorted by pool id, zeros dropped.
class Allocation {
 public:
  using Entry = std::pair<int, double>;

  double get(int pool) const {
    auto it = find(pool);
    return it != entries_.end() && it->first == pool ? it->second : 0.0;
  }
  void set(int pool, double amount) {
    if (amount < 0) throw std::invalid_argument("allocation: negative amount");
    auto it = find(pool);
    bool hit = it != entries_.end() && it->first == pool;
    if (amount == 0) {
      if (hit) entries_.erase(it);
    } else if (hit) {
      it->second = amount;
    } else {
      entries_.insert(it, {pool, amount});
    }
  }
  void add(int pool, double amount) { set(pool, std::max(0.0, get(pool) + amount)); }
  double total() const {
    double t = 0;
    for (auto& e : entries_) t += e.second;
    return t;
  }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool operator==(const Allocation&) const = default;

 private:
  std::vector<Entry>::iterator find(int pool) {
    return std::lower_bound(entries_.begin(), entries_.end(), pool,
                            [](const Entry& e, int p) { return e.first < p; });
  }
  std::vector<Entry>::const_iterator find(int pool) const {
    return std::lower_bound(entries_.begin(), entries_.end(), pool,
                            [](const Entry& e, int p) { return e.first < p; });
  }
  std::vector<Entry> entries_;
};

struct Strategy {
  double margin = 0;
  double pledge = 0;
  Allocation alloc;
  bool operator==(const Strategy&) const = default;
};

// slack for "allocations sum to at most the stake"
constexpr double kStakeSlack = 1e-12;

struct JointStrategy {
  std::vector<Strategy> strategies;

  static JointStrategy passive(int n) {
    JointStrategy j;
    j.strategies.resize(n);
    return j;
  }
  int size() const { return static_cast<int>(strategies.size()); }
  Strategy& operator[](int i) { return strategies[i]; }
  const Strategy& operator[](int i) const { return strategies[i]; }

  bool active(int j) const { return strategies[j].alloc.get(j) > 0; }

  // sigma_j summed over all allocations; 0 for inactive pools
  std::vector<double> pool_stakes() const {
    std::vector<double> sigma(size(), 0.0);
    for (auto& s : strategies)
      for (auto [pool, a] : s.alloc.entries()) sigma[pool] += a;
    for (int j = 0; j < size(); ++j)
      if (!active(j)) sigma[j] = 0;
    return sigma;
  }

  // Throws on a broken invariant; pledges of active pools must equal a_jj.
  void check(const Population& pop) const {
    if (size() != pop.size()) throw std::invalid_argument("joint strategy size mismatch");
    for (int i = 0; i < size(); ++i) {
      auto& s = strategies[i];
      if (s.margin < 0 || s.margin > 1)
        throw std::invalid_argument("player " + std::to_string(i) + ": margin outside [0,1]");
      double own = s.alloc.get(i);
      if (own != 0 && std::abs(own - s.pledge) > kStakeSlack)
        throw std::invalid_argument("player " + std::to_string(i) + ": a_ii not in {0, pledge}");
      if (s.alloc.total() > pop[i].stake + kStakeSlack)
        throw std::invalid_argument("player " + std::to_string(i) + ": allocates more than stake");
      for (auto [pool, a] : s.alloc.entries())
        if (pool < 0 || pool >= size())
          throw std::invalid_argument("player " + std::to_string(i) + ": unknown pool");
    }
  }
};

inline double desirability(double margin, double pledge, double cost, const GameParams& p,
                           bool active = true) {
  if (!active) return 0;
  double P = potential_profit(pledge, cost, p);
  return P < 0 ? 0 : (1 - margin) * P;
}

enum class RankingMode { SingleStage, TwoStage };
enum class TieRule { PotentialProfit, PlayerId };

struct RankingOptions {
  RankingMode mode = RankingMode::SingleStage;
  TieRule tie = TieRule::PotentialProfit;
  // desirabilities closer than this count as tied; (1-m)P recomputed from
  // an equalizing margin is only equal up to rounding
  double tie_tolerance = 1e-12;
};

struct Candidate {
  int id;
  double desirability;
  double potential;
};

// Ids of `c` ordered best first. Chains of desirabilities within the
// tolerance are treated as one tie class and ordered by the tie rule.
inline std::vector<int> rank_candidates(std::vector<Candidate> c, const RankingOptions& o) {
  auto by_rule = [&](const Candidate& a, const Candidate& b) {
    if (o.tie == TieRule::PotentialProfit && a.potential != b.potential)
      return a.potential > b.potential;
    return a.id < b.id;
  };
  std::sort(c.begin(), c.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.desirability != b.desirability) return a.desirability > b.desirability;
    return by_rule(a, b);
  });
  for (std::size_t lo = 0; lo < c.size();) {
    std::size_t hi = lo + 1;
    while (hi < c.size() && c[hi - 1].desirability - c[hi].desirability <= o.tie_tolerance) ++hi;
    if (hi - lo > 1) std::sort(c.begin() + lo, c.begin() + hi, by_rule);
    lo = hi;
  }
  std::vector<int> ids;
  ids.reserve(c.size());
  for (auto& x : c) ids.push_back(x.id);
  return ids;
}

struct RankEntry {
  double desirability = 0;
  double potential = 0;
  int rank = 0;  // 1 = best
  double stake = 0;
  double nm_stake = 0;
  bool active = false;
  bool saturated = false;
};

struct RankingTable {
  RankingMode mode = RankingMode::SingleStage;
  int k = 1;
  std::vector<RankEntry> pools;  // by pool (= leader) id
  std::vector<int> order;        // pool ids, rank 1 first

  bool top_k(int j) const { return pools[j].rank <= k; }
};

// Everything needed about pool j to pay its members and leader.
struct PoolTerms {
  bool active = false;
  double margin = 0;
  double pledge = 0;
  double cost = 0;
};

inline PoolTerms pool_terms(const JointStrategy& joint, const Population& pop, int j) {
  return {joint.active(j), joint[j].margin, joint[j].pledge, pop[j].cost};
}

// Non-myopic value of holding `a` in pool t with total stake sigma (a included).
inline double nm_member_value(double a, double sigma, const PoolTerms& t, bool top_k,
                              const GameParams& p) {
  if (!t.active || a <= 0) return 0;
  if (top_k) {
    double P = potential_profit(t.pledge, t.cost, p);
    if (P <= 0) return 0;
    return (1 - t.margin) * P * a / std::max(p.beta(), sigma);
  }
  double x = t.pledge + a;
  double g = reward(x, t.pledge, p) - t.cost;
  return g <= 0 ? 0 : (1 - t.margin) * g * a / x;
}

inline double nm_leader_value(double sigma, const PoolTerms& t, bool top_k, const GameParams& p) {
  if (!t.active) return 0;
  double snm = top_k ? std::max(p.beta(), sigma) : t.pledge;
  double g = reward(snm, t.pledge, p) - t.cost;
  if (g <= 0) return g;
  return g * (t.margin + (1 - t.margin) * t.pledge / snm);
}

inline double myopic_member_value(double a, double sigma, const PoolTerms& t,
                                  const RewardScheme& rs) {
  if (!t.active || a <= 0) return 0;
  double g = rs(sigma, t.pledge) - t.cost;
  return g <= 0 ? 0 : a / sigma * g * (1 - t.margin);
}

inline double myopic_leader_value(double sigma, const PoolTerms& t, const RewardScheme& rs) {
  if (!t.active) return 0;
  double g = rs(sigma, t.pledge) - t.cost;
  if (g <= 0) return g;
  return (t.margin + (1 - t.margin) * t.pledge / sigma) * g;
}

// Desirability/potential entry a pool (or hypothetical pool) contributes to the ranking.
inline Candidate pool_candidate(const JointStrategy& joint, const Population& pop,
                                const GameParams& p, int j, RankingMode mode) {
  bool act = joint.active(j);
  if (act) {
    double P = potential_profit(joint[j].pledge, pop[j].cost, p);
    return {j, desirability(joint[j].margin, joint[j].pledge, pop[j].cost, p), P};
  }
  double P = potential_profit(pop[j].stake, pop[j].cost, p);
  if (mode == RankingMode::TwoStage) return {j, 0.0, P};
  // hypothetical pool: own cost, chosen margin, whole stake as pledge
  return {j, desirability(joint[j].margin, pop[j].stake, pop[j].cost, p), P};
}

inline RankingTable rank_pools(const JointStrategy& joint, const Population& pop,
                               const GameParams& p, const RankingOptions& o = {}) {
  const int n = joint.size();
  RankingTable t;
  t.mode = o.mode;
  t.k = p.k;
  t.pools.resize(n);
  auto sigma = joint.pool_stakes();
  std::vector<Candidate> act, idle;
  for (int j = 0; j < n; ++j) {
    auto c = pool_candidate(joint, pop, p, j, o.mode);
    auto& e = t.pools[j];
    e.desirability = c.desirability;
    e.potential = c.potential;
    e.active = joint.active(j);
    e.stake = sigma[j];
    e.saturated = sigma[j] >= p.beta();
    (e.active || o.mode == RankingMode::SingleStage ? act : idle).push_back(c);
  }
  t.order = rank_candidates(std::move(act), o);
  for (int id : rank_candidates(std::move(idle), o)) t.order.push_back(id);
  for (int r = 0; r < n; ++r) {
    auto& e = t.pools[t.order[r]];
    e.rank = r + 1;
    if (!e.active) e.nm_stake = 0;
    else e.nm_stake = e.rank <= p.k ? std::max(p.beta(), e.stake) : joint[t.order[r]].pledge;
  }
  return t;
}

inline double nm_utility(int i, const JointStrategy& joint, const RankingTable& t,
                         const Population& pop, const GameParams& p) {
  double u = 0;
  for (auto [pool, a] : joint[i].alloc.entries()) {
    auto terms = pool_terms(joint, pop, pool);
    if (pool == i) u += nm_leader_value(t.pools[i].stake, terms, t.top_k(i), p);
    else u += nm_member_value(a, t.pools[pool].stake, terms, t.top_k(pool), p);
  }
  return u;
}

inline double nm_utility(int i, const JointStrategy& joint, const Population& pop,
                         const GameParams& p, const RankingOptions& o = {}) {
  return nm_utility(i, joint, rank_pools(joint, pop, p, o), pop, p);
}

inline double myopic_utility(int i, const JointStrategy& joint, const Population& pop,
                             const RewardScheme& rs, const std::vector<double>& sigma) {
  double u = 0;
  for (auto [pool, a] : joint[i].alloc.entries()) {
    auto terms = pool_terms(joint, pop, pool);
    if (pool == i) u += myopic_leader_value(sigma[i], terms, rs);
    else u += myopic_member_value(a, sigma[pool], terms, rs);
  }
  return u;
}

inline double myopic_utility(int i, const JointStrategy& joint, const Population& pop,
                             const RewardScheme& rs) {
  return myopic_utility(i, joint, pop, rs, joint.pool_stakes());
}

struct PoolState {
  int leader = 0;
  double sigma = 0;
  double pledge = 0;
  double margin = 0;
  bool active = false;
  double stranded = 0;  // stake delegated here while inactive
};

inline std::vector<PoolState> pool_states(const JointStrategy& joint) {
  std::vector<PoolState> out(joint.size());
  auto sigma = joint.pool_stakes();
  for (int j = 0; j < joint.size(); ++j)
    out[j] = {j, sigma[j], joint[j].pledge, joint[j].margin, joint.active(j), 0.0};
  for (auto& s : joint.strategies)
    for (auto [pool, a] : s.alloc.entries())
      if (!out[pool].active) out[pool].stranded += a;
  return out;
}

}  // namespace rsslab
