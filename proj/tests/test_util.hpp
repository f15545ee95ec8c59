#pragma once
#include <vector>

#include "rsslab/population.hpp"
#include "rsslab/strategy.hpp"

namespace testutil {

using namespace rsslab;

// Random population with explicit costs, no capping beyond beta.
inline Population random_population(Rng& rng, int n, const GameParams& p, double cmin,
                                    double cmax) {
  std::vector<double> raw(n), costs(n);
  for (auto& x : raw) x = sample_truncated_pareto(rng.uniform(), ParetoTail{1.5, 1.0, 1e3, n});
  for (auto& c : costs) c = rng.uniform(cmin, cmax);
  return population_from_raw(raw, costs, p);
}

// Arbitrary legal joint strategy: some leaders with random margin/pledge,
// delegations scattered over random pools (active or not), some stake idle.
inline JointStrategy random_joint(Rng& rng, const Population& pop, double lead_prob = 0.35) {
  const int n = pop.size();
  auto J = JointStrategy::passive(n);
  for (int i = 0; i < n; ++i) {
    double s = pop[i].stake;
    J[i].margin = rng.uniform();
    J[i].pledge = s * (0.05 + 0.95 * rng.uniform());
    double left = s;
    if (rng.uniform() < lead_prob) {
      J[i].alloc.set(i, J[i].pledge);
      left -= J[i].pledge;
    }
    int parts = static_cast<int>(rng.below(3));
    for (int q = 0; q < parts && left > 0; ++q) {
      int t = static_cast<int>(rng.below(n));
      if (t == i) continue;
      double a = left * rng.uniform();
      J[i].alloc.add(t, a);
      left -= a;
    }
  }
  return J;
}

}  // namespace testutil

namespace testutil {

// Small instance with k in {2,3,4}, n <= 12 and a positive P_{k+1}.
inline std::pair<Population, GameParams> small_instance(Rng& rng) {
  for (;;) {
    int k = 2 + static_cast<int>(rng.below(3));
    int n = k + 2 + static_cast<int>(rng.below(12 - k - 1));
    GameParams p{n, k, 1.0, rng.uniform()};
    double beta = p.beta();
    auto pop = random_population(rng, n, p, 0.001, 0.6 * beta);
    auto ord = order_by_potential(pop, p);
    if (player_potential(pop[ord[k]], p) > 0) return {pop, p};
  }
}

}  // namespace testutil
