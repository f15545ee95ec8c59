#pragma once
#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "pareto.hpp"
#include "params.hpp"
#include "rewards.hpp"
#include "rng.hpp"

namespace rsslab {

struct Player {
  int id = 0;
  double stake = 0;
  double cost = 0;
};

struct Diagnostic {
  std::string code;
  std::string message;
};

struct Population {
  std::vector<Player> players;
  bool normalized = false;
  std::vector<Diagnostic> notes;  // e.g. tie perturbations applied at build time

  int size() const { return static_cast<int>(players.size()); }
  const Player& operator[](int i) const { return players[i]; }
  double total_stake() const {
    double s = 0;
    for (auto& p : players) s += p.stake;
    return s;
  }
};

// Potential profit of player i when pledging its whole stake.
inline double player_potential(const Player& pl, const GameParams& p) {
  return potential_profit(pl.stake, pl.cost, p);
}

// Player indices sorted by potential profit, best first (ties by id).
inline std::vector<int> order_by_potential(const Population& pop, const GameParams& p) {
  std::vector<double> P(pop.size());
  for (int i = 0; i < pop.size(); ++i) P[i] = player_potential(pop[i], p);
  std::vector<int> idx(pop.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return P[a] > P[b]; });
  return idx;
}

namespace detail {

// Scale raw weights to sum 1 with every share <= cap. Capped players are
// pinned at exactly `cap` and the rest rescaled; each round pins at least
// one more player, so n rounds always suffice.
inline std::vector<double> cap_normalize(const std::vector<double>& raw, double cap) {
  const int n = static_cast<int>(raw.size());
  if (n * cap < 1 - 1e-12)
    throw ConstructionError("cannot cap stakes at " + std::to_string(cap) + " with only " +
                            std::to_string(n) + " players (need n*beta >= 1)");
  for (double r : raw)
    if (!(r > 0)) throw ConstructionError("raw stakes must be positive");
  std::vector<double> rel(n);
  std::vector<char> pinned(n, 0);
  int npinned = 0;
  for (int round = 0; round <= n; ++round) {
    double free_mass = 1.0 - cap * npinned;
    double free_raw = 0;
    for (int i = 0; i < n; ++i)
      if (!pinned[i]) free_raw += raw[i];
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      if (pinned[i]) {
        rel[i] = cap;
        continue;
      }
      rel[i] = raw[i] * free_mass / free_raw;
    }
    for (int i = 0; i < n; ++i)
      if (!pinned[i] && rel[i] > cap) {
        pinned[i] = 1;
        ++npinned;
        changed = true;
      }
    if (!changed) return rel;
    if (npinned == n) {
      if (std::abs(cap * n - 1) > 1e-12) break;
      std::fill(rel.begin(), rel.end(), cap);
      return rel;
    }
  }
  throw ConstructionError("stake capping did not converge");
}

// Breaks exact potential-profit ties by nudging the smaller-stake player's cost.
inline void separate_potentials(Population& pop, const GameParams& p) {
  for (int guard = 0; guard < 4 * pop.size() + 8; ++guard) {
    auto ord = order_by_potential(pop, p);
    bool clean = true;
    for (int r = 0; r + 1 < pop.size(); ++r) {
      auto& a = pop.players[ord[r]];
      auto& b = pop.players[ord[r + 1]];
      if (player_potential(a, p) != player_potential(b, p)) continue;
      clean = false;
      bool a_small = a.stake < b.stake || (a.stake == b.stake && a.id > b.id);
      auto& victim = a_small ? a : b;
      int rank = (a_small ? r : r + 1) + 1;
      victim.cost += 1e-15 * rank;
      pop.notes.push_back({"tie perturbation", "player " + std::to_string(victim.id) +
                                                   " cost += " + std::to_string(rank) +
                                                   "e-15"});
      break;
    }
    if (clean) return;
  }
  throw ConstructionError("could not separate tied potential profits");
}

}  // namespace detail

// Population from raw (unnormalized) stake weights and costs.
inline Population population_from_raw(const std::vector<double>& raw,
                                      const std::vector<double>& costs,
                                      const GameParams& p) {
  if (raw.size() != costs.size()) throw std::invalid_argument("stake/cost length mismatch");
  auto rel = detail::cap_normalize(raw, p.beta());
  Population pop;
  for (std::size_t i = 0; i < raw.size(); ++i)
    pop.players.push_back({static_cast<int>(i), rel[i], costs[i]});
  pop.normalized = true;
  detail::separate_potentials(pop, p);
  return pop;
}

inline Population init_population(int n, const ParetoTail& tail, double cost_min,
                                  double cost_max, std::uint64_t seed, const GameParams& p) {
  tail.validate();
  if (n < 2) throw std::invalid_argument("init_population: n must be >= 2");
  if (!(cost_min > 0 && cost_min < cost_max && cost_max < p.R))
    throw std::invalid_argument("init_population: need 0 < cost_min < cost_max < R");
  if (n * p.beta() < 1 - 1e-12)
    throw ConstructionError("init_population: n*beta < 1, capping is infeasible");
  Rng srng(seed, kStakeStream), crng(seed, kCostStream);
  std::vector<double> raw(n), costs(n);
  for (auto& x : raw) x = sample_truncated_pareto(srng.uniform(), tail);
  for (auto& c : costs) c = crng.uniform(cost_min, cost_max);
  return population_from_raw(raw, costs, p);
}

inline std::vector<Diagnostic> validate_population(const Population& pop, const GameParams& p) {
  std::vector<Diagnostic> out;
  double sum = pop.total_stake();
  if (std::abs(sum - 1) > 1e-12)
    out.push_back({"not normalized", "stake sum " + std::to_string(sum)});
  for (auto& pl : pop.players) {
    if (!(pl.stake > 0 && pl.stake < 1))
      out.push_back({"stake out of range", "player " + std::to_string(pl.id)});
    if (!(pl.cost > 0 && pl.cost < p.R))
      out.push_back({"cost out of range", "player " + std::to_string(pl.id)});
  }
  auto ord = order_by_potential(pop, p);
  for (int r = 0; r + 1 < pop.size(); ++r)
    if (player_potential(pop[ord[r]], p) == player_potential(pop[ord[r + 1]], p))
      out.push_back({"tied potential profit", "players " + std::to_string(pop[ord[r]].id) +
                                                  " and " + std::to_string(pop[ord[r + 1]].id)});
  return out;
}

inline std::string population_to_csv(const Population& pop) {
  std::string out = "id,stake,cost\n";
  char buf[128];
  for (auto& pl : pop.players) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", pl.id, pl.stake, pl.cost);
    out += buf;
  }
  return out;
}

inline Population population_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "id,stake,cost")
    throw std::invalid_argument("population csv: bad header");
  Population pop;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Player pl;
    char c1, c2;
    std::istringstream ls(line);
    if (!(ls >> pl.id >> c1 >> pl.stake >> c2 >> pl.cost) || c1 != ',' || c2 != ',')
      throw std::invalid_argument("population csv: bad row '" + line + "'");
    pop.players.push_back(pl);
  }
  pop.normalized = std::abs(pop.total_stake() - 1) <= 1e-12;
  return pop;
}

}  // namespace rsslab
