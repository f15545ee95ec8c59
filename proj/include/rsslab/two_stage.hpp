#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "equilibrium.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace rsslab {

// Inner/outer game parameters. G = the k players with the highest P.
struct TwoStageParams {
  double epsilon = 0;        // P_k - P_{k+1}
  double epsilon1 = 0;       // P_{k+1} - P_{k+2}
  double epsilon_prime = 0;  // chosen slack
  double alpha_tie = 0;      // weight in (s_{k+1}/beta, 1)
  std::vector<int> order;    // player ids by P, best first
  std::vector<int> leader_set;
  std::vector<double> P;     // potential profit by player id

  int runner_up() const { return order[leader_set.size()]; }
  double threshold() const { return P[runner_up()]; }
  bool in_g(int i) const {
    return std::find(leader_set.begin(), leader_set.end(), i) != leader_set.end();
  }

  static TwoStageParams make(const Population& pop, const GameParams& p, double eps_prime,
                             double alpha_tie) {
    const int n = pop.size(), k = p.k;
    if (n < k + 2) throw ConstructionError("two-stage game needs n >= k + 2");
    TwoStageParams ts;
    ts.order = order_by_potential(pop, p);
    ts.P.resize(n);
    for (int i = 0; i < n; ++i) ts.P[i] = player_potential(pop[i], p);
    ts.leader_set.assign(ts.order.begin(), ts.order.begin() + k);
    const double Pk = ts.P[ts.order[k - 1]], Pk1 = ts.P[ts.order[k]], Pk2 = ts.P[ts.order[k + 1]];
    ts.epsilon = Pk - Pk1;
    ts.epsilon1 = Pk1 - Pk2;
    ts.epsilon_prime = eps_prime;
    ts.alpha_tie = alpha_tie;
    double cap = std::min({ts.epsilon, Pk1, ts.epsilon1});
    if (!(eps_prime > 0 && eps_prime < cap))
      throw ConstructionError("epsilon_prime must lie in (0, min(epsilon, P_{k+1}, epsilon1)) = (0, " +
                              detail::fmt_num(cap) + ")");
    double lo = pop[ts.order[k]].stake / p.beta();
    if (!(alpha_tie > lo && alpha_tie < 1))
      throw ConstructionError("alpha_tie must lie in (s_{k+1}/beta, 1) = (" + detail::fmt_num(lo) +
                              ", 1)");
    return ts;
  }
};

struct MStar {
  std::vector<double> margins;
  std::vector<double> pledges;
};

inline MStar build_mstar(const Population& pop, const GameParams& p, const TwoStageParams& ts) {
  const int n = pop.size();
  MStar ms;
  ms.margins.assign(n, 0.0);
  ms.pledges.resize(n);
  const double Pk1 = ts.threshold(), e = ts.epsilon_prime, a = ts.alpha_tie;
  for (int i : ts.leader_set) ms.margins[i] = (ts.P[i] - Pk1 - e * (1 - a)) / ts.P[i];
  ms.margins[ts.runner_up()] = e * a / Pk1;
  for (int i = 0; i < n; ++i) {
    ms.pledges[i] = pop[i].stake;
    if (!(ms.margins[i] >= 0 && ms.margins[i] < 1))
      throw ConstructionError("m* margin outside [0,1) for player " + std::to_string(i));
  }
  (void)p;
  return ms;
}

// Margin above which a leader in G falls behind an opened runner-up pool.
inline double mstar_threshold_margin(int i, const TwoStageParams& ts) {
  return 1 - (ts.threshold() - ts.epsilon_prime * ts.alpha_tie) / ts.P[i];
}

inline NashOptions two_stage_nash_options() {
  NashOptions o;
  o.utility = UtilityKind::NonMyopic;
  o.ranking.mode = RankingMode::TwoStage;
  return o;
}

// Passive joint strategy carrying the outer-game margins and pledges.
inline JointStrategy outer_joint(const std::vector<double>& margins,
                                 const std::vector<double>& pledges) {
  auto J = JointStrategy::passive(static_cast<int>(margins.size()));
  for (int i = 0; i < J.size(); ++i) {
    J[i].margin = margins[i];
    J[i].pledge = pledges[i];
  }
  return J;
}

// Activates `leaders` (a_ll = pledge) and pours all other stake into their
// pools up to beta each, last pool taking any remainder. Pools are filled in
// desirability order unless `rng` shuffles pools and members.
inline JointStrategy fill_pools(JointStrategy J, const Population& pop, const GameParams& p,
                                std::vector<int> leaders, Rng* rng = nullptr) {
  const int n = J.size();
  for (auto& s : J.strategies) s.alloc = Allocation{};
  if (leaders.empty()) return J;
  for (int l : leaders)
    if (J[l].pledge > 0) J[l].alloc.set(l, J[l].pledge);
  leaders.erase(std::remove_if(leaders.begin(), leaders.end(), [&](int l) { return !J.active(l); }),
                leaders.end());
  if (leaders.empty()) return J;
  std::vector<int> members(n);
  for (int i = 0; i < n; ++i) members[i] = i;
  if (rng) {
    rng->shuffle(leaders);
    rng->shuffle(members);
  } else {
    std::stable_sort(leaders.begin(), leaders.end(), [&](int a, int b) {
      return desirability(J[a].margin, J[a].pledge, pop[a].cost, p) >
             desirability(J[b].margin, J[b].pledge, pop[b].cost, p);
    });
  }
  std::size_t cur = 0;
  double room = p.beta() - J[leaders[0]].pledge;
  for (int i : members) {
    double left = pop[i].stake - J[i].alloc.get(i);
    while (left > 1e-15) {
      if (leaders[cur] == i) break;  // own pool only takes the pledge
      if (cur + 1 == leaders.size()) {
        J[i].alloc.add(leaders[cur], left);
        break;
      }
      double x = std::min(left, room);
      if (x > 0) J[i].alloc.add(leaders[cur], x);
      left -= x;
      room -= x;
      if (room <= 1e-15) {
        ++cur;
        room = p.beta() - J[leaders[cur]].pledge;
      }
    }
  }
  return J;
}

// k active pools led by G, each holding beta, every pledge equal to m*'s.
inline bool is_conforming(const JointStrategy& J, const GameParams& p, const TwoStageParams& ts,
                          const MStar& ms, double tol = 1e-12) {
  auto sigma = J.pool_stakes();
  for (int i = 0; i < J.size(); ++i) {
    bool should = ts.in_g(i);
    if (J.active(i) != should) return false;
    if (should && (std::abs(sigma[i] - p.beta()) > tol || J[i].alloc.get(i) != ms.pledges[i]))
      return false;
  }
  for (auto st : pool_states(J))
    if (st.stranded > tol) return false;
  return true;
}

// Iterates single-player improving moves of the inner game until none is
// left; nullopt when the cap is hit first.
inline std::optional<JointStrategy> inner_best_response(JointStrategy J, const Population& pop,
                                                        const GameParams& p,
                                                        const DeviationGrid& grid,
                                                        int max_iter = 200) {
  DeviationGrid g = grid;
  g.inner_only = true;
  auto o = two_stage_nash_options();
  for (int it = 0; it < max_iter; ++it) {
    auto v = verify_nash(J, pop, p, g, o);
    if (v.equilibrium) return J;
    J[v.witness->player] = v.witness->strategy;
  }
  return std::nullopt;
}

struct OuterEval {
  bool found = false;  // some inner equilibrium was reached
  double sup = -std::numeric_limits<double>::infinity();
  double inf = -std::numeric_limits<double>::infinity();
  int equilibria = 0;
};

// Deviator's utilities over the inner equilibria reached from a few
// structured starting points.
inline OuterEval outer_utility(int dev, double margin, double pledge, const Population& pop,
                               const GameParams& p, const TwoStageParams& ts, const MStar& ms,
                               const DeviationGrid& grid) {
  auto margins = ms.margins;
  auto pledges = ms.pledges;
  margins[dev] = margin;
  pledges[dev] = pledge;
  auto base = outer_joint(margins, pledges);
  std::vector<std::vector<int>> starts;
  starts.push_back(ts.leader_set);
  if (ts.in_g(dev)) {
    auto s = ts.leader_set;
    std::replace(s.begin(), s.end(), dev, ts.runner_up());
    starts.push_back(s);
  } else {
    auto s = ts.leader_set;
    s.push_back(dev);
    starts.push_back(s);
  }
  starts.push_back({});
  auto o = two_stage_nash_options();
  OuterEval ev;
  double lo = std::numeric_limits<double>::infinity();
  for (auto& leaders : starts) {
    auto eq = inner_best_response(fill_pools(base, pop, p, leaders), pop, p, grid);
    if (!eq) continue;
    double u = nm_utility(dev, *eq, pop, p, o.ranking);
    ev.found = true;
    ++ev.equilibria;
    ev.sup = std::max(ev.sup, u);
    lo = std::min(lo, u);
  }
  if (ev.found) ev.inf = lo;
  return ev;
}

struct AuditReport {
  int conforming_checked = 0, conforming_passed = 0;
  int nonconforming_checked = 0, nonconforming_refuted = 0;
  int outer_checked = 0, outer_violations = 0, outer_no_equilibrium = 0;
  double max_outer_excess = -std::numeric_limits<double>::infinity();  // sup - u* - eps'
  std::vector<std::string> counterexamples;
  std::vector<std::string> notes;

  bool ok() const {
    return conforming_passed == conforming_checked &&
           nonconforming_refuted == nonconforming_checked && outer_violations == 0;
  }
};

struct AuditOptions {
  int random_fills = 8;       // extra conforming configurations
  int random_nonconforming = 8;
  int random_outer = 8;       // random outer deviations per player
  std::uint64_t seed = 1;
};

inline AuditReport two_stage_audit(const Population& pop, const GameParams& p,
                                   const TwoStageParams& ts, const DeviationGrid& grid,
                                   const AuditOptions& ao = {}) {
  grid.validate();
  const int n = pop.size();
  const auto ms = build_mstar(pop, p, ts);
  const auto base = outer_joint(ms.margins, ms.pledges);
  const auto o = two_stage_nash_options();
  DeviationGrid inner = grid;
  inner.inner_only = true;
  Rng rng(ao.seed, kSampleStream);
  AuditReport rep;

  // (a) inner game under (m*, lambda*)
  const auto canonical = fill_pools(base, pop, p, ts.leader_set);
  std::vector<JointStrategy> conforming{canonical};
  for (int r = 0; r < ao.random_fills; ++r)
    conforming.push_back(fill_pools(base, pop, p, ts.leader_set, &rng));
  for (auto& J : conforming) {
    if (!is_conforming(J, p, ts, ms, 1e-9)) continue;
    ++rep.conforming_checked;
    auto v = verify_nash(J, pop, p, inner, o);
    if (v.equilibrium) ++rep.conforming_passed;
    else
      rep.counterexamples.push_back("conforming configuration refuted: player " +
                                    std::to_string(v.witness->player) + " " + v.witness->move);
  }

  std::vector<std::pair<std::string, JointStrategy>> nonconf;
  const int k1 = ts.runner_up();
  for (int g : ts.leader_set) {
    auto s = ts.leader_set;
    std::replace(s.begin(), s.end(), g, k1);
    nonconf.push_back({"leader " + std::to_string(g) + " missing", fill_pools(base, pop, p, s)});
  }
  {
    auto s = ts.leader_set;
    s.push_back(k1);
    nonconf.push_back({"extra non-G pool", fill_pools(base, pop, p, s)});
  }
  {
    // one member moves part of its delegation from one G pool to another
    auto J = canonical;
    for (int i = 0; i < n; ++i) {
      if (ts.in_g(i) || J[i].alloc.empty()) continue;
      auto [from, a] = J[i].alloc.entries().front();
      int to = ts.leader_set.front() == from ? ts.leader_set.back() : ts.leader_set.front();
      if (to == from) break;
      J[i].alloc.set(from, a / 2);
      J[i].alloc.add(to, a - a / 2);
      nonconf.push_back({"oversaturated pool", J});
      break;
    }
  }
  {
    // some delegated stake parked at an inactive pool
    auto J = canonical;
    int park = ts.order[p.k + 1];
    for (int i = 0; i < n; ++i) {
      if (ts.in_g(i) || i == park || J[i].alloc.empty()) continue;
      auto [from, a] = J[i].alloc.entries().front();
      J[i].alloc.set(from, a / 2);
      J[i].alloc.add(park, a - a / 2);
      nonconf.push_back({"stranded stake", J});
      break;
    }
  }
  for (int r = 0; r < ao.random_nonconforming; ++r) {
    auto J = base;
    for (int i = 0; i < n; ++i) {
      double left = pop[i].stake;
      if (rng.uniform() < 0.4) {
        J[i].alloc.set(i, ms.pledges[i]);
        left -= ms.pledges[i];
      }
      for (int q = 0; q < 2 && left > 0; ++q) {
        int t = static_cast<int>(rng.below(n));
        if (t == i) continue;
        double a = q == 1 ? left : left * rng.uniform();
        J[i].alloc.add(t, a);
        left -= a;
      }
    }
    nonconf.push_back({"random configuration " + std::to_string(r), J});
  }
  for (auto& [name, J] : nonconf) {
    if (is_conforming(J, p, ts, ms, 1e-9)) continue;
    ++rep.nonconforming_checked;
    auto v = verify_nash(J, pop, p, inner, o);
    if (!v.equilibrium) ++rep.nonconforming_refuted;
    else rep.counterexamples.push_back("non-conforming configuration not refuted: " + name);
  }

  // (b) single-player outer deviations
  std::vector<double> ustar(n);
  for (int i = 0; i < n; ++i) ustar[i] = nm_utility(i, canonical, pop, p, o.ranking);
  auto snap = [](double x, double step) { return std::round(x / step) * step; };
  for (int i = 0; i < n; ++i) {
    const double s = pop[i].stake, m0 = ms.margins[i];
    std::vector<std::pair<double, double>> devs;
    if (ts.in_g(i)) {
      double thr = mstar_threshold_margin(i, ts);
      devs = {{(m0 + thr) / 2, s}, {thr, s},   {(thr + 1) / 2, s}, {1.0, s},
              {m0 / 2, s},         {0.0, s},   {m0, s / 2},        {m0, 0.0}};
    } else {
      devs = {{0.0, s}, {0.5, s}, {1.0, s}, {0.0, s / 2}, {m0, 0.0}};
      if (m0 > 0) devs.push_back({m0 / 2, s});
    }
    for (int r = 0; r < ao.random_outer; ++r) {
      double m = std::min(1.0, snap(rng.uniform(), grid.margin_step));
      double lam = std::min(s, snap(rng.uniform() * s, grid.stake_step));
      devs.push_back({m, lam});
    }
    for (auto [m, lam] : devs) {
      if (m == m0 && lam == s) continue;
      ++rep.outer_checked;
      auto ev = outer_utility(i, m, lam, pop, p, ts, ms, grid);
      std::string what = "player " + std::to_string(i) + " margin " + detail::fmt_num(m) +
                         " pledge " + detail::fmt_num(lam);
      if (!ev.found) {
        ++rep.outer_no_equilibrium;
        rep.notes.push_back(what + ": no equilibrium found at this grid resolution");
        continue;
      }
      double excess = ev.sup - ustar[i] - ts.epsilon_prime;
      rep.max_outer_excess = std::max(rep.max_outer_excess, excess);
      if (excess > 1e-9) {
        ++rep.outer_violations;
        rep.counterexamples.push_back(what + " gains " + detail::fmt_num(ev.sup - ustar[i]));
      }
    }
  }
  return rep;
}

}  // namespace rsslab
