#pragma once
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "population.hpp"
#include "strategy.hpp"

namespace rsslab {

// ---------------------------------------------------------------- perfect

struct PerfectStrategy {
  JointStrategy joint;
  std::vector<double> margins;  // by player id
  std::vector<int> order;       // player ids by potential profit, best first
  double threshold = 0;         // P of the (k+1)-th player
};

inline PerfectStrategy build_perfect(const Population& pop, const GameParams& p) {
  const int n = pop.size(), k = p.k;
  if (k >= n) throw ConstructionError("build_perfect: need k < n");
  PerfectStrategy ps;
  ps.order = order_by_potential(pop, p);
  std::vector<double> P(n);
  for (int i = 0; i < n; ++i) P[i] = player_potential(pop[i], p);
  ps.threshold = P[ps.order[k]];
  if (!(ps.threshold > 0))
    throw ConstructionError("build_perfect: potential profit of player k+1 must be positive");
  for (int i = 0; i < n; ++i)
    if (pop[i].stake > p.beta() + 1e-15)
      throw ConstructionError("build_perfect: stake above beta");
  ps.margins.assign(n, 0.0);
  ps.joint = JointStrategy::passive(n);
  for (int i = 0; i < n; ++i) ps.joint[i].pledge = pop[i].stake;
  for (int r = 0; r < k; ++r) {
    int j = ps.order[r];
    ps.margins[j] = 1 - ps.threshold / P[j];
    ps.joint[j].margin = ps.margins[j];
    ps.joint[j].alloc.set(j, pop[j].stake);
  }
  // members fill the best-ranked unfilled pool first
  int cur = 0;
  double room = p.beta() - pop[ps.order[0]].stake;
  for (int r = k; r < n; ++r) {
    int i = ps.order[r];
    double left = pop[i].stake;
    while (left > 0) {
      if (cur == k - 1) {  // last pool absorbs rounding
        ps.joint[i].alloc.add(ps.order[cur], left);
        break;
      }
      double x = std::min(left, room);
      if (x > 0) ps.joint[i].alloc.add(ps.order[cur], x);
      left -= x;
      room -= x;
      if (room <= 0) room = p.beta() - pop[ps.order[++cur]].stake;
    }
  }
  return ps;
}

inline std::vector<double> perfect_utilities(const Population& pop, const GameParams& p) {
  auto ord = order_by_potential(pop, p);
  double Pk1 = player_potential(pop[ord[p.k]], p);
  if (!(Pk1 > 0))
    throw ConstructionError("perfect_utilities: potential profit of player k+1 must be positive");
  std::vector<double> u(pop.size());
  for (int i = 0; i < pop.size(); ++i)
    u[i] = Pk1 * pop[i].stake / p.beta() + std::max(0.0, player_potential(pop[i], p) - Pk1);
  return u;
}

// ------------------------------------------------------------- verify_nash

enum MoveFamily : unsigned {
  kMarginChange = 1,
  kPledgeReduction = 2,
  kPoolClosure = 4,
  kPoolOpening = 8,
  kRedelegation = 16,
  kAllMoves = 31,
};

struct DeviationGrid {
  double margin_step = 0.01;
  double stake_step = 1e-3;
  unsigned moves = kAllMoves;
  // keep every (margin, pledge) fixed: only activation and allocations move
  bool inner_only = false;

  void validate() const {
    if (!(margin_step > 0) || !(stake_step > 0))
      throw std::invalid_argument("deviation grid steps must be > 0");
  }
};

enum class UtilityKind { Myopic, NonMyopic };

struct NashOptions {
  UtilityKind utility = UtilityKind::NonMyopic;
  SchemeKind scheme = SchemeKind::CapMargin;  // reward used by myopic utilities
  RankingOptions ranking;                     // used by non-myopic utilities
  double tolerance = 1e-9;
};

struct Witness {
  int player = -1;
  std::string move;
  double gain = 0;
  Strategy strategy;  // the deviating strategy
};

struct Verdict {
  bool equilibrium = true;
  std::optional<Witness> witness;
  long evaluated = 0;
};

namespace detail {

inline std::string fmt_num(double x) {
  char b[32];
  std::snprintf(b, sizeof b, "%.10g", x);
  return b;
}

struct MoveDesc {
  enum Kind { Margin, Pledge, Close, Open, Redelegate } kind = Margin;
  double margin = 0, pledge = 0, amount = 0;
  int src = -1, tgt = -1;    // -1 = unallocated
  int place = -2;            // placement of freed stake: -2 none, -1 unallocated, -3 greedy, else pool

  std::string str() const {
    auto where = [](int t) { return t == -1 ? std::string("unallocated") : "pool " + std::to_string(t); };
    auto placed = [&]() -> std::string {
      if (place == -2) return "";
      if (place == -3) return " rest->greedy fill";
      return " rest->" + where(place);
    };
    switch (kind) {
      case Margin: return "change margin to " + fmt_num(margin);
      case Pledge:
        return "reduce pledge to " + fmt_num(pledge) + " at margin " + fmt_num(margin) + placed();
      case Close: return "close pool" + placed();
      case Open: return "open pool margin " + fmt_num(margin) + " pledge " + fmt_num(pledge) + placed();
      case Redelegate:
        return "move " + fmt_num(amount) + " from " + where(src) + " to " + where(tgt);
    }
    return "";
  }
};

class DeviationSearch {
 public:
  DeviationSearch(const JointStrategy& J, const Population& pop, const GameParams& p,
                  const DeviationGrid& g, const NashOptions& o)
      : J_(J), pop_(pop), p_(p), g_(g), o_(o), n_(J.size()) {
    rs_ = RewardScheme{o.scheme, p};
    raw_.assign(n_, 0.0);
    for (auto& s : J.strategies)
      for (auto [t, a] : s.alloc.entries()) raw_[t] += a;
    terms_.resize(n_);
    for (int t = 0; t < n_; ++t) terms_[t] = pool_terms(J, pop, t);
    for (int t = 0; t < n_; ++t) base_cands_.push_back(pool_candidate(J, pop, p, t, o.ranking.mode));
    int steps = static_cast<int>(std::llround(1.0 / g.margin_step));
    if (std::abs(steps * g.margin_step - 1) < 1e-9) {
      for (int i = 0; i <= steps; ++i) margins_.push_back(double(i) / steps);
    } else {
      for (double m = 0; m < 1; m += g.margin_step) margins_.push_back(m);
      margins_.push_back(1.0);
    }
  }

  long evaluated() const { return evaluated_; }

  std::optional<Witness> best_for(int j) {
    begin(j);
    best_gain_ = o_.tolerance;
    found_ = false;
    const bool leads = J_.active(j);
    const auto& S = J_[j];
    const double stake = pop_[j].stake;

    if (leads) {
      if (!g_.inner_only && (g_.moves & kMarginChange)) {
        for (double m : margins_) {
          if (m == S.margin) continue;
          set_config(true, m, S.pledge);
          Strategy d = S;
          d.margin = m;
          consider(d, {MoveDesc::Margin, m});
        }
      }
      if (!g_.inner_only && (g_.moves & kPledgeReduction)) {
        std::vector<double> ms = margins_;
        if (std::find(ms.begin(), ms.end(), S.margin) == ms.end()) ms.push_back(S.margin);
        for (double lam = g_.stake_step; lam < S.pledge - 1e-15; lam += g_.stake_step) {
          for (double m : ms) {
            set_config(true, m, lam);
            Strategy d = S;
            d.margin = m;
            d.pledge = lam;
            d.alloc.set(j, lam);
            place_and_consider(d, S.pledge - lam, {MoveDesc::Pledge, m, lam});
          }
        }
      }
      if (g_.moves & kPoolClosure) {
        set_config(false, S.margin, S.pledge);
        Strategy d = S;
        d.alloc.set(j, 0);
        place_and_consider(d, S.pledge, {MoveDesc::Close});
      }
    } else if (g_.moves & kPoolOpening) {
      std::vector<std::pair<double, double>> configs;  // (margin, pledge)
      if (g_.inner_only) {
        if (S.pledge > 0 && S.pledge <= stake + kStakeSlack) configs.push_back({S.margin, S.pledge});
      } else {
        std::vector<double> lams;
        for (double lam = g_.stake_step; lam < stake - 1e-15; lam += g_.stake_step) lams.push_back(lam);
        lams.push_back(stake);
        for (double lam : lams)
          for (double m : margins_) configs.push_back({m, lam});
      }
      for (auto [m, lam] : configs) {
        set_config(true, m, lam);
        Strategy d = S;
        d.margin = m;
        d.pledge = lam;
        double freed = source_pledge(d, lam);
        if (freed < 0) continue;
        consider(d, {MoveDesc::Open, m, lam});
        double free_now = stake - d.alloc.total();
        if (free_now > 1e-15 && o_.utility == UtilityKind::NonMyopic) {
          Strategy e = d;
          greedy_fill(e, free_now);
          consider(e, {MoveDesc::Open, m, lam, 0, -1, -1, -3});
        }
      }
    }

    if (g_.moves & kRedelegation) {
      set_config(leads, S.margin, S.pledge);
      redelegations(S, stake);
    }
    if (!found_) return std::nullopt;
    Witness w;
    w.player = j;
    w.move = best_desc_.str();
    w.gain = best_gain_;
    w.strategy = best_;
    return w;
  }

 private:
  void begin(int j) {
    j_ = j;
    base_a_.assign(n_, 0.0);
    for (auto [t, a] : J_[j].alloc.entries()) base_a_[t] = a;
    rank_.assign(n_, 0);
    have_config_ = false;
    set_config(J_.active(j), J_[j].margin, J_[j].pledge);
    u0_ = utility(J_[j]);
  }

  // Ranking with j's pool in the given configuration.
  void set_config(bool active, double m, double lam) {
    if (have_config_ && active == cfg_active_ && m == cfg_m_ && lam == cfg_lam_) return;
    have_config_ = true;
    cfg_active_ = active, cfg_m_ = m, cfg_lam_ = lam;
    own_ = PoolTerms{active, m, lam, pop_[j_].cost};
    if (o_.utility != UtilityKind::NonMyopic) return;
    std::vector<Candidate> act, idle;
    for (int t = 0; t < n_; ++t) {
      Candidate c = base_cands_[t];
      bool a = terms_[t].active;
      if (t == j_) {
        a = active;
        if (active) {
          double P = potential_profit(lam, pop_[t].cost, p_);
          c = {t, desirability(m, lam, pop_[t].cost, p_), P};
        } else {
          double P = potential_profit(pop_[t].stake, pop_[t].cost, p_);
          double D = o_.ranking.mode == RankingMode::TwoStage
                         ? 0.0
                         : desirability(m, pop_[t].stake, pop_[t].cost, p_);
          c = {t, D, P};
        }
      }
      (a || o_.ranking.mode == RankingMode::SingleStage ? act : idle).push_back(c);
    }
    int r = 0;
    for (int id : rank_candidates(std::move(act), o_.ranking)) rank_[id] = ++r;
    for (int id : rank_candidates(std::move(idle), o_.ranking)) rank_[id] = ++r;
  }

  double stake_in(int t, double a) const { return raw_[t] - base_a_[t] + a; }

  double utility(const Strategy& s) const {
    double u = 0;
    for (auto [t, a] : s.alloc.entries()) {
      double sig = stake_in(t, a);
      if (t == j_) {
        if (o_.utility == UtilityKind::NonMyopic)
          u += nm_leader_value(sig, own_, rank_[t] <= p_.k, p_);
        else
          u += myopic_leader_value(sig, own_, rs_);
      } else if (terms_[t].active) {
        if (o_.utility == UtilityKind::NonMyopic)
          u += nm_member_value(a, sig, terms_[t], rank_[t] <= p_.k, p_);
        else
          u += myopic_member_value(a, sig, terms_[t], rs_);
      }
    }
    return u;
  }

  void consider(const Strategy& d, const MoveDesc& desc) {
    ++evaluated_;
    double gain = utility(d) - u0_;
    if (gain > best_gain_) {
      best_gain_ = gain;
      best_ = d;
      best_desc_ = desc;
      found_ = true;
    }
  }

  // Active pools other than j, best rank first.
  std::vector<int> targets() const {
    std::vector<int> t;
    for (int i = 0; i < n_; ++i)
      if (i != j_ && terms_[i].active) t.push_back(i);
    std::sort(t.begin(), t.end(), [&](int a, int b) { return rank_[a] < rank_[b]; });
    return t;
  }

  void greedy_fill(Strategy& d, double x) {
    for (int t : targets()) {
      if (x <= 0) break;
      if (rank_[t] > p_.k) continue;
      double room = p_.beta() - stake_in(t, d.alloc.get(t));
      if (room <= 0) continue;
      double y = std::min(room, x);
      d.alloc.add(t, y);
      x -= y;
    }
  }

  // Freed stake x: leave idle, send to one pool, or greedy-fill.
  void place_and_consider(const Strategy& d, double x, MoveDesc desc) {
    desc.place = -1;
    consider(d, desc);
    if (x <= 0) return;
    for (int t : targets()) {
      Strategy e = d;
      e.alloc.add(t, x);
      desc.place = t;
      consider(e, desc);
    }
    if (o_.utility == UtilityKind::NonMyopic) {
      Strategy e = d;
      greedy_fill(e, x);
      desc.place = -3;
      consider(e, desc);
    }
  }

  // Put `lam` into j's own pool, taking idle stake first, then the
  // worst-ranked delegations. Returns leftover idle stake, < 0 if impossible.
  double source_pledge(Strategy& d, double lam) {
    double stake = pop_[j_].stake;
    double idle = stake - d.alloc.total();
    double need = lam - std::min(lam, std::max(0.0, idle));
    std::vector<int> src;
    for (auto [t, a] : d.alloc.entries())
      if (t != j_) src.push_back(t);
    std::sort(src.begin(), src.end(), [&](int a, int b) {
      bool aa = terms_[a].active, ba = terms_[b].active;
      if (aa != ba) return !aa;  // stranded stake first
      return rank_[a] > rank_[b];
    });
    for (int t : src) {
      if (need <= 1e-15) break;
      double have = d.alloc.get(t);
      double take = std::min(have, need);
      d.alloc.set(t, have - take <= 1e-15 ? 0.0 : have - take);
      need -= take;
    }
    if (need > 1e-12) return -1;
    d.alloc.set(j_, lam);
    return stake - d.alloc.total();
  }

  void redelegations(const Strategy& S, double stake) {
    const double idle = stake - S.alloc.total();
    std::vector<std::pair<int, double>> sources;  // -1 = idle stake
    if (idle > 1e-15) sources.push_back({-1, idle});
    for (auto [t, a] : S.alloc.entries())
      if (t != j_) sources.push_back({t, a});
    auto tg = targets();
    for (auto [src, A] : sources) {
      std::vector<int> dests = tg;
      if (src != -1) dests.push_back(-1);
      for (int dst : dests) {
        if (dst == src) continue;
        std::vector<double> amounts;
        for (double x = g_.stake_step; x < A - 1e-15; x += g_.stake_step) amounts.push_back(x);
        amounts.push_back(A);
        if (dst >= 0) {
          double fill = p_.beta() - stake_in(dst, S.alloc.get(dst));
          if (fill > 1e-15 && fill < A) amounts.push_back(fill);
        }
        for (double x : amounts) {
          Strategy d = S;
          if (src >= 0) {
            double left = A - x;
            d.alloc.set(src, left <= 1e-15 ? 0.0 : left);
          }
          if (dst >= 0) d.alloc.add(dst, x);
          consider(d, {MoveDesc::Redelegate, 0, 0, x, src, dst});
        }
      }
    }
  }

  const JointStrategy& J_;
  const Population& pop_;
  GameParams p_;
  DeviationGrid g_;
  NashOptions o_;
  int n_;
  RewardScheme rs_;
  std::vector<double> raw_;  // sum of all allocations per pool, active or not
  std::vector<PoolTerms> terms_;
  std::vector<Candidate> base_cands_;
  std::vector<double> margins_;

  int j_ = -1;
  std::vector<double> base_a_;
  std::vector<int> rank_;
  PoolTerms own_;
  bool have_config_ = false, cfg_active_ = false;
  double cfg_m_ = 0, cfg_lam_ = 0;
  double u0_ = 0;

  double best_gain_ = 0;
  bool found_ = false;
  Strategy best_;
  MoveDesc best_desc_;
  long evaluated_ = 0;
};

}  // namespace detail

// Searches every player's grid deviations; the witness is the best move of
// the lowest-id player that can improve by more than the tolerance.
inline Verdict verify_nash(const JointStrategy& J, const Population& pop, const GameParams& p,
                           const DeviationGrid& grid, const NashOptions& o = {}) {
  grid.validate();
  J.check(pop);
  detail::DeviationSearch search(J, pop, p, grid, o);
  Verdict v;
  for (int j = 0; j < J.size(); ++j) {
    if (auto w = search.best_for(j)) {
      v.equilibrium = false;
      v.witness = std::move(w);
      break;
    }
  }
  v.evaluated = search.evaluated();
  return v;
}

// Best deviation of a single player, if it beats the tolerance.
inline std::optional<Witness> best_deviation(int player, const JointStrategy& J,
                                             const Population& pop, const GameParams& p,
                                             const DeviationGrid& grid, const NashOptions& o = {}) {
  detail::DeviationSearch search(J, pop, p, grid, o);
  return search.best_for(player);
}

// ------------------------------------------------------------ fair scheme

struct FairVerdict {
  bool equilibrium = false;
  std::string clause;
  int player = -1;  // offending / leading player when relevant
};

// Equilibrium test for the fair scheme (R = 1, members and leaders paid
// pro rata, no margins).
inline FairVerdict fair_equilibrium_check(const JointStrategy& J, const Population& pop,
                                          const GameParams& p,
                                          SchemeKind scheme = SchemeKind::Fair) {
  if (scheme != SchemeKind::Fair)
    throw std::invalid_argument("fair_equilibrium_check: only defined for the fair scheme");
  if (p.R != 1.0) throw std::invalid_argument("fair_equilibrium_check: expects R = 1");
  const int n = J.size();
  std::vector<int> pools;
  for (int i = 0; i < n; ++i)
    if (J.active(i)) pools.push_back(i);
  if (pools.size() >= 2) return {false, "Thm 2 I", pools[1]};
  if (pools.empty()) {
    // nobody can profit by opening a pool alone (idle stake pointed at i counts)
    std::vector<double> stranded(n, 0.0);
    for (auto& s : J.strategies)
      for (auto [t, a] : s.alloc.entries()) stranded[t] += a;
    for (int i = 0; i < n; ++i)
      if (pop[i].stake + stranded[i] > pop[i].cost) return {false, "Thm 2 II (a)", i};
    return {true, "Thm 7", -1};
  }
  int i = pools[0];
  double ci = pop[i].cost;
  if (ci > 1) return {false, "Thm 2 II (i)", i};
  for (int j = 0; j < n; ++j)
    if (std::abs(J[j].alloc.get(i) - pop[j].stake) > kStakeSlack) return {false, "Thm 2 II (iii)", j};
  for (int j = 0; j < n; ++j)
    if (j != i && pop[j].stake * ci > pop[j].cost) return {false, "Thm 2 II (ii)", j};
  return {true, "Thm 2 II", i};
}

// -------------------------------------------- instance without equilibrium

struct NoEquilibriumInstance {
  std::vector<double> stakes;
  double c_min = 0, c_max = 0;
  double s_min = 0, f = 0;
  double lower = 0;   // max{r(s/f) - r(s)/f, 0}
  double y = 0;       // (r(s/f) - c_max)/(s/f)
  double r0 = 0;
  double c_star = 0;  // g(c_star) = y
  double g(double x) const { return (r_at_share - x) * static_cast<double>(stakes.size()); }
  double r_at_share = 0;  // r(1/n)
};

// Equal stakes 1/n and a cost range for which every configuration with fewer
// than n pools admits an improving move, given minimum delegation s/f.
inline NoEquilibriumInstance construct_no_equilibrium_instance(
    int n, double f, const std::function<double(double)>& r) {
  if (n < 2) throw std::invalid_argument("need n >= 2");
  if (!(f > 1)) throw std::invalid_argument("need f > 1");
  const int grid = 2000;
  for (int i = 1; i < grid; ++i) {
    double a = double(i) / grid, b = double(i + 1) / grid;
    if (!(r(b) > r(a)))
      throw ConstructionError("reward profile is not strictly increasing near sigma=" +
                              detail::fmt_num(a));
  }
  NoEquilibriumInstance I;
  I.f = f;
  I.stakes.assign(n, 1.0 / n);
  I.s_min = 1.0 / n;
  const double q = I.s_min / f;
  I.lower = std::max(r(q) - r(I.s_min) / f, 0.0);
  const double hi = r(q);
  double failing = -1;
  bool ok = false;
  for (double t = 0.5; t > 1e-9 && !ok; t /= 2) {
    double c = I.lower + t * (hi - I.lower);
    ok = true;
    double prev = (r(q) - c) / q;
    for (int i = 1; i <= grid; ++i) {
      double x = q + (1 - q) * i / grid;
      double v = (r(x) - c) / x;
      if (!(v < prev)) {
        ok = false;
        failing = x;
        break;
      }
      prev = v;
    }
    if (ok) I.c_max = c;
  }
  if (!ok)
    throw ConstructionError("(r(sigma)-c)/sigma is not strictly decreasing near sigma=" +
                            detail::fmt_num(failing));
  I.r_at_share = r(I.s_min);
  I.y = (r(q) - I.c_max) / q;
  // g is affine, so both intermediate-value points have closed forms
  I.c_star = I.r_at_share - I.y / n;
  I.r0 = 0.5 * (I.g(I.c_max) + I.y);
  I.c_min = I.r_at_share - I.r0 / n;
  if (!(I.lower < I.c_max && I.c_max < hi && I.c_star > 0 && I.c_star < I.c_min &&
        I.c_min < I.c_max && I.g(I.c_star) > I.r0 && I.r0 > I.g(I.c_max)))
    throw ConstructionError("inequality chain failed for the constructed instance");
  return I;
}

// ------------------------------------------------- incentive compatibility

struct IncentiveReport {
  double delta = 0;     // u(declared | true) - u(true | true)
  double truthful = 0;
  double declared = 0;  // utility under the lie, charged the true cost
  enum Kind { RankPreserving, ThresholdChanging, RankChanging } kind = RankPreserving;
  std::string note;
};

inline IncentiveReport incentive_compat_delta(const Population& pop, const GameParams& p,
                                              int player, double declared_cost) {
  if (player < 0 || player >= pop.size()) throw std::invalid_argument("unknown player");
  if (!(declared_cost >= 0)) throw std::invalid_argument("declared cost must be >= 0");
  Population lied = pop;
  lied.players[player].cost = declared_cost;

  auto truth = build_perfect(pop, p);
  auto fake = build_perfect(lied, p);
  IncentiveReport rep;
  rep.truthful = nm_utility(player, truth.joint, pop, p);
  double u = nm_utility(player, fake.joint, lied, p);
  // a leader is reimbursed the declared cost but pays the real one
  if (fake.joint.active(player)) u += declared_cost - pop[player].cost;
  rep.declared = u;
  rep.delta = rep.declared - rep.truthful;

  auto pos = [&](const std::vector<int>& ord) {
    return static_cast<int>(std::find(ord.begin(), ord.end(), player) - ord.begin());
  };
  int r0 = pos(truth.order), r1 = pos(fake.order);
  bool lead0 = r0 < p.k, lead1 = r1 < p.k;
  if (lead0 != lead1) {
    rep.kind = IncentiveReport::RankChanging;
    rep.note = "rank-changing declaration";
  } else if (truth.order[p.k] != fake.order[p.k] || truth.threshold != fake.threshold) {
    rep.kind = IncentiveReport::ThresholdChanging;
    rep.note = "threshold-changing declaration";
  }
  return rep;
}

}  // namespace rsslab
