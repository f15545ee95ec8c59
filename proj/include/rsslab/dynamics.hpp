#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "errors.hpp"
#include "population.hpp"
#include "rewards.hpp"
#include "rng.hpp"
#include "strategy.hpp"

namespace rsslab {

enum class SimMode { Sequential, Simultaneous };
enum class InitialState { Inactive, MaxDecentralized, NicelyDecentralized };

struct SimConfig {
  double utility_eps = 1e-8;
  double margin_precision = 1e-12;
  double margin_guard = 1e-9;      // viable margins stop this far short of the ranking edge
  double stake_resolution = 1e-8;  // delegation quantum, fraction of own stake
  int beam_width = 10;
  int beam_targets = 12;           // best-valued pools kept as beam targets
  SimMode mode = SimMode::Sequential;
  int batch_size = 5;
  int cooldown = 100;
  long max_steps = 100000;
  InitialState initial_state = InitialState::Inactive;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(utility_eps > 0)) throw ConfigError("utility_eps", "utility_eps must be > 0");
    if (!(margin_precision > 0)) throw ConfigError("margin_precision", "margin_precision must be > 0");
    if (!(margin_guard >= 0 && margin_guard < 1))
      throw ConfigError("margin_guard", "margin_guard must be in [0, 1)");
    if (!(stake_resolution > 0 && stake_resolution <= 1))
      throw ConfigError("stake_resolution", "stake_resolution must be in (0, 1]");
    if (beam_width < 1) throw ConfigError("beam_width", "beam_width must be >= 1");
    if (beam_targets < 1) throw ConfigError("beam_targets", "beam_targets must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size", "batch_size must be >= 1");
    if (cooldown < 0) throw ConfigError("cooldown", "cooldown must be >= 0");
    if (max_steps < 1) throw ConfigError("max_steps", "max_steps must be >= 1");
  }
};

struct Move {
  enum Kind { OpenPool, ChangeMargin, ClosePool, Redelegate };
  int player = -1;
  Kind kind = Redelegate;
  double margin = 0;
  double gain = 0;
  Strategy target;  // the mover's strategy after the move

  bool pool_move() const { return kind != Redelegate; }
  std::string describe() const {
    char b[64];
    switch (kind) {
      case OpenPool: std::snprintf(b, sizeof b, "open-pool(%.12g)", margin); return b;
      case ChangeMargin: std::snprintf(b, sizeof b, "change-margin(%.12g)", margin); return b;
      case ClosePool: return "close-pool";
      case Redelegate: return "re-delegate";
    }
    return "";
  }
};

struct PoolSnapshot {
  int leader = 0;
  double sigma = 0;
  double margin = 0;
};

struct StepRecord {
  long step = 0;
  std::vector<Move> moves;
  std::vector<int> changed;  // players whose allocation changed, ascending
  std::vector<Allocation> allocations;  // their allocations after the step
  std::vector<PoolSnapshot> pools;
};

struct SimTrace {
  JointStrategy initial;
  JointStrategy final_state;
  std::vector<StepRecord> steps;
  std::vector<std::pair<long, int>> pool_counts;  // (step, active pools), step 0 = start
  std::optional<long> equilibrium_step;
  long applied_moves = 0;
  bool converged() const { return equilibrium_step.has_value(); }
};

// ------------------------------------------------------------- evaluation

namespace detail {

// Everything about one state that move evaluation needs, computed once.
class SimContext {
 public:
  SimContext(const JointStrategy& J, const Population& pop, const GameParams& p,
             const RewardScheme& rs)
      : J_(J), pop_(pop), p_(p), rs_(rs), n_(J.size()) {
    nm_ = rs.kind == SchemeKind::CapMargin;
    sigma_ = J.pool_stakes();
    terms_.resize(n_);
    for (int t = 0; t < n_; ++t) terms_[t] = pool_terms(J, pop, t);
    RankingOptions o;
    o.mode = RankingMode::TwoStage;
    table_ = rank_pools(J, pop, p, o);
    util_.resize(n_);
    for (int i = 0; i < n_; ++i)
      util_[i] = nm_ ? nm_utility(i, J, table_, pop, p) : myopic_utility(i, J, pop, rs, sigma_);
    if (nm_) build_competitors();
  }

  const JointStrategy& joint() const { return J_; }
  const Population& pop() const { return pop_; }
  const GameParams& params() const { return p_; }
  const RewardScheme& scheme() const { return rs_; }
  bool non_myopic() const { return nm_; }
  int size() const { return n_; }
  double sigma(int t) const { return sigma_[t]; }
  const PoolTerms& terms(int t) const { return terms_[t]; }
  bool top_k(int t) const { return table_.top_k(t); }
  double current_utility(int i) const { return util_[i]; }
  const std::vector<std::optional<double>>& competitor_margins() const { return comp_margin_; }

  // Competitor entries other than `actor`: leaders at their margin,
  // everybody else at the margin that would make leading worth it.
  bool viable(int actor, double m) const {
    if (!nm_) return false;  // no desirability ranking without margins
    const double P = potential_profit(pop_[actor].stake, pop_[actor].cost, p_);
    const double D = P <= 0 ? 0.0 : (1 - m) * P;
    if (!(D > 0)) return false;
    // rank of (actor, D, P) in the competitor list ordered as rank_candidates
    // would: desirability, chains within the tolerance ordered by the tie rule
    const double tol = RankingOptions{}.tie_tolerance;
    const auto& c = comp_;  // desirability descending
    const int n = static_cast<int>(c.size());
    int pos = static_cast<int>(
        std::lower_bound(c.begin(), c.end(), D,
                         [](const Candidate& x, double d) { return x.desirability > d; }) -
        c.begin());
    auto prev = [&](int i) {  // previous index skipping the actor
      for (--i; i >= 0 && c[i].id == actor; --i) {}
      return i;
    };
    auto next = [&](int i) {
      for (++i; i < n && c[i].id == actor; ++i) {}
      return i;
    };
    int lo = pos, hi = pos;  // chain is [lo, hi)
    if (lo < n && c[lo].id == actor) lo = hi = next(lo - 1);
    double top = D;
    for (int i = prev(lo); i >= 0 && c[i].desirability - top <= tol; i = prev(i)) {
      lo = i;
      top = c[i].desirability;
    }
    double bot = D;
    int i = hi < n && c[hi].id == actor ? next(hi) : hi;
    for (; i < n && bot - c[i].desirability <= tol; i = next(i)) bot = c[i].desirability;
    hi = i;
    int above = lo - (own_index_[actor] >= 0 && own_index_[actor] < lo ? 1 : 0);
    for (int j = lo; j < hi; ++j) {
      if (c[j].id == actor) continue;
      if (c[j].potential > P || (c[j].potential == P && c[j].id < actor)) ++above;
    }
    return above < p_.k;
  }

  // Highest margin keeping the actor in the top k, less `guard` so that a
  // rounding-level drift of the competitors does not tip it out again.
  std::optional<double> viable_margin(int actor, double precision, double guard = 0) const {
    if (!viable(actor, 0.0)) return std::nullopt;
    double lo = 0, hi = 1;
    while (hi - lo > precision) {
      double mid = 0.5 * (lo + hi);
      (viable(actor, mid) ? lo : hi) = mid;
    }
    return std::max(0.0, lo - guard);
  }

  // Anticipated leader value of `actor` running its pool at margin m with
  // its whole stake pledged and pool stake sigma.
  double leader_value(int actor, double m, double sigma) const {
    PoolTerms t{true, m, pop_[actor].stake, pop_[actor].cost};
    if (!nm_) return myopic_leader_value(sigma, t, rs_);
    return nm_leader_value(sigma, t, viable(actor, m), p_);
  }

  // Value of holding `a` in pool t, the actor's own current holding there
  // replaced by a.
  double member_value(int actor, int t, double a) const {
    if (a <= 0 || !terms_[t].active) return 0;
    double sig = sigma_[t] - J_[actor].alloc.get(t) + a;
    if (nm_) return nm_member_value(a, sig, terms_[t], table_.top_k(t), p_);
    return myopic_member_value(a, sig, terms_[t], rs_);
  }

  // Utility the mover compares against: leaders are valued by anticipation.
  double mover_utility(int actor) const {
    if (!J_.active(actor)) return util_[actor];
    double u = leader_value(actor, J_[actor].margin, sigma_[actor]);
    for (auto [t, a] : J_[actor].alloc.entries())
      if (t != actor) u += member_value(actor, t, a);
    return u;
  }

 private:
  // Margin at which b would rather lead a saturated pool than keep utility u.
  std::optional<double> entry_margin(int b, double u) const {
    const double s = pop_[b].stake;
    const double sig = std::max(s, p_.beta());
    const double g = reward(sig, s, p_) - pop_[b].cost;
    if (!(g > 0)) return std::nullopt;
    const double q = s / sig;
    double m = q < 1 ? (u - g * q) / (g * (1 - q)) : 0.0;
    return std::clamp(m, 0.0, std::nextafter(1.0, 0.0));
  }

  // Every other player is listed at the most desirable pool it would still
  // rather run than not: entrants against their current utility, leaders
  // against their best alternative (a one-man pool, or delegating to the
  // best other pool).
  void build_competitors() {
    comp_margin_.assign(n_, std::nullopt);
    int best = -1, second = -1;
    std::vector<double> D(n_, 0);
    for (int j = 0; j < n_; ++j) {
      if (!J_.active(j)) continue;
      D[j] = desirability(J_[j].margin, J_[j].pledge, pop_[j].cost, p_);
      if (best < 0 || D[j] > D[best]) {
        second = best;
        best = j;
      } else if (second < 0 || D[j] > D[second]) {
        second = j;
      }
    }
    for (int b = 0; b < n_; ++b) {
      const double s = pop_[b].stake, c = pop_[b].cost;
      double u = util_[b];
      if (J_.active(b)) {
        int other = b == best ? second : best;
        double delegate = other < 0 ? 0.0 : std::min(1.0, s / p_.beta()) * D[other];
        u = std::max(reward(s, s, p_) - c, delegate);
      }
      auto m = entry_margin(b, u);
      if (!m) continue;
      comp_margin_[b] = m;
      comp_.push_back({b, desirability(*m, s, c, p_), potential_profit(s, c, p_)});
    }
    std::stable_sort(comp_.begin(), comp_.end(), [](const Candidate& x, const Candidate& y) {
      return x.desirability > y.desirability;
    });
    own_index_.assign(n_, -1);
    for (int j = 0; j < static_cast<int>(comp_.size()); ++j) own_index_[comp_[j].id] = j;
  }

  const JointStrategy& J_;
  const Population& pop_;
  GameParams p_;
  RewardScheme rs_;
  int n_;
  bool nm_ = true;
  std::vector<double> sigma_;
  std::vector<PoolTerms> terms_;
  RankingTable table_;
  std::vector<double> util_;
  std::vector<Candidate> comp_;
  std::vector<int> own_index_;
  std::vector<std::optional<double>> comp_margin_;
};

// Beam search over allocations in integer quanta of the actor's stake.
inline Allocation beam_delegation(const SimContext& ctx, int actor, const SimConfig& cfg) {
  const double s = ctx.pop()[actor].stake;
  const auto& cur = ctx.joint()[actor].alloc;
  const long long N = std::max(1LL, std::llround(1.0 / cfg.stake_resolution));
  const double unit = s / static_cast<double>(N);

  // candidate pools: those already held plus the best first-quantum values
  std::vector<int> pools;
  std::vector<std::pair<double, int>> rated;
  for (int t = 0; t < ctx.size(); ++t) {
    if (t == actor || !ctx.terms(t).active) continue;
    if (cur.get(t) > 0) {
      pools.push_back(t);
      continue;
    }
    double v = ctx.member_value(actor, t, unit);
    if (v > 0) rated.push_back({v, t});
  }
  std::stable_sort(rated.begin(), rated.end(),
                   [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; i < rated.size() && static_cast<int>(i) < cfg.beam_targets; ++i)
    pools.push_back(rated[i].second);
  std::sort(pools.begin(), pools.end());
  const int T = static_cast<int>(pools.size());

  auto value = [&](int slot, long long c) {
    return slot == T || c == 0 ? 0.0 : ctx.member_value(actor, pools[slot], c * unit);
  };
  struct State {
    std::vector<long long> c;  // per pool, idle last
    double u = 0;
  };
  State start;
  start.c.assign(T + 1, 0);
  long long used = 0;
  for (int i = 0; i < T; ++i) {
    long long q = std::llround(cur.get(pools[i]) / unit);
    q = std::min(q, N - used);
    start.c[i] = q;
    used += q;
  }
  start.c[T] = N - used;
  for (int i = 0; i < T; ++i) start.u += value(i, start.c[i]);

  std::vector<State> beam{start};
  State best = start;
  struct Step {
    int parent, from, to;
    double u;
  };
  std::vector<double> v0, vm, vp;
  std::vector<Step> cand;
  for (long long q = std::max(1LL, N / 2);; q /= 2) {
    for (int guard = 0; guard < 10000; ++guard) {
      cand.clear();
      for (int k = 0; k < static_cast<int>(beam.size()); ++k) {
        const auto& st = beam[k];
        cand.push_back({k, -1, -1, st.u});
        v0.assign(T + 1, 0);
        vm.assign(T + 1, 0);
        vp.assign(T + 1, 0);
        for (int x = 0; x <= T; ++x) {
          v0[x] = value(x, st.c[x]);
          vp[x] = value(x, st.c[x] + q);
          if (st.c[x] >= q) vm[x] = value(x, st.c[x] - q);
        }
        for (int x = 0; x <= T; ++x) {
          if (st.c[x] < q) continue;
          for (int y = 0; y <= T; ++y)
            if (y != x) cand.push_back({k, x, y, st.u - v0[x] + vm[x] - v0[y] + vp[y]});
        }
      }
      // a few spares so duplicates do not starve the beam
      auto keep = cand.begin() + std::min<std::size_t>(cand.size(), 4 * cfg.beam_width);
      std::partial_sort(cand.begin(), keep, cand.end(), [](const Step& x, const Step& y) {
        if (x.u != y.u) return x.u > y.u;
        return std::tie(x.parent, x.from, x.to) < std::tie(y.parent, y.from, y.to);
      });
      cand.erase(keep, cand.end());
      std::vector<State> next;
      for (auto& m : cand) {
        if (static_cast<int>(next.size()) >= cfg.beam_width) break;
        State st = beam[m.parent];
        if (m.from >= 0) {
          st.c[m.from] -= q;
          st.c[m.to] += q;
          st.u = m.u;
        }
        bool dup = false;
        for (auto& o : next) dup = dup || o.c == st.c;
        if (!dup) next.push_back(std::move(st));
      }
      beam = std::move(next);
      // incremental sums drift by rounding; demand more than that
      double exact = 0;
      for (int x = 0; x < T; ++x) exact += value(x, beam.front().c[x]);
      beam.front().u = exact;
      const double noise = 1e-13 * (std::abs(best.u) + s);
      if (!(exact > best.u + noise)) break;
      best = beam.front();
    }
    if (q == 1) break;
  }

  double u_cur = 0;
  for (auto [t, a] : cur.entries())
    if (t != actor) u_cur += ctx.member_value(actor, t, a);
  if (!(best.u > u_cur)) return cur;
  Allocation out;
  for (int i = 0; i < T; ++i)
    if (best.c[i] > 0) out.set(pools[i], best.c[i] * unit);
  return out;
}

inline JointStrategy with_pool_closed(JointStrategy J, int leader) {
  for (int i = 0; i < J.size(); ++i) J[i].alloc.set(leader, 0);
  return J;
}

}  // namespace detail

// ----------------------------------------------------------- public surface

// Per player: the margin each potential competitor is assumed to run at,
// nullopt when it has no profitable pool. The actor's own entry is nullopt.
inline std::vector<std::optional<double>> hypothetical_competitor_margins(
    int actor, const JointStrategy& J, const Population& pop, const GameParams& p) {
  detail::SimContext ctx(J, pop, p, RewardScheme{SchemeKind::CapMargin, p});
  auto m = ctx.competitor_margins();
  m[actor] = std::nullopt;
  return m;
}

// Single-competitor form of the margin rule: u current utility, r the reward
// of the prospective pool, c its cost, q = s / max(s, beta).
inline std::optional<double> competitor_margin(double u, double r, double c, double q) {
  if (!(r > c)) return std::nullopt;
  if (q >= 1) return 0.0;
  double m = (u - (r - c) * q) / ((r - c) * (1 - q));
  return std::clamp(m, 0.0, std::nextafter(1.0, 0.0));
}

inline std::optional<double> viable_pool_margin(int actor, const JointStrategy& J,
                                                const Population& pop, const GameParams& p,
                                                const SimConfig& cfg = {}) {
  detail::SimContext ctx(J, pop, p, RewardScheme{SchemeKind::CapMargin, p});
  return ctx.viable_margin(actor, cfg.margin_precision, cfg.margin_guard);
}

inline Allocation best_delegation(int actor, const JointStrategy& J, const Population& pop,
                                  const GameParams& p, const RewardScheme& rs,
                                  const SimConfig& cfg = {}) {
  detail::SimContext ctx(J, pop, p, rs);
  return detail::beam_delegation(ctx, actor, cfg);
}

namespace detail {

inline std::optional<Move> next_move(const SimContext& ctx, int actor, const SimConfig& cfg,
                                     bool pool_moves_allowed = true) {
  const auto& J = ctx.joint();
  const auto& pop = ctx.pop();
  const double s = pop[actor].stake;
  const double u0 = ctx.mover_utility(actor);
  std::optional<Move> best;
  auto offer = [&](Move mv, double u) {
    mv.player = actor;
    mv.gain = u - u0;
    if (mv.gain > cfg.utility_eps && (!best || mv.gain > best->gain)) best = std::move(mv);
  };
  const bool leads = J.active(actor);
  std::vector<double> margins;
  std::optional<double> vm;
  if (ctx.non_myopic()) {
    // viable first: on equal value the pool that competes is preferred
    vm = ctx.viable_margin(actor, cfg.margin_precision, cfg.margin_guard);
    if (vm) margins.push_back(*vm);
    // a self-saturating pool pays its leader alike at any margin; it only
    // falls back to margin 1 when it cannot compete
    if (!vm || s < ctx.params().beta()) margins.push_back(1.0);
  } else {
    margins.push_back(0.0);  // the fair scheme has no margins
  }

  if (pool_moves_allowed) {
    if (leads) {
      for (double m : margins) {
        if (m == J[actor].margin) continue;
        Move mv;
        mv.kind = Move::ChangeMargin;
        mv.margin = m;
        mv.target = J[actor];
        mv.target.margin = m;
        offer(mv, ctx.leader_value(actor, m, ctx.sigma(actor)));
      }
      // A pool saturated by its own pledge pays its leader the same at any
      // margin; such a leader keeps its margin at the competitive level.
      if (!best && vm && J[actor].pledge >= ctx.params().beta() &&
          !ctx.viable(actor, J[actor].margin)) {
        Move mv;
        mv.player = actor;
        mv.kind = Move::ChangeMargin;
        mv.margin = *vm;
        mv.target = J[actor];
        mv.target.margin = *vm;
        best = mv;
      }
      // close, then delegate in the state without the pool
      auto closed = with_pool_closed(J, actor);
      SimContext after(closed, pop, ctx.params(), ctx.scheme());
      Move mv;
      mv.kind = Move::ClosePool;
      mv.target = closed[actor];
      mv.target.alloc = beam_delegation(after, actor, cfg);
      double u = 0;
      for (auto [t, a] : mv.target.alloc.entries()) u += after.member_value(actor, t, a);
      offer(mv, u);
    } else if (potential_profit(s, pop[actor].cost, ctx.params()) > 0 || !ctx.non_myopic()) {
      for (double m : margins) {
        Move mv;
        mv.kind = Move::OpenPool;
        mv.margin = m;
        mv.target.margin = m;
        mv.target.pledge = s;
        mv.target.alloc.set(actor, s);
        offer(mv, ctx.leader_value(actor, m, ctx.sigma(actor) + s));
      }
    }
  }
  if (!leads) {
    Move mv;
    mv.kind = Move::Redelegate;
    mv.target = J[actor];
    mv.target.alloc = beam_delegation(ctx, actor, cfg);
    double u = 0;
    for (auto [t, a] : mv.target.alloc.entries()) u += ctx.member_value(actor, t, a);
    offer(mv, u);
  }
  return best;
}

inline bool move_still_valid(const JointStrategy& J, const Move& mv) {
  const bool leads = J.active(mv.player);
  switch (mv.kind) {
    case Move::OpenPool: if (leads) return false; break;
    case Move::ChangeMargin:
    case Move::ClosePool: if (!leads) return false; break;
    case Move::Redelegate: if (leads) return false; break;
  }
  for (auto [t, a] : mv.target.alloc.entries())
    if (t != mv.player && !J.active(t)) return false;
  return true;
}

// Applies a move; returns the players whose allocation changed.
inline std::vector<int> apply_move(JointStrategy& J, const Move& mv) {
  std::vector<int> changed;
  if (mv.kind == Move::ClosePool)
    for (int i = 0; i < J.size(); ++i)
      if (i != mv.player && J[i].alloc.get(mv.player) > 0) {
        J[i].alloc.set(mv.player, 0);
        changed.push_back(i);
      }
  if (!(J[mv.player].alloc == mv.target.alloc)) changed.push_back(mv.player);
  J[mv.player] = mv.target;
  std::sort(changed.begin(), changed.end());
  return changed;
}

// Whether a move planned on an earlier state still pays in J.
inline bool still_improves(const JointStrategy& J, const Move& mv, const Population& pop,
                           const GameParams& p, const RewardScheme& rs, const SimConfig& cfg) {
  SimContext before(J, pop, p, rs);
  JointStrategy K = J;
  apply_move(K, mv);
  SimContext after(K, pop, p, rs);
  return after.mover_utility(mv.player) - before.mover_utility(mv.player) > cfg.utility_eps;
}

inline std::vector<PoolSnapshot> snapshot(const JointStrategy& J) {
  std::vector<PoolSnapshot> out;
  auto sigma = J.pool_stakes();
  for (int j = 0; j < J.size(); ++j)
    if (J.active(j)) out.push_back({j, sigma[j], J[j].margin});
  return out;
}

}  // namespace detail

inline std::optional<Move> next_move(int actor, const JointStrategy& J, const Population& pop,
                                     const GameParams& p, const RewardScheme& rs,
                                     const SimConfig& cfg = {}) {
  detail::SimContext ctx(J, pop, p, rs);
  return detail::next_move(ctx, actor, cfg);
}

// Starting profile for a run.
inline JointStrategy initial_joint(const Population& pop, const GameParams& p, InitialState init) {
  const int n = pop.size();
  auto J = JointStrategy::passive(n);
  for (int i = 0; i < n; ++i) J[i].pledge = pop[i].stake;
  if (init == InitialState::MaxDecentralized) {
    for (int i = 0; i < n; ++i)
      if (pop[i].cost < pop[i].stake) J[i].alloc.set(i, pop[i].stake);
  } else if (init == InitialState::NicelyDecentralized) {
    auto ord = order_by_potential(pop, p);
    const int k = std::min(p.k, n);
    for (int r = 0; r < k; ++r) J[ord[r]].alloc.set(ord[r], pop[ord[r]].stake);
    // equal sizes: pour members into the pools in turn up to 1/k each
    int cur = 0;
    double room = 1.0 / k - pop[ord[0]].stake;
    for (int r = k; r < n; ++r) {
      int i = ord[r];
      double left = pop[i].stake;
      while (left > 1e-15) {
        if (cur == k - 1) {
          J[i].alloc.add(ord[cur], left);
          break;
        }
        double x = std::min(left, room);
        if (x > 0) J[i].alloc.add(ord[cur], x);
        left -= x;
        room -= x;
        if (room <= 1e-15) {
          ++cur;
          room = 1.0 / k - pop[ord[cur]].stake;
        }
      }
    }
  }
  return J;
}

inline SimTrace run(const Population& pop, const GameParams& p, const RewardScheme& rs,
                    const SimConfig& cfg) {
  cfg.validate();
  const int n = pop.size();
  SimTrace tr;
  JointStrategy J = initial_joint(pop, p, cfg.initial_state);
  tr.initial = J;
  tr.pool_counts.push_back({0, static_cast<int>(detail::snapshot(J).size())});
  Rng scan(cfg.seed, kScanStream);
  std::vector<long> blocked_until(n, 0);  // pool moves allowed from this step on

  auto record = [&](long step, std::vector<Move> moves, std::vector<int> changed) {
    std::sort(changed.begin(), changed.end());
    changed.erase(std::unique(changed.begin(), changed.end()), changed.end());
    StepRecord rec;
    rec.step = step;
    rec.moves = std::move(moves);
    rec.changed = changed;
    for (int i : changed) rec.allocations.push_back(J[i].alloc);
    rec.pools = detail::snapshot(J);
    tr.pool_counts.push_back({step, static_cast<int>(rec.pools.size())});
    tr.steps.push_back(std::move(rec));
  };

  for (long step = 1; step <= cfg.max_steps; ++step) {
    detail::SimContext ctx(J, pop, p, rs);
    auto order = scan.permutation(n);
    if (cfg.mode == SimMode::Sequential) {
      std::optional<Move> mv;
      for (int i : order)
        if ((mv = detail::next_move(ctx, i, cfg))) break;
      if (!mv) {
        tr.equilibrium_step = step - 1;
        break;
      }
      auto changed = detail::apply_move(J, *mv);
      ++tr.applied_moves;
      record(step, {*mv}, changed);
    } else {
      std::vector<Move> batch;
      bool waiting = false;
      for (int i : order) {
        bool allowed = blocked_until[i] <= step;
        if (!allowed) waiting = true;
        if (auto mv = detail::next_move(ctx, i, cfg, allowed)) {
          batch.push_back(*mv);
          if (static_cast<int>(batch.size()) >= cfg.batch_size) break;
        }
      }
      if (batch.empty()) {
        if (!waiting) {
          tr.equilibrium_step = step - 1;
          break;
        }
        // idle until the next waiting period ends
        long next = cfg.max_steps + 1;
        for (long b : blocked_until)
          if (b > step) next = std::min(next, b);
        step = next - 1;
        continue;
      }
      std::vector<Move> applied;
      std::vector<int> changed;
      for (auto& mv : batch) {
        if (!detail::move_still_valid(J, mv)) continue;
        if (!applied.empty() && mv.kind == Move::Redelegate &&
            !detail::still_improves(J, mv, pop, p, rs, cfg))
          continue;
        auto c = detail::apply_move(J, mv);
        changed.insert(changed.end(), c.begin(), c.end());
        if (mv.pool_move()) blocked_until[mv.player] = step + cfg.cooldown + 1;
        applied.push_back(mv);
        ++tr.applied_moves;
      }
      record(step, std::move(applied), std::move(changed));
    }
  }
  tr.final_state = J;
  return tr;
}

}  // namespace rsslab
