#pragma once
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dynamics.hpp"
#include "equilibrium.hpp"
#include "io.hpp"
#include "population.hpp"
#include "sybil.hpp"
#include "two_stage.hpp"

namespace rsslab::cli {

enum Exit { kOk = 0, kCounterexample = 1, kUsage = 2 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

namespace detail {

// Config with flag and environment overrides; RSS_LAB_SEED beats --seed.
inline RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? parse_config("{}") : load_config(o.config);
  if (o.seed) c.sim.seed = *o.seed;
  if (const char* env = std::getenv("RSS_LAB_SEED"); env && *env) {
    std::string s(env);
    if (s.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("RSS_LAB_SEED", "RSS_LAB_SEED must be a non-negative integer");
    c.sim.seed = std::stoull(s);
  }
  if (!o.out.empty()) c.out = o.out;
  return c;
}

inline Population sample(const RunConfig& c) {
  return init_population(c.game.n, c.tail, c.cost_min, c.cost_max, c.seed(), c.game);
}

inline DeviationGrid grid(const RunConfig& c) {
  DeviationGrid g;
  g.margin_step = c.verify.margin_step;
  g.stake_step = c.verify.stake_step;
  return g;
}

inline int simulate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  auto pop = sample(c);
  RewardScheme rs{c.scheme, c.game};
  auto tr = run(pop, c.game, rs, c.sim);
  std::filesystem::path dir(c.out);
  write_atomic(dir / "dynamics.csv", dynamics_csv(tr, pop));
  write_atomic(dir / "pools.csv", pools_csv(tr));
  json summary = {{"converged", tr.converged()},
                  {"equilibrium_step", tr.equilibrium_step ? json(*tr.equilibrium_step) : json(nullptr)},
                  {"moves", tr.applied_moves},
                  {"pools", tr.pool_counts.back().second}};
  out << summary.dump() << "\n";
  if (!tr.converged()) {
    err << "no equilibrium within " << c.sim.max_steps << " steps; equilibrium.csv not written\n";
    return kCounterexample;
  }
  write_atomic(dir / "equilibrium.csv", emit_equilibrium_table(tr, pop, c.game));
  return kOk;
}

inline int verify_perfect(const RunConfig& c, std::ostream& out) {
  auto pop = sample(c);
  auto ps = build_perfect(pop, c.game);
  NashOptions o;
  o.tolerance = c.verify.tolerance;
  auto v = verify_nash(ps.joint, pop, c.game, grid(c), o);
  out << to_json(v).dump() << "\n";
  return v.equilibrium ? kOk : kCounterexample;
}

// Runs the fair-scheme dynamics and checks the end state.
inline int verify_fair(RunConfig c, std::ostream& out) {
  c.scheme = SchemeKind::Fair;
  auto pop = sample(c);
  auto tr = run(pop, c.game, RewardScheme{SchemeKind::Fair, c.game}, c.sim);
  auto fv = fair_equilibrium_check(tr.final_state, pop, c.game);
  json j = {{"equilibrium", tr.converged() && fv.equilibrium},
            {"clause", fv.clause},
            {"player", fv.player >= 0 ? json(fv.player) : json(nullptr)},
            {"pools", tr.pool_counts.back().second},
            {"moves", tr.applied_moves}};
  out << j.dump() << "\n";
  return tr.converged() && fv.equilibrium ? kOk : kCounterexample;
}

inline int two_stage(const RunConfig& c, std::ostream& out) {
  auto pop = sample(c);
  const auto& p = c.game;
  auto ord = order_by_potential(pop, p);
  if (pop.size() < p.k + 2) throw ConstructionError("two-stage game needs n >= k + 2");
  std::vector<double> P(pop.size());
  for (int i = 0; i < pop.size(); ++i) P[i] = player_potential(pop[i], p);
  double cap = std::min({P[ord[p.k - 1]] - P[ord[p.k]], P[ord[p.k]], P[ord[p.k]] - P[ord[p.k + 1]]});
  double lo = pop[ord[p.k]].stake / p.beta();
  double eps = c.two_stage.epsilon_prime.value_or(cap / 2);
  double tie = c.two_stage.alpha_tie.value_or((lo + 1) / 2);
  auto ts = TwoStageParams::make(pop, p, eps, tie);
  AuditOptions ao;
  ao.seed = c.seed();
  auto rep = two_stage_audit(pop, p, ts, grid(c), ao);
  json j = {{"ok", rep.ok()},
            {"epsilon_prime", ts.epsilon_prime},
            {"alpha_tie", ts.alpha_tie},
            {"conforming", {{"checked", rep.conforming_checked}, {"passed", rep.conforming_passed}}},
            {"nonconforming",
             {{"checked", rep.nonconforming_checked}, {"refuted", rep.nonconforming_refuted}}},
            {"outer",
             {{"checked", rep.outer_checked},
              {"violations", rep.outer_violations},
              {"max_excess", std::isfinite(rep.max_outer_excess) ? json(rep.max_outer_excess)
                                                                 : json(nullptr)}}},
            {"counterexamples", rep.counterexamples}};
  out << j.dump() << "\n";
  return rep.ok() ? kOk : kCounterexample;
}

inline int sybil(const RunConfig& c, const std::string& what, std::ostream& out) {
  const auto& p = c.game;
  const auto& sc = c.sybil;
  json j = {{"scenario", rsslab::detail::sybil_name(sc.scenario)},
            {"min_stake", nullptr},
            {"delta", nullptr},
            {"mu", nullptr},
            {"bound", nullptr},
            {"empirical", nullptr},
            {"stderr", nullptr}};
  SybilScenario s;
  s.kind = sc.scenario;
  s.t = sc.t.value_or(p.k / 2);
  s.agent_stake = sc.agent_stake;
  s.agent_cost = sc.agent_cost;
  s.rest_profile = sc.rest;
  if (s.rest_profile.empty())
    for (auto& pl : sample(c).players) s.rest_profile.push_back({pl.stake, pl.cost});
  j["min_stake"] = min_stake_bound(s, p);

  WhaleQuery q;
  q.tail = ParetoTail{sc.whale.shape, sc.whale.theta, sc.whale.T, sc.whale.agents};
  q.k = sc.whale.k;
  auto dm = whale_delta_mu(q);
  auto tb = whale_tail_bound(dm.delta, dm.mu);
  j["delta"] = dm.delta;
  j["mu"] = dm.mu;
  j["bound"] = tb.bound;
  if (what == "prob") {
    auto mc = mc_domination_probability(q.tail, static_cast<int>(q.k), sc.trials, c.seed());
    j["empirical"] = mc.probability;
    j["stderr"] = mc.std_error;
  }
  out << j.dump() << "\n";
  return kOk;
}

inline int sample_cmd(const RunConfig& c, std::ostream& out) {
  auto path = std::filesystem::path(c.out) / "population.csv";
  write_atomic(path, population_to_csv(sample(c)));
  out << path.string() << "\n";
  return kOk;
}

}  // namespace detail

// Parses argv and runs one subcommand. Exit status: 0 success,
// 1 counterexample or non-converged run, 2 usage or input error.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Reward-sharing-scheme lab: dynamics, equilibrium checks and Sybil bounds",
               "rss_lab"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  std::string sybil_what;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "run seed (RSS_LAB_SEED overrides)");
    sub->add_option("--out", o.out, "output directory");
  };
  auto* sim = app.add_subcommand("simulate", "run the dynamics; write dynamics.csv, pools.csv, equilibrium.csv");
  auto* vp = app.add_subcommand("verify-perfect", "grid-check the perfect strategy of a sampled instance");
  auto* vf = app.add_subcommand("verify-fair", "run the fair-scheme dynamics and check the end state");
  auto* ts = app.add_subcommand("two-stage", "audit the two-stage game on a sampled instance");
  auto* sy = app.add_subcommand("sybil", "Sybil stake bound and whale tail bound");
  auto* sa = app.add_subcommand("sample", "write the sampled population to population.csv");
  for (auto* s : {sim, vp, vf, ts, sy, sa}) common(s);
  sy->add_option("what", sybil_what, "bound | prob")
      ->required()
      ->check(CLI::IsMember({"bound", "prob"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }
  for (auto* s : {sim, vp, vf, ts, sy, sa})
    if (s->count("--seed")) o.seed = seed;

  try {
    auto c = detail::resolve(o);
    if (*sim) return detail::simulate(c, out, err);
    if (*vp) return detail::verify_perfect(c, out);
    if (*vf) return detail::verify_fair(c, out);
    if (*ts) return detail::two_stage(c, out);
    if (*sy) return detail::sybil(c, sybil_what, out);
    if (*sa) return detail::sample_cmd(c, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace rsslab::cli
