#pragma once
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "dynamics.hpp"
#include "equilibrium.hpp"
#include "errors.hpp"
#include "params.hpp"
#include "pareto.hpp"
#include "population.hpp"
#include "strategy.hpp"
#include "sybil.hpp"

namespace rsslab {

using json = nlohmann::json;

// ------------------------------------------------------------------ config

struct VerifyConfig {
  double margin_step = 0.01;
  double stake_step = 1e-3;
  double tolerance = 1e-9;
};

struct TwoStageConfig {
  std::optional<double> epsilon_prime;  // default: half the admissible cap
  std::optional<double> alpha_tie;      // default: middle of the admissible range
};

struct WhaleConfig {
  double shape = 1.0;
  double theta = 1.0;
  double T = 1e5;
  long agents = 150001;
  double k = 100;
};

struct SybilConfig {
  SybilKind scenario = SybilKind::NonMaximizer;
  std::optional<int> t;  // default k/2
  double agent_stake = 0;
  double agent_cost = 0;
  std::vector<StakeCost> rest;  // empty: the sampled population
  WhaleConfig whale;
  long trials = 500;
};

struct RunConfig {
  GameParams game;
  ParetoTail tail;
  double cost_min = 0.001;
  double cost_max = 0.002;
  SchemeKind scheme = SchemeKind::CapMargin;
  SimConfig sim;
  VerifyConfig verify;
  TwoStageConfig two_stage;
  SybilConfig sybil;
  std::string out = ".";

  std::uint64_t seed() const { return sim.seed; }
  void validate() const;
};

namespace detail {

inline const char* scheme_name(SchemeKind s) { return s == SchemeKind::Fair ? "fair" : "cap-margin"; }
inline const char* mode_name(SimMode m) {
  return m == SimMode::Sequential ? "sequential" : "simultaneous";
}
inline const char* init_name(InitialState s) {
  switch (s) {
    case InitialState::Inactive: return "inactive";
    case InitialState::MaxDecentralized: return "max-decentralized";
    case InitialState::NicelyDecentralized: return "nicely-decentralized";
  }
  return "";
}
inline const char* sybil_name(SybilKind k) {
  return k == SybilKind::Maximizer ? "maximizer" : "non-maximizer";
}

// Reads an object's keys into typed fields; anything left over is unknown.
class Reader {
 public:
  Reader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(path(""), name("") + " must be an object");
  }
  ~Reader() = default;

  template <class T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(path(key), path(key) + " must be a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned())
        throw ConfigError(path(key), path(key) + " must be a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError(path(key), path(key) + " must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(path(key), path(key) + " must be a number");
    } else {
      if (!it->is_string()) throw ConfigError(path(key), path(key) + " must be a string");
    }
    out = it->get<T>();
  }
  template <class T>
  void get(const char* key, std::optional<T>& out) {
    auto it = j_.find(key);
    if (it != j_.end() && it->is_null()) {
      seen_.push_back(key);
      out.reset();
      return;
    }
    if (it == j_.end()) {
      seen_.push_back(key);
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }
  // enum given by its name
  template <class E, std::size_t N>
  void choice(const char* key, E& out, const std::pair<const char*, E> (&names)[N]) {
    std::string s;
    get(key, s);
    if (j_.find(key) == j_.end()) return;
    for (auto& [n, e] : names)
      if (s == n) {
        out = e;
        return;
      }
    std::string allowed;
    for (auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
    throw ConfigError(path(key), path(key) + " must be one of: " + allowed);
  }
  const json* sub(const char* key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError(path(it.key()), "unknown config key '" + path(it.key()) + "'");
  }
  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  std::string name(const std::string& key) const {
    auto p = path(key);
    return p.empty() ? "config" : p;
  }
  const json& j_;
  std::string prefix_;
  std::vector<std::string> seen_;
};

inline void require(bool ok, const char* key, const std::string& msg) {
  if (!ok) throw ConfigError(key, msg);
}

}  // namespace detail

inline void RunConfig::validate() const {
  using detail::require;
  require(game.k >= 1, "k", "k must be ≥ 1");
  require(game.n >= 2, "n", "n must be ≥ 2");
  require(game.k < game.n, "k", "k must be < n");
  require(game.R > 0, "R", "R must be > 0");
  require(game.alpha >= 0, "alpha", "alpha must be ≥ 0");
  require(tail.shape > 0, "shape", "shape must be > 0");
  require(tail.theta > 0, "theta", "theta must be > 0");
  require(tail.T >= tail.theta, "T", "T must be ≥ theta");
  require(cost_min > 0, "cost_min", "cost_min must be > 0");
  require(cost_max > cost_min, "cost_max", "cost_max must be > cost_min");
  require(cost_max < game.R, "cost_max", "cost_max must be < R");
  sim.validate();
  require(verify.margin_step > 0, "verify.margin_step", "verify.margin_step must be > 0");
  require(verify.stake_step > 0, "verify.stake_step", "verify.stake_step must be > 0");
  require(verify.tolerance >= 0, "verify.tolerance", "verify.tolerance must be ≥ 0");
  if (two_stage.alpha_tie)
    require(*two_stage.alpha_tie > 0 && *two_stage.alpha_tie < 1, "two_stage.alpha_tie",
            "two_stage.alpha_tie must be in (0, 1)");
  if (two_stage.epsilon_prime)
    require(*two_stage.epsilon_prime > 0, "two_stage.epsilon_prime",
            "two_stage.epsilon_prime must be > 0");
  if (sybil.t) require(*sybil.t >= 2, "sybil.t", "sybil.t must be ≥ 2");
  require(sybil.agent_stake >= 0, "sybil.agent_stake", "sybil.agent_stake must be ≥ 0");
  require(sybil.agent_cost >= 0, "sybil.agent_cost", "sybil.agent_cost must be ≥ 0");
  require(sybil.trials >= 100, "sybil.trials", "sybil.trials must be ≥ 100");
  for (auto& r : sybil.rest)
    require(r.stake > 0 && r.cost >= 0, "sybil.rest", "sybil.rest needs stake > 0, cost ≥ 0");
  const auto& w = sybil.whale;
  require(w.shape > 0, "sybil.whale.shape", "sybil.whale.shape must be > 0");
  require(w.theta > 0, "sybil.whale.theta", "sybil.whale.theta must be > 0");
  require(w.T >= w.theta, "sybil.whale.T", "sybil.whale.T must be ≥ theta");
  require(w.k >= 2, "sybil.whale.k", "sybil.whale.k must be ≥ 2");
  require(2 * w.agents > w.k, "sybil.whale.agents", "sybil.whale.agents must exceed k/2");
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  detail::Reader r(j, "");
  r.get("n", c.game.n);
  r.get("k", c.game.k);
  r.get("R", c.game.R);
  r.get("alpha", c.game.alpha);
  r.get("shape", c.tail.shape);
  r.get("theta", c.tail.theta);
  r.get("T", c.tail.T);
  r.get("cost_min", c.cost_min);
  r.get("cost_max", c.cost_max);
  r.choice("scheme", c.scheme, {std::pair{"cap-margin", SchemeKind::CapMargin},
                                std::pair{"fair", SchemeKind::Fair}});
  r.get("utility_eps", c.sim.utility_eps);
  r.get("margin_precision", c.sim.margin_precision);
  r.get("margin_guard", c.sim.margin_guard);
  r.get("stake_resolution", c.sim.stake_resolution);
  r.get("beam_width", c.sim.beam_width);
  r.get("beam_targets", c.sim.beam_targets);
  r.choice("mode", c.sim.mode, {std::pair{"sequential", SimMode::Sequential},
                                std::pair{"simultaneous", SimMode::Simultaneous}});
  r.get("batch_size", c.sim.batch_size);
  r.get("cooldown", c.sim.cooldown);
  r.get("max_steps", c.sim.max_steps);
  r.choice("initial_state", c.sim.initial_state,
           {std::pair{"inactive", InitialState::Inactive},
            std::pair{"max-decentralized", InitialState::MaxDecentralized},
            std::pair{"nicely-decentralized", InitialState::NicelyDecentralized}});
  r.get("seed", c.sim.seed);
  r.get("out", c.out);
  if (auto* v = r.sub("verify")) {
    detail::Reader s(*v, "verify");
    s.get("margin_step", c.verify.margin_step);
    s.get("stake_step", c.verify.stake_step);
    s.get("tolerance", c.verify.tolerance);
    s.finish();
  }
  if (auto* v = r.sub("two_stage")) {
    detail::Reader s(*v, "two_stage");
    s.get("epsilon_prime", c.two_stage.epsilon_prime);
    s.get("alpha_tie", c.two_stage.alpha_tie);
    s.finish();
  }
  if (auto* v = r.sub("sybil")) {
    detail::Reader s(*v, "sybil");
    s.choice("scenario", c.sybil.scenario, {std::pair{"non-maximizer", SybilKind::NonMaximizer},
                                            std::pair{"maximizer", SybilKind::Maximizer}});
    s.get("t", c.sybil.t);
    s.get("agent_stake", c.sybil.agent_stake);
    s.get("agent_cost", c.sybil.agent_cost);
    s.get("trials", c.sybil.trials);
    if (auto* rest = s.sub("rest")) {
      if (!rest->is_array()) throw ConfigError("sybil.rest", "sybil.rest must be an array");
      for (auto& e : *rest) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
          throw ConfigError("sybil.rest", "sybil.rest entries must be [stake, cost]");
        c.sybil.rest.push_back({e[0].get<double>(), e[1].get<double>()});
      }
    }
    if (auto* w = s.sub("whale")) {
      detail::Reader q(*w, "sybil.whale");
      q.get("shape", c.sybil.whale.shape);
      q.get("theta", c.sybil.whale.theta);
      q.get("T", c.sybil.whale.T);
      q.get("agents", c.sybil.whale.agents);
      q.get("k", c.sybil.whale.k);
      q.finish();
    }
    s.finish();
  }
  r.finish();
  c.tail.n_agents = c.game.n;
  c.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Canonical form: every key present, defaults spelled out.
inline json config_to_json(const RunConfig& c) {
  json j;
  j["n"] = c.game.n;
  j["k"] = c.game.k;
  j["R"] = c.game.R;
  j["alpha"] = c.game.alpha;
  j["shape"] = c.tail.shape;
  j["theta"] = c.tail.theta;
  j["T"] = c.tail.T;
  j["cost_min"] = c.cost_min;
  j["cost_max"] = c.cost_max;
  j["scheme"] = detail::scheme_name(c.scheme);
  j["utility_eps"] = c.sim.utility_eps;
  j["margin_precision"] = c.sim.margin_precision;
  j["margin_guard"] = c.sim.margin_guard;
  j["stake_resolution"] = c.sim.stake_resolution;
  j["beam_width"] = c.sim.beam_width;
  j["beam_targets"] = c.sim.beam_targets;
  j["mode"] = detail::mode_name(c.sim.mode);
  j["batch_size"] = c.sim.batch_size;
  j["cooldown"] = c.sim.cooldown;
  j["max_steps"] = c.sim.max_steps;
  j["initial_state"] = detail::init_name(c.sim.initial_state);
  j["seed"] = c.sim.seed;
  j["out"] = c.out;
  j["verify"] = {{"margin_step", c.verify.margin_step},
                 {"stake_step", c.verify.stake_step},
                 {"tolerance", c.verify.tolerance}};
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  j["two_stage"] = {{"epsilon_prime", opt(c.two_stage.epsilon_prime)},
                    {"alpha_tie", opt(c.two_stage.alpha_tie)}};
  json rest = json::array();
  for (auto& x : c.sybil.rest) rest.push_back({x.stake, x.cost});
  const auto& w = c.sybil.whale;
  j["sybil"] = {{"scenario", detail::sybil_name(c.sybil.scenario)},
                {"t", c.sybil.t ? json(*c.sybil.t) : json(nullptr)},
                {"agent_stake", c.sybil.agent_stake},
                {"agent_cost", c.sybil.agent_cost},
                {"rest", rest},
                {"trials", c.sybil.trials},
                {"whale", {{"shape", w.shape}, {"theta", w.theta}, {"T", w.T},
                           {"agents", w.agents}, {"k", w.k}}}};
  return j;
}

// --------------------------------------------------------------- file output

// Writes through a temporary file in the same directory, then renames.
inline void write_atomic(const std::filesystem::path& path, const std::string& data) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << data;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// --------------------------------------------------------------- JSON views

inline json to_json(const JointStrategy& J) {
  json arr = json::array();
  for (int i = 0; i < J.size(); ++i) {
    json alloc = json::object();
    for (auto [t, a] : J[i].alloc.entries()) alloc[std::to_string(t)] = a;
    arr.push_back({{"id", i}, {"margin", J[i].margin}, {"pledge", J[i].pledge}, {"alloc", alloc}});
  }
  return {{"strategies", arr}};
}

inline JointStrategy joint_from_json(const json& j) {
  const auto& arr = j.at("strategies");
  auto J = JointStrategy::passive(static_cast<int>(arr.size()));
  for (auto& e : arr) {
    int id = e.at("id").get<int>();
    if (id < 0 || id >= J.size()) throw std::invalid_argument("joint strategy: bad id");
    J[id].margin = e.at("margin").get<double>();
    J[id].pledge = e.at("pledge").get<double>();
    for (auto& [k, v] : e.at("alloc").items()) J[id].alloc.set(std::stoi(k), v.get<double>());
  }
  return J;
}

inline json to_json(const Verdict& v) {
  json j = {{"equilibrium", v.equilibrium}, {"witness", nullptr}};
  if (v.witness)
    j["witness"] = {{"player", v.witness->player}, {"move", v.witness->move}, {"gain", v.witness->gain}};
  return j;
}

// ------------------------------------------------------- equilibrium table

struct EquilibriumRow {
  int player = 0;  // potential-profit rank of the leader
  int rk = 0;      // pool desirability rank
  int crk = 0;     // cost rank, 1 = cheapest
  int srk = 0;     // stake rank, 1 = largest
  double cost = 0;
  double margin = 0;
  double player_stake = 0;
  double pool_stake = 0;
  double reward = 0;
  double desirability = 0;
  bool operator==(const EquilibriumRow&) const = default;
};

inline constexpr const char* kEquilibriumHeader =
    "player,rk,crk,srk,cost,margin,player_stake,pool_stake,reward,desirability";

inline std::vector<EquilibriumRow> equilibrium_rows(const JointStrategy& J, const Population& pop,
                                                    const GameParams& p) {
  const int n = pop.size();
  auto rank_by = [&](auto better) {
    std::vector<int> idx(n), rk(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), better);
    for (int r = 0; r < n; ++r) rk[idx[r]] = r + 1;
    return rk;
  };
  auto prk = rank_by([&](int a, int b) {
    return player_potential(pop[a], p) > player_potential(pop[b], p);
  });
  auto crk = rank_by([&](int a, int b) { return pop[a].cost < pop[b].cost; });
  auto srk = rank_by([&](int a, int b) { return pop[a].stake > pop[b].stake; });
  auto table = rank_pools(J, pop, p);
  // desirability rank among the surviving pools only
  std::vector<int> drk(n, 0);
  int r = 0;
  for (int j : table.order)
    if (J.active(j)) drk[j] = ++r;
  auto sigma = J.pool_stakes();
  std::vector<EquilibriumRow> rows;
  for (int j = 0; j < n; ++j) {
    if (!J.active(j)) continue;
    EquilibriumRow e;
    e.player = prk[j];
    e.rk = drk[j];
    e.crk = crk[j];
    e.srk = srk[j];
    e.cost = pop[j].cost;
    e.margin = J[j].margin;
    e.player_stake = pop[j].stake;
    e.pool_stake = sigma[j];
    e.reward = reward(sigma[j], J[j].pledge, p);
    e.desirability = desirability(J[j].margin, J[j].pledge, pop[j].cost, p);
    rows.push_back(e);
  }
  std::sort(rows.begin(), rows.end(),
            [](const EquilibriumRow& a, const EquilibriumRow& b) { return a.player < b.player; });
  return rows;
}

inline std::string equilibrium_csv(const std::vector<EquilibriumRow>& rows) {
  std::string out = std::string(kEquilibriumHeader) + "\n";
  char b[512];
  for (auto& e : rows) {
    std::snprintf(b, sizeof b, "%d,%d,%d,%d,%.8f,%.8f,%.8f,%.8f,%.8f,%.15g\n", e.player, e.rk,
                  e.crk, e.srk, e.cost, e.margin, e.player_stake, e.pool_stake, e.reward,
                  e.desirability);
    out += b;
  }
  return out;
}

// Refuses traces that did not reach an equilibrium.
inline std::string emit_equilibrium_table(const SimTrace& tr, const Population& pop,
                                          const GameParams& p) {
  if (!tr.converged())
    throw std::logic_error("equilibrium table: the run did not reach an equilibrium");
  return equilibrium_csv(equilibrium_rows(tr.final_state, pop, p));
}

inline std::vector<EquilibriumRow> parse_equilibrium_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kEquilibriumHeader)
    throw std::invalid_argument("equilibrium csv: bad header");
  std::vector<EquilibriumRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EquilibriumRow e;
    int used = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d,%lf,%lf,%lf,%lf,%lf,%lf%n", &e.player, &e.rk,
                    &e.crk, &e.srk, &e.cost, &e.margin, &e.player_stake, &e.pool_stake,
                    &e.reward, &e.desirability, &used) != 10 ||
        used != static_cast<int>(line.size()))
      throw std::invalid_argument("equilibrium csv: bad row '" + line + "'");
    rows.push_back(e);
  }
  return rows;
}

// ------------------------------------------------------------ trace output

// Allocation rows of one player: pool entries, then idle stake as pool -1.
inline void append_alloc_rows(std::string& out, long step, int player, const Allocation& a,
                              double stake) {
  char b[128];
  for (auto [t, x] : a.entries()) {
    std::snprintf(b, sizeof b, "%ld,%d,%d,%.17g\n", step, player, t, x);
    out += b;
  }
  double idle = stake - a.total();
  if (idle > kStakeSlack) {
    std::snprintf(b, sizeof b, "%ld,%d,-1,%.17g\n", step, player, idle);
    out += b;
  }
}

// Step 0 lists every player; later steps list only the players whose
// allocation changed, each with its complete new allocation.
inline std::string dynamics_csv(const SimTrace& tr, const Population& pop) {
  std::string out = "step,player,pool_leader,amount\n";
  for (int i = 0; i < tr.initial.size(); ++i)
    append_alloc_rows(out, 0, i, tr.initial[i].alloc, pop[i].stake);
  for (auto& rec : tr.steps)
    for (std::size_t q = 0; q < rec.changed.size(); ++q)
      append_alloc_rows(out, rec.step, rec.changed[q], rec.allocations[q],
                        pop[rec.changed[q]].stake);
  return out;
}

inline std::string pools_csv(const SimTrace& tr) {
  std::string out = "step,pool_count\n";
  char b[64];
  for (auto [step, count] : tr.pool_counts) {
    std::snprintf(b, sizeof b, "%ld,%d\n", step, count);
    out += b;
  }
  return out;
}

}  // namespace rsslab
