#pragma once

// Monte-Carlo evaluation of concrete play, plus the artifact writers shared
// by the command-line tool. Rollouts measure raw environment reward: shield
// adjustments shape learning, not the reported metrics.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "amarl/learn.hpp"
#include "amarl/quotient.hpp"

namespace amarl {

/// Produces agent i's proposed action in state s.
using ProposalFn = std::function<ActionId(StateId, int, Rng&)>;

inline ProposalFn greedy_proposals(std::vector<std::vector<ActionId>> greedy) {
  return [tab = std::move(greedy)](StateId s, int agent, Rng&) {
    return tab[static_cast<std::size_t>(agent)][s];
  };
}

inline ProposalFn random_proposals(const MarkovGame& g) {
  std::vector<std::uint32_t> sizes;
  for (std::size_t ax = 0; ax < g.n_axes(); ++ax)
    sizes.push_back(static_cast<std::uint32_t>(g.axis_actions(ax).size()));
  return [sizes](StateId, int agent, Rng& rng) {
    return static_cast<ActionId>(
        rng.below(sizes[static_cast<std::size_t>(agent)]));
  };
}

struct EvalOptions {
  int episodes = 10000;  // per seed
  int max_steps = 1000;
  std::vector<std::uint64_t> seeds{1};
};

struct SeedEval {
  std::uint64_t seed = 0;
  std::vector<double> p_captured, p_goal, mean_return;  // per agent
  double p_captured_all = 0, p_goal_all = 0, p_end_all = 0, mean_total = 0;
};

/// Reachability frequencies and returns, pooled over every episode of every
/// seed. Probability errors are sqrt(p(1-p)/N); returns use the sample
/// standard error.
struct EvalReport {
  int n_agents = 0;
  std::uint64_t episodes = 0;
  std::vector<SeedEval> seeds;
  std::vector<double> p_captured, p_goal, mean_return;
  std::vector<double> se_captured, se_goal, se_return;
  double p_captured_all = 0, p_goal_all = 0, p_end_all = 0, mean_total = 0;
  double se_captured_all = 0, se_goal_all = 0, se_end_all = 0, se_total = 0;
};

namespace harness_detail {

struct EventAtoms {
  std::vector<AtomId> captured, goal;
  AtomId captured_all = 0, goal_all = 0, end_all = 0;
};

inline EventAtoms event_atoms(const MarkovGame& g) {
  EventAtoms a;
  auto need = [&](const std::string& name) {
    AtomId id = 0;
    if (!g.atoms().find(name, id))
      throw ModelError("evaluation needs the atom " + name);
    return id;
  };
  for (int i = 0; i < g.n_agents(); ++i) {
    const std::string suffix = "_" + std::to_string(i + 1);
    a.captured.push_back(need("captured" + suffix));
    a.goal.push_back(need("goal" + suffix));
  }
  a.captured_all = need("captured_all");
  a.goal_all = need("goal_all");
  a.end_all = need("end_all");
  return a;
}

inline bool holds(const MarkovGame& g, StateId s, AtomId atom) {
  const LabelSet& l = g.labels(s);
  return std::binary_search(l.begin(), l.end(), atom);
}

struct Accum {
  std::vector<std::uint64_t> captured, goal;
  std::uint64_t captured_all = 0, goal_all = 0, end_all = 0;
  std::vector<double> ret_sum, ret_sq;
  double tot_sum = 0, tot_sq = 0;
  std::uint64_t n = 0;

  explicit Accum(int agents)
      : captured(static_cast<std::size_t>(agents), 0),
        goal(static_cast<std::size_t>(agents), 0),
        ret_sum(static_cast<std::size_t>(agents), 0.0),
        ret_sq(static_cast<std::size_t>(agents), 0.0) {}
};

/// One seed's worth of episodes. The shield, when present, is a private
/// copy so seeds can run on separate threads.
inline Accum run_seed(const MarkovGame& g, const ProposalFn& propose,
                      const Shield* prototype, const EvalOptions& opt,
                      std::uint64_t seed, const EventAtoms& atoms) {
  const int n = g.n_agents();
  Accum acc(n);
  std::optional<Shield> shield;
  if (prototype) shield.emplace(*prototype);

  std::vector<ActionId> prop(static_cast<std::size_t>(n));
  std::vector<ActionId> exec(static_cast<std::size_t>(n));
  std::vector<char> ever_cap(static_cast<std::size_t>(n));
  std::vector<char> ever_goal(static_cast<std::size_t>(n));
  std::vector<double> ret(static_cast<std::size_t>(n));

  for (int ep = 0; ep < opt.episodes; ++ep) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(ep));
    StateId s = g.initial();
    if (shield) shield->reset(s, ep);
    std::fill(ever_cap.begin(), ever_cap.end(), 0);
    std::fill(ever_goal.begin(), ever_goal.end(), 0);
    std::fill(ret.begin(), ret.end(), 0.0);
    bool cap_all = false, goal_all = false, end_all = false;

    auto note = [&](StateId at) {
      for (int i = 0; i < n; ++i) {
        if (holds(g, at, atoms.captured[static_cast<std::size_t>(i)]))
          ever_cap[static_cast<std::size_t>(i)] = 1;
        if (holds(g, at, atoms.goal[static_cast<std::size_t>(i)]))
          ever_goal[static_cast<std::size_t>(i)] = 1;
      }
      cap_all = cap_all || holds(g, at, atoms.captured_all);
      goal_all = goal_all || holds(g, at, atoms.goal_all);
      end_all = end_all || holds(g, at, atoms.end_all);
    };
    note(s);

    for (int t = 0; t < opt.max_steps && !end_all; ++t) {
      for (int i = 0; i < n; ++i)
        prop[static_cast<std::size_t>(i)] = propose(s, i, rng);
      StateId to = s;
      std::vector<double> rew;
      if (shield) {
        ShieldDecision d = shield->filter(s, prop);
        auto stepped = step(g, s, g.encode_joint(d.executed), rng);
        to = stepped.first;
        rew = std::move(stepped.second);
        shield->observe(to, d);
      } else {
        for (int i = 0; i < n; ++i) {
          auto& e = exec[static_cast<std::size_t>(i)];
          e = prop[static_cast<std::size_t>(i)];
          if (!learn_detail::available(g, s, static_cast<std::size_t>(i), e))
            e = *g.idle_action(static_cast<std::size_t>(i));
        }
        auto stepped = step(g, s, g.encode_joint(exec), rng);
        to = stepped.first;
        rew = std::move(stepped.second);
      }
      for (int i = 0; i < n; ++i)
        ret[static_cast<std::size_t>(i)] += rew[static_cast<std::size_t>(i)];
      s = to;
      note(s);
    }

    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      if (ever_cap[static_cast<std::size_t>(i)])
        ++acc.captured[static_cast<std::size_t>(i)];
      if (ever_goal[static_cast<std::size_t>(i)])
        ++acc.goal[static_cast<std::size_t>(i)];
      const double r = ret[static_cast<std::size_t>(i)];
      acc.ret_sum[static_cast<std::size_t>(i)] += r;
      acc.ret_sq[static_cast<std::size_t>(i)] += r * r;
      total += r;
    }
    acc.captured_all += cap_all ? 1 : 0;
    acc.goal_all += goal_all ? 1 : 0;
    acc.end_all += end_all ? 1 : 0;
    acc.tot_sum += total;
    acc.tot_sq += total * total;
    ++acc.n;
  }
  return acc;
}

inline double prob_se(double p, std::uint64_t n) {
  return n ? std::sqrt(p * (1.0 - p) / static_cast<double>(n)) : 0.0;
}

inline double mean_se(double sum, double sq, std::uint64_t n) {
  if (n < 2) return 0.0;
  const double m = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - m * m) *
                     static_cast<double>(n) / static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

}  // namespace harness_detail

inline int harness_threads() {
  const char* env = std::getenv("AMARL_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

inline EvalReport monte_carlo_eval(const MarkovGame& g,
                                   const ProposalFn& propose,
                                   const Shield* shield,
                                   const EvalOptions& opt) {
  using namespace harness_detail;
  if (opt.episodes <= 0 || opt.max_steps <= 0 || opt.seeds.empty())
    throw ModelError("evaluation needs positive episode counts and a seed");
  const EventAtoms atoms = event_atoms(g);
  const int n = g.n_agents();

  std::vector<Accum> per_seed(opt.seeds.size(), Accum(n));
  const int workers =
      std::min<int>(harness_threads(), static_cast<int>(opt.seeds.size()));
  if (workers <= 1) {
    for (std::size_t k = 0; k < opt.seeds.size(); ++k)
      per_seed[k] = run_seed(g, propose, shield, opt, opt.seeds[k], atoms);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next.fetch_add(1); k < opt.seeds.size();
             k = next.fetch_add(1))
          per_seed[k] = run_seed(g, propose, shield, opt, opt.seeds[k], atoms);
      });
    for (auto& t : pool) t.join();
  }

  EvalReport rep;
  rep.n_agents = n;
  Accum all(n);
  for (std::size_t k = 0; k < opt.seeds.size(); ++k) {
    const Accum& a = per_seed[k];
    SeedEval se;
    se.seed = opt.seeds[k];
    const double inv = 1.0 / static_cast<double>(a.n);
    for (int i = 0; i < n; ++i) {
      se.p_captured.push_back(
          static_cast<double>(a.captured[static_cast<std::size_t>(i)]) * inv);
      se.p_goal.push_back(
          static_cast<double>(a.goal[static_cast<std::size_t>(i)]) * inv);
      se.mean_return.push_back(a.ret_sum[static_cast<std::size_t>(i)] * inv);
      all.captured[static_cast<std::size_t>(i)] +=
          a.captured[static_cast<std::size_t>(i)];
      all.goal[static_cast<std::size_t>(i)] +=
          a.goal[static_cast<std::size_t>(i)];
      all.ret_sum[static_cast<std::size_t>(i)] +=
          a.ret_sum[static_cast<std::size_t>(i)];
      all.ret_sq[static_cast<std::size_t>(i)] +=
          a.ret_sq[static_cast<std::size_t>(i)];
    }
    se.p_captured_all = static_cast<double>(a.captured_all) * inv;
    se.p_goal_all = static_cast<double>(a.goal_all) * inv;
    se.p_end_all = static_cast<double>(a.end_all) * inv;
    se.mean_total = a.tot_sum * inv;
    rep.seeds.push_back(std::move(se));
    all.captured_all += a.captured_all;
    all.goal_all += a.goal_all;
    all.end_all += a.end_all;
    all.tot_sum += a.tot_sum;
    all.tot_sq += a.tot_sq;
    all.n += a.n;
  }

  rep.episodes = all.n;
  const double inv = 1.0 / static_cast<double>(all.n);
  for (int i = 0; i < n; ++i) {
    const double pc =
        static_cast<double>(all.captured[static_cast<std::size_t>(i)]) * inv;
    const double pg =
        static_cast<double>(all.goal[static_cast<std::size_t>(i)]) * inv;
    rep.p_captured.push_back(pc);
    rep.p_goal.push_back(pg);
    rep.se_captured.push_back(prob_se(pc, all.n));
    rep.se_goal.push_back(prob_se(pg, all.n));
    rep.mean_return.push_back(all.ret_sum[static_cast<std::size_t>(i)] * inv);
    rep.se_return.push_back(
        mean_se(all.ret_sum[static_cast<std::size_t>(i)],
                all.ret_sq[static_cast<std::size_t>(i)], all.n));
  }
  rep.p_captured_all = static_cast<double>(all.captured_all) * inv;
  rep.p_goal_all = static_cast<double>(all.goal_all) * inv;
  rep.p_end_all = static_cast<double>(all.end_all) * inv;
  rep.se_captured_all = prob_se(rep.p_captured_all, all.n);
  rep.se_goal_all = prob_se(rep.p_goal_all, all.n);
  rep.se_end_all = prob_se(rep.p_end_all, all.n);
  rep.mean_total = all.tot_sum * inv;
  rep.se_total = mean_se(all.tot_sum, all.tot_sq, all.n);
  return rep;
}

/// Fraction of sampled chain paths that reach a state labelled `atom`
/// within max_steps. Cross-checks the simulator against the model checker.
inline double simulate_chain_reach(const InducedChain& c, AtomId atom,
                                   int episodes, int max_steps,
                                   std::uint64_t seed) {
  std::uint64_t hits = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(ep));
    std::size_t at = c.initial;
    for (int t = 0; t <= max_steps; ++t) {
      const LabelSet& l = c.labels[at];
      if (std::binary_search(l.begin(), l.end(), atom)) {
        ++hits;
        break;
      }
      const auto row = c.row(at);
      if (row.empty()) break;
      const double u = rng.uniform();
      double mass = 0.0;
      std::size_t next = row.back().to;
      for (const TransitionEntry& e : row) {
        mass += e.p;
        if (u < mass) {
          next = e.to;
          break;
        }
      }
      at = next;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(episodes);
}

inline json eval_to_json(const EvalReport& r) {
  json agents = json::array();
  for (int i = 0; i < r.n_agents; ++i) {
    const auto k = static_cast<std::size_t>(i);
    agents.push_back(
        {{"captured", {{"p", r.p_captured[k]}, {"se", r.se_captured[k]}}},
         {"goal", {{"p", r.p_goal[k]}, {"se", r.se_goal[k]}}},
         {"return", {{"mean", r.mean_return[k]}, {"se", r.se_return[k]}}}});
  }
  json seeds = json::array();
  for (const SeedEval& s : r.seeds)
    seeds.push_back({{"seed", s.seed},
                     {"captured", s.p_captured},
                     {"goal", s.p_goal},
                     {"return", s.mean_return},
                     {"captured_all", s.p_captured_all},
                     {"goal_all", s.p_goal_all},
                     {"end_all", s.p_end_all},
                     {"total_return", s.mean_total}});
  return json{
      {"episodes", r.episodes},
      {"agents", std::move(agents)},
      {"all",
       {{"captured", {{"p", r.p_captured_all}, {"se", r.se_captured_all}}},
        {"goal", {{"p", r.p_goal_all}, {"se", r.se_goal_all}}},
        {"end", {{"p", r.p_end_all}, {"se", r.se_end_all}}},
        {"return", {{"mean", r.mean_total}, {"se", r.se_total}}}}},
      {"seeds", std::move(seeds)}};
}

inline std::string eval_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << std::setprecision(12) << "metric,scope,value,se\n";
  for (int i = 0; i < r.n_agents; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out << "p_captured," << i + 1 << ',' << r.p_captured[k] << ','
        << r.se_captured[k] << '\n';
    out << "p_goal," << i + 1 << ',' << r.p_goal[k] << ',' << r.se_goal[k]
        << '\n';
    out << "return," << i + 1 << ',' << r.mean_return[k] << ','
        << r.se_return[k] << '\n';
  }
  out << "p_captured,all," << r.p_captured_all << ',' << r.se_captured_all
      << '\n';
  out << "p_goal,all," << r.p_goal_all << ',' << r.se_goal_all << '\n';
  out << "p_end,all," << r.p_end_all << ',' << r.se_end_all << '\n';
  out << "return,all," << r.mean_total << ',' << r.se_total << '\n';
  return out.str();
}

/// Writes through a temporary then renames, so readers never observe a
/// half-written artifact.
inline void atomic_write(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw ModelError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

/// Human-readable account of a quotient: block membership by state name and
/// each side's option effects. Pairs from the direct grid construction do
/// not record members, so those can be supplied as a state-to-block map.
inline json quotient_summary(const MarkovGame& g, const AmgPair& pair,
                             const std::vector<BlockId>* z = nullptr) {
  std::vector<std::vector<StateId>> members = pair.safe.block_members;
  if (members.empty()) {
    members.resize(pair.safe.game.n_states());
    if (z)
      for (StateId s = 0; s < z->size(); ++s) members[(*z)[s]].push_back(s);
  }
  json blocks = json::object();
  for (BlockId b = 0; b < pair.safe.game.n_states(); ++b) {
    json names = json::array();
    for (StateId s : members[b]) names.push_back(g.state_name(s));
    blocks[pair.safe.game.state_name(b)] = std::move(names);
  }
  auto side = [&](const AbstractMG& amg) {
    json per_block = json::object();
    for (BlockId b = 0; b < amg.game.n_states(); ++b) {
      json rows = json::array();
      for (const Row& r : amg.game.rows(b)) {
        const AbstractOption& op = amg.option(r.action);
        json variants = json::array();
        for (const OptionVariant& v : op.variants) {
          json probs = json::object();
          for (const auto& [to, p] : v.cd)
            probs[amg.game.state_name(to)] = p;
          variants.push_back({{"rank", v.rank},
                              {"probs", std::move(probs)},
                              {"rewards", v.reward}});
        }
        rows.push_back({{"name", op.name},
                        {"family", op.family},
                        {"tagged", op.tagged},
                        {"variants", std::move(variants)}});
      }
      per_block[amg.game.state_name(b)] = std::move(rows);
    }
    return per_block;
  };
  return json{{"blocks", std::move(blocks)},
              {"safe", side(pair.safe)},
              {"optimal", side(pair.optimal)}};
}

}  // namespace amarl
