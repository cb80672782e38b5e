#pragma once

// Independent tabular Q-learning over an explicit game, optionally run
// through a shield. Each agent maintains its own value table keyed by an
// observation of the global state; by default the observation is the state
// itself, and for grid games a compressed key (own position, the other
// agents' coarse areas, remaining flags) keeps the tables small.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "amarl/gfc.hpp"
#include "amarl/model.hpp"
#include "amarl/model_io.hpp"
#include "amarl/rng.hpp"
#include "amarl/shield.hpp"

namespace amarl {

/// Maps a global state to the key agent i conditions its values on.
using ObsFn = std::function<std::uint64_t(StateId, int)>;

inline ObsFn full_observation() {
  return [](StateId s, int) { return static_cast<std::uint64_t>(s); };
}

/// Grid-domain key: the agent's own position code (cell, captured or goal),
/// each other agent's area code, and the bitmask of flags still on the floor.
inline ObsFn gfc_observation(const GfcBuild& b) {
  const std::uint64_t area_base =
      static_cast<std::uint64_t>(
          *std::max_element(b.area_code.begin(), b.area_code.end())) +
      1;
  return [positions = b.positions, masks = b.flag_mask, area = b.area_code,
          n_flags = b.n_flags, area_base](StateId s, int agent) {
    const std::vector<int>& pos = positions[s];
    std::uint64_t key = static_cast<std::uint64_t>(pos[agent]);
    for (std::size_t j = 0; j < pos.size(); ++j) {
      if (static_cast<int>(j) == agent) continue;
      key = key * area_base + static_cast<std::uint64_t>(area[pos[j]]);
    }
    return (key << n_flags) | masks[s];
  };
}

/// Per-agent action values; unseen keys read as all zeros.
class QTable {
 public:
  explicit QTable(int n_agents) : q_(static_cast<std::size_t>(n_agents)) {}

  int n_agents() const { return static_cast<int>(q_.size()); }

  std::vector<double>& row(int agent, std::uint64_t key,
                           std::size_t n_actions) {
    auto& m = q_[static_cast<std::size_t>(agent)];
    auto it = m.find(key);
    if (it == m.end())
      it = m.emplace(key, std::vector<double>(n_actions, 0.0)).first;
    return it->second;
  }

  const std::vector<double>* find_row(int agent, std::uint64_t key) const {
    const auto& m = q_[static_cast<std::size_t>(agent)];
    auto it = m.find(key);
    return it == m.end() ? nullptr : &it->second;
  }

  double max_value(int agent, std::uint64_t key) const {
    const std::vector<double>* r = find_row(agent, key);
    return r ? *std::max_element(r->begin(), r->end()) : 0.0;
  }

  const std::unordered_map<std::uint64_t, std::vector<double>>& table(
      int agent) const {
    return q_[static_cast<std::size_t>(agent)];
  }

 private:
  std::vector<std::unordered_map<std::uint64_t, std::vector<double>>> q_;
};

namespace learn_detail {

inline ActionId argmax(const std::vector<double>& row) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < row.size(); ++a)
    if (row[a] > row[best]) best = a;
  return static_cast<ActionId>(best);
}

/// Whether the action has any effect from s, probed with everyone else idle.
inline bool available(const MarkovGame& g, StateId s, std::size_t axis,
                      ActionId a) {
  std::vector<ActionId> parts(g.n_axes());
  for (std::size_t ax = 0; ax < g.n_axes(); ++ax) {
    const auto idle = g.idle_action(ax);
    parts[ax] = idle ? *idle : 0;
  }
  parts[axis] = a;
  return g.find_row(s, g.encode_joint(parts)) != nullptr;
}

}  // namespace learn_detail

/// One independent-learner backup:
/// Q_i(s,a) += alpha * (r + gamma * max_a' Q_i(s',a') - Q_i(s,a)).
inline void iql_update(QTable& q, int agent, std::uint64_t s, ActionId a,
                       double r, std::uint64_t next, std::size_t n_actions,
                       double alpha, double gamma) {
  const double boot = q.max_value(agent, next);
  std::vector<double>& row = q.row(agent, s, n_actions);
  row[static_cast<std::size_t>(a)] +=
      alpha * (r + gamma * boot - row[static_cast<std::size_t>(a)]);
}

/// Explores uniformly with probability eps, otherwise exploits. Value ties
/// and unseen keys resolve to the lowest action index.
inline ActionId epsilon_greedy(const QTable& q, int agent, std::uint64_t key,
                               std::size_t n_actions, double eps, Rng& rng) {
  if (rng.uniform() < eps)
    return static_cast<ActionId>(
        rng.below(static_cast<std::uint32_t>(n_actions)));
  const std::vector<double>* row = q.find_row(agent, key);
  return row ? learn_detail::argmax(*row) : 0;
}

enum class TrainMode { Shielded, UnshieldedTerminate, Vanilla };

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Shielded:
      return "shielded";
    case TrainMode::UnshieldedTerminate:
      return "unshielded";
    default:
      return "vanilla";
  }
}

inline TrainMode mode_from(const std::string& name) {
  if (name == "shielded") return TrainMode::Shielded;
  if (name == "unshielded" || name == "unshielded_terminate")
    return TrainMode::UnshieldedTerminate;
  if (name == "vanilla") return TrainMode::Vanilla;
  throw ModelError("unknown training mode '" + name + "'");
}

struct LearnerConfig {
  TrainMode mode = TrainMode::Shielded;
  double alpha = 0.1;
  double gamma = 0.95;
  double eps_init = 1.0;
  double eps_decay = 0.99988;  // per episode, down to the floor
  double eps_floor = 0.1;
  int episodes = 20000;
  int max_steps = 1000;
  std::uint64_t seed = 1;
  std::string end_atom = "end_all";  // episode stops once this label holds
};

inline void validate_config(const LearnerConfig& c) {
  if (!(c.alpha > 0.0 && c.alpha <= 1.0))
    throw ModelError("alpha outside (0, 1]");
  if (!(c.gamma >= 0.0 && c.gamma < 1.0))
    throw ModelError("gamma outside [0, 1)");
  if (c.eps_init < 0.0 || c.eps_init > 1.0 || c.eps_floor < 0.0 ||
      c.eps_floor > c.eps_init || c.eps_decay <= 0.0 || c.eps_decay > 1.0)
    throw ModelError("malformed epsilon schedule");
  if (c.episodes <= 0 || c.max_steps <= 0)
    throw ModelError("episodes and max_steps must be positive");
}

struct TrainStats {
  std::vector<std::vector<double>> returns;  // episode -> per-agent return
  std::vector<std::uint32_t> interventions;  // episode -> blocked proposals
  std::vector<std::uint8_t> unsafe;          // episode -> ended on a violation
  double wall_seconds = 0.0;

  std::uint64_t unsafe_total() const {
    return std::accumulate(unsafe.begin(), unsafe.end(), std::uint64_t{0});
  }
};

struct TrainResult {
  QTable q;
  std::vector<std::vector<ActionId>> greedy;  // agent -> state -> action
  TrainStats stats;
};

/// Greedy joint policy read off the tables, one action per concrete state.
inline std::vector<std::vector<ActionId>> greedy_actions(const QTable& q,
                                                         const MarkovGame& g,
                                                         const ObsFn& obs) {
  std::vector<std::vector<ActionId>> out(
      static_cast<std::size_t>(g.n_agents()));
  for (int i = 0; i < g.n_agents(); ++i) {
    auto& col = out[static_cast<std::size_t>(i)];
    col.resize(g.n_states());
    for (StateId s = 0; s < g.n_states(); ++s) {
      const std::vector<double>* row = q.find_row(i, obs(s, i));
      col[s] = row ? learn_detail::argmax(*row) : 0;
    }
  }
  return out;
}

/// Runs independent Q-learning for cfg.episodes episodes and returns the
/// tables, the greedy policy they induce, and per-episode statistics.
///
/// Shielded mode filters every proposal through the shield and folds its
/// reward adjustments into the learning signal. Unshielded-terminate keeps
/// the shield as a passive monitor: proposals execute as issued, but the
/// first step on which some agent plays an action the shield would have
/// blocked ends the episode and costs each such agent 1. Vanilla ignores
/// the abstraction entirely. In every mode a proposal with no effect (a
/// wall move) executes as idle.
inline TrainResult train(const MarkovGame& g, const LearnerConfig& cfg,
                         Shield* shield = nullptr, ObsFn obs = {}) {
  validate_config(cfg);
  if (cfg.mode != TrainMode::Vanilla && shield == nullptr)
    throw ModelError(std::string(mode_name(cfg.mode)) +
                     " training needs a shield");
  if (!obs) obs = full_observation();

  const int n = g.n_agents();
  if (static_cast<std::size_t>(n) != g.n_axes())
    throw ModelError("training expects one decision axis per agent");
  std::vector<std::size_t> n_act(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    n_act[static_cast<std::size_t>(i)] =
        g.axis_actions(static_cast<std::size_t>(i)).size();
  AtomId end_atom = 0;
  const bool has_end = g.atoms().find(cfg.end_atom, end_atom);

  QTable q(n);
  TrainStats stats;
  stats.returns.reserve(static_cast<std::size_t>(cfg.episodes));
  Rng rng(cfg.seed);
  double eps = cfg.eps_init;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::uint64_t> key(static_cast<std::size_t>(n));
  std::vector<ActionId> prop(static_cast<std::size_t>(n));
  std::vector<ActionId> exec(static_cast<std::size_t>(n));

  for (int ep = 0; ep < cfg.episodes; ++ep) {
    StateId s = g.initial();
    if (shield) shield->reset(s, ep);
    std::vector<double> ret(static_cast<std::size_t>(n), 0.0);
    std::uint32_t blocked = 0;
    bool violated = false;

    for (int t = 0; t < cfg.max_steps; ++t) {
      for (int i = 0; i < n; ++i) {
        key[static_cast<std::size_t>(i)] = obs(s, i);
        prop[static_cast<std::size_t>(i)] =
            epsilon_greedy(q, i, key[static_cast<std::size_t>(i)],
                           n_act[static_cast<std::size_t>(i)], eps, rng);
      }

      StateId s2 = s;
      std::vector<double> reward;
      std::vector<double> extra(static_cast<std::size_t>(n), 0.0);

      if (cfg.mode == TrainMode::Shielded) {
        ShieldDecision d = shield->filter(s, prop);
        for (int i = 0; i < n; ++i)
          if (!d.allow[static_cast<std::size_t>(i)]) ++blocked;
        auto [to, rew] = step(g, s, g.encode_joint(d.executed), rng);
        shield->observe(to, d);
        s2 = to;
        reward = std::move(rew);
        extra = std::move(d.adjust);
      } else {
        for (int i = 0; i < n; ++i) {
          auto& e = exec[static_cast<std::size_t>(i)];
          e = prop[static_cast<std::size_t>(i)];
          if (!learn_detail::available(g, s, static_cast<std::size_t>(i), e)) {
            const auto idle = g.idle_action(static_cast<std::size_t>(i));
            if (!idle)
              throw ModelError("agent " + std::to_string(i) +
                               " has no idle fallback in state " +
                               g.state_name(s));
            e = *idle;
          }
        }
        if (cfg.mode == TrainMode::UnshieldedTerminate) {
          for (int i = 0; i < n; ++i) {
            const auto ok = shield->allowed_actions(s, i);
            if (!std::binary_search(ok.begin(), ok.end(),
                                    exec[static_cast<std::size_t>(i)])) {
              extra[static_cast<std::size_t>(i)] -= 1.0;
              violated = true;
            }
          }
        }
        auto [to, rew] = step(g, s, g.encode_joint(exec), rng);
        s2 = to;
        reward = std::move(rew);
        if (cfg.mode == TrainMode::UnshieldedTerminate && !violated) {
          ShieldDecision d;
          d.executed = exec;
          d.allow.assign(static_cast<std::size_t>(n), 1);
          d.adjust.assign(static_cast<std::size_t>(n), 0.0);
          shield->observe(s2, d);  // track progress, discard its bonuses
        }
      }

      for (int i = 0; i < n; ++i) {
        const double r = reward[static_cast<std::size_t>(i)] +
                         extra[static_cast<std::size_t>(i)];
        ret[static_cast<std::size_t>(i)] += r;
        iql_update(q, i, key[static_cast<std::size_t>(i)],
                   prop[static_cast<std::size_t>(i)], r, obs(s2, i),
                   n_act[static_cast<std::size_t>(i)], cfg.alpha, cfg.gamma);
      }
      s = s2;

      if (violated) break;
      if (has_end) {
        const LabelSet& lab = g.labels(s);
        if (std::binary_search(lab.begin(), lab.end(), end_atom)) break;
      }
    }

    stats.returns.push_back(std::move(ret));
    stats.interventions.push_back(blocked);
    stats.unsafe.push_back(violated ? 1 : 0);
    eps = std::max(cfg.eps_floor, eps * cfg.eps_decay);
  }

  stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  TrainResult out{std::move(q), {}, std::move(stats)};
  out.greedy = greedy_actions(out.q, g, obs);
  return out;
}

inline json config_to_json(const LearnerConfig& c) {
  return json{{"mode", mode_name(c.mode)},
              {"alpha", c.alpha},
              {"gamma", c.gamma},
              {"eps_init", c.eps_init},
              {"eps_decay", c.eps_decay},
              {"eps_floor", c.eps_floor},
              {"episodes", c.episodes},
              {"max_steps", c.max_steps},
              {"seed", c.seed},
              {"end_atom", c.end_atom}};
}

/// Tables plus the configuration that produced them, keys in sorted order.
inline json checkpoint_to_json(const QTable& q, const LearnerConfig& cfg) {
  json agents = json::array();
  for (int i = 0; i < q.n_agents(); ++i) {
    std::vector<std::uint64_t> keys;
    keys.reserve(q.table(i).size());
    for (const auto& [k, v] : q.table(i)) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    json m = json::object();
    for (std::uint64_t k : keys) m[std::to_string(k)] = q.table(i).at(k);
    agents.push_back(std::move(m));
  }
  return json{{"config", config_to_json(cfg)}, {"q", std::move(agents)}};
}

inline QTable checkpoint_from_json(const json& j) {
  if (!j.is_object() || !j.contains("q") || !j.at("q").is_array())
    throw ParseError("checkpoint: missing q tables");
  const json& agents = j.at("q");
  QTable q(static_cast<int>(agents.size()));
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!agents[i].is_object())
      throw ParseError("checkpoint: agent table must be an object");
    for (const auto& [ks, vs] : agents[i].items()) {
      std::uint64_t k = 0;
      try {
        k = std::stoull(ks);
      } catch (const std::exception&) {
        throw ParseError("checkpoint: bad state key '" + ks + "'");
      }
      const std::vector<double> vals = vs.get<std::vector<double>>();
      q.row(static_cast<int>(i), k, vals.size()) = vals;
    }
  }
  return q;
}

/// episode, per-agent return, interventions, unsafe flag.
inline std::string stats_to_csv(const TrainStats& st) {
  const std::size_t n = st.returns.empty() ? 0 : st.returns.front().size();
  std::ostringstream out;
  out << std::setprecision(12) << "episode";
  for (std::size_t i = 0; i < n; ++i) out << ",return_" << i;
  out << ",interventions,unsafe\n";
  for (std::size_t ep = 0; ep < st.returns.size(); ++ep) {
    out << ep;
    for (double r : st.returns[ep]) out << ',' << r;
    out << ',' << st.interventions[ep] << ','
        << static_cast<int>(st.unsafe[ep]) << '\n';
  }
  return out.str();
}

}  // namespace amarl
