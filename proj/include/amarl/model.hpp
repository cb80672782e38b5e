#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "amarl/core.hpp"
#include "amarl/rng.hpp"

namespace amarl {

struct TransitionEntry {
  StateId to;
  double p;
};

/// Optional annotation on a transition row: rows sharing a family name model
/// the same abstract move at different risk levels, ordered by rank
/// (higher rank = riskier member).
struct RiskTag {
  std::string family;
  int rank = 0;
};

struct Row {
  JointActionId action;
  std::uint32_t offset;  // into the flat entry array
  std::uint32_t len;
  std::int32_t risk;  // index into risk tag table, -1 if untagged
};

/// Explicit n-agent Markov game with a labelling function and an atom
/// partition (per-agent atom sets plus a shared set). Joint actions are
/// tuples over the decision axes; for concrete games there is one axis per
/// agent, while abstract games built from quotients use a single axis whose
/// "actions" are joint options. Rows missing from the transition map are
/// unavailable joint actions.
class MarkovGame {
 public:
  int n_agents() const { return n_agents_; }
  std::size_t n_axes() const { return action_sets_.size(); }
  std::size_t n_states() const { return state_labels_.size(); }
  double gamma() const { return gamma_; }
  StateId initial() const { return initial_; }
  bool cooperative() const { return cooperative_; }

  const std::vector<std::string>& axis_actions(std::size_t axis) const {
    return action_sets_.at(axis);
  }
  /// Per-axis idle action, if the game designates one (needed by the shield).
  std::optional<ActionId> idle_action(std::size_t axis) const {
    return idle_actions_.at(axis);
  }

  JointActionId joint_action_count() const { return joint_count_; }

  /// Mixed-radix encoding, axis 0 most significant, so ascending joint ids
  /// enumerate action tuples lexicographically.
  JointActionId encode_joint(std::span<const ActionId> parts) const {
    JointActionId id = 0;
    for (std::size_t ax = 0; ax < action_sets_.size(); ++ax)
      id = id * static_cast<JointActionId>(action_sets_[ax].size()) + parts[ax];
    return id;
  }
  std::vector<ActionId> decode_joint(JointActionId id) const {
    std::vector<ActionId> parts(action_sets_.size());
    for (std::size_t ax = action_sets_.size(); ax-- > 0;) {
      const auto n = static_cast<JointActionId>(action_sets_[ax].size());
      parts[ax] = id % n;
      id /= n;
    }
    return parts;
  }
  std::string joint_action_name(JointActionId id) const {
    const auto parts = decode_joint(id);
    std::string out;
    for (std::size_t ax = 0; ax < parts.size(); ++ax) {
      if (ax) out += "|";
      out += action_sets_[ax][parts[ax]];
    }
    return out;
  }

  const std::string& state_name(StateId s) const { return state_names_[s]; }
  const LabelSet& labels(StateId s) const { return state_labels_[s]; }
  const AtomTable& atoms() const { return atoms_; }
  AtomTable& atoms() { return atoms_; }

  /// Raw atom partition as declared (validate() checks disjointness).
  const std::vector<std::vector<AtomId>>& ap_agent() const { return ap_agent_; }
  const std::vector<AtomId>& ap_all() const { return ap_all_; }
  /// Sorted copies for projection.
  LabelSet ap_agent_scope(int agent) const {
    return make_label_set(ap_agent_.at(agent));
  }
  LabelSet ap_all_scope() const {
    auto c = ap_all_;
    return make_label_set(c);
  }

  std::span<const Row> rows(StateId s) const {
    return {rows_.data() + row_begin_[s], row_begin_[s + 1] - row_begin_[s]};
  }
  const Row* find_row(StateId s, JointActionId a) const {
    for (const Row& r : rows(s))
      if (r.action == a) return &r;
    return nullptr;
  }
  std::span<const TransitionEntry> entries(const Row& r) const {
    return {entries_.data() + r.offset, r.len};
  }
  const RiskTag* risk(const Row& r) const {
    return r.risk < 0 ? nullptr : &risk_tags_[static_cast<std::size_t>(r.risk)];
  }

  /// Per-agent reward attached to one transition entry; zero when absent.
  double reward(int agent, const Row& r, std::uint32_t entry_idx) const {
    auto it = rewards_.find(reward_key(r, entry_idx));
    if (it == rewards_.end()) return 0.0;
    return it->second[static_cast<std::size_t>(agent)];
  }
  const std::vector<double>* reward_vector(const Row& r,
                                           std::uint32_t entry_idx) const {
    auto it = rewards_.find(reward_key(r, entry_idx));
    return it == rewards_.end() ? nullptr : &it->second;
  }

 private:
  std::uint64_t reward_key(const Row& r, std::uint32_t entry_idx) const {
    return static_cast<std::uint64_t>(r.offset) + entry_idx;
  }

  friend class MarkovGameBuilder;

  int n_agents_ = 0;
  bool cooperative_ = false;
  double gamma_ = 1.0;
  StateId initial_ = 0;
  JointActionId joint_count_ = 0;
  std::vector<std::vector<std::string>> action_sets_;
  std::vector<std::optional<ActionId>> idle_actions_;
  std::vector<std::string> state_names_;
  std::vector<LabelSet> state_labels_;
  AtomTable atoms_;
  std::vector<std::vector<AtomId>> ap_agent_;
  std::vector<AtomId> ap_all_;
  std::vector<TransitionEntry> entries_;
  std::vector<Row> rows_;
  std::vector<std::uint32_t> row_begin_;
  std::vector<RiskTag> risk_tags_;
  std::unordered_map<std::uint64_t, std::vector<double>> rewards_;
};

/// Assembles a MarkovGame. Rows may be added in any order; finalize() sorts
/// them per state by joint-action id and freezes the flat layout.
class MarkovGameBuilder {
 public:
  MarkovGameBuilder(int n_agents, std::vector<std::vector<std::string>> axes)
      : n_agents_(n_agents), axes_(std::move(axes)) {
    if (axes_.empty()) throw ModelError("game needs at least one action axis");
    idle_.resize(axes_.size());
  }

  void set_gamma(double g) { gamma_ = g; }
  void set_initial(StateId s) { initial_ = s; }
  void set_cooperative(bool c) { cooperative_ = c; }
  void set_idle(std::size_t axis, ActionId a) { idle_.at(axis) = a; }

  AtomId intern_atom(const std::string& name) { return atoms_.intern(name); }

  StateId add_state(std::string name, LabelSet labels) {
    states_.push_back({std::move(name), std::move(labels)});
    return static_cast<StateId>(states_.size() - 1);
  }

  void declare_partition(std::vector<std::vector<AtomId>> per_agent,
                         std::vector<AtomId> shared) {
    ap_agent_ = std::move(per_agent);
    ap_all_ = std::move(shared);
  }

  void add_row(StateId from, JointActionId action,
               std::vector<TransitionEntry> entries,
               std::optional<RiskTag> risk = std::nullopt) {
    pending_.push_back(
        {from, action, std::move(entries), std::move(risk), {}});
  }

  /// Reward vector (one value per agent) for transition (from, action, to).
  /// Must refer to a row added beforehand.
  void set_reward(StateId from, JointActionId action, StateId to,
                  std::vector<double> values) {
    for (auto it = pending_.rbegin(); it != pending_.rend(); ++it) {
      if (it->from == from && it->action == action) {
        it->rewards.emplace_back(to, std::move(values));
        return;
      }
    }
    throw ModelError("set_reward: no such row");
  }

  MarkovGame finalize() {
    MarkovGame g;
    g.n_agents_ = n_agents_;
    g.cooperative_ = cooperative_;
    g.gamma_ = gamma_;
    g.initial_ = initial_;
    g.action_sets_ = axes_;
    g.idle_actions_ = idle_;
    g.joint_count_ = 1;
    for (const auto& ax : axes_)
      g.joint_count_ *= static_cast<JointActionId>(ax.size());
    g.state_names_.reserve(states_.size());
    g.state_labels_.reserve(states_.size());
    for (auto& st : states_) {
      g.state_names_.push_back(std::move(st.first));
      g.state_labels_.push_back(make_label_set(std::move(st.second)));
    }
    g.atoms_ = atoms_;
    g.ap_agent_ = ap_agent_;
    if (g.ap_agent_.empty()) g.ap_agent_.resize(static_cast<std::size_t>(n_agents_));
    g.ap_all_ = ap_all_;

    std::stable_sort(pending_.begin(), pending_.end(),
                     [](const Pending& a, const Pending& b) {
                       if (a.from != b.from) return a.from < b.from;
                       return a.action < b.action;
                     });
    g.row_begin_.assign(g.n_states() + 1, 0);
    for (Pending& p : pending_) {
      if (p.from >= g.n_states()) throw ModelError("row from unknown state");
      Row r;
      r.action = p.action;
      r.offset = static_cast<std::uint32_t>(g.entries_.size());
      // merge duplicate successors, drop zero-probability entries
      std::sort(p.entries.begin(), p.entries.end(),
                [](const TransitionEntry& a, const TransitionEntry& b) {
                  return a.to < b.to;
                });
      std::vector<TransitionEntry> merged;
      for (const TransitionEntry& e : p.entries) {
        if (e.p == 0.0) continue;
        if (!merged.empty() && merged.back().to == e.to)
          merged.back().p += e.p;
        else
          merged.push_back(e);
      }
      for (const TransitionEntry& e : merged) {
        if (e.to >= g.n_states()) throw ModelError("row targets unknown state");
        g.entries_.push_back(e);
      }
      r.len = static_cast<std::uint32_t>(merged.size());
      r.risk = -1;
      if (p.risk) {
        r.risk = static_cast<std::int32_t>(g.risk_tags_.size());
        g.risk_tags_.push_back(*p.risk);
      }
      for (auto& [to, vals] : p.rewards) {
        if (vals.size() != static_cast<std::size_t>(n_agents_))
          throw ModelError("reward vector length != n_agents");
        bool found = false;
        for (std::uint32_t i = 0; i < r.len; ++i) {
          if (g.entries_[r.offset + i].to == to) {
            g.rewards_[static_cast<std::uint64_t>(r.offset) + i] = vals;
            found = true;
            break;
          }
        }
        if (!found) throw ModelError("reward on transition with zero probability");
      }
      g.rows_.push_back(r);
      ++g.row_begin_[p.from + 1];
    }
    for (std::size_t s = 0; s < g.n_states(); ++s)
      g.row_begin_[s + 1] += g.row_begin_[s];
    for (std::size_t s = 0; s < g.n_states(); ++s) {
      auto rect = g.rows(static_cast<StateId>(s));
      for (std::size_t i = 1; i < rect.size(); ++i)
        if (rect[i].action == rect[i - 1].action)
          throw ModelError("duplicate row for state " + g.state_name(static_cast<StateId>(s)));
    }
    return g;
  }

 private:
  struct Pending {
    StateId from;
    JointActionId action;
    std::vector<TransitionEntry> entries;
    std::optional<RiskTag> risk;
    std::vector<std::pair<StateId, std::vector<double>>> rewards;
  };

  int n_agents_;
  std::vector<std::vector<std::string>> axes_;
  std::vector<std::optional<ActionId>> idle_;
  double gamma_ = 1.0;
  StateId initial_ = 0;
  bool cooperative_ = false;
  std::vector<std::pair<std::string, LabelSet>> states_;
  AtomTable atoms_;
  std::vector<std::vector<AtomId>> ap_agent_;
  std::vector<AtomId> ap_all_;
  std::vector<Pending> pending_;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Structural checks: rows are distributions, the atom partition is disjoint,
/// every state has an available action, and (in cooperative mode) rewards are
/// shared across agents.
inline ValidationReport validate(const MarkovGame& g) {
  ValidationReport rep;
  for (StateId s = 0; s < g.n_states(); ++s) {
    if (g.rows(s).empty())
      rep.violations.push_back("state " + g.state_name(s) + " has no available joint action");
    for (const Row& r : g.rows(s)) {
      double sum = 0.0;
      for (const auto& e : g.entries(r)) {
        sum += e.p;
        if (e.p < 0.0 || e.p > 1.0)
          rep.violations.push_back("probability out of range at " + g.state_name(s));
      }
      if (std::abs(sum - 1.0) > 1e-12)
        rep.violations.push_back("row (" + g.state_name(s) + ", " +
                                 g.joint_action_name(r.action) + ") sums to " +
                                 std::to_string(sum));
      if (g.cooperative()) {
        for (std::uint32_t i = 0; i < r.len; ++i) {
          const auto* vals = g.reward_vector(r, i);
          if (!vals) continue;
          for (double v : *vals)
            if (v != (*vals)[0]) {
              rep.violations.push_back("non-shared reward in cooperative game at " +
                                       g.state_name(s));
              break;
            }
        }
      }
    }
  }
  std::unordered_map<AtomId, int> owner_count;
  for (const auto& set : g.ap_agent())
    for (AtomId a : set) owner_count[a]++;
  for (AtomId a : g.ap_all()) owner_count[a]++;
  for (const auto& [a, n] : owner_count)
    if (n > 1)
      rep.violations.push_back("atom " + g.atoms().name(a) +
                               " assigned to multiple partition cells");
  for (StateId s = 0; s < g.n_states(); ++s)
    for (AtomId a : g.labels(s))
      if (owner_count.find(a) == owner_count.end())
        rep.violations.push_back("atom " + g.atoms().name(a) +
                                 " used in labels but missing from the atom partition");
  std::sort(rep.violations.begin(), rep.violations.end());
  rep.violations.erase(std::unique(rep.violations.begin(), rep.violations.end()),
                       rep.violations.end());
  return rep;
}

/// One sampled step. Throws if the joint action is unavailable in s.
inline std::pair<StateId, std::vector<double>> step(const MarkovGame& g, StateId s,
                                                    JointActionId a, Rng& rng) {
  const Row* r = g.find_row(s, a);
  if (!r)
    throw ModelError("joint action " + g.joint_action_name(a) +
                     " unavailable in state " + g.state_name(s));
  const double u = rng.uniform();
  double acc = 0.0;
  const auto ents = g.entries(*r);
  std::uint32_t pick = static_cast<std::uint32_t>(ents.size()) - 1;
  for (std::uint32_t i = 0; i < ents.size(); ++i) {
    acc += ents[i].p;
    if (u < acc) {
      pick = i;
      break;
    }
  }
  std::vector<double> rew(static_cast<std::size_t>(g.n_agents()), 0.0);
  if (const auto* v = g.reward_vector(*r, pick)) rew = *v;
  return {ents[pick].to, std::move(rew)};
}

/// Markov chain induced by a memoryless joint policy, restricted to the
/// states reachable from the game's initial state. Keeps per-agent rewards
/// and the labelling so PCTL checking can run on it directly.
struct InducedChain {
  std::vector<StateId> parent_state;     // chain index -> state of the game
  std::vector<std::uint32_t> offsets;    // chain index -> first entry
  std::vector<TransitionEntry> entries;  // .to is a chain index
  std::vector<std::vector<double>> rewards;  // per entry, one value per agent
  std::vector<LabelSet> labels;
  const AtomTable* atoms = nullptr;
  int n_agents = 0;
  std::size_t initial = 0;

  std::size_t n_states() const { return parent_state.size(); }
  std::span<const TransitionEntry> row(std::size_t i) const {
    return {entries.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
  double reward_of(int agent, std::size_t entry_idx) const {
    return rewards[entry_idx][static_cast<std::size_t>(agent)];
  }
};

/// policy[s] = joint-action id chosen in s, or -1 where undefined. Throws
/// when a reachable state has no defined choice or the choice is unavailable.
inline InducedChain induce_chain(const MarkovGame& g,
                                 const std::vector<std::int64_t>& policy) {
  InducedChain c;
  c.atoms = &g.atoms();
  c.n_agents = g.n_agents();
  std::unordered_map<StateId, std::size_t> index;
  std::vector<StateId> queue{g.initial()};
  index.emplace(g.initial(), 0);
  c.parent_state.push_back(g.initial());
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const StateId s = queue[head];
    const std::int64_t a = policy.at(s);
    if (a < 0)
      throw ModelError("policy undefined at reachable state " + g.state_name(s));
    const Row* r = g.find_row(s, static_cast<JointActionId>(a));
    if (!r)
      throw ModelError("policy picks unavailable action in state " + g.state_name(s));
    for (const auto& e : g.entries(*r)) {
      if (index.emplace(e.to, c.parent_state.size()).second) {
        c.parent_state.push_back(e.to);
        queue.push_back(e.to);
      }
    }
  }
  c.offsets.assign(c.n_states() + 1, 0);
  for (std::size_t i = 0; i < c.n_states(); ++i) {
    const StateId s = c.parent_state[i];
    const Row* r = g.find_row(s, static_cast<JointActionId>(policy[s]));
    const auto ents = g.entries(*r);
    for (std::uint32_t k = 0; k < ents.size(); ++k) {
      c.entries.push_back({static_cast<StateId>(index.at(ents[k].to)), ents[k].p});
      std::vector<double> rew(static_cast<std::size_t>(g.n_agents()), 0.0);
      if (const auto* v = g.reward_vector(*r, k)) rew = *v;
      c.rewards.push_back(std::move(rew));
    }
    c.offsets[i + 1] = static_cast<std::uint32_t>(c.entries.size());
  }
  c.labels.reserve(c.n_states());
  for (StateId s : c.parent_state) c.labels.push_back(g.labels(s));
  c.initial = 0;
  return c;
}

}  // namespace amarl
