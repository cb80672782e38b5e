#pragma once

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amarl/model.hpp"
#include "amarl/model_io.hpp"
#include "amarl/policy.hpp"
#include "amarl/quotient.hpp"

namespace amarl {

namespace shield_detail {

inline LabelSet project(const LabelSet& l, const LabelSet& scope) {
  LabelSet out;
  std::set_intersection(l.begin(), l.end(), scope.begin(), scope.end(),
                        std::back_inserter(out));
  return out;
}

inline LabelSet sym_diff(const LabelSet& a, const LabelSet& b) {
  LabelSet out;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(),
                                std::back_inserter(out));
  return out;
}

inline bool subset(const LabelSet& a, const LabelSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace shield_detail

/// One-step relaxed branching condition. On the agent's atoms the proposed
/// labels must stay at the source projection or commit to one target's
/// projection and hold it. On the shared atoms the set of atoms flipped
/// away from the source may only grow and must stay inside some target's
/// flip set; the partial flips cover joint options whose agents complete
/// at different times.
inline bool relaxed_consistent(const LabelSet& current,
                               const LabelSet& proposed,
                               const LabelSet& source,
                               const std::vector<LabelSet>& targets,
                               const LabelSet& agent_scope,
                               const LabelSet& global_scope) {
  using shield_detail::project;
  using shield_detail::subset;
  using shield_detail::sym_diff;

  const LabelSet pc = project(current, agent_scope);
  const LabelSet pp = project(proposed, agent_scope);
  const LabelSet ps = project(source, agent_scope);
  if (pc == ps) {
    bool ok = pp == ps;
    for (const LabelSet& t : targets)
      if (!ok) ok = pp == project(t, agent_scope);
    if (!ok) return false;
  } else {
    if (pp != pc) return false;
    bool held = false;
    for (const LabelSet& t : targets)
      if (!held) held = pc == project(t, agent_scope);
    if (!held) return false;
  }

  const LabelSet gs = project(source, global_scope);
  const LabelSet flips_now = sym_diff(project(current, global_scope), gs);
  const LabelSet flips_next = sym_diff(project(proposed, global_scope), gs);
  if (!subset(flips_now, flips_next)) return false;
  for (const LabelSet& t : targets)
    if (subset(flips_next, sym_diff(project(t, global_scope), gs))) return true;
  return false;
}

struct ShieldDecision {
  std::vector<ActionId> executed;  // proposal with blocked slots idled
  std::vector<char> allow;         // per agent, 1 = proposal kept
  std::vector<double> adjust;      // -1 blocked, +1 option completed
  bool terminated = false;         // joint option ended this step
};

struct ShieldAuditRecord {
  int episode = 0;
  int step = 0;
  int agent = 0;
  ActionId blocked = 0;
  std::string reason;
};

inline json audit_to_json(const ShieldAuditRecord& r) {
  return json{{"episode", r.episode},
              {"step", r.step},
              {"agent", r.agent},
              {"blocked", r.blocked},
              {"reason", r.reason}};
}

/// Runtime monitor pinning concrete play to one abstract joint policy.
/// Proposals whose one-agent effect could leave the relaxed-consistent set
/// of the active option are replaced by idle at a cost of -1; option
/// completion pays +1 per agent. The joint option ends when the state's
/// block reaches the option support, at which point the next option starts.
class Shield {
 public:
  Shield(const MarkovGame& game, const AbstractMG& amg, AbstractPolicy policy,
         std::vector<BlockId> z, bool audit = false)
      : game_(&game),
        amg_(&amg),
        policy_(std::move(policy)),
        z_(std::move(z)),
        audit_enabled_(audit) {
    const int n = game.n_agents();
    if (static_cast<int>(game.n_axes()) != n)
      throw ModelError("shield needs one decision axis per agent");
    for (int i = 0; i < n; ++i)
      if (!game.idle_action(static_cast<std::size_t>(i)))
        throw ModelError("shield needs an idle action on every axis");
    if (z_.size() != game.n_states())
      throw ModelError("abstraction map covers " + std::to_string(z_.size()) +
                       " of " + std::to_string(game.n_states()) + " states");
    if (game.atoms().size() != amg.game.atoms().size())
      throw ModelError("game and abstraction use different atom alphabets");
    for (AtomId a = 0; a < game.atoms().size(); ++a)
      if (game.atoms().name(a) != amg.game.atoms().name(a))
        throw ModelError("game and abstraction use different atom alphabets");
    for (StateId s = 0; s < game.n_states(); ++s)
      if (game.labels(s) != amg.game.labels(z_[s]))
        throw ModelError("abstraction map mislabels state " +
                         game.state_name(s));
    for (int i = 0; i < n; ++i)
      agent_scope_.push_back(game.ap_agent_scope(i));
    all_scope_ = game.ap_all_scope();
    phase_.resize(static_cast<std::size_t>(n));
    source_proj_.resize(static_cast<std::size_t>(n));
    bonus_given_.assign(static_cast<std::size_t>(n), 0);
  }

  void reset(StateId start, int episode = 0) {
    episode_ = episode;
    step_ = 0;
    begin_option(start);
  }

  /// Actions whose one-agent probe (everyone else idle) keeps every
  /// outcome relaxed-consistent. Committed agents wait in place; idle is
  /// always included, so the set is never empty.
  std::vector<ActionId> allowed_actions(StateId s, int agent) const {
    const ActionId idle =
        *game_->idle_action(static_cast<std::size_t>(agent));
    std::vector<ActionId> out{idle};
    if (phase_[static_cast<std::size_t>(agent)].committed) return out;
    const LabelSet& cur = game_->labels(s);
    const auto n_actions = static_cast<ActionId>(
        game_->axis_actions(static_cast<std::size_t>(agent)).size());
    for (ActionId a = 0; a < n_actions; ++a) {
      if (a == idle) continue;
      const Row* r = probe_row(s, agent, a);
      if (!r) continue;
      bool ok = true;
      for (const auto& e : game_->entries(*r))
        if (!relaxed_consistent(cur, game_->labels(e.to), source_labels_,
                                target_labels_,
                                agent_scope_[static_cast<std::size_t>(agent)],
                                all_scope_)) {
          ok = false;
          break;
        }
      if (ok) out.push_back(a);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Replaces disallowed proposals by idle at -1 each. The environment
  /// should then execute the returned joint action and report the landing
  /// state to observe().
  ShieldDecision filter(StateId s, std::span<const ActionId> proposal) {
    const int n = game_->n_agents();
    ShieldDecision d;
    d.executed.assign(proposal.begin(), proposal.end());
    d.allow.assign(static_cast<std::size_t>(n), 1);
    d.adjust.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      const auto ok = allowed_actions(s, i);
      if (std::find(ok.begin(), ok.end(), proposal[static_cast<std::size_t>(i)]) !=
          ok.end())
        continue;
      const ActionId bad = d.executed[static_cast<std::size_t>(i)];
      d.executed[static_cast<std::size_t>(i)] =
          *game_->idle_action(static_cast<std::size_t>(i));
      d.allow[static_cast<std::size_t>(i)] = 0;
      d.adjust[static_cast<std::size_t>(i)] = -1.0;
      ++interventions_;
      if (audit_enabled_)
        audit_.push_back({episode_, step_, i, bad,
                          probe_row(s, i, bad)
                              ? "inconsistent with option " + option().name
                              : "unavailable"});
    }
    ++step_;
    return d;
  }

  /// Accounts for the sampled landing state: commits agents whose local
  /// atoms flipped (+1 at that moment), detects joint termination when the
  /// landing block is in the option support, pays the remaining completion
  /// bonuses and advances to the next option.
  void observe(StateId to, ShieldDecision& d) {
    const int n = game_->n_agents();
    const LabelSet& lab = game_->labels(to);
    for (int i = 0; i < n; ++i) {
      auto& ph = phase_[static_cast<std::size_t>(i)];
      if (ph.committed) continue;
      LabelSet p = shield_detail::project(
          lab, agent_scope_[static_cast<std::size_t>(i)]);
      if (p == source_proj_[static_cast<std::size_t>(i)]) continue;
      ph.committed = true;
      ph.held = std::move(p);
      if (!bonus_given_[static_cast<std::size_t>(i)]) {
        d.adjust[static_cast<std::size_t>(i)] += 1.0;
        bonus_given_[static_cast<std::size_t>(i)] = 1;
      }
    }
    const BlockId zb = z_.at(to);
    if (zb == source_) return;
    const auto& sup = option().support;
    if (std::find(sup.begin(), sup.end(), zb) == sup.end()) return;
    d.terminated = true;
    for (int i = 0; i < n; ++i)
      if (!bonus_given_[static_cast<std::size_t>(i)]) {
        d.adjust[static_cast<std::size_t>(i)] += 1.0;
        bonus_given_[static_cast<std::size_t>(i)] = 1;
      }
    begin_option(to);
  }

  BlockId source() const { return source_; }
  const AbstractOption& option() const {
    return amg_->option(static_cast<JointActionId>(option_));
  }
  const LabelSet& source_labels() const { return source_labels_; }
  const std::vector<LabelSet>& target_labels() const { return target_labels_; }
  const LabelSet& agent_scope(int agent) const {
    return agent_scope_[static_cast<std::size_t>(agent)];
  }
  const LabelSet& all_scope() const { return all_scope_; }
  bool committed(int agent) const {
    return phase_[static_cast<std::size_t>(agent)].committed;
  }
  std::uint64_t interventions() const { return interventions_; }
  const std::vector<ShieldAuditRecord>& audit() const { return audit_; }

 private:
  struct AgentPhase {
    bool committed = false;
    LabelSet held;  // the target projection the agent is holding
  };

  const Row* probe_row(StateId s, int agent, ActionId a) const {
    std::vector<ActionId> parts(game_->n_axes());
    for (std::size_t ax = 0; ax < parts.size(); ++ax)
      parts[ax] = *game_->idle_action(ax);
    parts[static_cast<std::size_t>(agent)] = a;
    return game_->find_row(s, game_->encode_joint(parts));
  }

  void begin_option(StateId s) {
    source_ = z_.at(s);
    if (source_ >= policy_.choice.size() || policy_.choice[source_] < 0)
      throw ModelError("abstract policy '" + policy_.id +
                       "' undefined at block " +
                       amg_->game.state_name(source_));
    option_ = policy_.choice[source_];
    const AbstractOption& ao = option();
    if (ao.source != source_)
      throw ModelError("abstract policy '" + policy_.id +
                       "' picks a foreign option at block " +
                       amg_->game.state_name(source_));
    source_labels_ = amg_->game.labels(source_);
    target_labels_.clear();
    for (BlockId c : ao.support) target_labels_.push_back(amg_->game.labels(c));
    for (int i = 0; i < game_->n_agents(); ++i) {
      phase_[static_cast<std::size_t>(i)] = {};
      source_proj_[static_cast<std::size_t>(i)] = shield_detail::project(
          source_labels_, agent_scope_[static_cast<std::size_t>(i)]);
      bonus_given_[static_cast<std::size_t>(i)] = 0;
    }
  }

  const MarkovGame* game_;
  const AbstractMG* amg_;
  AbstractPolicy policy_;
  std::vector<BlockId> z_;
  bool audit_enabled_;

  std::vector<LabelSet> agent_scope_;
  LabelSet all_scope_;

  BlockId source_ = 0;
  std::int64_t option_ = -1;
  LabelSet source_labels_;
  std::vector<LabelSet> target_labels_;
  std::vector<AgentPhase> phase_;
  std::vector<LabelSet> source_proj_;
  std::vector<char> bonus_given_;

  int episode_ = 0;
  int step_ = 0;
  std::uint64_t interventions_ = 0;
  std::vector<ShieldAuditRecord> audit_;
};

}  // namespace amarl
