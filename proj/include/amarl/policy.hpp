#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "amarl/model_io.hpp"
#include "amarl/pctl.hpp"
#include "amarl/pctl_check.hpp"
#include "amarl/quotient.hpp"
#include "amarl/rng.hpp"

namespace amarl {

/// Deterministic abstract joint policy: one joint option per block. The
/// choice at a block must be one of that block's own options.
struct AbstractPolicy {
  std::string id;
  std::vector<std::int64_t> choice;  // block -> option id
};

/// Uniform i.i.d. draw over the available options of every block,
/// duplicates dropped, so the result may hold fewer than count policies.
/// Ids encode the seed and the surviving position.
inline std::vector<AbstractPolicy> sample_policies(const AbstractMG& amg,
                                                   int count,
                                                   std::uint64_t seed) {
  Rng rng(seed);
  const MarkovGame& g = amg.game;
  std::vector<AbstractPolicy> out;
  std::set<std::vector<std::int64_t>> seen;
  for (int k = 0; k < count; ++k) {
    std::vector<std::int64_t> choice(g.n_states(), -1);
    for (StateId s = 0; s < g.n_states(); ++s) {
      const auto rows = g.rows(s);
      choice[s] =
          rows[rng.below(static_cast<std::uint32_t>(rows.size()))].action;
    }
    if (seen.insert(choice).second)
      out.push_back({"p" + std::to_string(seed) + "-" +
                         std::to_string(out.size()),
                     std::move(choice)});
  }
  return out;
}

enum class ConstraintTag { Safety, Optimality, Metric };

struct Constraint {
  std::string id;  // S<k> / O<k> / M<k> by tag, in file order
  ConstraintTag tag = ConstraintTag::Safety;
  std::string text;
  FormulaPtr formula;
};

/// Parsed constraint file. Safety items are checked on the safe game,
/// optimality items on the optimal one; metric items are the numeric
/// queries that rank policies.
struct ConstraintSet {
  std::vector<Constraint> items;

  std::vector<std::size_t> metric_order() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].tag == ConstraintTag::Metric) idx.push_back(i);
    return idx;
  }
};

namespace policy_detail {

inline void collect_atoms(const Formula& f, std::vector<std::string>& out) {
  switch (f.kind) {
    case FKind::Atom:
      out.push_back(f.atom);
      return;
    case FKind::And:
      collect_atoms(*f.lhs, out);
      collect_atoms(*f.rhs, out);
      return;
    case FKind::Not:
      collect_atoms(*f.lhs, out);
      return;
    case FKind::PBound:
      if (f.p1) collect_atoms(*f.p1, out);
      if (f.p2) collect_atoms(*f.p2, out);
      return;
    case FKind::RBound:
      if (f.p1) collect_atoms(*f.p1, out);
      return;
    default:
      return;
  }
}

/// Larger is better: values bounded from above rank negated.
inline double oriented_value(const Constraint& c, double v) {
  return (c.formula->cmp == Cmp::LT || c.formula->cmp == Cmp::LE) ? -v : v;
}

}  // namespace policy_detail

/// One constraint per line, "<tag> <formula>" with tag safety, optimality
/// or metric; '#' starts a comment. Formulas must stay in the weak
/// fragment and may only use atoms of the given alphabet.
inline ConstraintSet parse_constraints(const std::string& text,
                                       const AtomTable& atoms) {
  ConstraintSet cs;
  int counts[3] = {0, 0, 0};
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tag_word;
    if (!(ls >> tag_word)) continue;
    ConstraintTag tag;
    if (tag_word == "safety") {
      tag = ConstraintTag::Safety;
    } else if (tag_word == "optimality") {
      tag = ConstraintTag::Optimality;
    } else if (tag_word == "metric") {
      tag = ConstraintTag::Metric;
    } else {
      throw ParseError("unknown constraint tag '" + tag_word + "' on line " +
                       std::to_string(line_no));
    }
    std::string rest;
    std::getline(ls, rest);
    const FormulaPtr f = parse_formula(rest);
    const char prefix[3] = {'S', 'O', 'M'};
    const std::string id =
        std::string(1, prefix[static_cast<int>(tag)]) +
        std::to_string(++counts[static_cast<int>(tag)]);
    if (!weak(*f))
      throw ParseError("constraint " + id + " is outside the weak fragment");
    std::vector<std::string> used;
    policy_detail::collect_atoms(*f, used);
    for (const std::string& a : used) {
      AtomId ignore;
      if (!atoms.find(a, ignore))
        throw ParseError("constraint " + id + " uses unknown atom '" + a +
                         "'");
    }
    const std::size_t b = rest.find_first_not_of(" \t");
    cs.items.push_back(
        {id, tag, b == std::string::npos ? rest : rest.substr(b), f});
  }
  return cs;
}

inline ConstraintSet load_constraints_file(const std::string& path,
                                           const AtomTable& atoms) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_constraints(ss.str(), atoms);
}

/// Check record of one policy: one value and one verdict per constraint,
/// in file order. Metric queries always hold.
struct PolicyEvaluation {
  std::string policy_id;
  std::vector<double> values;
  std::vector<char> holds;
  bool safe = false;        // all safety constraints hold
  bool admissible = false;  // all constraints hold
};

/// Induces the policy's chain on both games and checks every constraint on
/// its designated side: safety on the safe game, the rest on the optimal.
inline PolicyEvaluation verify_policy(const AbstractPolicy& policy,
                                      const AbstractMG& safe_amg,
                                      const AbstractMG& optimal_amg,
                                      const ConstraintSet& cs,
                                      const CheckOptions& opts = {}) {
  if (policy.choice.size() != safe_amg.game.n_states() ||
      policy.choice.size() != optimal_amg.game.n_states())
    throw ModelError("policy " + policy.id +
                     " does not match the abstract state space");
  const InducedChain safe_chain = induce_chain(safe_amg.game, policy.choice);
  const InducedChain opt_chain = induce_chain(optimal_amg.game, policy.choice);
  PolicyEvaluation ev;
  ev.policy_id = policy.id;
  ev.safe = true;
  ev.admissible = true;
  for (const Constraint& c : cs.items) {
    const bool on_safe = c.tag == ConstraintTag::Safety;
    const CheckResult res =
        check_chain(on_safe ? safe_chain : opt_chain, *c.formula, opts);
    ev.values.push_back(res.initial_value);
    ev.holds.push_back(res.initial_sat);
    if (!res.initial_sat) {
      ev.admissible = false;
      if (on_safe) ev.safe = false;
    }
  }
  return ev;
}

/// Safe evaluations not strictly dominated on the oriented metric vector.
/// The result is sorted by policy id, which also makes the filter
/// idempotent and independent of input order.
inline std::vector<PolicyEvaluation> pareto_filter(
    const ConstraintSet& cs, const std::vector<PolicyEvaluation>& evs) {
  const std::vector<std::size_t> metric = cs.metric_order();
  auto oriented = [&](const PolicyEvaluation& e, std::size_t k) {
    return policy_detail::oriented_value(cs.items[metric[k]],
                                         e.values[metric[k]]);
  };
  std::vector<const PolicyEvaluation*> safe;
  for (const PolicyEvaluation& e : evs)
    if (e.safe) safe.push_back(&e);
  std::vector<PolicyEvaluation> out;
  for (const PolicyEvaluation* e : safe) {
    bool dominated = false;
    for (const PolicyEvaluation* d : safe) {
      bool geq = true, strict = false;
      for (std::size_t k = 0; k < metric.size(); ++k) {
        if (oriented(*d, k) < oriented(*e, k)) {
          geq = false;
          break;
        }
        if (oriented(*d, k) > oriented(*e, k)) strict = true;
      }
      if (geq && strict) {
        dominated = true;
        break;
      }
    }
    if (!dominated) out.push_back(*e);
  }
  std::sort(out.begin(), out.end(),
            [](const PolicyEvaluation& a, const PolicyEvaluation& b) {
              return a.policy_id < b.policy_id;
            });
  return out;
}

/// Lexicographic maximum over the oriented metrics, ties broken by the
/// smaller policy id. Returns nullptr when the candidate set is empty.
inline const PolicyEvaluation* select_policy(
    const ConstraintSet& cs, const std::vector<PolicyEvaluation>& pareto) {
  const std::vector<std::size_t> metric = cs.metric_order();
  const PolicyEvaluation* best = nullptr;
  for (const PolicyEvaluation& e : pareto) {
    if (!best) {
      best = &e;
      continue;
    }
    int c = 0;
    for (std::size_t k = 0; k < metric.size() && c == 0; ++k) {
      const double ev = policy_detail::oriented_value(cs.items[metric[k]],
                                                      e.values[metric[k]]);
      const double bv = policy_detail::oriented_value(cs.items[metric[k]],
                                                      best->values[metric[k]]);
      c = ev > bv ? 1 : ev < bv ? -1 : 0;
    }
    if (c > 0 || (c == 0 && e.policy_id < best->policy_id)) best = &e;
  }
  return best;
}

/// Policies are stored by option name so the file stays readable and can
/// be validated against the game it is replayed on.
inline json save_policy(const AbstractPolicy& p, const AbstractMG& amg) {
  json j;
  j["id"] = p.id;
  std::vector<std::string> names;
  for (StateId s = 0; s < amg.game.n_states(); ++s) {
    const std::int64_t a = p.choice.at(s);
    if (a < 0 || amg.options.at(static_cast<std::size_t>(a)).source != s)
      throw ModelError("policy " + p.id + " picks a foreign option at state " +
                       amg.game.state_name(s));
    names.push_back(amg.options[static_cast<std::size_t>(a)].name);
  }
  j["options"] = names;
  return j;
}

inline AbstractPolicy load_policy(const json& j, const AbstractMG& amg) {
  if (!j.is_object() || !j.contains("id") || !j.contains("options"))
    throw ParseError("policy file needs 'id' and 'options'");
  AbstractPolicy p;
  p.id = j.at("id").get<std::string>();
  const auto& names = j.at("options");
  if (!names.is_array() || names.size() != amg.game.n_states())
    throw ParseError("policy '" + p.id + "' lists " +
                     std::to_string(names.size()) + " options for " +
                     std::to_string(amg.game.n_states()) + " states");
  p.choice.assign(amg.game.n_states(), -1);
  for (StateId s = 0; s < amg.game.n_states(); ++s) {
    const std::string want = names[s].get<std::string>();
    for (std::size_t o = 0; o < amg.options.size(); ++o)
      if (amg.options[o].source == s && amg.options[o].name == want)
        p.choice[s] = static_cast<std::int64_t>(o);
    if (p.choice[s] < 0)
      throw ParseError("policy '" + p.id + "' names unknown option '" + want +
                       "' at state " + amg.game.state_name(s));
  }
  return p;
}

/// One JSON line of the evaluation file, the machine-readable run record.
/// Infinite reward values are written as the string "inf".
inline json evaluation_to_json(const ConstraintSet& cs,
                               const PolicyEvaluation& ev) {
  json j;
  j["policy"] = ev.policy_id;
  json values = json::object();
  json holds = json::object();
  for (std::size_t i = 0; i < cs.items.size(); ++i) {
    const double v = ev.values[i];
    if (std::isinf(v))
      values[cs.items[i].id] = v > 0 ? "inf" : "-inf";
    else
      values[cs.items[i].id] = v;
    holds[cs.items[i].id] = static_cast<bool>(ev.holds[i]);
  }
  j["values"] = values;
  j["holds"] = holds;
  j["safe"] = ev.safe;
  j["admissible"] = ev.admissible;
  return j;
}

}  // namespace amarl
