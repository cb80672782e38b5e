#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "amarl/model.hpp"

namespace amarl {

using json = nlohmann::json;

namespace detail {

inline double parse_prob(const json& v, const std::string& where) {
  double p;
  if (v.is_number()) {
    p = v.get<double>();
  } else if (v.is_string()) {
    try {
      std::size_t used = 0;
      p = std::stod(v.get<std::string>(), &used);
      if (used != v.get<std::string>().size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ParseError("bad probability literal in " + where);
    }
  } else {
    throw ParseError("probability must be a number or decimal string in " + where);
  }
  if (p < 0.0 || p > 1.0) throw ParseError("probability out of [0,1] in " + where);
  return p;
}

inline json labels_to_json(const MarkovGame& g, const LabelSet& l) {
  std::vector<std::string> names;
  for (AtomId a : l) names.push_back(g.atoms().name(a));
  std::sort(names.begin(), names.end());
  return json(names);
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ParseError("invalid JSON in " + path + ": " + e.what());
  }
}

}  // namespace detail

/// Reads a game from the on-disk JSON format. Rows whose probabilities sum
/// off 1 by more than 1e-9 are rejected; smaller drift is renormalized.
inline MarkovGame load_model(const json& j) {
  if (!j.contains("n_agents") || !j.contains("states") || !j.contains("actions") ||
      !j.contains("transitions"))
    throw ParseError("model file missing a required key");
  const int n_agents = j.at("n_agents").get<int>();
  std::vector<std::vector<std::string>> axes;
  for (const auto& ax : j.at("actions"))
    axes.push_back(ax.get<std::vector<std::string>>());
  MarkovGameBuilder b(n_agents, axes);
  b.set_gamma(j.value("gamma", 1.0));
  if (j.contains("idle")) {
    const auto& idle = j.at("idle");
    if (idle.size() != axes.size())
      throw ParseError("idle list length != number of action axes");
    for (std::size_t ax = 0; ax < axes.size(); ++ax) {
      if (idle[ax].is_null()) continue;
      const auto name = idle[ax].get<std::string>();
      auto it = std::find(axes[ax].begin(), axes[ax].end(), name);
      if (it == axes[ax].end())
        throw ParseError("idle action " + name + " not on axis " + std::to_string(ax));
      b.set_idle(ax, static_cast<ActionId>(it - axes[ax].begin()));
    }
  }
  b.set_cooperative(j.value("cooperative", false));

  std::unordered_map<std::string, StateId> state_ids;
  for (const auto& st : j.at("states")) {
    const std::string id = st.at("id").get<std::string>();
    if (state_ids.count(id)) throw ParseError("duplicate state id " + id);
    LabelSet labels;
    for (const auto& l : st.value("labels", json::array()))
      labels.push_back(b.intern_atom(l.get<std::string>()));
    state_ids.emplace(id, b.add_state(id, std::move(labels)));
  }
  auto state_of = [&](const std::string& name, const char* where) {
    auto it = state_ids.find(name);
    if (it == state_ids.end())
      throw ParseError(std::string(where) + " references unknown state " + name);
    return it->second;
  };
  auto action_of = [&](const json& ja) {
    const auto names = ja.get<std::vector<std::string>>();
    if (names.size() != axes.size())
      throw ParseError("joint action arity != number of action axes");
    std::vector<ActionId> parts(axes.size());
    for (std::size_t ax = 0; ax < axes.size(); ++ax) {
      auto it = std::find(axes[ax].begin(), axes[ax].end(), names[ax]);
      if (it == axes[ax].end())
        throw ParseError("unknown action " + names[ax] + " on axis " +
                         std::to_string(ax));
      parts[ax] = static_cast<ActionId>(it - axes[ax].begin());
    }
    JointActionId id = 0;
    for (std::size_t ax = 0; ax < axes.size(); ++ax)
      id = id * static_cast<JointActionId>(axes[ax].size()) + parts[ax];
    return id;
  };

  for (const auto& tr : j.at("transitions")) {
    const StateId from = state_of(tr.at("from").get<std::string>(), "transition");
    const JointActionId action = action_of(tr.at("joint_action"));
    std::vector<TransitionEntry> entries;
    double sum = 0.0;
    for (const auto& [to, pv] : tr.at("to_probs").items()) {
      const double p = detail::parse_prob(pv, "transition from " +
                                                  tr.at("from").get<std::string>());
      sum += p;
      entries.push_back({state_of(to, "transition"), p});
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ParseError("transition row from " + tr.at("from").get<std::string>() +
                       " sums to " + std::to_string(sum));
    for (auto& e : entries) e.p /= sum;
    std::optional<RiskTag> risk;
    if (tr.contains("risk"))
      risk = RiskTag{tr.at("risk").at("family").get<std::string>(),
                     tr.at("risk").value("rank", 0)};
    b.add_row(from, action, std::move(entries), std::move(risk));
  }
  for (const auto& rw : j.value("rewards", json::array())) {
    b.set_reward(state_of(rw.at("from").get<std::string>(), "reward"),
                 action_of(rw.at("joint_action")),
                 state_of(rw.at("to").get<std::string>(), "reward"),
                 rw.at("values").get<std::vector<double>>());
  }

  if (j.contains("atom_partition")) {
    const auto& ap = j.at("atom_partition");
    std::vector<std::vector<AtomId>> per_agent;
    for (int i = 1; i <= n_agents; ++i) {
      std::vector<AtomId> set;
      for (const auto& a : ap.value("AP_" + std::to_string(i), json::array()))
        set.push_back(b.intern_atom(a.get<std::string>()));
      per_agent.push_back(std::move(set));
    }
    std::vector<AtomId> shared;
    for (const auto& a : ap.value("AP_all", json::array()))
      shared.push_back(b.intern_atom(a.get<std::string>()));
    b.declare_partition(std::move(per_agent), std::move(shared));
  }
  if (j.contains("initial"))
    b.set_initial(state_of(j.at("initial").get<std::string>(), "initial"));
  return b.finalize();
}

inline MarkovGame load_model_file(const std::string& path) {
  return load_model(detail::read_json_file(path));
}

inline json save_model(const MarkovGame& g) {
  json j;
  j["n_agents"] = g.n_agents();
  j["gamma"] = g.gamma();
  j["cooperative"] = g.cooperative();
  j["initial"] = g.state_name(g.initial());
  json states = json::array();
  for (StateId s = 0; s < g.n_states(); ++s)
    states.push_back({{"id", g.state_name(s)},
                      {"labels", detail::labels_to_json(g, g.labels(s))}});
  j["states"] = std::move(states);
  json actions = json::array();
  for (std::size_t ax = 0; ax < g.n_axes(); ++ax) actions.push_back(g.axis_actions(ax));
  j["actions"] = std::move(actions);
  bool any_idle = false;
  for (std::size_t ax = 0; ax < g.n_axes(); ++ax) any_idle |= g.idle_action(ax).has_value();
  if (any_idle) {
    json idle = json::array();
    for (std::size_t ax = 0; ax < g.n_axes(); ++ax) {
      if (const auto a = g.idle_action(ax))
        idle.push_back(g.axis_actions(ax)[*a]);
      else
        idle.push_back(nullptr);
    }
    j["idle"] = std::move(idle);
  }
  json transitions = json::array();
  json rewards = json::array();
  for (StateId s = 0; s < g.n_states(); ++s) {
    for (const Row& r : g.rows(s)) {
      json tr;
      tr["from"] = g.state_name(s);
      json ja = json::array();
      const auto parts = g.decode_joint(r.action);
      for (std::size_t ax = 0; ax < g.n_axes(); ++ax)
        ja.push_back(g.axis_actions(ax)[parts[ax]]);
      tr["joint_action"] = ja;
      json probs = json::object();
      const auto ents = g.entries(r);
      for (std::uint32_t i = 0; i < ents.size(); ++i) {
        probs[g.state_name(ents[i].to)] = ents[i].p;
        if (const auto* v = g.reward_vector(r, i))
          rewards.push_back({{"from", g.state_name(s)},
                             {"joint_action", ja},
                             {"to", g.state_name(ents[i].to)},
                             {"values", *v}});
      }
      tr["to_probs"] = std::move(probs);
      if (const RiskTag* t = g.risk(r))
        tr["risk"] = {{"family", t->family}, {"rank", t->rank}};
      transitions.push_back(std::move(tr));
    }
  }
  j["transitions"] = std::move(transitions);
  j["rewards"] = std::move(rewards);
  json ap;
  for (int i = 0; i < g.n_agents(); ++i) {
    json set = json::array();
    if (static_cast<std::size_t>(i) < g.ap_agent().size())
      for (AtomId a : g.ap_agent()[static_cast<std::size_t>(i)])
        set.push_back(g.atoms().name(a));
    ap["AP_" + std::to_string(i + 1)] = std::move(set);
  }
  json shared = json::array();
  for (AtomId a : g.ap_all()) shared.push_back(g.atoms().name(a));
  ap["AP_all"] = std::move(shared);
  j["atom_partition"] = std::move(ap);
  return j;
}

/// PRISM explicit-state export of an induced chain: a .tra body with
/// "from to prob" lines and a .lab body declaring atoms then listing the
/// atoms true in each state.
inline std::string export_tra(const InducedChain& c) {
  std::ostringstream out;
  out << c.n_states() << " " << c.entries.size() << "\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < c.n_states(); ++i)
    for (const auto& e : c.row(i)) out << i << " " << e.to << " " << e.p << "\n";
  return out.str();
}

inline std::string export_lab(const InducedChain& c) {
  std::ostringstream out;
  std::vector<AtomId> used;
  for (const auto& l : c.labels) used.insert(used.end(), l.begin(), l.end());
  used = make_label_set(std::move(used));
  std::unordered_map<AtomId, std::size_t> col;
  for (std::size_t i = 0; i < used.size(); ++i) {
    col[used[i]] = i;
    out << (i ? " " : "") << i << "=\"" << c.atoms->name(used[i]) << "\"";
  }
  out << "\n";
  for (std::size_t s = 0; s < c.n_states(); ++s) {
    if (c.labels[s].empty()) continue;
    out << s << ":";
    for (AtomId a : c.labels[s]) out << " " << col[a];
    out << "\n";
  }
  return out.str();
}

}  // namespace amarl
