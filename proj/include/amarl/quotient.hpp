#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amarl/model.hpp"
#include "amarl/model_io.hpp"

namespace amarl {

struct Partition {
  std::vector<BlockId> block_of;             // state -> block
  std::vector<std::vector<StateId>> members; // block -> states, ascending
  std::size_t n_blocks() const { return members.size(); }
};

inline Partition label_partition(const MarkovGame& g) {
  Partition p;
  p.block_of.resize(g.n_states());
  std::unordered_map<LabelSet, BlockId, LabelSetHash> ids;
  for (StateId s = 0; s < g.n_states(); ++s) {
    auto [it, fresh] = ids.try_emplace(g.labels(s),
                                       static_cast<BlockId>(p.members.size()));
    if (fresh) p.members.emplace_back();
    p.block_of[s] = it->second;
    p.members[it->second].push_back(s);
  }
  return p;
}

/// Row probability mass per partition block, sorted by block id.
using ClassDistribution = std::vector<std::pair<BlockId, double>>;

inline ClassDistribution class_distribution(const MarkovGame& g, const Partition& p,
                                            const Row& r) {
  ClassDistribution cd;
  for (const auto& e : g.entries(r)) {
    const BlockId b = p.block_of[e.to];
    auto it = std::find_if(cd.begin(), cd.end(),
                           [b](const auto& x) { return x.first == b; });
    if (it == cd.end())
      cd.emplace_back(b, e.p);
    else
      it->second += e.p;
  }
  std::sort(cd.begin(), cd.end());
  return cd;
}

inline bool cd_equal(const ClassDistribution& a, const ClassDistribution& b,
                     double tol = 1e-12) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].first != b[i].first || std::abs(a[i].second - b[i].second) > tol)
      return false;
  return true;
}

namespace quotient_detail {

/// Greatest subset X of a block such that each member of X has some stay
/// row (given by its local successor indices) leading back into X. States
/// in the core can remain inside the block forever.
inline std::vector<char> divergence_core(
    const std::vector<std::vector<std::vector<std::uint32_t>>>& stay_rows) {
  const std::size_t m = stay_rows.size();
  std::vector<char> in_div(m, 0);
  for (std::size_t i = 0; i < m; ++i) in_div[i] = !stay_rows[i].empty();
  bool shrunk = true;
  while (shrunk) {
    shrunk = false;
    for (std::size_t i = 0; i < m; ++i) {
      if (!in_div[i]) continue;
      bool keep = false;
      for (const auto& targets : stay_rows[i]) {
        bool all = true;
        for (std::uint32_t t : targets)
          if (!in_div[t]) {
            all = false;
            break;
          }
        if (all) {
          keep = true;
          break;
        }
      }
      if (!keep) {
        in_div[i] = 0;
        shrunk = true;
      }
    }
  }
  return in_div;
}

/// One refinement attempt on block b. A state matches an observed exit
/// distribution if it can walk to a state owning such a row using
/// deterministic steps that stay inside the block; it matches divergence if
/// it can walk to the divergence core (states able to remain in the block
/// forever). Any behaviour matched by a proper nonempty subset splits b.
inline bool split_block(const MarkovGame& g, Partition& p, BlockId b) {
  const std::vector<StateId>& mem = p.members[b];
  const std::size_t m = mem.size();
  if (m < 2) return false;
  std::unordered_map<StateId, std::uint32_t> local;
  local.reserve(m);
  for (std::uint32_t i = 0; i < m; ++i) local.emplace(mem[i], i);

  std::vector<ClassDistribution> cds;
  std::vector<std::vector<std::uint32_t>> holders;
  std::vector<std::vector<std::uint32_t>> det_rev(m);  // u -> det predecessors
  std::vector<std::vector<std::vector<std::uint32_t>>> stay_rows(m);

  for (std::uint32_t i = 0; i < m; ++i) {
    for (const Row& r : g.rows(mem[i])) {
      const auto ents = g.entries(r);
      bool inside = true;
      std::vector<std::uint32_t> targets;
      for (const auto& e : ents) {
        if (p.block_of[e.to] != b) {
          inside = false;
          break;
        }
        targets.push_back(local.at(e.to));
      }
      if (inside) {
        if (ents.size() == 1) det_rev[targets[0]].push_back(i);
        stay_rows[i].push_back(std::move(targets));
        continue;
      }
      ClassDistribution cd = class_distribution(g, p, r);
      std::size_t k = 0;
      while (k < cds.size() && !cd_equal(cds[k], cd)) ++k;
      if (k == cds.size()) {
        cds.push_back(std::move(cd));
        holders.emplace_back();
      }
      if (holders[k].empty() || holders[k].back() != i) holders[k].push_back(i);
    }
  }

  const std::vector<char> in_div = divergence_core(stay_rows);

  auto backward_closure = [&](std::vector<std::uint32_t> seed) {
    std::vector<char> in(m, 0);
    for (std::uint32_t s : seed) in[s] = 1;
    for (std::size_t head = 0; head < seed.size(); ++head)
      for (std::uint32_t u : det_rev[seed[head]])
        if (!in[u]) {
          in[u] = 1;
          seed.push_back(u);
        }
    return in;
  };

  std::vector<std::vector<char>> sats;
  for (const auto& h : holders) sats.push_back(backward_closure(h));
  {
    std::vector<std::uint32_t> core;
    for (std::uint32_t i = 0; i < m; ++i)
      if (in_div[i]) core.push_back(i);
    if (!core.empty()) sats.push_back(backward_closure(std::move(core)));
  }

  for (const auto& sat : sats) {
    std::size_t cnt = 0;
    for (char c : sat) cnt += c;
    if (cnt == 0 || cnt == m) continue;
    std::vector<StateId> keep, moved;
    for (std::uint32_t i = 0; i < m; ++i)
      (sat[i] ? keep : moved).push_back(mem[i]);
    const BlockId fresh = static_cast<BlockId>(p.members.size());
    for (StateId s : moved) p.block_of[s] = fresh;
    p.members[b] = std::move(keep);
    p.members.push_back(std::move(moved));
    return true;
  }
  return false;
}

}  // namespace quotient_detail

/// Coarsest label-respecting partition this refinement scheme can certify as
/// a stutter bisimulation: starts from the label partition and splits until
/// every block's exit behaviours are matched by all of its members. The
/// matcher only credits deterministic in-block walks, so it may split more
/// than strictly necessary but never merges states it should not.
inline Partition stutter_partition(const MarkovGame& g) {
  Partition p = label_partition(g);
  bool any = true;
  while (any) {
    any = false;
    for (BlockId b = 0; b < p.members.size(); ++b)
      any = quotient_detail::split_block(g, p, b) || any;
  }
  return p;
}

enum class Mode { Safe, Optimal };

struct OptionVariant {
  int rank = 0;
  ClassDistribution cd;
  std::vector<double> reward;  // conditional shared reward per cd entry
  StateId sample_state = 0;    // one concrete witness row
  JointActionId sample_action = 0;
  int count = 0;               // witness rows merged into this variant
};

/// An abstract move out of one block. Variants are the risk levels observed
/// in the family, rank ascending; safe play realizes the last one, optimal
/// play the first.
struct AbstractOption {
  std::string name;
  std::string family;
  BlockId source = 0;
  bool tagged = false;  // rows carry a risk tag in the built game
  std::vector<OptionVariant> variants;
  std::vector<BlockId> support;  // union of variant supports, sorted
  int safe_idx = 0;
  int opt_idx = 0;
};

struct AbstractMG {
  MarkovGame game;  // one decision axis; actions on it are the options
  Mode mode = Mode::Safe;
  std::vector<std::vector<StateId>> block_members;
  std::vector<double> weights;  // concrete state -> 1 / |its block|
  std::vector<AbstractOption> options;

  const AbstractOption& option(JointActionId a) const { return options.at(a); }
};

struct AmgPair {
  AbstractMG safe;
  AbstractMG optimal;
};

namespace quotient_detail {

inline std::string block_name(BlockId b) { return "b" + std::to_string(b); }

/// A divergence-core member of block b together with one of its in-core
/// stay rows, if the core is nonempty. Such blocks may refuse to leave
/// forever, which the abstract game must expose as a self-loop option.
inline std::optional<std::pair<StateId, JointActionId>> divergence_witness(
    const MarkovGame& g, const Partition& p, BlockId b) {
  const std::vector<StateId>& mem = p.members[b];
  const std::size_t m = mem.size();
  std::unordered_map<StateId, std::uint32_t> local;
  local.reserve(m);
  for (std::uint32_t i = 0; i < m; ++i) local.emplace(mem[i], i);

  std::vector<std::vector<std::vector<std::uint32_t>>> stay_rows(m);
  std::vector<std::vector<JointActionId>> stay_actions(m);
  for (std::uint32_t i = 0; i < m; ++i) {
    for (const Row& r : g.rows(mem[i])) {
      bool inside = true;
      std::vector<std::uint32_t> targets;
      for (const auto& e : g.entries(r)) {
        if (p.block_of[e.to] != b) {
          inside = false;
          break;
        }
        targets.push_back(local.at(e.to));
      }
      if (!inside) continue;
      stay_rows[i].push_back(std::move(targets));
      stay_actions[i].push_back(r.action);
    }
  }

  const std::vector<char> core = divergence_core(stay_rows);
  for (std::uint32_t i = 0; i < m; ++i) {
    if (!core[i]) continue;
    for (std::size_t k = 0; k < stay_rows[i].size(); ++k) {
      bool all = true;
      for (std::uint32_t t : stay_rows[i][k])
        if (!core[t]) {
          all = false;
          break;
        }
      if (all) return std::make_pair(mem[i], stay_actions[i][k]);
    }
  }
  return std::nullopt;
}

}  // namespace quotient_detail

/// Shared assembly step: turns an option table plus block metadata into the
/// safe/optimal game pair. Used by the quotient construction below and by
/// the direct grid abstraction.
inline AmgPair assemble_amg_pair(int n_agents, double gamma,
                                 const AtomTable& atoms,
                                 const std::vector<std::vector<AtomId>>& ap_agent,
                                 const std::vector<AtomId>& ap_all,
                                 const std::vector<LabelSet>& block_labels,
                                 const std::vector<std::string>& block_names,
                                 BlockId initial,
                                 std::vector<AbstractOption> options,
                                 std::vector<std::vector<StateId>> block_members,
                                 std::vector<double> weights) {
  std::vector<std::string> names;
  names.reserve(options.size());
  for (const AbstractOption& o : options) names.push_back(o.name);
  auto build_one = [&](Mode mode) {
    MarkovGameBuilder bld(n_agents, {names});
    bld.set_gamma(gamma);
    bld.set_cooperative(true);
    for (AtomId a = 0; a < atoms.size(); ++a) bld.intern_atom(atoms.name(a));
    for (std::size_t b = 0; b < block_labels.size(); ++b)
      bld.add_state(block_names[b], block_labels[b]);
    bld.declare_partition(ap_agent, ap_all);
    bld.set_initial(initial);
    for (std::size_t o = 0; o < options.size(); ++o) {
      const AbstractOption& ao = options[o];
      const OptionVariant& v =
          ao.variants[mode == Mode::Safe ? ao.safe_idx : ao.opt_idx];
      std::vector<TransitionEntry> ents;
      for (const auto& [c, pr] : v.cd) ents.push_back({c, pr});
      std::optional<RiskTag> tag;
      if (ao.tagged) tag = RiskTag{ao.family, v.rank};
      bld.add_row(ao.source, static_cast<JointActionId>(o), ents, tag);
      for (std::size_t k = 0; k < v.cd.size(); ++k)
        if (v.reward[k] != 0.0)
          bld.set_reward(ao.source, static_cast<JointActionId>(o), v.cd[k].first,
                         std::vector<double>(n_agents, v.reward[k]));
    }
    AbstractMG amg;
    amg.game = bld.finalize();
    amg.mode = mode;
    amg.block_members = block_members;
    amg.weights = weights;
    amg.options = options;
    return amg;
  };
  return {build_one(Mode::Safe), build_one(Mode::Optimal)};
}

/// Abstract game pair over the given partition. Exit rows of a block are
/// grouped into option families (by risk tag, or by effect for untagged
/// rows); within a family each rank must describe one class distribution.
/// Transition probabilities are the class masses of the realized variant;
/// rewards are the conditional summed-agent rewards of the witness rows,
/// averaged per target class. In-block moves carry no reward, but a block
/// whose divergence core is nonempty additionally offers a "stay" option:
/// remaining inside forever is a behaviour abstract policies may pick.
inline AmgPair build_amg_pair(const MarkovGame& g, const Partition& p) {
  struct RawOption {
    std::string family;
    bool tagged = false;
    std::vector<OptionVariant> variants;
  };
  std::vector<std::vector<RawOption>> raw(p.n_blocks());

  for (BlockId b = 0; b < p.n_blocks(); ++b) {
    int anon = 0;
    for (StateId s : p.members[b]) {
      for (const Row& r : g.rows(s)) {
        ClassDistribution cd = class_distribution(g, p, r);
        if (cd.size() == 1 && cd[0].first == b) continue;
        const RiskTag* tag = g.risk(r);
        RawOption* opt = nullptr;
        for (RawOption& o : raw[b]) {
          if (tag ? (o.tagged && o.family == tag->family)
                  : (!o.tagged && cd_equal(o.variants[0].cd, cd)))
            opt = &o;
          if (opt) break;
        }
        if (!opt) {
          raw[b].push_back({tag ? tag->family : "cd" + std::to_string(anon++),
                            tag != nullptr,
                            {}});
          opt = &raw[b].back();
        }
        const int rank = tag ? tag->rank : 0;
        std::vector<double> cond(cd.size(), 0.0);
        {
          const auto ents = g.entries(r);
          std::vector<double> mass(cd.size(), 0.0);
          for (std::uint32_t i = 0; i < ents.size(); ++i) {
            const BlockId c = p.block_of[ents[i].to];
            std::size_t k = 0;
            while (cd[k].first != c) ++k;
            mass[k] += ents[i].p;
            double shared = 0.0;
            for (int a = 0; a < g.n_agents(); ++a) shared += g.reward(a, r, i);
            cond[k] += ents[i].p * shared;
          }
          for (std::size_t k = 0; k < cd.size(); ++k) cond[k] /= mass[k];
        }
        OptionVariant* var = nullptr;
        for (OptionVariant& v : opt->variants)
          if (v.rank == rank) var = &v;
        if (var) {
          if (!cd_equal(var->cd, cd))
            throw ModelError("option family " + opt->family + " of block " +
                             quotient_detail::block_name(b) +
                             " has conflicting effects at rank " +
                             std::to_string(rank));
          for (std::size_t k = 0; k < cd.size(); ++k) var->reward[k] += cond[k];
          var->count += 1;
        } else {
          opt->variants.push_back(
              {rank, std::move(cd), std::move(cond), s, r.action, 1});
        }
      }
    }
    if (const auto w = quotient_detail::divergence_witness(g, p, b))
      raw[b].push_back({"stay",
                        false,
                        {{0, {{b, 1.0}}, {0.0}, w->first, w->second, 1}}});
    for (RawOption& o : raw[b])
      std::sort(o.variants.begin(), o.variants.end(),
                [](const OptionVariant& a, const OptionVariant& v) {
                  return a.rank < v.rank;
                });
  }

  std::vector<AbstractOption> options;
  for (BlockId b = 0; b < p.n_blocks(); ++b) {
    for (RawOption& o : raw[b]) {
      AbstractOption ao;
      ao.name = quotient_detail::block_name(b) + "/" + o.family;
      ao.family = o.family;
      ao.source = b;
      ao.tagged = o.tagged;
      ao.variants = std::move(o.variants);
      ao.safe_idx = static_cast<int>(ao.variants.size()) - 1;
      ao.opt_idx = 0;
      std::vector<BlockId> sup;
      for (const OptionVariant& v : ao.variants)
        for (const auto& [c, pr] : v.cd) sup.push_back(c);
      std::sort(sup.begin(), sup.end());
      sup.erase(std::unique(sup.begin(), sup.end()), sup.end());
      ao.support = std::move(sup);
      options.push_back(std::move(ao));
    }
  }
  for (AbstractOption& ao : options)
    for (OptionVariant& v : ao.variants)
      for (std::size_t k = 0; k < v.reward.size(); ++k) v.reward[k] /= v.count;

  std::vector<LabelSet> block_labels;
  std::vector<std::string> block_names;
  for (BlockId b = 0; b < p.n_blocks(); ++b) {
    block_labels.push_back(g.labels(p.members[b][0]));
    block_names.push_back(quotient_detail::block_name(b));
  }
  std::vector<double> weights(g.n_states(), 0.0);
  for (StateId s = 0; s < g.n_states(); ++s)
    weights[s] = 1.0 / static_cast<double>(p.members[p.block_of[s]].size());
  return assemble_amg_pair(g.n_agents(), g.gamma(), g.atoms(), g.ap_agent(),
                           g.ap_all(), block_labels, block_names,
                           p.block_of[g.initial()], std::move(options),
                           p.members, std::move(weights));
}

inline json save_amg(const AbstractMG& amg) {
  json j;
  j["model"] = save_model(amg.game);
  j["mode"] = amg.mode == Mode::Safe ? "safe" : "optimal";
  json members = json::array();
  for (const auto& mem : amg.block_members) members.push_back(mem);
  j["block_members"] = std::move(members);
  j["weights"] = amg.weights;
  json opts = json::array();
  for (const AbstractOption& o : amg.options) {
    json jo;
    jo["name"] = o.name;
    jo["family"] = o.family;
    jo["source"] = o.source;
    jo["tagged"] = o.tagged;
    jo["safe_idx"] = o.safe_idx;
    jo["opt_idx"] = o.opt_idx;
    jo["support"] = o.support;
    json vars = json::array();
    for (const OptionVariant& v : o.variants) {
      json jv;
      jv["rank"] = v.rank;
      json cd = json::array();
      for (const auto& [c, pr] : v.cd) cd.push_back({{"class", c}, {"p", pr}});
      jv["cd"] = std::move(cd);
      jv["reward"] = v.reward;
      jv["sample_state"] = v.sample_state;
      jv["sample_action"] = v.sample_action;
      jv["count"] = v.count;
      vars.push_back(std::move(jv));
    }
    jo["variants"] = std::move(vars);
    opts.push_back(std::move(jo));
  }
  j["options"] = std::move(opts);
  return j;
}

inline AbstractMG load_amg(const json& j) {
  AbstractMG amg;
  amg.game = load_model(j.at("model"));
  amg.mode = j.at("mode").get<std::string>() == "safe" ? Mode::Safe : Mode::Optimal;
  for (const auto& mem : j.at("block_members"))
    amg.block_members.push_back(mem.get<std::vector<StateId>>());
  amg.weights = j.at("weights").get<std::vector<double>>();
  for (const auto& jo : j.at("options")) {
    AbstractOption o;
    o.name = jo.at("name").get<std::string>();
    o.family = jo.at("family").get<std::string>();
    o.source = jo.at("source").get<BlockId>();
    o.tagged = jo.at("tagged").get<bool>();
    o.safe_idx = jo.at("safe_idx").get<int>();
    o.opt_idx = jo.at("opt_idx").get<int>();
    o.support = jo.at("support").get<std::vector<BlockId>>();
    for (const auto& jv : jo.at("variants")) {
      OptionVariant v;
      v.rank = jv.at("rank").get<int>();
      for (const auto& e : jv.at("cd"))
        v.cd.emplace_back(e.at("class").get<BlockId>(), e.at("p").get<double>());
      v.reward = jv.at("reward").get<std::vector<double>>();
      v.sample_state = jv.at("sample_state").get<StateId>();
      v.sample_action = jv.at("sample_action").get<JointActionId>();
      v.count = jv.at("count").get<int>();
      o.variants.push_back(std::move(v));
    }
    amg.options.push_back(std::move(o));
  }
  if (amg.options.size() != amg.game.axis_actions(0).size())
    throw ParseError("abstract game option list does not match its action axis");
  return amg;
}

inline json save_amg_pair(const AmgPair& p) {
  json j;
  j["safe"] = save_amg(p.safe);
  j["optimal"] = save_amg(p.optimal);
  return j;
}

inline AmgPair load_amg_pair(const json& j) {
  return {load_amg(j.at("safe")), load_amg(j.at("optimal"))};
}

struct IsoReport {
  bool ok = true;
  std::string why;
};

namespace quotient_detail {

struct OptionSig {
  std::vector<std::pair<StateId, double>> safe_cd;  // targets in B-side ids
  std::vector<double> safe_rew;
  std::vector<std::pair<StateId, double>> opt_cd;
  std::vector<double> opt_rew;
};

inline OptionSig signature(const AbstractMG& safe, const AbstractMG& optimal,
                           StateId s, JointActionId a,
                           const std::vector<StateId>& map_to_b) {
  OptionSig sig;
  auto fill = [&](const MarkovGame& g, auto& cd, auto& rew) {
    const Row* r = g.find_row(s, a);
    const auto ents = g.entries(*r);
    std::vector<std::size_t> order(ents.size());
    for (std::size_t i = 0; i < ents.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return map_to_b[ents[x].to] < map_to_b[ents[y].to];
    });
    for (std::size_t i : order) {
      cd.emplace_back(map_to_b[ents[i].to], ents[i].p);
      rew.push_back(g.reward(0, *r, static_cast<std::uint32_t>(i)));
    }
  };
  fill(safe.game, sig.safe_cd, sig.safe_rew);
  fill(optimal.game, sig.opt_cd, sig.opt_rew);
  return sig;
}

inline bool sig_equal(const OptionSig& a, const OptionSig& b, double tol) {
  auto cd_eq = [tol](const std::vector<std::pair<StateId, double>>& x,
                     const std::vector<std::pair<StateId, double>>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].first != y[i].first || std::abs(x[i].second - y[i].second) > tol)
        return false;
    return true;
  };
  auto rew_eq = [tol](const std::vector<double>& x, const std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::abs(x[i] - y[i]) > tol) return false;
    return true;
  };
  return cd_eq(a.safe_cd, b.safe_cd) && rew_eq(a.safe_rew, b.safe_rew) &&
         cd_eq(a.opt_cd, b.opt_cd) && rew_eq(a.opt_rew, b.opt_rew);
}

}  // namespace quotient_detail

/// Checks that two abstract game pairs describe the same model up to
/// renaming. Blocks are matched by their label sets (which must be unique on
/// both sides), options per block by their safe/optimal effect signatures.
inline IsoReport amg_isomorphic(const AmgPair& A, const AmgPair& B,
                                double tol = 1e-9) {
  auto fail = [](std::string why) { return IsoReport{false, std::move(why)}; };
  const MarkovGame& ga = A.safe.game;
  const MarkovGame& gb = B.safe.game;
  if (ga.n_states() != gb.n_states())
    return fail("different number of abstract states");
  if (ga.n_agents() != gb.n_agents()) return fail("different n_agents");
  if (std::abs(ga.gamma() - gb.gamma()) > tol) return fail("different gamma");

  // Label sets are compared by atom name so the two sides may intern their
  // atoms in different orders.
  auto index_labels = [&](const MarkovGame& g,
                          std::map<std::vector<std::string>, StateId>& out) {
    for (StateId s = 0; s < g.n_states(); ++s) {
      std::vector<std::string> names;
      for (AtomId a : g.labels(s)) names.push_back(g.atoms().name(a));
      std::sort(names.begin(), names.end());
      if (!out.emplace(std::move(names), s).second) return false;
    }
    return true;
  };
  std::map<std::vector<std::string>, StateId> la, lb;
  if (!index_labels(ga, la) || !index_labels(gb, lb))
    return fail("abstract state labels are not unique; cannot match by labels");
  std::vector<StateId> phi(ga.n_states());
  for (const auto& [labels, sa] : la) {
    auto it = lb.find(labels);
    if (it == lb.end()) return fail("no matching block for " + ga.state_name(sa));
    phi[sa] = it->second;
  }
  if (phi[ga.initial()] != gb.initial()) return fail("initial blocks differ");

  std::vector<StateId> ident(gb.n_states());
  for (StateId s = 0; s < gb.n_states(); ++s) ident[s] = s;
  for (StateId sa = 0; sa < ga.n_states(); ++sa) {
    const StateId sb = phi[sa];
    const auto rows_a = ga.rows(sa);
    const auto rows_b = gb.rows(sb);
    if (rows_a.size() != rows_b.size())
      return fail("option count differs at " + ga.state_name(sa));
    std::vector<quotient_detail::OptionSig> sigs_b;
    for (const Row& r : rows_b)
      sigs_b.push_back(quotient_detail::signature(B.safe, B.optimal, sb, r.action, ident));
    std::vector<char> used(sigs_b.size(), 0);
    for (const Row& r : rows_a) {
      const auto sig =
          quotient_detail::signature(A.safe, A.optimal, sa, r.action, phi);
      bool matched = false;
      for (std::size_t k = 0; k < sigs_b.size(); ++k) {
        if (used[k] || !quotient_detail::sig_equal(sig, sigs_b[k], tol)) continue;
        used[k] = 1;
        matched = true;
        break;
      }
      if (!matched)
        return fail("option " + ga.joint_action_name(r.action) + " of " +
                    ga.state_name(sa) + " has no counterpart");
    }
  }
  return {};
}

}  // namespace amarl
