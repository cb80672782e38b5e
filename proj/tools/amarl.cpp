// Pipeline driver: abstraction, policy generation, selection, training and
// evaluation as subcommands over JSON artifacts. Exit codes: 0 success,
// 1 validation failure, 2 constraint-infeasible (empty Pareto set). Errors
// are reported as JSON on stderr.

#include <cstdio>
#include <ctime>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amarl/fixtures.hpp"
#include "amarl/harness.hpp"
#include "amarl/policy.hpp"

using namespace amarl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Args {
  std::string command;
  std::vector<std::string> positional;
  std::map<std::string, std::string> flags;

  bool has(const std::string& name) const { return flags.count(name) > 0; }

  const std::string& need(const std::string& name) const {
    auto it = flags.find(name);
    if (it == flags.end()) throw UsageError("missing --" + name);
    return it->second;
  }

  std::string get(const std::string& name, const std::string& fallback) const {
    auto it = flags.find(name);
    return it == flags.end() ? fallback : it->second;
  }

  int get_int(const std::string& name, int fallback) const {
    auto it = flags.find(name);
    if (it == flags.end()) return fallback;
    try {
      return std::stoi(it->second);
    } catch (const std::exception&) {
      throw UsageError("--" + name + " wants an integer, got '" + it->second +
                       "'");
    }
  }

  std::uint64_t get_u64(const std::string& name, std::uint64_t fallback) const {
    auto it = flags.find(name);
    if (it == flags.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw UsageError("--" + name + " wants an integer, got '" + it->second +
                       "'");
    }
  }

  std::vector<std::uint64_t> get_seeds(
      const std::vector<std::uint64_t>& fallback) const {
    auto it = flags.find("seeds");
    if (it == flags.end()) return fallback;
    std::vector<std::uint64_t> out;
    std::string tok;
    std::istringstream in(it->second);
    while (std::getline(in, tok, ',')) {
      if (tok.empty()) continue;
      try {
        out.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        throw UsageError("--seeds wants comma-separated integers");
      }
    }
    if (out.empty()) throw UsageError("--seeds wants at least one seed");
    return out;
  }
};

Args parse_args(int argc, char** argv) {
  Args a;
  if (argc < 2)
    throw UsageError(
        "usage: amarl {build-amg|gen-policies|select|train|eval|repro} "
        "[--flag value ...]");
  a.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    const std::string tok = argv[i];
    if (tok.rfind("--", 0) == 0) {
      if (i + 1 >= argc) throw UsageError(tok + " wants a value");
      a.flags[tok.substr(2)] = argv[++i];
    } else {
      a.positional.push_back(tok);
    }
  }
  return a;
}

/// Everything the pipeline stages need from one model flag: the concrete
/// game, the abstract pair, and the concrete-to-block map.
struct Abstraction {
  std::optional<GfcBuild> grid;  // set when built from --spec
  MarkovGame model;              // set when built from --model
  AmgPair pair;
  std::vector<BlockId> z;

  const MarkovGame& game() const { return grid ? grid->game : model; }
};

Abstraction load_abstraction(const Args& a) {
  Abstraction out;
  if (a.has("spec")) {
    const GridSpec spec = load_grid_file(a.need("spec"));
    GfcBuild build = build_mg(spec);
    GfcDirect dir = direct_amg(spec);
    out.z = abstraction_map(spec, build, dir);
    out.grid = std::move(build);
    out.pair = std::move(dir.pair);
    return out;
  }
  if (a.has("model")) {
    out.model = load_model_file(a.need("model"));
    const Partition p = stutter_partition(out.model);
    out.pair = build_amg_pair(out.model, p);
    out.z = p.block_of;
    return out;
  }
  throw UsageError(a.command + " wants --spec or --model");
}

std::string iso_now() {
  char buf[32];
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Timestamps live here and only here, so result files stay byte-stable.
void write_meta(const std::string& dir, int argc, char** argv,
                const std::vector<std::string>& outputs) {
  std::string cmd;
  for (int i = 0; i < argc; ++i) {
    if (i) cmd += ' ';
    cmd += argv[i];
  }
  const json meta{
      {"command", cmd}, {"outputs", outputs}, {"time", iso_now()}};
  atomic_write(dir + "/meta.json", meta.dump(2) + "\n");
}

std::string out_dir(const Args& a) { return a.need("out"); }

int cmd_build_amg(const Args& a, int argc, char** argv) {
  const Abstraction ab = load_abstraction(a);
  const std::string dir = out_dir(a);
  atomic_write(dir + "/amg.json", save_amg_pair(ab.pair).dump(2) + "\n");
  atomic_write(dir + "/summary.json",
               quotient_summary(ab.game(), ab.pair, &ab.z).dump(2) + "\n");
  write_meta(dir, argc, argv, {"amg.json", "summary.json"});
  return 0;
}

struct Generated {
  ConstraintSet cs;
  std::vector<AbstractPolicy> policies;
  std::vector<PolicyEvaluation> evals;
  std::vector<PolicyEvaluation> pareto;
};

Generated generate(const Abstraction& ab, const Args& a) {
  Generated g;
  g.cs = load_constraints_file(a.need("constraints"),
                               ab.pair.safe.game.atoms());
  const int count = a.get_int("count", 1000);
  const std::uint64_t seed = a.get_u64("seed", 2025);
  g.policies = sample_policies(ab.pair.safe, count, seed);
  for (const AbstractPolicy& p : g.policies)
    g.evals.push_back(verify_policy(p, ab.pair.safe, ab.pair.optimal, g.cs));
  g.pareto = pareto_filter(g.cs, g.evals);
  return g;
}

json evaluations_json(const ConstraintSet& cs,
                      const std::vector<PolicyEvaluation>& evs) {
  json arr = json::array();
  for (const PolicyEvaluation& e : evs)
    arr.push_back(evaluation_to_json(cs, e));
  return arr;
}

int cmd_gen_policies(const Args& a, int argc, char** argv) {
  const Abstraction ab = load_abstraction(a);
  const Generated g = generate(ab, a);
  std::size_t admissible = 0;
  for (const PolicyEvaluation& e : g.evals)
    if (e.admissible) ++admissible;

  const std::string dir = out_dir(a);
  atomic_write(dir + "/evaluations.json",
               evaluations_json(g.cs, g.evals).dump(2) + "\n");
  atomic_write(dir + "/pareto.json",
               evaluations_json(g.cs, g.pareto).dump(2) + "\n");
  const json summary{{"sampled", g.policies.size()},
                     {"distinct", g.evals.size()},
                     {"admissible", admissible},
                     {"pareto", g.pareto.size()}};
  atomic_write(dir + "/gen-summary.json", summary.dump(2) + "\n");
  write_meta(dir, argc, argv,
             {"evaluations.json", "pareto.json", "gen-summary.json"});
  return 0;
}

int cmd_select(const Args& a, int argc, char** argv) {
  const Abstraction ab = load_abstraction(a);
  const Generated g = generate(ab, a);
  const std::string dir = out_dir(a);
  atomic_write(dir + "/pareto.json",
               evaluations_json(g.cs, g.pareto).dump(2) + "\n");

  const PolicyEvaluation* chosen = select_policy(g.cs, g.pareto);
  if (!chosen) {
    write_meta(dir, argc, argv, {"pareto.json"});
    std::fprintf(stderr, "%s\n",
                 json{{"error",
                       {{"type", "infeasible"},
                        {"message", "no safe policy in the sampled set"}}}}
                     .dump()
                     .c_str());
    return 2;
  }
  const AbstractPolicy* policy = nullptr;
  for (const AbstractPolicy& p : g.policies)
    if (p.id == chosen->policy_id) policy = &p;
  if (!policy) throw ModelError("selected id has no sampled policy");
  atomic_write(dir + "/selected.json",
               save_policy(*policy, ab.pair.safe).dump(2) + "\n");
  atomic_write(dir + "/selected-eval.json",
               evaluation_to_json(g.cs, *chosen).dump(2) + "\n");
  write_meta(dir, argc, argv,
             {"pareto.json", "selected.json", "selected-eval.json"});
  return 0;
}

int cmd_train(const Args& a, int argc, char** argv) {
  const Abstraction ab = load_abstraction(a);
  LearnerConfig cfg;
  cfg.mode = mode_from(a.get("mode", "shielded"));
  cfg.episodes = a.get_int("episodes", 20000);
  cfg.max_steps = a.get_int("max-steps", 1000);
  const std::vector<std::uint64_t> seeds = a.get_seeds({1, 2, 3, 4, 5});

  std::optional<AbstractPolicy> policy;
  if (cfg.mode != TrainMode::Vanilla)
    policy = load_policy(detail::read_json_file(a.need("policy")),
                         ab.pair.safe);
  const ObsFn obs =
      ab.grid ? gfc_observation(*ab.grid) : full_observation();

  const std::string dir = out_dir(a);
  std::vector<std::string> outputs;
  json summary = json::array();
  for (const std::uint64_t seed : seeds) {
    cfg.seed = seed;
    const TrainResult res = [&] {
      if (cfg.mode == TrainMode::Vanilla)
        return train(ab.game(), cfg, nullptr, obs);
      Shield shield(ab.game(), ab.pair.safe, *policy, ab.z);
      return train(ab.game(), cfg, &shield, obs);
    }();
    const std::string ck = "checkpoint-" + std::to_string(seed) + ".json";
    const std::string sc = "stats-" + std::to_string(seed) + ".csv";
    atomic_write(dir + "/" + ck,
                 checkpoint_to_json(res.q, cfg).dump() + "\n");
    atomic_write(dir + "/" + sc, stats_to_csv(res.stats));
    outputs.push_back(ck);
    outputs.push_back(sc);

    std::uint64_t blocked = 0;
    for (std::uint32_t b : res.stats.interventions) blocked += b;
    summary.push_back({{"seed", seed},
                       {"episodes", res.stats.returns.size()},
                       {"unsafe", res.stats.unsafe_total()},
                       {"interventions", blocked},
                       {"wall_seconds", res.stats.wall_seconds}});
  }
  atomic_write(dir + "/train-summary.json", summary.dump(2) + "\n");
  outputs.push_back("train-summary.json");
  write_meta(dir, argc, argv, outputs);
  return 0;
}

int cmd_eval(const Args& a, int argc, char** argv) {
  const Abstraction ab = load_abstraction(a);
  EvalOptions opt;
  opt.episodes = a.get_int("episodes", 10000);
  opt.max_steps = a.get_int("max-steps", 1000);
  opt.seeds = a.get_seeds({1});

  const TrainMode mode = mode_from(a.get("mode", "vanilla"));
  std::optional<Shield> shield;
  if (mode == TrainMode::Shielded) {
    const AbstractPolicy policy = load_policy(
        detail::read_json_file(a.need("policy")), ab.pair.safe);
    shield.emplace(ab.game(), ab.pair.safe, policy, ab.z);
  }

  ProposalFn propose;
  if (a.has("checkpoint")) {
    const QTable q =
        checkpoint_from_json(detail::read_json_file(a.need("checkpoint")));
    const ObsFn obs =
        ab.grid ? gfc_observation(*ab.grid) : full_observation();
    propose = greedy_proposals(greedy_actions(q, ab.game(), obs));
  } else {
    propose = random_proposals(ab.game());
  }

  const EvalReport rep = monte_carlo_eval(
      ab.game(), propose, shield ? &*shield : nullptr, opt);
  const std::string dir = out_dir(a);
  atomic_write(dir + "/eval.json", eval_to_json(rep).dump(2) + "\n");
  atomic_write(dir + "/eval.csv", eval_to_csv(rep));
  write_meta(dir, argc, argv, {"eval.json", "eval.csv"});
  return 0;
}

int cmd_repro(const Args& a, int argc, char** argv) {
  if (a.positional.size() != 1)
    throw UsageError("repro wants one fixture name, e.g. repro fig3");
  const std::string& which = a.positional.front();
  if (which != "fig3")
    throw UsageError("unknown repro fixture '" + which + "'");

  const MarkovGame g = fixtures::fig3_model();
  const Partition p = stutter_partition(g);
  const AmgPair pair = build_amg_pair(g, p);
  const std::string dir = out_dir(a);
  atomic_write(dir + "/fig3-classes.json",
               quotient_summary(g, pair).dump(2) + "\n");
  write_meta(dir, argc, argv, {"fig3-classes.json"});
  return 0;
}

int fail(const std::string& type, const std::string& message) {
  std::fprintf(
      stderr, "%s\n",
      json{{"error", {{"type", type}, {"message", message}}}}.dump().c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const Args a = parse_args(argc, argv);
    if (a.command == "build-amg") return cmd_build_amg(a, argc, argv);
    if (a.command == "gen-policies") return cmd_gen_policies(a, argc, argv);
    if (a.command == "select") return cmd_select(a, argc, argv);
    if (a.command == "train") return cmd_train(a, argc, argv);
    if (a.command == "eval") return cmd_eval(a, argc, argv);
    if (a.command == "repro") return cmd_repro(a, argc, argv);
    throw UsageError("unknown subcommand '" + a.command + "'");
  } catch (const UsageError& e) {
    return fail("usage", e.what());
  } catch (const ParseError& e) {
    return fail("parse", e.what());
  } catch (const ModelError& e) {
    return fail("model", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
