#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "amarl/fixtures.hpp"
#include "amarl/harness.hpp"
#include "amarl/pctl_check.hpp"

using namespace amarl;

namespace {

std::string fix(const std::string& name) {
  return std::string(AMARL_FIXTURE_DIR) + "/" + name;
}

std::int64_t option_id(const AbstractMG& amg, StateId s,
                       const std::string& family) {
  for (const Row& r : amg.game.rows(s))
    if (amg.option(r.action).family == family) return r.action;
  throw std::runtime_error("no option " + family + " at " +
                           amg.game.state_name(s));
}

AbstractPolicy micro_walk(const AbstractMG& amg) {
  AbstractPolicy p{"walk", {}};
  for (StateId s = 0; s < amg.game.n_states(); ++s) {
    std::string family = "stay";
    if (amg.game.state_name(s) == "Hall|A") family = "+A";
    if (amg.game.state_name(s) == "Hall|") family = "Hall>Room";
    p.choice.push_back(option_id(amg, s, family));
  }
  return p;
}

}  // namespace

TEST_CASE("deterministic walker hits the goal exactly", "[harness]") {
  // Two cells, one unmonitored door between them, goal on the right.
  const json spec_json{
      {"name", "strip"},
      {"n_agents", 1},
      {"width", 2},
      {"height", 1},
      {"areas",
       json::array({{{"name", "L"}, {"rects", json::array({{0, 0, 0, 0}})}},
                    {{"name", "R"}, {"rects", json::array({{1, 0, 1, 0}})}}})},
      {"doors",
       json::array(
           {{{"cell", {0, 0}}, {"pair", {"L", "R"}}, {"exposure", "hidden"}},
            {{"cell", {1, 0}}, {"pair", {"L", "R"}}, {"exposure", "hidden"}}})},
      {"spawns", json::array({{0, 0}})},
      {"goal_area", "R"},
      {"max_steps", 10},
      {"gamma", 0.95}};
  const GfcBuild build = build_mg(load_grid(spec_json));
  const MarkovGame& g = build.game;

  // Always walk east; after the crossing the greedy entry is never used.
  std::vector<std::vector<ActionId>> east(1,
                                          std::vector<ActionId>(g.n_states(), 1));
  EvalOptions opt;
  opt.episodes = 500;
  opt.max_steps = 10;
  opt.seeds = {7};
  const EvalReport rep =
      monte_carlo_eval(g, greedy_proposals(east), nullptr, opt);

  CHECK(rep.episodes == 500);
  CHECK(rep.p_goal[0] == 1.0);
  CHECK(rep.p_captured[0] == 0.0);
  CHECK(rep.p_end_all == 1.0);
  CHECK(rep.mean_return[0] == 1.0);
  CHECK(rep.se_captured[0] == 0.0);
}

TEST_CASE("shielded random play respects the safe bracket", "[harness]") {
  const GridSpec spec = load_grid_file(fix("gfc-micro.json"));
  const GfcBuild build = build_mg(spec);
  GfcDirect dir = direct_amg(spec);
  const std::vector<BlockId> z = abstraction_map(spec, build, dir);
  const MarkovGame& g = build.game;

  const AbstractPolicy policy = micro_walk(dir.pair.safe);
  Shield shield(g, dir.pair.safe, policy, z);

  EvalOptions opt;
  opt.episodes = 1500;
  opt.max_steps = 400;
  opt.seeds = {1, 2};
  const EvalReport rep =
      monte_carlo_eval(g, random_proposals(g), &shield, opt);

  CHECK(rep.episodes == 3000);
  REQUIRE(rep.seeds.size() == 2);
  // Nearly every episode finishes: pick the flag, cross, land on goal or cap.
  CHECK(rep.p_end_all > 0.95);
  // The capture rate sits between the hidden-door and direct-door cameras,
  // and under the safe-side worst case in particular.
  const double slack = 3.0 * rep.se_captured_all + 1e-12;
  CHECK(rep.p_captured_all <= 0.18 + slack);
  CHECK(rep.p_captured_all >= 0.06 - slack);
  CHECK(rep.p_captured_all + rep.p_goal_all == rep.p_end_all);

  // Two seeds, two distinct but nearby estimates.
  CHECK(rep.seeds[0].p_captured_all != rep.seeds[1].p_captured_all);
  CHECK(std::abs(rep.seeds[0].p_captured_all - rep.seeds[1].p_captured_all) <
        0.1);
}

TEST_CASE("chain simulation agrees with the checker", "[harness]") {
  const GridSpec spec = load_grid_file(fix("gfc-micro.json"));
  GfcDirect dir = direct_amg(spec);
  const AbstractMG& amg = dir.pair.safe;
  const AbstractPolicy policy = micro_walk(amg);

  const InducedChain chain = induce_chain(amg.game, policy.choice);
  const FormulaPtr f = parse_formula("P=? [ F captured_1 ]");
  const CheckResult res = check_chain(chain, *f);
  const double exact = res.initial_value;
  CHECK(exact == 0.18);

  AtomId cap = 0;
  REQUIRE(amg.game.atoms().find("captured_1", cap));
  const int n = 10000;
  const double sim = simulate_chain_reach(chain, cap, n, 500, 99);
  const double sigma = std::sqrt(exact * (1.0 - exact) / n);
  CHECK(std::abs(sim - exact) <= 3.0 * sigma);
}

TEST_CASE("artifact writers", "[harness]") {
  SECTION("atomic write leaves no temporary") {
    namespace fs = std::filesystem;
    const fs::path dir =
        fs::temp_directory_path() / "amarl-harness-test" / "nested";
    const fs::path file = dir / "out.json";
    fs::remove_all(dir.parent_path());
    atomic_write(file.string(), "{\"ok\": true}\n");
    REQUIRE(fs::exists(file));
    CHECK_FALSE(fs::exists(file.string() + ".tmp"));
    std::ifstream in(file);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    CHECK(text == "{\"ok\": true}\n");
    fs::remove_all(dir.parent_path());
  }

  SECTION("quotient summary lists the expected classes") {
    const MarkovGame g = fixtures::fig3_model();
    const Partition p = stutter_partition(g);
    const AmgPair pair = build_amg_pair(g, p);
    const json sum = quotient_summary(g, pair);

    REQUIRE(sum.at("blocks").size() == 3);
    std::vector<std::vector<std::string>> members;
    for (const auto& [name, list] : sum.at("blocks").items()) {
      std::vector<std::string> m = list.get<std::vector<std::string>>();
      std::sort(m.begin(), m.end());
      members.push_back(std::move(m));
    }
    std::sort(members.begin(), members.end());
    CHECK(members ==
          std::vector<std::vector<std::string>>{
              {"v0", "v1", "v2"}, {"v3"}, {"v4"}});

    // The exit family of the big block keeps its 0.7 / 0.3 split verbatim.
    bool found = false;
    for (const auto& [block, rows] : sum.at("safe").items())
      for (const json& row : rows)
        for (const json& var : row.at("variants"))
          if (var.at("probs").size() == 2) {
            std::vector<double> ps;
            for (const auto& [to, pr] : var.at("probs").items())
              ps.push_back(pr.get<double>());
            std::sort(ps.begin(), ps.end());
            CHECK(ps == std::vector<double>{0.3, 0.7});
            found = true;
          }
    CHECK(found);
  }

  SECTION("eval report serializers") {
    EvalReport r;
    r.n_agents = 1;
    r.episodes = 10;
    r.p_captured = {0.2};
    r.p_goal = {0.8};
    r.mean_return = {1.5};
    r.se_captured = {0.1};
    r.se_goal = {0.1};
    r.se_return = {0.2};
    r.p_captured_all = 0.2;
    r.p_goal_all = 0.8;
    r.p_end_all = 1.0;
    r.mean_total = 1.5;
    SeedEval s;
    s.seed = 3;
    s.p_captured = {0.2};
    s.p_goal = {0.8};
    s.mean_return = {1.5};
    r.seeds.push_back(s);

    const json j = eval_to_json(r);
    CHECK(j.at("episodes") == 10);
    CHECK(j.at("agents")[0].at("goal").at("p") == 0.8);
    CHECK(j.at("all").at("end").at("p") == 1.0);
    CHECK(j.at("seeds")[0].at("seed") == 3);

    const std::string csv = eval_to_csv(r);
    CHECK(csv.rfind("metric,scope,value,se\n", 0) == 0);
    CHECK(csv.find("p_goal,1,0.8,0.1\n") != std::string::npos);
    CHECK(csv.find("return,all,1.5,0\n") != std::string::npos);
  }
}
