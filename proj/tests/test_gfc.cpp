#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "amarl/gfc.hpp"
#include "amarl/pctl.hpp"
#include "amarl/pctl_check.hpp"

using namespace amarl;

namespace {

std::string fix(const char* name) {
  return std::string(AMARL_FIXTURE_DIR) + "/" + name;
}

const AbstractOption* find_option(const AbstractMG& amg, BlockId source,
                                  const std::string& family) {
  for (const AbstractOption& o : amg.options)
    if (o.source == source && o.family == family) return &o;
  return nullptr;
}

JointActionId option_id(const AbstractMG& amg, const AbstractOption* o) {
  return static_cast<JointActionId>(o - amg.options.data());
}

}  // namespace

TEST_CASE("grid specs load and validate", "[gfc]") {
  const GridSpec micro = load_grid_file(fix("gfc-micro.json"));
  CHECK(micro.name == "gfc-micro");
  CHECK(micro.n_agents == 1);
  CHECK(micro.areas.size() == 2);
  CHECK(micro.doors.size() == 4);
  CHECK(micro.flags.size() == 1);
  CHECK(grid_problems(micro).empty());

  const GridSpec mini = load_grid_file(fix("gfc-mini.json"));
  CHECK(mini.n_agents == 2);
  CHECK(grid_problems(mini).empty());

  const GridSpec paper = load_grid_file(fix("gfc-paper-like.json"));
  CHECK(paper.n_agents == 3);
  CHECK(paper.areas.size() == 7);
  CHECK(paper.cameras.size() == 4);
  CHECK(paper.flags.size() == 6);
  CHECK(grid_problems(paper).empty());

  SECTION("broken variants are reported") {
    GridSpec s = micro;
    s.flags.push_back({"A", 0, 1});
    CHECK_FALSE(grid_problems(s).empty());

    s = micro;
    s.flags[0] = {"A", 1, 1};  // on the spawn cell
    CHECK_FALSE(grid_problems(s).empty());

    s = micro;
    s.flags[0] = {"A", 1, 0};  // on a door cell
    CHECK_FALSE(grid_problems(s).empty());

    s = micro;
    s.areas[1].rects.push_back({1, 0, 1, 1});  // overlaps Hall
    CHECK_FALSE(grid_problems(s).empty());

    s = micro;
    s.goal_area = "Nowhere";
    CHECK_FALSE(grid_problems(s).empty());

    s = micro;
    s.spawns.push_back({0, 1});
    CHECK_FALSE(grid_problems(s).empty());

    json j = detail::read_json_file(fix("gfc-micro.json"));
    j["doors"][0]["exposure"] = "open";
    CHECK_THROWS_AS(load_grid(j), ParseError);
  }
}

TEST_CASE("micro concrete build", "[gfc]") {
  const GridSpec spec = load_grid_file(fix("gfc-micro.json"));
  const GfcBuild b = build_mg(spec);
  const MarkovGame& g = b.game;

  CHECK(g.n_states() == 11);
  CHECK(g.n_agents() == 1);
  CHECK(g.joint_action_count() == 5);

  AtomId hall = 0, flag_a = 0, cap = 0, goal = 0;
  REQUIRE(g.atoms().find("area_1=Hall", hall));
  REQUIRE(g.atoms().find("flag_A", flag_a));
  REQUIRE(g.atoms().find("captured_1", cap));
  REQUIRE(g.atoms().find("goal_1", goal));
  CHECK(label_contains(g.labels(g.initial()), hall));
  CHECK(label_contains(g.labels(g.initial()), flag_a));

  auto state_named = [&](const std::string& n) {
    for (StateId s = 0; s < g.n_states(); ++s)
      if (g.state_name(s) == n) return s;
    FAIL("no state " + n);
    return StateId(0);
  };

  SECTION("monitored crossings carry the camera probability and a tag") {
    const StateId s = state_named("(1,0)|A");
    const Row* r = g.find_row(s, 1);  // "e" onto the direct door
    REQUIRE(r != nullptr);
    REQUIRE(g.risk(*r) != nullptr);
    CHECK(g.risk(*r)->family == "Hall>Room");
    CHECK(g.risk(*r)->rank == 2);
    const auto ents = g.entries(*r);
    REQUIRE(ents.size() == 2);
    double p_cap = -1.0, p_goal = -1.0;
    for (std::size_t k = 0; k < ents.size(); ++k) {
      if (label_contains(g.labels(ents[k].to), cap)) p_cap = ents[k].p;
      if (label_contains(g.labels(ents[k].to), goal)) {
        p_goal = ents[k].p;
        CHECK(g.reward(0, *r, k) == 1.0);
      }
    }
    CHECK(p_cap == 0.18);
    CHECK(p_goal == 1.0 - 0.18);

    const StateId h = state_named("(1,1)|A");
    const Row* rh = g.find_row(h, 1);
    REQUIRE(rh != nullptr);
    REQUIRE(g.risk(*rh) != nullptr);
    CHECK(g.risk(*rh)->rank == 0);
    const auto ents_h = g.entries(*rh);
    double p_cap_h = -1.0;
    for (const TransitionEntry& e : ents_h)
      if (label_contains(g.labels(e.to), cap)) p_cap_h = e.p;
    CHECK(p_cap_h == 0.06);
  }

  SECTION("flag pickup is deterministic, rewarded, untagged") {
    const StateId s = state_named("(0,1)|A");
    const Row* r = g.find_row(s, 0);  // "n" onto the flag cell
    REQUIRE(r != nullptr);
    CHECK(g.risk(*r) == nullptr);
    const auto ents = g.entries(*r);
    REQUIRE(ents.size() == 1);
    CHECK(ents[0].to == state_named("(0,0)|"));
    CHECK(g.reward(0, *r, 0) == 1.0);
  }

  SECTION("terminal states only idle") {
    for (const char* n : {"GOAL|A", "GOAL|", "CAP|A", "CAP|"}) {
      const StateId s = state_named(n);
      CHECK(g.rows(s).size() == 1);
      const Row* r = g.find_row(s, 4);
      REQUIRE(r != nullptr);
      const auto ents = g.entries(*r);
      REQUIRE(ents.size() == 1);
      CHECK(ents[0].to == s);
    }
  }

  SECTION("edge moves are unavailable") {
    CHECK(g.find_row(g.initial(), 2) == nullptr);  // "s" off the map
    CHECK(validate(g).ok());
  }
}

TEST_CASE("micro quotient matches the direct abstraction", "[gfc]") {
  const GridSpec spec = load_grid_file(fix("gfc-micro.json"));
  const GfcBuild b = build_mg(spec);
  const Partition p = stutter_partition(b.game);
  CHECK(p.n_blocks() == 6);

  const AmgPair q = build_amg_pair(b.game, p);
  GfcDirect dir = direct_amg(spec);
  CHECK(dir.pair.safe.game.n_states() == 6);

  const IsoReport iso = amg_isomorphic(q, dir.pair);
  INFO(iso.why);
  CHECK(iso.ok);

  SECTION("abstraction map refines exactly the quotient blocks") {
    const std::vector<BlockId> map = abstraction_map(spec, b, dir);
    REQUIRE(map.size() == b.game.n_states());
    for (StateId s = 0; s < b.game.n_states(); ++s)
      for (StateId t = 0; t < b.game.n_states(); ++t)
        CHECK((map[s] == map[t]) == (p.block_of[s] == p.block_of[t]));
    attach_members(dir, spec, b);
    for (StateId s = 0; s < b.game.n_states(); ++s)
      CHECK(dir.pair.safe.weights[s] ==
            1.0 / static_cast<double>(dir.pair.safe.block_members[map[s]].size()));
  }

  SECTION("safe realizes the exposed door, optimal the hidden one") {
    const BlockId init = dir.pair.safe.game.initial();
    const AbstractOption* cross = find_option(dir.pair.safe, init, "Hall>Room");
    REQUIRE(cross != nullptr);
    REQUIRE(cross->variants.size() == 2);
    CHECK(cross->variants[0].rank == 0);
    CHECK(cross->variants[1].rank == 2);
    const JointActionId a = option_id(dir.pair.safe, cross);

    AtomId cap = 0;
    REQUIRE(dir.pair.safe.game.atoms().find("captured_1", cap));
    auto cap_mass = [&](const MarkovGame& g) {
      const Row* r = g.find_row(g.initial(), a);
      REQUIRE(r != nullptr);
      for (const TransitionEntry& e : g.entries(*r))
        if (label_contains(g.labels(e.to), cap)) return e.p;
      return -1.0;
    };
    CHECK(cap_mass(dir.pair.safe.game) == 0.18);
    CHECK(cap_mass(dir.pair.optimal.game) == 0.06);
  }

  SECTION("abstract reachability values match hand calculation") {
    const FormulaPtr reach_goal = parse_formula("P>=0.5 [ F goal_1 ]");
    const std::vector<double> vmax_opt =
        extremal_prob(dir.pair.optimal.game, *reach_goal, Extremal::Max);
    CHECK(vmax_opt[dir.pair.optimal.game.initial()] ==
          Catch::Approx(0.94).margin(1e-12));
    const std::vector<double> vmax_safe =
        extremal_prob(dir.pair.safe.game, *reach_goal, Extremal::Max);
    CHECK(vmax_safe[dir.pair.safe.game.initial()] ==
          Catch::Approx(0.82).margin(1e-12));
  }
}

TEST_CASE("mini quotient matches the direct abstraction", "[gfc]") {
  const GridSpec spec = load_grid_file(fix("gfc-mini.json"));
  const GfcBuild b = build_mg(spec);
  CHECK(b.game.n_states() > 100);
  CHECK(validate(b.game).ok());

  const Partition p = stutter_partition(b.game);
  GfcDirect dir = direct_amg(spec);
  CHECK(p.n_blocks() == dir.pair.safe.game.n_states());

  const AmgPair q = build_amg_pair(b.game, p);
  const IsoReport iso = amg_isomorphic(q, dir.pair);
  INFO(iso.why);
  CHECK(iso.ok);

  SECTION("initial block option inventory") {
    const AbstractMG& amg = dir.pair.safe;
    const BlockId init = amg.game.initial();
    int count = 0;
    for (const AbstractOption& o : amg.options) count += o.source == init;
    CHECK(count == 14);  // 13 exit combinations plus stay

    const AbstractOption* both = find_option(amg, init, "Base>Vault|Base>Vault");
    REQUIRE(both != nullptr);
    CHECK(both->variants.size() == 9);
    CHECK(both->variants.front().rank == 0);
    CHECK(both->variants.back().rank == 8);

    const AbstractOption* one = find_option(amg, init, "Base>Vault|.");
    REQUIRE(one != nullptr);
    CHECK(one->variants.size() == 3);

    const AbstractOption* goal_run = find_option(amg, init, "Base>Goal|.");
    REQUIRE(goal_run != nullptr);
    CHECK(goal_run->variants.size() == 1);
    CHECK(goal_run->variants[0].rank == 0);
    REQUIRE(goal_run->variants[0].cd.size() == 1);
    CHECK(goal_run->variants[0].cd[0].second == 1.0);
  }

  SECTION("round trip through the pair serializer") {
    // The loader renormalizes rows whose mass drifts below 1e-9, so the
    // first reload may shift probabilities by an ulp; after that the format
    // is a fixed point.
    const json j1 = save_amg_pair(dir.pair);
    const AmgPair back = load_amg_pair(j1);
    CHECK(amg_isomorphic(back, dir.pair).ok);
    const json j2 = save_amg_pair(back);
    CHECK(save_amg_pair(load_amg_pair(j2)) == j2);
  }
}

TEST_CASE("paper-like capacity and camera fidelity", "[gfc]") {
  GridSpec spec = load_grid_file(fix("gfc-paper-like.json"));
  CHECK_THROWS_AS(build_mg(spec), ModelError);

  spec.n_agents = 1;
  spec.spawns = {{0, 4}};
  REQUIRE(grid_problems(spec).empty());
  const GfcBuild b = build_mg(spec);
  const MarkovGame& g = b.game;
  CHECK(validate(g).ok());

  AtomId cap = 0;
  REQUIRE(g.atoms().find("captured_1", cap));
  const std::map<std::string, std::array<double, 3>> table = {
      {"HallA|RoomA", {0.06, 0.12, 0.18}},
      {"HallB|RoomB", {0.05, 0.1, 0.15}},
      {"HallB|RoomC", {0.05, 0.1, 0.15}},
      {"RoomC|RoomE", {0.07, 0.14, 0.21}},
  };
  std::set<std::pair<std::string, int>> seen;
  for (StateId s = 0; s < g.n_states(); ++s) {
    for (const Row& r : g.rows(s)) {
      const RiskTag* tag = g.risk(r);
      if (tag == nullptr) continue;
      double p_cap = -1.0;
      for (const TransitionEntry& e : g.entries(r))
        if (label_contains(g.labels(e.to), cap)) p_cap = e.p;
      std::string a = tag->family.substr(0, tag->family.find('>'));
      std::string bb = tag->family.substr(tag->family.find('>') + 1);
      if (bb > a) std::swap(a, bb);
      const std::string pair = bb + "|" + a;
      auto it = table.find(pair);
      if (it == table.end()) {
        CHECK(p_cap == -1.0);  // unmonitored pair, no capture branch
        continue;
      }
      REQUIRE(tag->rank >= 0);
      REQUIRE(tag->rank <= 2);
      CHECK(p_cap == it->second[static_cast<std::size_t>(tag->rank)]);
      seen.emplace(pair, tag->rank);
    }
  }
  CHECK(seen.size() == 12);
}
