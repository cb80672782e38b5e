#include <catch2/catch_amalgamated.hpp>

#include "amarl/fixtures.hpp"
#include "amarl/policy.hpp"

using namespace amarl;

namespace {

JointActionId option_by_family(const AbstractMG& amg, StateId s,
                               const std::string& family) {
  for (const Row& r : amg.game.rows(s))
    if (amg.option(r.action).family == family) return r.action;
  throw std::runtime_error("no option with family " + family);
}

AmgPair fig3_pair() {
  const MarkovGame g = fixtures::fig3_model();
  return build_amg_pair(g, stutter_partition(g));
}

const std::string kFig3Constraints =
    "# desk rules for the three-class model\n"
    "safety P<0.15 [ F c ]\n"
    "\n"
    "optimality P>=0.5 [ F b ]\n"
    "metric P=? [ F b ]\n";

}  // namespace

TEST_CASE("constraint files parse with stable ids", "[policy]") {
  const AmgPair pair = fig3_pair();
  const AtomTable& atoms = pair.safe.game.atoms();
  const ConstraintSet cs = parse_constraints(kFig3Constraints, atoms);
  REQUIRE(cs.items.size() == 3);
  CHECK(cs.items[0].id == "S1");
  CHECK(cs.items[0].tag == ConstraintTag::Safety);
  CHECK(cs.items[0].text == "P<0.15 [ F c ]");
  CHECK(cs.items[1].id == "O1");
  CHECK(cs.items[2].id == "M1");
  CHECK(cs.metric_order() == std::vector<std::size_t>{2});

  CHECK_THROWS_AS(parse_constraints("speed P<1 [ F b ]", atoms), ParseError);
  CHECK_THROWS_AS(parse_constraints("safety P<0.5 [ F nosuch ]", atoms),
                  ParseError);
  CHECK_THROWS_AS(parse_constraints("safety P<0.5 [ X b ]", atoms),
                  ParseError);
  CHECK_THROWS_AS(parse_constraints("optimality P>=0.1 [ a U<=3 b ]", atoms),
                  ParseError);
  CHECK_THROWS_AS(parse_constraints("safety", atoms), ParseError);
}

TEST_CASE("policy sampling is uniform, deduplicated and seeded", "[policy]") {
  SECTION("degenerate one-option space") {
    MarkovGameBuilder b(1, {{"u"}});
    const AtomId ell = b.intern_atom("ell");
    const StateId s = b.add_state("s", {ell});
    b.declare_partition({{ell}}, {});
    b.add_row(s, 0, {{s, 1.0}});
    const MarkovGame g = b.finalize();
    const AmgPair pair = build_amg_pair(g, stutter_partition(g));
    const auto ps = sample_policies(pair.safe, 5, 11);
    REQUIRE(ps.size() == 1);
    CHECK(ps[0].id == "p11-0");
  }

  SECTION("fig3 has exactly the two initial-class policies") {
    const AmgPair pair = fig3_pair();
    const StateId init = pair.safe.game.initial();
    const auto ps = sample_policies(pair.safe, 64, 7);
    REQUIRE(ps.size() == 2);
    std::set<std::int64_t> at_init;
    for (const AbstractPolicy& p : ps) at_init.insert(p.choice[init]);
    const std::set<std::int64_t> expected{
        option_by_family(pair.safe, init, "cd0"),
        option_by_family(pair.safe, init, "stay")};
    CHECK(at_init == expected);
  }

  SECTION("fixed seed reproduces the list") {
    const AmgPair pair = fig3_pair();
    const auto a = sample_policies(pair.safe, 40, 3);
    const auto b = sample_policies(pair.safe, 40, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(a[i].choice == b[i].choice);
    }
  }
}

TEST_CASE("verification separates the two fig3 policies", "[policy]") {
  const AmgPair pair = fig3_pair();
  const StateId init = pair.safe.game.initial();
  const ConstraintSet cs =
      parse_constraints(kFig3Constraints, pair.safe.game.atoms());

  AbstractPolicy commit{"commit", {}};
  AbstractPolicy wait{"wait", {}};
  for (StateId s = 0; s < pair.safe.game.n_states(); ++s) {
    commit.choice.push_back(option_by_family(
        pair.safe, s, s == init ? "cd0" : "stay"));
    wait.choice.push_back(option_by_family(pair.safe, s, "stay"));
  }

  const PolicyEvaluation ec =
      verify_policy(commit, pair.safe, pair.optimal, cs);
  CHECK(ec.values[0] == 0.3);
  CHECK_FALSE(ec.holds[0]);
  CHECK(ec.values[1] == 0.7);
  CHECK(ec.holds[1]);
  CHECK(ec.values[2] == 0.7);
  CHECK_FALSE(ec.safe);
  CHECK_FALSE(ec.admissible);

  const PolicyEvaluation ew = verify_policy(wait, pair.safe, pair.optimal, cs);
  CHECK(ew.values[0] == 0.0);
  CHECK(ew.holds[0]);
  CHECK(ew.values[1] == 0.0);
  CHECK_FALSE(ew.holds[1]);
  CHECK(ew.safe);
  CHECK_FALSE(ew.admissible);

  SECTION("pareto keeps the single safe policy and re-verifies it") {
    const auto pareto = pareto_filter(cs, {ec, ew});
    REQUIRE(pareto.size() == 1);
    CHECK(pareto[0].policy_id == "wait");
    const PolicyEvaluation again =
        verify_policy(wait, pair.safe, pair.optimal, cs);
    CHECK(again.safe);
    for (std::size_t i = 0; i < cs.items.size(); ++i)
      CHECK(again.values[i] == pareto[0].values[i]);
    CHECK(select_policy(cs, pareto) == &pareto[0]);
    CHECK(select_policy(cs, {}) == nullptr);
  }
}

TEST_CASE("pareto filtering on synthetic evaluations", "[policy]") {
  const AmgPair pair = fig3_pair();
  const ConstraintSet cs = parse_constraints(
      "metric P=? [ F b ]\nmetric R=? [ F c ]", pair.safe.game.atoms());

  auto ev = [](std::string id, double m1, double m2, bool safe) {
    PolicyEvaluation e;
    e.policy_id = std::move(id);
    e.values = {m1, m2};
    e.holds = {1, 1};
    e.safe = safe;
    e.admissible = safe;
    return e;
  };

  SECTION("dominance by inspection") {
    const std::vector<PolicyEvaluation> evs{ev("pa", 0.9, 7.0, true),
                                            ev("pb", 0.8, 8.0, true),
                                            ev("pc", 0.7, 6.0, true)};
    const auto front = pareto_filter(cs, evs);
    REQUIRE(front.size() == 2);
    CHECK(front[0].policy_id == "pa");
    CHECK(front[1].policy_id == "pb");

    SECTION("idempotent and order independent") {
      const auto again = pareto_filter(cs, front);
      REQUIRE(again.size() == front.size());
      for (std::size_t i = 0; i < front.size(); ++i)
        CHECK(again[i].policy_id == front[i].policy_id);
      const std::vector<PolicyEvaluation> rev{evs[2], evs[0], evs[1]};
      const auto swapped = pareto_filter(cs, rev);
      REQUIRE(swapped.size() == 2);
      CHECK(swapped[0].policy_id == "pa");
      CHECK(swapped[1].policy_id == "pb");
    }
  }

  SECTION("unsafe policies never enter the front") {
    const auto front = pareto_filter(
        cs, {ev("pa", 0.99, 9.0, false), ev("pb", 0.1, 1.0, true)});
    REQUIRE(front.size() == 1);
    CHECK(front[0].policy_id == "pb");
  }

  SECTION("upper-bounded metrics rank low values first") {
    const ConstraintSet down = parse_constraints("metric P<=0.2 [ F c ]",
                                                 pair.safe.game.atoms());
    PolicyEvaluation hi = ev("hi", 0.1, 0, true);
    PolicyEvaluation lo = ev("lo", 0.05, 0, true);
    hi.values = {0.1};
    lo.values = {0.05};
    hi.holds = {1};
    lo.holds = {1};
    const auto front = pareto_filter(down, {hi, lo});
    REQUIRE(front.size() == 1);
    CHECK(front[0].policy_id == "lo");
  }

  SECTION("selection is lexicographic with id tie-break") {
    const auto best = [&](std::vector<PolicyEvaluation> evs2) {
      const auto* p = select_policy(cs, evs2);
      REQUIRE(p != nullptr);
      return p->policy_id;
    };
    CHECK(best({ev("p1-5", 0.9, 7.0, true), ev("p1-2", 0.9, 8.0, true)}) ==
          "p1-2");
    CHECK(best({ev("p1-5", 0.9, 8.0, true), ev("p1-2", 0.9, 8.0, true)}) ==
          "p1-2");
    CHECK(best({ev("p1-5", 0.95, 1.0, true), ev("p1-2", 0.9, 8.0, true)}) ==
          "p1-5");
  }
}

TEST_CASE("policy files round-trip against their game", "[policy]") {
  const AmgPair pair = fig3_pair();
  const StateId init = pair.safe.game.initial();
  AbstractPolicy p{"p7-0", {}};
  for (StateId s = 0; s < pair.safe.game.n_states(); ++s)
    p.choice.push_back(
        option_by_family(pair.safe, s, s == init ? "cd0" : "stay"));

  const json j = save_policy(p, pair.safe);
  const AbstractPolicy back = load_policy(j, pair.safe);
  CHECK(back.id == p.id);
  CHECK(back.choice == p.choice);

  AbstractPolicy foreign = p;
  foreign.choice[init] = p.choice[(init + 1) % pair.safe.game.n_states()];
  CHECK_THROWS_AS(save_policy(foreign, pair.safe), ModelError);

  json bad = j;
  bad["options"][0] = "nope/stay";
  CHECK_THROWS_AS(load_policy(bad, pair.safe), ParseError);
  bad = j;
  bad["options"].erase(0);
  CHECK_THROWS_AS(load_policy(bad, pair.safe), ParseError);

  const PolicyEvaluation ev = verify_policy(
      p, pair.safe, pair.optimal,
      parse_constraints(kFig3Constraints, pair.safe.game.atoms()));
  const json line = evaluation_to_json(
      parse_constraints(kFig3Constraints, pair.safe.game.atoms()), ev);
  CHECK(line["policy"] == "p7-0");
  CHECK(line["values"]["S1"] == 0.3);
  CHECK(line["holds"]["O1"] == true);
  CHECK(line["safe"] == false);
}
