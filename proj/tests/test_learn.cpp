#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "amarl/learn.hpp"

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

/// One agent, A -> B paying 1, B absorbing. Q(A) must settle at 1.
MarkovGame chain_game() {
  MarkovGameBuilder b(1, {{"go"}});
  b.set_gamma(0.95);
  const StateId A = b.add_state("A", {});
  const StateId B = b.add_state("B", {});
  b.add_row(A, 0, {{B, 1.0}});
  b.set_reward(A, 0, B, {1.0});
  b.add_row(B, 0, {{B, 1.0}});
  b.set_initial(A);
  return b.finalize();
}

}  // namespace

TEST_CASE("q-update arithmetic", "[learn]") {
  QTable q(1);

  iql_update(q, 0, 0, 0, 1.0, 1, 2, 0.1, 0.95);
  CHECK(q.table(0).at(0)[0] == 0.1);

  q.row(0, 1, 2) = {1.0, 0.5};
  iql_update(q, 0, 0, 0, 0.0, 1, 2, 0.1, 0.95);
  CHECK(q.table(0).at(0)[0] == 0.1 + 0.1 * (0.95 * 1.0 - 0.1));

  // With alpha = 1 the entry jumps straight to the backup target.
  q.row(0, 3, 2) = {3.0, 4.0};
  iql_update(q, 0, 2, 1, 2.0, 3, 2, 1.0, 0.95);
  CHECK(q.table(0).at(2)[1] == 2.0 + 0.95 * 4.0);
}

TEST_CASE("epsilon-greedy selection", "[learn]") {
  QTable q(1);
  Rng rng(7);

  SECTION("exploitation and ties") {
    q.row(0, 0, 3) = {0.2, 0.7, 0.1};
    CHECK(epsilon_greedy(q, 0, 0, 3, 0.0, rng) == 1);

    q.row(0, 1, 3) = {0.5, 0.5, 0.2};
    CHECK(epsilon_greedy(q, 0, 1, 3, 0.0, rng) == 0);

    // Unseen keys read as all zeros, hence action 0.
    CHECK(epsilon_greedy(q, 0, 99, 3, 0.0, rng) == 0);

    // A constant shift leaves the choice alone.
    q.row(0, 2, 3) = {10.2, 10.7, 10.1};
    CHECK(epsilon_greedy(q, 0, 2, 3, 0.0, rng) ==
          epsilon_greedy(q, 0, 0, 3, 0.0, rng));
  }

  SECTION("full exploration is uniform") {
    q.row(0, 0, 3) = {5.0, 0.0, 0.0};
    std::array<int, 3> count{};
    const int draws = 30000;
    for (int i = 0; i < draws; ++i)
      ++count[static_cast<std::size_t>(epsilon_greedy(q, 0, 0, 3, 1.0, rng))];
    const double mean = draws / 3.0;
    const double sigma = std::sqrt(draws * (1.0 / 3.0) * (2.0 / 3.0));
    for (int c : count) CHECK(std::abs(c - mean) < 3.0 * sigma);
  }
}

TEST_CASE("two-state chain reaches the fixed point", "[learn]") {
  const MarkovGame g = chain_game();

  LearnerConfig cfg;
  cfg.mode = TrainMode::Vanilla;
  cfg.episodes = 5000;
  cfg.max_steps = 2;
  cfg.seed = 3;
  const TrainResult r = train(g, cfg);

  // 10000 backups of Q(A,go) toward 1 + 0.95 * Q(B) with Q(B) pinned at 0.
  const std::uint64_t keyA = 0;
  REQUIRE(r.q.find_row(0, keyA) != nullptr);
  CHECK(std::abs((*r.q.find_row(0, keyA))[0] - 1.0) < 1e-3);
  CHECK(r.q.max_value(0, 1) == 0.0);
  CHECK(r.greedy[0][g.initial()] == 0);

  SECTION("same seed, same run") {
    const TrainResult r2 = train(g, cfg);
    CHECK(r2.stats.returns == r.stats.returns);
    CHECK(r2.stats.interventions == r.stats.interventions);
    CHECK(r2.stats.unsafe == r.stats.unsafe);
  }

  SECTION("mode and config validation") {
    LearnerConfig bad = cfg;
    bad.mode = TrainMode::Shielded;
    CHECK_THROWS_AS(train(g, bad), ModelError);
    bad = cfg;
    bad.alpha = 0.0;
    CHECK_THROWS_AS(train(g, bad), ModelError);
    bad = cfg;
    bad.gamma = 1.0;
    CHECK_THROWS_AS(train(g, bad), ModelError);
    bad = cfg;
    bad.eps_floor = 2.0;
    CHECK_THROWS_AS(train(g, bad), ModelError);
  }
}

TEST_CASE("shielded training on the micro grid", "[learn]") {
  const GridSpec spec = load_grid_file(fix("gfc-micro.json"));
  const GfcBuild build = build_mg(spec);
  GfcDirect dir = direct_amg(spec);
  const std::vector<BlockId> z = abstraction_map(spec, build, dir);
  const MarkovGame& g = build.game;

  const AbstractPolicy policy = micro_walk(dir.pair.safe);
  Shield shield(g, dir.pair.safe, policy, z);

  LearnerConfig cfg;
  cfg.episodes = 300;
  cfg.max_steps = 40;
  cfg.seed = 11;
  const ObsFn obs = gfc_observation(build);
  const TrainResult r = train(g, cfg, &shield, obs);

  CHECK(r.stats.unsafe_total() == 0);
  std::uint64_t blocked = 0;
  for (std::uint32_t b : r.stats.interventions) blocked += b;
  CHECK(blocked > 0);

  // Step rewards never exceed 2 in magnitude (environment plus shield
  // bonus), so every entry obeys the discounted-sum bound 2 / (1 - gamma).
  const double bound = 2.0 / (1.0 - cfg.gamma) + 1e-9;
  for (int i = 0; i < r.q.n_agents(); ++i)
    for (const auto& [key, row] : r.q.table(i))
      for (double v : row) CHECK(std::abs(v) <= bound);

  SECTION("compressed observations actually compress") {
    std::set<std::uint64_t> keys;
    for (StateId s = 0; s < g.n_states(); ++s) keys.insert(obs(s, 0));
    CHECK(keys.size() > 1);
    CHECK(keys.size() <= g.n_states());
  }
}

TEST_CASE("unshielded termination flags unsafe episodes", "[learn]") {
  const GridSpec spec = load_grid_file(fix("gfc-micro.json"));
  const GfcBuild build = build_mg(spec);
  GfcDirect dir = direct_amg(spec);
  const std::vector<BlockId> z = abstraction_map(spec, build, dir);
  const MarkovGame& g = build.game;

  const AbstractPolicy policy = micro_walk(dir.pair.safe);
  Shield shield(g, dir.pair.safe, policy, z);

  LearnerConfig cfg;
  cfg.mode = TrainMode::UnshieldedTerminate;
  cfg.episodes = 200;
  cfg.max_steps = 40;
  cfg.seed = 5;
  const TrainResult r = train(g, cfg, &shield, gfc_observation(build));

  CHECK(r.stats.unsafe_total() > 0);
  CHECK(r.stats.unsafe.size() == 200);

  // A violating episode charges the violator on its final step.
  bool charged = false;
  for (std::size_t ep = 0; ep < r.stats.unsafe.size(); ++ep)
    if (r.stats.unsafe[ep] && r.stats.returns[ep][0] < 0.0) charged = true;
  CHECK(charged);
}

TEST_CASE("checkpoints and stats round-trip", "[learn]") {
  QTable q(2);
  q.row(0, 3, 2) = {0.25, -1.5};
  q.row(0, 1, 2) = {0.0, 4.0};
  q.row(1, 7, 2) = {2.0, 0.5};

  LearnerConfig cfg;
  cfg.seed = 42;
  const json j = checkpoint_to_json(q, cfg);
  CHECK(j.at("config").at("mode") == "shielded");
  CHECK(j.at("config").at("alpha") == 0.1);
  CHECK(j.at("config").at("seed") == 42);

  const QTable back = checkpoint_from_json(j);
  REQUIRE(back.n_agents() == 2);
  CHECK(back.table(0) == q.table(0));
  CHECK(back.table(1) == q.table(1));

  CHECK_THROWS_AS(checkpoint_from_json(json{{"nope", 1}}), ParseError);

  TrainStats st;
  st.returns = {{1.0, 2.0}, {0.5, -1.0}};
  st.interventions = {3, 0};
  st.unsafe = {0, 1};
  const std::string csv = stats_to_csv(st);
  CHECK(csv == "episode,return_0,return_1,interventions,unsafe\n"
               "0,1,2,3,0\n"
               "1,0.5,-1,0,1\n");
  CHECK(st.unsafe_total() == 1);
}
