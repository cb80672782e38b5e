#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "amarl/approx.hpp"

using namespace amarl;

TEST_CASE("single linear unit has the textbook gradient", "[approx]") {
  Rng rng(1);
  Mlp net({1, 1}, rng);
  net.params() = {0.5, 0.25};  // weight, bias

  const Sample s{{3.0}, 0, 1.0};
  const double pred = net.forward(s.x)[0];
  CHECK(pred == 0.5 * 3.0 + 0.25);

  const std::vector<Sample> batch{s};
  const std::vector<double> g = net.gradient(batch);
  REQUIRE(g.size() == 2);
  CHECK_THAT(g[0], Catch::Matchers::WithinAbs(2.0 * (pred - 1.0) * 3.0, 1e-12));
  CHECK_THAT(g[1], Catch::Matchers::WithinAbs(2.0 * (pred - 1.0), 1e-12));
  CHECK_THAT(net.loss(batch),
             Catch::Matchers::WithinAbs((pred - 1.0) * (pred - 1.0), 1e-12));
}

TEST_CASE("analytic gradients match central differences", "[approx]") {
  Rng rng(2024);

  auto random_batch = [&](int input, int output, std::size_t count) {
    std::vector<Sample> batch;
    for (std::size_t i = 0; i < count; ++i) {
      Sample s;
      for (int k = 0; k < input; ++k) s.x.push_back(2.0 * rng.uniform() - 1.0);
      s.action = static_cast<int>(rng.below(static_cast<std::uint32_t>(output)));
      s.target = 2.0 * rng.uniform() - 1.0;
      batch.push_back(std::move(s));
    }
    return batch;
  };

  SECTION("one hidden layer, 100 minibatches") {
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      Mlp net({4, 6, 3}, rng);
      const auto batch = random_batch(4, 3, 4);
      worst = std::max(worst, gradient_check(net, batch));
    }
    CHECK(worst < 1e-4);
  }

  SECTION("two hidden layers") {
    Mlp net({2, 5, 5, 2}, rng);
    const auto batch = random_batch(2, 2, 8);
    CHECK(gradient_check(net, batch) < 1e-4);
  }

  SECTION("input size is checked") {
    Mlp net({2, 2}, rng);
    CHECK_THROWS_AS(net.forward({1.0}), ModelError);
    CHECK_THROWS_AS(Mlp({3}, rng), ModelError);
  }
}

TEST_CASE("target network sync is bitwise", "[approx]") {
  Rng rng(9);
  DoubleQ q({3, 4, 2}, rng);
  CHECK(q.frozen().params() == q.online().params());

  for (double& p : q.online().params()) p += 0.125;
  CHECK(q.frozen().params() != q.online().params());
  q.sync();
  CHECK(q.frozen().params() == q.online().params());
}

TEST_CASE("replay and updates drive the loss down", "[approx]") {
  Rng rng(5);

  SECTION("buffer is a ring") {
    ReplayBuffer buf(4);
    for (int i = 0; i < 6; ++i)
      buf.push({{static_cast<double>(i)}, 0, 0.0, {}, true});
    CHECK(buf.size() == 4);
    // 0 and 1 were evicted.
    const auto got = buf.sample(32, rng);
    for (const Transition& t : got) CHECK(t.x[0] >= 2.0);
    CHECK_THROWS_AS(ReplayBuffer(0), ModelError);
  }

  SECTION("terminal regression converges") {
    DoubleQ q({1, 8, 2}, rng);
    const std::vector<Transition> batch{{{0.3}, 1, 1.0, {}, true}};
    ApproxConfig cfg;
    cfg.lr = 0.05;
    const double first = q.update(batch, cfg);
    double last = first;
    for (int i = 0; i < 400; ++i) last = q.update(batch, cfg);
    CHECK(last < first);
    CHECK(std::abs(q.online().forward({0.3})[1] - 1.0) < 0.05);
  }

  SECTION("bootstrapped target uses the frozen copy") {
    DoubleQ q({1, 4, 2}, rng);
    ApproxConfig cfg;
    cfg.lr = 0.0;  // no movement, just inspect the loss
    const Transition t{{0.2}, 0, 1.0, {0.7}, false};
    const std::vector<double> pick = q.online().forward(t.next);
    const std::size_t best = pick[1] > pick[0] ? 1 : 0;
    const double y = 1.0 + cfg.gamma * q.frozen().forward(t.next)[best];
    const double pred = q.online().forward(t.x)[0];
    const double expect = (pred - y) * (pred - y);
    CHECK_THAT(q.update(std::vector<Transition>{t}, cfg),
               Catch::Matchers::WithinAbs(expect, 1e-12));
  }
}
