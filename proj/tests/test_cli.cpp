#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "amarl/gfc.hpp"
#include "amarl/harness.hpp"
#include "amarl/policy.hpp"

using namespace amarl;
namespace fs = std::filesystem;

namespace {

std::string fix(const std::string& name) {
  return std::string(AMARL_FIXTURE_DIR) + "/" + name;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "amarl-cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct RunResult {
  int code = -1;
  std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path errfile = dir / "stderr.txt";
  const std::string cmd = std::string(AMARL_CLI_PATH) + " " + args + " 2>" +
                          errfile.string() + " >/dev/null";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(errfile);
  std::ostringstream buf;
  buf << in.rdbuf();
  r.err = buf.str();
  return r;
}

json slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return json::parse(in);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("cli rejects bad invocations with json errors", "[cli]") {
  const fs::path dir = scratch("usage");

  RunResult r = run_cli("", dir);
  CHECK(r.code == 1);
  json err = json::parse(r.err);
  CHECK(err.at("error").at("type") == "usage");

  r = run_cli("frobnicate --out " + (dir / "x").string(), dir);
  CHECK(r.code == 1);
  CHECK(json::parse(r.err).at("error").at("type") == "usage");

  r = run_cli("build-amg --out " + (dir / "x").string(), dir);
  CHECK(r.code == 1);

  r = run_cli("build-amg --spec /nonexistent.json --out " +
                  (dir / "x").string(),
              dir);
  CHECK(r.code == 1);
  CHECK(json::parse(r.err).contains("error"));
}

TEST_CASE("repro fig3 reproduces the quotient classes", "[cli]") {
  const fs::path dir = scratch("fig3");
  const RunResult r = run_cli("repro fig3 --out " + dir.string(), dir);
  REQUIRE(r.code == 0);

  const json classes = slurp(dir / "fig3-classes.json");
  CHECK(classes.at("blocks").at("b0") ==
        json::array({"v0", "v1", "v2"}));
  CHECK(classes.at("blocks").at("b1") == json::array({"v3"}));
  CHECK(classes.at("blocks").at("b2") == json::array({"v4"}));

  const json meta = slurp(dir / "meta.json");
  CHECK(meta.contains("time"));
  CHECK(meta.at("outputs").size() == 1);
}

TEST_CASE("build-amg artifacts round-trip", "[cli]") {
  const fs::path dir = scratch("amg");
  const RunResult r = run_cli(
      "build-amg --spec " + fix("gfc-micro.json") + " --out " + dir.string(),
      dir);
  REQUIRE(r.code == 0);

  const AmgPair loaded = load_amg_pair(slurp(dir / "amg.json"));
  const GfcDirect direct = direct_amg(load_grid_file(fix("gfc-micro.json")));
  REQUIRE(loaded.safe.game.n_states() == direct.pair.safe.game.n_states());
  const IsoReport iso = amg_isomorphic(loaded, direct.pair);
  INFO(iso.why);
  CHECK(iso.ok);

  const json summary = slurp(dir / "summary.json");
  CHECK(summary.at("blocks").size() == direct.pair.safe.game.n_states());

  const fs::path dir2 = scratch("amg2");
  REQUIRE(run_cli("build-amg --spec " + fix("gfc-micro.json") + " --out " +
                      dir2.string(),
                  dir2)
              .code == 0);
  CHECK(slurp(dir / "amg.json") == slurp(dir2 / "amg.json"));
}

TEST_CASE("select picks an admissible policy or reports infeasible",
          "[cli]") {
  const fs::path dir = scratch("select");
  const fs::path cs = dir / "constraints.txt";
  write_text(cs,
             "safety P<=0.2 [ F captured_1 ]\n"
             "optimality P>=0.8 [ F goal_1 ]\n"
             "metric P=? [ F goal_1 ]\n");

  const std::string base = "--spec " + fix("gfc-micro.json") +
                           " --constraints " + cs.string() +
                           " --count 200 --seed 7";
  const fs::path out = dir / "out";
  RunResult r = run_cli("select " + base + " --out " + out.string(), dir);
  REQUIRE(r.code == 0);

  const GfcDirect direct = direct_amg(load_grid_file(fix("gfc-micro.json")));
  const AbstractPolicy chosen =
      load_policy(slurp(out / "selected.json"), direct.pair.safe);
  REQUIRE(chosen.choice.size() == direct.pair.safe.game.n_states());

  const json eval = slurp(out / "selected-eval.json");
  CHECK(eval.at("admissible") == true);
  CHECK(eval.at("values").at("S1").get<double>() <= 0.2);
  CHECK(eval.at("values").at("O1").get<double>() >= 0.8);
  CHECK(slurp(out / "pareto.json").is_array());

  const fs::path impossible = dir / "impossible.txt";
  write_text(impossible,
             "safety P>=0.5 [ F captured_1 ]\n"
             "safety P<=0.2 [ F captured_1 ]\n");
  r = run_cli("select --spec " + fix("gfc-micro.json") + " --constraints " +
                  impossible.string() + " --count 50 --seed 7 --out " +
                  (dir / "none").string(),
              dir);
  CHECK(r.code == 2);
  CHECK(json::parse(r.err).at("error").at("type") == "infeasible");
}

TEST_CASE("train and eval chain on the micro grid", "[cli]") {
  const fs::path dir = scratch("train");
  const fs::path cs = dir / "constraints.txt";
  write_text(cs,
             "safety P<=0.2 [ F captured_1 ]\n"
             "optimality P>=0.8 [ F goal_1 ]\n"
             "metric P=? [ F goal_1 ]\n");

  const std::string spec = fix("gfc-micro.json");
  REQUIRE(run_cli("select --spec " + spec + " --constraints " + cs.string() +
                      " --count 200 --seed 7 --out " + (dir / "sel").string(),
                  dir)
              .code == 0);

  const std::string policy = (dir / "sel" / "selected.json").string();
  RunResult r = run_cli("train --spec " + spec + " --policy " + policy +
                            " --mode shielded --episodes 300 --max-steps 200" +
                            " --seeds 1,2 --out " + (dir / "tr").string(),
                        dir);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "tr" / "checkpoint-2.json"));

  const json summary = slurp(dir / "tr" / "train-summary.json");
  REQUIRE(summary.size() == 2);
  for (const json& row : summary) CHECK(row.at("unsafe") == 0);

  std::ifstream stats(dir / "tr" / "stats-1.csv");
  std::string header;
  std::getline(stats, header);
  CHECK(header == "episode,return_0,interventions,unsafe");

  r = run_cli("eval --spec " + spec + " --policy " + policy +
                  " --mode shielded --checkpoint " +
                  (dir / "tr" / "checkpoint-1.json").string() +
                  " --episodes 400 --seeds 1 --out " + (dir / "ev").string(),
              dir);
  REQUIRE(r.code == 0);
  const json eval = slurp(dir / "ev" / "eval.json");
  CHECK(eval.at("episodes") == 400);
  CHECK(eval.at("all").at("end").at("p").get<double>() > 0.99);
  CHECK(eval.at("all").at("captured").at("p").get<double>() <= 0.2);
}
