#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rra/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const char* kMerton =
    "model.family = merton\nmodel.horizon = 1\nmodel.drift = 0.06\nmodel.vol = 0.2\n"
    "model.consumption = terminal_only\nsim.n_paths = 500\nsim.n_steps = 10\nsim.seed = 3\n"
    "sweep.limit_kind = neg_infinity\n";

const char* kNoTrade =
    "model.family = no_trade\nmodel.horizon = 1\nmodel.consumption = intermediate\n"
    "sim.n_paths = 100\nsim.n_steps = 10\nsim.seed = 1\n";

const char* kFactor =
    "model.family = one_factor\nmodel.horizon = 1\nmodel.vol = 0.2\nmodel.lambda_bar = 1.5\n"
    "model.gamma = 1\nmodel.factor_level = 0\nmodel.factor_speed = 1\nmodel.factor_vol = 0.5\n"
    "model.rho = -0.5\nmodel.delta = 0.5\nmodel.k1 = 0.7\nmodel.k2 = 1.4\n"
    "model.consumption = intermediate\nsim.n_steps = 10\n";

struct Sandbox {
  fs::path root;

  explicit Sandbox(const std::string& name) : root(fs::temp_directory_path() / ("rra_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Sandbox() { fs::remove_all(root); }

  std::string config(const std::string& name, const std::string& text) const {
    const fs::path p = root / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string dir(const std::string& name) const { return (root / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// Runs the CLI with stdout discarded and stderr captured.
struct Result {
  int code;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream err;
  std::ostringstream out;
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  const int code = rra::run(args);
  std::cerr.rdbuf(old_err);
  std::cout.rdbuf(old_out);
  return {code, err.str()};
}

}  // namespace

TEST_CASE("merton sweep writes five rows") {
  Sandbox box("sweep");
  const auto cfg = box.config("merton.cfg", kMerton);
  CHECK(run({"sweep", "--config", cfg, "--out", box.dir("out")}).code == 0);
  const std::string csv = slurp(box.root / "out" / "sweep_neg_infinity.csv");
  CHECK(lines(csv) == 6);
  CHECK(csv.rfind("limit_kind,p,L0,u_p,err_kappa,err_pi,err_Lstar,pass_flags\n", 0) == 0);
  CHECK(csv.find("fail") == std::string::npos);

  const auto two = box.config("two.cfg", std::string(kMerton) + "sweep.p_grid = -2, -4\n");
  CHECK(run({"sweep", "--config", two, "--out", box.dir("out")}).code == 1);
}

TEST_CASE("no-trade checks pass") {
  Sandbox box("check");
  const auto cfg = box.config("nt.cfg", kNoTrade);
  CHECK(run({"check", "--config", cfg, "--out", box.dir("out")}).code == 0);
  const std::string csv = slurp(box.root / "out" / "checks.csv");
  CHECK(csv.find(",false\n") == std::string::npos);
  CHECK(csv.find("comparison_dual,-1,0.25,") != std::string::npos);
  CHECK(csv.find("pure_investment_bound") != std::string::npos);
}

TEST_CASE("exit codes") {
  Sandbox box("codes");
  const auto merton = box.config("merton.cfg", kMerton);
  const std::string out = box.dir("out");
  CHECK(run({"solve", "--config", merton, "--out", out, "--p", "0"}).code == 1);
  CHECK(run({"solve", "--config", merton, "--out", out}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"solve", "--config", box.dir("missing.cfg"), "--out", out, "--p", "-1"}).code == 1);

  const auto no_drift = box.config("nodrift.cfg", "model.family = merton\nmodel.horizon = 1\nmodel.vol = 0.2\n"
                                                  "model.consumption = terminal_only\nsim.n_paths = 10\n"
                                                  "sim.n_steps = 2\nsim.seed = 1\n");
  const Result r = run({"simulate", "--config", no_drift, "--out", out});
  CHECK(r.code == 1);
  CHECK(r.err.find("model.drift") != std::string::npos);

  const auto typo = box.config("typo.cfg", std::string(kNoTrade) + "sim.n_pathz = 4\n");
  const Result t = run({"simulate", "--config", typo, "--out", out});
  CHECK(t.code == 1);
  CHECK(t.err.find("sim.n_pathz") != std::string::npos);

  std::ofstream(box.root / "file") << "x";
  CHECK(run({"simulate", "--config", merton, "--out", box.dir("file")}).code == 1);

  const auto tiny = box.config("tiny.cfg", std::string(kFactor) + "sim.n_paths = 3\nsim.seed = 4\n");
  CHECK(run({"solve", "--config", tiny, "--out", out, "--p", "-1"}).code == 2);

  const auto strict = box.config("strict.cfg", std::string(kFactor) + "sim.n_paths = 400\nsim.seed = 4\n"
                                                                      "check.slack_se = 0\n");
  CHECK(run({"check", "--config", strict, "--out", out}).code == 3);
  CHECK(fs::exists(box.root / "out" / "checks.csv"));
}

TEST_CASE("solve writes both tables") {
  Sandbox box("solve");
  const auto cfg = box.config("merton.cfg", kMerton);
  CHECK(run({"solve", "--config", cfg, "--out", box.dir("out"), "--p", "-0.5"}).code == 0);
  const std::string opp = slurp(box.root / "out" / "opportunity_p-0.5.csv");
  const std::string strat = slurp(box.root / "out" / "strategy_p-0.5.csv");
  CHECK(opp.rfind("path_id,t,L,Z_1,dN\n", 0) == 0);
  CHECK(strat.rfind("path_id,t,kappa,pi_1,X,Y_norm\n", 0) == 0);
  CHECK(lines(strat) == 1 + 500 * 11);

  const auto with_p = box.config("p.cfg", std::string(kMerton) + "solver.p = 0.5\n");
  CHECK(run({"solve", "--config", with_p, "--out", box.dir("out")}).code == 0);
  CHECK(fs::exists(box.root / "out" / "strategy_p0.5.csv"));
}

TEST_CASE("seed precedence") {
  Sandbox box("seed");
  const auto cfg = box.config("noseed.cfg", "model.family = merton\nmodel.horizon = 1\nmodel.drift = 0.06\n"
                                            "model.vol = 0.2\nmodel.consumption = terminal_only\n"
                                            "sim.n_paths = 20\nsim.n_steps = 4\n");
  const auto seeded = box.config("seeded.cfg", std::string(kMerton));
  auto paths = [&](const std::string& dir) { return slurp(box.root / dir / "paths.csv"); };

  ::unsetenv("RRA_SEED");
  const Result none = run({"simulate", "--config", cfg, "--out", box.dir("a")});
  CHECK(none.code == 1);
  CHECK(none.err.find("seed") != std::string::npos);

  ::setenv("RRA_SEED", "7", 1);
  CHECK(run({"simulate", "--config", cfg, "--out", box.dir("env")}).code == 0);
  CHECK(run({"simulate", "--config", cfg, "--out", box.dir("flag7"), "--seed", "7"}).code == 0);
  CHECK(run({"simulate", "--config", cfg, "--out", box.dir("flag8"), "--seed", "8"}).code == 0);
  CHECK(paths("env") == paths("flag7"));
  CHECK(paths("env") != paths("flag8"));

  CHECK(run({"simulate", "--config", seeded, "--out", box.dir("cfg")}).code == 0);
  CHECK(run({"simulate", "--config", seeded, "--out", box.dir("cfg3"), "--seed", "3"}).code == 0);
  CHECK(paths("cfg") == paths("cfg3"));

  ::setenv("RRA_SEED", "seven", 1);
  CHECK(run({"simulate", "--config", cfg, "--out", box.dir("bad")}).code == 1);
  ::unsetenv("RRA_SEED");
}

TEST_CASE("outputs do not depend on the thread count") {
  Sandbox box("threads");
  const auto cfg = box.config("of.cfg", std::string(kFactor) + "sim.n_paths = 1500\nsim.seed = 9\n");
  for (const char* threads : {"1", "3"}) {
    const std::string out = box.dir(std::string("t") + threads);
    CHECK(run({"simulate", "--config", cfg, "--out", out, "--threads", threads}).code == 0);
    CHECK(run({"solve", "--config", cfg, "--out", out, "--threads", threads, "--p", "-2"}).code == 0);
  }
  for (const char* name : {"paths.csv", "opportunity_p-2.csv", "strategy_p-2.csv"}) {
    CHECK(slurp(box.root / "t1" / name) == slurp(box.root / "t3" / name));
  }
  CHECK(run({"simulate", "--config", cfg, "--out", box.dir("t0"), "--threads", "0"}).code == 0);
}

TEST_CASE("report aggregates existing tables") {
  Sandbox box("report");
  const auto cfg = box.config("merton.cfg", kMerton);
  const std::string out = box.dir("out");
  CHECK(run({"report", "--out", out}).code == 1);
  CHECK(run({"sweep", "--config", cfg, "--out", out}).code == 0);
  CHECK(run({"solve", "--config", cfg, "--out", out, "--p", "-1"}).code == 0);
  CHECK(run({"report", "--out", out}).code == 0);
  const std::string first = slurp(box.root / "out" / "report_long.csv");
  CHECK(first.rfind("source,limit_kind,p,t,metric,value\n", 0) == 0);
  CHECK(first.find("sweep_neg_infinity.csv,neg_infinity,-32,,err_pi,") != std::string::npos);
  CHECK(first.find("opportunity_p-1.csv,,-1,0,L_mean,") != std::string::npos);
  CHECK(first.find("strategy_p-1.csv,,-1,1,X_mean,") != std::string::npos);
  CHECK(run({"report", "--config", cfg}).code == 1);
  CHECK(run({"report", "--out", out}).code == 0);
  CHECK(slurp(box.root / "out" / "report_long.csv") == first);
}
