// Acceptance suite: one PASS/FAIL line per criterion.

#include "oracles.hpp"
#include "rra/asymptotics.hpp"
#include "rra/cli.hpp"
#include "rra/properties.hpp"
#include "rra/strategy.hpp"
#include "test_helpers.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

using namespace rra;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kOdeRel = 1e-8;
constexpr double kLsmcRel = 0.01;
constexpr double kExact = 1e-12;
constexpr double kValueSe = 3.0;
constexpr double kPerturbSe = 2.0;
constexpr double kPhiSe = 3.0;
constexpr double kCorrSe = 4.0;
constexpr double kCorrShare = 0.95;
constexpr double kLimit1 = 60.0;
constexpr double kLimit2 = 120.0;
constexpr double kLimitSweep = 600.0;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

int failures = 0;

void criterion(int id, const std::string& title, double limit, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit > 0.0 && secs > limit) o.require(false, "runtime above " + std::to_string(static_cast<int>(limit)) + " s");
  if (!o.pass) ++failures;
  std::printf("%s criterion %d: %s (%.1f s)%s%s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), secs,
              o.detail.empty() ? "" : " -- ", o.detail.c_str());
  std::fflush(stdout);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Sample {
  double mean;
  double se;
};

Sample sample(const Eigen::ArrayXd& v) {
  const double n = static_cast<double>(v.size());
  const double m = v.mean();
  return {m, std::sqrt((v - m).square().sum() / (n - 1.0) / n)};
}

SimConfig sim_config(std::uint64_t seed) {
  SimConfig s;
  s.n_paths = 50000;
  s.n_steps = 50;
  s.seed = seed;
  return s;
}

Outcome no_trade_closed_form() {
  Outcome o;
  const MarketModel m = testing::no_trade();
  const PathBundle paths = simulate(m, 50000, 50, 1);
  double ode_err = 0.0;
  double kappa_err = 0.0;
  double lsmc_err = 0.0;
  for (double p : {-0.5, -1.0, -2.0, -8.0}) {
    const auto params = RiskAversionParams::from_p(p);
    const auto ode = solve_ode(m, params, paths.time_grid);
    const auto lsmc = solve_lsmc(m, params, paths, LsmcOptions{});
    const Field k_ode = consumption_fraction(ode, paths.D);
    const Field k_lsmc = consumption_fraction(lsmc, paths.D);
    for (std::size_t k = 0; k < paths.time_grid.size(); ++k) {
      const double t = paths.time_grid[k];
      const auto c = static_cast<Eigen::Index>(k);
      const double L = oracle::no_trade_L(p, 1.0, t);
      const double kap = k + 1 < paths.time_grid.size() ? 1.0 / (2.0 - t) : 1.0;
      ode_err = std::max(ode_err, oracle::rel_err(ode.L(0, c), L));
      kappa_err = std::max(kappa_err, oracle::rel_err(k_ode(0, c), kap));
      for (Eigen::Index i = 0; i < lsmc.L.rows(); ++i) {
        lsmc_err = std::max(lsmc_err, oracle::rel_err(lsmc.L(i, c), L));
        lsmc_err = std::max(lsmc_err, oracle::rel_err(k_lsmc(i, c), kap));
      }
    }
  }
  o.require(ode_err <= kOdeRel, "ODE L error " + num(ode_err));
  o.require(kappa_err <= kOdeRel, "kappa error " + num(kappa_err));
  o.require(lsmc_err <= kLsmcRel, "LSMC error " + num(lsmc_err));
  if (o.pass) o.detail = "max rel err ODE " + num(ode_err) + ", kappa " + num(kappa_err) + ", LSMC " + num(lsmc_err);
  return o;
}

Outcome merton_consistency() {
  Outcome o;
  const MarketModel m = testing::merton();
  const PathBundle paths = simulate(m, 100000, 50, 2);
  const double theta2 = 0.3 * 0.3;
  for (double p : {-1.0, 0.5}) {
    const auto params = RiskAversionParams::from_p(p);
    const auto sol = solve_ode(m, params, paths.time_grid);
    const double L0 = sol.L(0, 0);
    o.require(oracle::rel_err(L0, std::exp(-0.5 * oracle::conjugate(p) * theta2)) <= kOdeRel,
              "L0 at p = " + num(p));
    const oracle::MertonValue ref = oracle::merton_value(p, 0.06, 0.2, 1.0, 1.0);
    o.require(oracle::rel_err(L0 / p, ref.value) <= kOdeRel, "value vs Merton formula at p = " + num(p));
    const auto pi = optimal_fraction(sol, m, &paths);
    const double exact = oracle::tolerance_of(p) * 1.5;
    o.require(std::abs(pi[0].matrix().maxCoeff() - exact) <= kExact * exact &&
                  std::abs(pi[0].matrix().minCoeff() - exact) <= kExact * exact,
              "pi != beta lambda at p = " + num(p));

    auto terminal_utility = [&](double scale) {
      std::vector<Field> f{Field((pi[0].matrix() * scale).eval())};
      const Field X = wealth(m, paths, f, Field(), 1.0);
      return Eigen::ArrayXd(X.matrix().col(X.cols() - 1).array().pow(p) / p);
    };
    const Eigen::ArrayXd u = terminal_utility(1.0);
    const Sample s = sample(u);
    o.require(std::abs(s.mean - L0 / p) <= kValueSe * s.se, "MC value off at p = " + num(p));
    for (double scale : {0.75, 1.25}) {
      const Sample d = sample(u - terminal_utility(scale));
      o.require(d.mean > kPerturbSe * d.se, "perturbation " + num(scale) + " not worse at p = " + num(p));
    }
  }
  return o;
}

void add_diagnostics(Outcome& o, const CheckResult& r) {
  if (r.pass) return;
  for (const auto& d : r.diagnostics) o.require(false, d);
}

Outcome neg_infinity_suite() {
  Outcome o;
  const SweepReport rep =
      sweep(testing::one_factor("intermediate"), {-2.0, -4.0, -8.0, -16.0}, LimitKind::neg_infinity, sim_config(1));
  add_diagnostics(o, check_neg_infinity(rep));
  const SweepRecord& last = rep.records[rep.order.back()];
  if (o.pass) {
    o.detail = "at p = -16: kappa " + num(last.err_kappa.value) + ", pi " + num(last.err_pi.value) + ", L* " +
               num(last.err_Lstar.value) + ", wealth " + num(last.err_wealth.value);
  }
  return o;
}

Outcome exponential_suite() {
  Outcome o;
  const std::vector<double> grid{-2.0, -4.0, -8.0, -16.0};
  const SweepReport rep = sweep(testing::one_factor("terminal_only"), grid, LimitKind::exponential, sim_config(1));
  add_diagnostics(o, check_exponential(rep, *rep.exponential));

  SimConfig small = sim_config(1);
  small.n_paths = 1000;
  const SweepReport merton = sweep(testing::merton(), grid, LimitKind::exponential, small);
  add_diagnostics(o, check_exponential(merton, *merton.exponential));
  for (const SweepRecord& r : merton.records) {
    o.require(r.err_pi.value <= kExact, "merton (1-p)pi - theta = " + num(r.err_pi.value));
  }
  if (o.pass) o.detail = "one_factor error at p = -16: " + num(rep.records[rep.order.back()].err_pi.value);
  return o;
}

Outcome zero_suite() {
  Outcome o;
  SimConfig small = sim_config(1);
  small.n_paths = 200;
  for (auto [kind, grid] : {std::pair{LimitKind::zero_minus, std::vector<double>{-0.4, -0.2, -0.1, -0.05}},
                            std::pair{LimitKind::zero_plus, std::vector<double>{0.4, 0.2, 0.1, 0.05}}}) {
    const SweepReport nt = sweep(testing::no_trade(), grid, kind, small);
    for (const SweepRecord& r : nt.records) {
      o.require(r.err_kappa.value <= kOdeRel, "no_trade kappa vs D/eta = " + num(r.err_kappa.value));
    }
    const SweepReport of = sweep(testing::one_factor("intermediate", 0.5), grid, kind, sim_config(1));
    add_diagnostics(o, check_zero(of, *of.eta));
    for (const SweepRecord& r : of.records) o.require(r.err_excess.defined(), "excess demand missing");
    if (o.pass) {
      o.detail += (o.detail.empty() ? "" : ", ") + to_string(kind) + " excess " +
                  num(of.records[of.order.front()].err_excess.value) + " -> " +
                  num(of.records[of.order.back()].err_excess.value);
    }
  }
  return o;
}

std::vector<CheckRow> inequality_rows(const MarketModel& m, const PathBundle& paths, bool lsmc,
                                      const PropertyOptions& opt) {
  std::map<double, OpportunitySolution> s;
  for (double p : {-4.0, -2.0, -1.0, 0.25, 0.5}) {
    const auto params = RiskAversionParams::from_p(p);
    s.emplace(p, lsmc ? solve_lsmc(m, params, paths, opt.solver) : solve_ode(m, params, paths.time_grid));
  }
  const PathBundle* pp = lsmc ? &paths : nullptr;
  std::vector<CheckRow> rows;
  auto add = [&](std::vector<CheckRow> r) { rows.insert(rows.end(), r.begin(), r.end()); };
  add(check_comparison_dual(s.at(0.25), s.at(0.5), m, pp, opt));
  add(check_comparison_dual(s.at(-4.0), s.at(-1.0), m, pp, opt));
  add(check_comparison_dual(s.at(-1.0), s.at(0.5), m, pp, opt));
  add(check_pure_investment_monotone({&s.at(-4.0), &s.at(-2.0), &s.at(-1.0)}, m, pp, opt));
  for (const auto& [p, sol] : s) add(check_opportunity_bounds(sol, m, pp, opt));
  return rows;
}

Outcome inequality_suite() {
  Outcome o;
  std::size_t total = 0;
  auto tally = [&](const std::string& label, const std::vector<CheckRow>& rows) {
    total += rows.size();
    std::size_t bad = 0;
    for (const CheckRow& r : rows) bad += r.pass ? 0 : 1;
    o.require(bad == 0, label + ": " + std::to_string(bad) + " of " + std::to_string(rows.size()) + " rows fail");
  };

  PropertyOptions exact;
  exact.slack_se = 0.0;
  for (const auto& [label, m] : {std::pair{"no_trade", testing::no_trade()},
                                 std::pair{"merton terminal", testing::merton()},
                                 std::pair{"merton intermediate", testing::merton("intermediate")}}) {
    const PathBundle paths = simulate(m, 10, 50, 1);
    tally(label, inequality_rows(m, paths, false, exact));
  }

  PropertyOptions stat;
  stat.slack_se = 3.0;
  const MarketModel fi = testing::one_factor("intermediate", 0.5);
  tally("one_factor intermediate", inequality_rows(fi, simulate(fi, 50000, 50, 1), true, stat));
  const MarketModel ft = testing::one_factor("terminal_only", 0.5);
  tally("one_factor terminal", inequality_rows(ft, simulate(ft, 20000, 25, 1), true, stat));

  const double sigma = 0.5;
  const std::size_t n = 100000;
  const MarketModel lognormal = testing::market_from(
      "model.family = merton\nmodel.horizon = 1\nmodel.drift = 0.25\nmodel.vol = 0.5\n"
      "model.consumption = terminal_only\n");
  const PathBundle paths = simulate(lognormal, n, 1, 3);
  const auto sol = solve_ode(lognormal, RiskAversionParams::from_p(-1.0), paths.time_grid);
  const DualDensity dd = dual_density(sol, lognormal, paths);
  const std::vector<double> q{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const PhiCurve c = phi_curve(dd.Y_norm, 0, 1, q);
  double worst = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double z = std::abs(c.phi[j] - oracle::lognormal_phi(q[j], sigma, 1.0)) / c.se[j];
    worst = std::max(worst, z);
    if (j > 0) o.require(c.phi[j] < c.phi[j - 1], "phi not strictly decreasing at q = " + num(q[j]));
  }
  o.require(worst <= kPhiSe, "phi max error " + num(worst) + " SE");
  tally("phi", check_phi_monotone(c, -1.0));
  if (o.pass) o.detail = std::to_string(total) + " rows, phi max error " + num(worst) + " SE";
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Outcome cli_determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "rra_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "run.cfg";
  std::ofstream(cfg) << "model.family = one_factor\nmodel.horizon = 1\nmodel.vol = 0.2\nmodel.lambda_bar = 1.5\n"
                        "model.gamma = 1\nmodel.factor_speed = 1\nmodel.factor_vol = 0.5\nmodel.rho = -0.5\n"
                        "model.delta = 0.5\nmodel.k1 = 0.7\nmodel.k2 = 1.4\nmodel.consumption = intermediate\n"
                        "sim.n_paths = 4000\nsim.n_steps = 20\nsim.seed = 11\n"
                        "sweep.limit_kind = zero_minus\n";
  std::ostringstream sink;
  auto* old_out = std::cout.rdbuf(sink.rdbuf());
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  const std::vector<std::string> runs[] = {{"simulate"}, {"solve", "--p", "-2"}, {"solve", "--p", "0.5"},
                                           {"sweep"},    {"check"},            {"report"}};
  for (auto [threads, dir] : {std::pair{"1", "t1"}, std::pair{"4", "t4"}, std::pair{"1", "t1b"}}) {
    for (const auto& cmd : runs) {
      std::vector<std::string> args = cmd;
      args.insert(args.end(), {"--config", cfg.string(), "--out", (root / dir).string(), "--threads", threads});
      const int code = run(args);
      if (code != exit_ok && code != exit_property) {
        o.require(false, cmd[0] + " exited with " + std::to_string(code));
      }
    }
  }
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(root / "t1")) {
    const fs::path name = entry.path().filename();
    for (const char* other : {"t4", "t1b"}) {
      o.require(fs::exists(root / other / name) && slurp(entry.path()) == slurp(root / other / name),
                name.string() + " differs in " + other);
    }
    ++files;
  }
  o.require(files == 8, "expected 8 output files, found " + std::to_string(files));
  if (o.pass) o.detail = std::to_string(files) + " files byte-identical across 1/4/1 threads";
  fs::remove_all(root);
  return o;
}

Outcome kunita_watanabe() {
  Outcome o;
  std::size_t steps = 0;
  std::size_t within = 0;
  for (const char* mode : {"intermediate", "terminal_only"}) {
    const MarketModel m = testing::one_factor(mode, 0.5);
    const PathBundle paths = simulate(m, 50000, 50, 5);
    const double bound = kCorrSe / std::sqrt(static_cast<double>(paths.n_paths));
    for (double p : {-2.0, 0.5}) {
      const auto sol = solve_lsmc(m, RiskAversionParams::from_p(p), paths, LsmcOptions{});
      std::size_t ok = 0;
      for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(paths.n_steps); ++k) {
        const Eigen::ArrayXd a = sol.dN.matrix().col(k).array() - sol.dN.matrix().col(k).mean();
        const Eigen::ArrayXd b = paths.dW[0].matrix().col(k).array() - paths.dW[0].matrix().col(k).mean();
        const double corr = (a * b).sum() / std::sqrt(a.square().sum() * b.square().sum());
        if (std::abs(corr) <= bound) ++ok;
      }
      steps += paths.n_steps;
      within += ok;
      o.require(static_cast<double>(ok) >= kCorrShare * static_cast<double>(paths.n_steps),
                std::string(mode) + " p = " + num(p) + ": " + std::to_string(ok) + " of " +
                    std::to_string(paths.n_steps) + " steps");
    }
  }
  if (o.pass) o.detail = std::to_string(within) + " of " + std::to_string(steps) + " steps within 4 SE";
  return o;
}

}  // namespace

int main() {
  criterion(1, "no-trade closed form", kLimit1, no_trade_closed_form);
  criterion(2, "Merton consistency", kLimit2, merton_consistency);
  criterion(3, "p -> -infinity suite", kLimitSweep, neg_infinity_suite);
  criterion(4, "exponential limit suite", kLimitSweep, exponential_suite);
  criterion(5, "p -> 0 suite", kLimitSweep, zero_suite);
  criterion(6, "inequality suite", 0.0, inequality_suite);
  criterion(7, "CLI determinism", 0.0, cli_determinism);
  criterion(8, "Kunita-Watanabe residual orthogonality", 0.0, kunita_watanabe);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
