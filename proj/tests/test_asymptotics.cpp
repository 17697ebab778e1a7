#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rra/asymptotics.hpp"
#include "rra/error.hpp"
#include "test_helpers.hpp"

#include <cmath>
#include <sstream>

using namespace rra;

namespace {

SimConfig small_sim(std::size_t n_paths = 200, std::size_t n_steps = 20, std::uint64_t seed = 5) {
  SimConfig s;
  s.n_paths = n_paths;
  s.n_steps = n_steps;
  s.seed = seed;
  return s;
}

bool mentions(const CheckResult& r, const std::string& text) {
  for (const auto& d : r.diagnostics) {
    if (d.find(text) != std::string::npos) return true;
  }
  return false;
}

std::string csv(const SweepReport& rep) {
  std::ostringstream os;
  write_sweep_csv(os, rep);
  return os.str();
}

}  // namespace

TEST_CASE("limit kind names") {
  for (LimitKind k : {LimitKind::neg_infinity, LimitKind::zero_minus, LimitKind::zero_plus, LimitKind::exponential}) {
    CHECK(parse_limit_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_limit_kind("infinity"), ValidationError);
}

TEST_CASE("no-trade sweep toward minus infinity is exact") {
  const MarketModel m = testing::no_trade();
  SweepReport rep = sweep(m, {-8.0, -1.0, -4.0, -2.0}, LimitKind::neg_infinity, small_sim());
  CHECK(rep.p_grid == std::vector<double>{-8.0, -4.0, -2.0, -1.0});
  REQUIRE(rep.records.size() == 4);
  for (const SweepRecord& r : rep.records) {
    CHECK(r.solved);
    CHECK(r.err_kappa.value < 1e-8);
    CHECK(r.err_Lstar.value < 1e-8);
    CHECK(r.err_pi.value == 0.0);
    CHECK(r.err_wealth.value < 1e-3);
    CHECK(r.L0 == doctest::Approx(std::pow(2.0, 1.0 - r.p)).epsilon(1e-8));
  }
  CHECK(rep.records[rep.order.back()].p == -8.0);
  const CheckResult res = check_report(rep);
  CHECK(res.pass);
  CHECK(rep.records[0].pass_flags.find("fail") == std::string::npos);
}

TEST_CASE("merton fraction error is beta times the market price of risk") {
  const MarketModel m = testing::merton();
  SweepReport rep = sweep(m, {-2.0, -4.0, -8.0, -16.0}, LimitKind::neg_infinity, small_sim());
  for (const SweepRecord& r : rep.records) {
    const double beta = 1.0 / (1.0 - r.p);
    CHECK(r.err_pi.value == doctest::Approx(beta * 1.5 * 0.2).epsilon(1e-12));
    CHECK_FALSE(r.err_kappa.defined());
  }
  CHECK(rep.records[0].err_pi.value * 17.0 == doctest::Approx(rep.records[3].err_pi.value * 3.0).epsilon(1e-12));
  CHECK(check_report(rep).pass);
}

TEST_CASE("sweep validation") {
  const MarketModel m = testing::no_trade();
  CHECK_THROWS_AS(sweep(m, {}, LimitKind::neg_infinity, small_sim()), ValidationError);
  CHECK_THROWS_AS(sweep(m, {0.5}, LimitKind::neg_infinity, small_sim()), ValidationError);
  CHECK_THROWS_AS(sweep(m, {-0.5}, LimitKind::zero_plus, small_sim()), ValidationError);
  CHECK_THROWS_AS(sweep(m, {-1.0, -1.0}, LimitKind::neg_infinity, small_sim()), ValidationError);
  CHECK_THROWS_AS(sweep(m, {-1.0}, LimitKind::exponential, small_sim()), ValidationError);
  SimConfig bad = small_sim();
  bad.method = "fdm";
  CHECK_THROWS_AS(sweep(m, {-1.0}, LimitKind::neg_infinity, bad), ValidationError);
  bad.method = "ode";
  CHECK_THROWS_AS(sweep(testing::one_factor("terminal_only"), {-1.0}, LimitKind::neg_infinity, bad),
                  ValidationError);
  const SweepReport two = sweep(m, {-1.0, -2.0}, LimitKind::neg_infinity, small_sim());
  CHECK_THROWS_AS(check_neg_infinity(two), ValidationError);
  CHECK_THROWS_AS(check_zero(two, EtaProcess{}), ValidationError);
}

TEST_CASE("monotone predicate") {
  const CheckResult up = check_monotone({{0.1, 0.0}, {0.2, 0.0}, {0.4, 0.0}}, "kappa");
  CHECK_FALSE(up.pass);
  CHECK(mentions(up, "non-decreasing error"));
  CHECK(check_monotone({{0.4, 0.0}, {0.43, 0.0}, {0.1, 0.0}}, "kappa").pass);
  const CheckResult stuck = check_monotone({{0.4, 0.0}, {0.1, 0.0}, {0.105, 0.001}}, "pi");
  CHECK_FALSE(stuck.pass);
  CHECK(mentions(stuck, "noise floor"));
  CHECK(check_monotone({{0.4, 0.0}, {0.1, 0.0}, {0.105, 0.002}}, "pi").pass);
  CHECK(check_monotone({{0.4, 0.0}}, "pi").pass);
  CHECK(check_monotone({{std::nan(""), std::nan("")}, {0.1, 0.0}}, "pi").pass);
}

TEST_CASE("zero limit on no-trade") {
  const MarketModel m = testing::no_trade();
  for (auto [kind, grid] : {std::pair{LimitKind::zero_minus, std::vector<double>{-0.4, -0.2, -0.1, -0.05}},
                            std::pair{LimitKind::zero_plus, std::vector<double>{0.05, 0.1, 0.2, 0.4}}}) {
    SweepReport rep = sweep(m, grid, kind, small_sim());
    REQUIRE(rep.eta.has_value());
    for (const SweepRecord& r : rep.records) {
      CHECK(r.err_kappa.value < 1e-8);
      CHECK(r.err_pi.value == 0.0);
      CHECK_FALSE(r.err_excess.defined());
    }
    const CheckResult res = check_report(rep);
    CHECK(res.pass);
    const double closest = rep.records[rep.order.back()].p;
    CHECK(std::abs(closest) == 0.05);
  }
  const SweepReport one = sweep(m, {-0.1}, LimitKind::zero_minus, small_sim());
  CHECK_THROWS_AS(check_zero(one, *one.eta), ValidationError);
  const SweepReport neg = sweep(m, {-1.0, -2.0, -4.0}, LimitKind::neg_infinity, small_sim());
  CHECK_THROWS_AS(check_zero(neg, *one.eta), ValidationError);
}

TEST_CASE("exponential limit on merton is exact") {
  const MarketModel m = testing::merton();
  SweepReport rep = sweep(m, {-2.0, -4.0, -8.0, -16.0}, LimitKind::exponential, small_sim());
  for (const SweepRecord& r : rep.records) CHECK(r.err_pi.value < 1e-12);
  CHECK(check_report(rep).pass);

  SweepReport bad = rep;
  for (SweepRecord& r : bad.records) {
    if (r.p == -8.0) r.solution.L.matrix() *= 1.2;
  }
  const CheckResult res = check_exponential(bad, *bad.exponential);
  CHECK_FALSE(res.pass);
  CHECK(mentions(res, "pure-investment monotonicity"));

  CHECK_THROWS_AS(check_neg_infinity(rep), ValidationError);
  CHECK_THROWS_AS(sweep(testing::merton("intermediate"), {-2.0, -4.0}, LimitKind::exponential, small_sim()),
                  ValidationError);
}

TEST_CASE("one-factor sweep shares paths and is reproducible") {
  const MarketModel m = testing::one_factor("intermediate", 0.5);
  const SimConfig sim = small_sim(2000, 10, 11);
  const SweepReport a = sweep(m, {-0.2, -0.1}, LimitKind::zero_minus, sim);
  const SweepReport b = sweep(m, {-0.1, -0.2}, LimitKind::zero_minus, sim);
  CHECK(csv(a) == csv(b));
  for (const SweepRecord& r : a.records) {
    CHECK(r.solved);
    CHECK(r.err_excess.defined());
    for (const Metric* e : {&r.err_kappa, &r.err_pi, &r.err_Lstar, &r.err_excess}) {
      CHECK(e->value >= 0.0);
      CHECK(e->se >= 0.0);
    }
  }
  const SweepReport single = sweep(m, {-0.1}, LimitKind::zero_minus, sim);
  CHECK(single.records[0].L0 == a.records[1].L0);
  CHECK(single.records[0].err_pi.value == a.records[1].err_pi.value);
}

TEST_CASE("sweep csv layout") {
  SweepReport rep = sweep(testing::no_trade(), {-4.0, -2.0, -1.0}, LimitKind::neg_infinity, small_sim(100, 4));
  const std::string before = csv(rep);
  CHECK(before.rfind("limit_kind,p,L0,u_p,err_kappa,err_pi,err_Lstar,pass_flags\n", 0) == 0);
  CHECK(before.find("neg_infinity,-2,") < before.find("neg_infinity,-1,"));
  CHECK(before.find("unchecked") != std::string::npos);
  rep.records[1].solved = false;
  rep.records[1].error = "p = -2: singular";
  CHECK_FALSE(check_report(rep).pass);
  CHECK(csv(rep).find("neg_infinity,-2,,,") != std::string::npos);
  CHECK(rep.records[1].pass_flags == "solver_failed");
  CHECK(market_fingerprint(testing::no_trade()) != market_fingerprint(testing::merton()));
}
