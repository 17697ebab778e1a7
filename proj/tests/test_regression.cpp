#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rra/error.hpp"
#include "rra/regression.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace rra;

namespace {

Eigen::VectorXd linspace(Eigen::Index n, double a, double b) { return Eigen::VectorXd::LinSpaced(n, a, b); }

}  // namespace

TEST_CASE("polynomial targets are reproduced") {
  const Eigen::VectorXd x = linspace(500, -1.0, 2.0);
  const StepRegression reg(x, 500, 3, 0);
  CHECK(reg.basis_size() == 4);
  const Eigen::VectorXd y = (1.0 - 2.0 * x.array() + 0.5 * x.array().cube()).matrix();
  const Eigen::VectorXd err = (reg.fit(y) - y).cwiseAbs();
  const auto [lo, hi] = central_range(x);
  for (Eigen::Index i = 0; i < 500; ++i) {
    if (x(i) >= lo && x(i) <= hi) CHECK(err(i) < 1e-10);
  }
  const StepRegression small(x.head(150), 150, 3, 0);
  CHECK((small.fit(y.head(150)) - y.head(150)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("degenerate states fall back to the constant basis") {
  const Eigen::VectorXd target = linspace(10, 0.0, 9.0);
  const StepRegression flat(Eigen::VectorXd::Constant(10, 3.0), 10, 3, 0);
  CHECK(flat.basis_size() == 1);
  CHECK((flat.fit(target).array() - 4.5).abs().maxCoeff() < 1e-12);
  const StepRegression none(Eigen::VectorXd(), 10, 3, 0);
  CHECK(none.basis_size() == 1);
  const StepRegression zero(linspace(10, 0.0, 1.0), 10, 0, 0);
  CHECK(zero.basis_size() == 1);
}

TEST_CASE("constant basis standard error is s / sqrt(n)") {
  const Eigen::VectorXd target = linspace(10, 0.0, 9.0);
  const StepRegression reg(Eigen::VectorXd(), 10, 2, 0);
  const Eigen::VectorXd fit = reg.fit(target);
  const double s = std::sqrt((target.array() - 4.5).square().sum() / 9.0);
  const Eigen::VectorXd se = reg.fitted_se(target, fit);
  for (Eigen::Index i = 0; i < 10; ++i) CHECK(se(i) == doctest::Approx(s / std::sqrt(10.0)).epsilon(1e-12));
}

TEST_CASE("extra columns") {
  const Eigen::VectorXd x = linspace(150, -1.0, 1.0);
  Eigen::MatrixXd extra(150, 3);
  extra.col(0).setConstant(2.0);
  extra.col(1) = (2.0 * x.array() + 1.0).matrix();
  extra.col(2) = x.cwiseAbs();
  const StepRegression reg(x, 150, 2, 0, extra);
  CHECK(reg.basis_size() == 4);
  const Eigen::VectorXd target = x.cwiseAbs() + x;
  CHECK((reg.fit(target) - target).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("central range") {
  Eigen::VectorXd x(1000);
  for (Eigen::Index i = 0; i < 1000; ++i) x(i) = static_cast<double>((i * 37) % 1000);
  const auto [lo, hi] = central_range(x);
  CHECK(lo == 5.0);
  CHECK(hi == 994.0);
  const auto [a, b] = central_range(linspace(50, -3.0, 4.0));
  CHECK(a == -3.0);
  CHECK(b == 4.0);
}

TEST_CASE("the polynomial is flat beyond the central range") {
  Eigen::VectorXd x = linspace(1000, 0.0, 1.0);
  x(999) = 50.0;
  x(998) = 40.0;
  const StepRegression reg(x, 1000, 3, 0);
  const Eigen::VectorXd fit = reg.fit(x.cwiseMin(1.0));
  CHECK(fit(999) == doctest::Approx(fit(998)).epsilon(1e-12));
  CHECK(std::isfinite(fit(999)));
}

TEST_CASE("noisy conditional expectation") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> normal;
  const Eigen::Index n = 20000;
  Eigen::VectorXd x(n);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i) = normal(gen);
    y(i) = x(i) * x(i) + 0.5 * normal(gen);
  }
  const StepRegression reg(x, n, 3, 4);
  const Eigen::VectorXd fit = reg.fit(y);
  const Eigen::VectorXd se = reg.fitted_se(y, fit);
  const auto [lo, hi] = central_range(x);
  int inside = 0;
  int covered = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (x(i) < lo || x(i) > hi) continue;
    ++inside;
    if (std::abs(fit(i) - x(i) * x(i)) <= 4.0 * se(i)) ++covered;
  }
  CHECK(covered >= static_cast<int>(0.99 * inside));
}

TEST_CASE("rank deficiency reports the step") {
  const Eigen::VectorXd x = linspace(3, 0.0, 1.0);
  try {
    StepRegression reg(x, 3, 5, 7);
    FAIL("expected a solver error");
  } catch (const SolverError& e) {
    CHECK(e.step() == 7);
  }
  CHECK_THROWS_AS(StepRegression(x, 3, -1, 0), ValidationError);
}
