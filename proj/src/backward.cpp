#include "backward.hpp"

#include "rra/error.hpp"
#include "rra/regression.hpp"

#include <Eigen/Eigenvalues>
#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace rra::detail {

namespace {

Eigen::VectorXd state_column(const PathBundle& paths, std::size_t k) {
  if (!paths.has_factor()) return Eigen::VectorXd();
  return paths.factor.col(static_cast<Eigen::Index>(k));
}

// Gauss-Hermite rule for E[f(X)], X ~ N(0,1), by Golub-Welsch.
struct HermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

const HermiteRule& hermite_rule() {
  static const HermiteRule rule = [] {
    constexpr int m = 16;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i + 1 < m; ++i) J(i, i + 1) = J(i + 1, i) = std::sqrt(static_cast<double>(i + 1));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    return HermiteRule{es.eigenvalues(), es.eigenvectors().row(0).array().square().matrix().transpose()};
  }();
  return rule;
}

// E[D(s, Y_s)^a | Y_t = y] under the exact OU transition.
Eigen::VectorXd smoothed_weight(const MarketModel& market, const Eigen::VectorXd& y, double t, double s,
                                double exponent) {
  const FactorDynamics& f = *market.factor;
  const double h = s - t;
  const double decay = std::exp(-f.speed * h);
  const double var = f.speed > 0.0 ? f.vol * f.vol * (1.0 - decay * decay) / (2.0 * f.speed) : f.vol * f.vol * h;
  const double sd = std::sqrt(var);
  const HermiteRule& rule = hermite_rule();
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double mean = f.level + (y(i) - f.level) * decay;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < rule.nodes.size(); ++j) {
      acc += rule.weights(j) * std::pow(market.weight(s, mean + sd * rule.nodes(j)), exponent);
    }
    out(i) = acc;
  }
  return out;
}

}  // namespace

Eigen::MatrixXd weight_features(const MarketModel& market, const PathBundle& paths, double exponent,
                                std::size_t step) {
  const auto k = static_cast<Eigen::Index>(step);
  const Eigen::VectorXd dk = paths.D.col(k).array().pow(exponent).matrix();
  if (!paths.has_factor() || !market.factor || market.factor->vol == 0.0 || market.k1 == market.k2 ||
      dk.maxCoeff() == dk.minCoeff()) {
    return Eigen::MatrixXd(dk);
  }
  const Eigen::VectorXd y = paths.factor.col(k);
  const double t = paths.time_grid[step];
  const double next = paths.time_grid[step + 1];
  const double T = paths.time_grid.back();
  const bool last = step + 1 == paths.n_steps;
  Eigen::MatrixXd out(y.size(), last ? 1 : 2);
  out.col(0) = smoothed_weight(market, y, t, next, exponent);
  if (!last) out.col(1) = smoothed_weight(market, y, t, T, exponent);
  return out;
}

void validate_options(const LsmcOptions& options) {
  if (options.basis_degree < 0) throw ValidationError("basis_degree must be non-negative");
  if (options.picard_iters < 1) throw ValidationError("picard_iters must be at least 1");
  if (!(options.floor_eps > 0.0)) throw ValidationError("floor_eps must be positive");
}

void validate_grid(std::span<const double> grid, double horizon) {
  if (grid.size() < 2) throw ValidationError("time grid needs at least two points");
  if (grid.front() != 0.0) throw ValidationError("time grid must start at 0");
  if (std::abs(grid.back() - horizon) > 1e-12 * (1.0 + horizon)) {
    throw ValidationError("time grid must end at the horizon");
  }
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) throw ValidationError("time grid must be strictly increasing");
  }
}

void check_paths(const MarketModel& market, const PathBundle& paths) {
  if (paths.dim != market.dim) throw ValidationError("path bundle dimension does not match the market");
  if (paths.has_factor() != market.factor.has_value()) {
    throw ValidationError("path bundle factor does not match the market");
  }
  validate_grid(paths.time_grid, market.horizon);
}

std::vector<Field> risk_premium_w(const MarketModel& market, const PathBundle& paths) {
  const std::size_t d = market.dim;
  const auto cols = static_cast<Eigen::Index>(paths.n_steps + 1);
  const bool det = market.deterministic;
  const auto rows = det ? Eigen::Index{1} : static_cast<Eigen::Index>(paths.n_paths);
  std::vector<Field> phi(d, Field(rows, cols));
  for (Eigen::Index k = 0; k < cols; ++k) {
    const double t = paths.time_grid[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double y = det ? market.reference_state() : paths.state(static_cast<std::size_t>(i), k);
      const Eigen::VectorXd v = market.sigma(t, y).transpose() * market.lambda(t, y);
      for (std::size_t j = 0; j < d; ++j) phi[j].at(i, k) = v(static_cast<Eigen::Index>(j));
    }
  }
  return phi;
}

void to_m_integrand(const MarketModel& market, const PathBundle& paths, std::vector<Field>& zeta) {
  const std::size_t d = market.dim;
  if (d == 0 || zeta.empty()) return;
  const Eigen::Index rows = zeta[0].rows();
  const Eigen::Index cols = zeta[0].cols();
  Eigen::VectorXd w(static_cast<Eigen::Index>(d));
  if (market.constant_volatility) {
    const Eigen::MatrixXd inv_t =
        market.sigma(0.0, market.reference_state()).transpose().fullPivLu().inverse();
    for (Eigen::Index k = 0; k < cols; ++k) {
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) w(static_cast<Eigen::Index>(j)) = zeta[j](i, k);
        const Eigen::VectorXd z = inv_t * w;
        for (std::size_t j = 0; j < d; ++j) zeta[j].at(i, k) = z(static_cast<Eigen::Index>(j));
      }
    }
    return;
  }
  for (Eigen::Index k = 0; k < cols; ++k) {
    const double t = paths.time_grid[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double y = rows == 1 ? market.reference_state() : paths.state(static_cast<std::size_t>(i), k);
      for (std::size_t j = 0; j < d; ++j) w(static_cast<Eigen::Index>(j)) = zeta[j](i, k);
      const Eigen::VectorXd z = market.sigma(t, y).transpose().fullPivLu().solve(w);
      for (std::size_t j = 0; j < d; ++j) zeta[j].at(i, k) = z(static_cast<Eigen::Index>(j));
    }
  }
}

BackwardResult backward_solve(const MarketModel& market, const PathBundle& paths, const Eigen::VectorXd& terminal,
                              const DriverFn& driver, double floor, const LsmcOptions& options,
                              double weight_exponent) {
  validate_options(options);
  const double rho = market.factor ? market.factor->rho : 0.0;
  const auto n = static_cast<Eigen::Index>(paths.n_paths);
  const std::size_t N = paths.n_steps;
  const std::size_t d = paths.dim;
  if (terminal.size() != n) throw ValidationError("terminal value does not match the path count");

  BackwardResult r;
  r.value = Field(n, static_cast<Eigen::Index>(N + 1));
  r.se = Field(n, static_cast<Eigen::Index>(N + 1));
  r.zeta.assign(d, Field(n, static_cast<Eigen::Index>(N)));
  r.nu = Field(n, static_cast<Eigen::Index>(N));
  r.dN = Field(n, static_cast<Eigen::Index>(N));
  r.value.col(static_cast<Eigen::Index>(N)) = terminal;

  const bool factor_noise = paths.has_factor() && std::abs(rho) < 1.0;
  const double perp_scale = factor_noise ? 1.0 / std::sqrt(1.0 - rho * rho) : 0.0;

  std::vector<Eigen::VectorXd> zeta(d, Eigen::VectorXd::Zero(n));
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g_next;

  for (std::size_t step = N; step-- > 0;) {
    const auto k = static_cast<Eigen::Index>(step);
    const double dt = paths.dt(step);
    const Eigen::VectorXd next = r.value.col(k + 1);
    const StepRegression reg(state_column(paths, step), n, options.basis_degree, step,
                             weight_features(market, paths, weight_exponent, step));

    std::vector<Eigen::VectorXd> dw(d);
    for (std::size_t j = 0; j < d; ++j) dw[j] = paths.dW[j].col(k);
    Eigen::VectorXd dperp;
    if (factor_noise) {
      dperp = paths.dW_factor.col(k);
      if (d > 0) dperp -= rho * dw[0];
      dperp *= perp_scale;
    }

    double theta = 1.0;
    Eigen::VectorXd target = next;
    if (g_next.size() == n) {
      theta = 0.5;
      target -= 0.5 * dt * g_next;
    }
    const Eigen::VectorXd cond = reg.fit(target);
    Eigen::VectorXd y = reg.fit(next).cwiseMax(floor);

    std::size_t floored = 0;
    for (int it = 0; it < options.picard_iters; ++it) {
      const Eigen::VectorXd innov = next - y;
      for (std::size_t j = 0; j < d; ++j) zeta[j] = reg.fit(innov.cwiseProduct(dw[j])) / dt;
      if (factor_noise) nu = reg.fit(innov.cwiseProduct(dperp)) / dt;
      y = cond - theta * dt * driver(step, y, zeta, nu);
      floored = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(y(i))) {
          throw SolverError("non-finite value in backward step " + std::to_string(step) + " at path " +
                                std::to_string(i),
                            step);
        }
        if (y(i) < floor) {
          y(i) = floor;
          ++floored;
        }
      }
    }
    r.floor_count += floored;

    // Final split of the increment: joint least squares of the next value on
    // [B, B dW_1, .., B dW_d], so the residual is orthogonal to every dW_j.
    const Eigen::MatrixXd& basis = reg.design();
    const Eigen::Index m = basis.cols();
    Eigen::MatrixXd joint(n, m * static_cast<Eigen::Index>(d + 1));
    joint.leftCols(m) = basis;
    for (std::size_t j = 0; j < d; ++j) {
      joint.middleCols(m * static_cast<Eigen::Index>(j + 1), m) = basis.array().colwise() * dw[j].array();
    }
    const Eigen::VectorXd coef = joint.colPivHouseholderQr().solve(next);
    const Eigen::VectorXd resid = next - joint * coef;
    for (std::size_t j = 0; j < d; ++j) {
      zeta[j] = basis * coef.segment(m * static_cast<Eigen::Index>(j + 1), m);
      r.zeta[j].col(k) = zeta[j];
    }
    r.nu.col(k) = nu;
    r.dN.col(k) = resid;
    r.value.col(k) = y;
    r.se.col(k) = reg.fitted_se(target, cond);
    g_next = driver(step, y, zeta, nu);
  }
  return r;
}

std::vector<double> integrate_backward(std::span<const double> grid, double terminal,
                                       const std::function<double(double, double)>& f) {
  namespace ode = boost::numeric::odeint;
  using State = double;
  const double T = grid.back();
  const std::size_t m = grid.size();
  std::vector<double> s_times(m);
  for (std::size_t j = 0; j < m; ++j) s_times[j] = T - grid[m - 1 - j];
  s_times.front() = 0.0;

  std::vector<double> out(m);
  std::size_t idx = 0;
  auto rhs = [&](const State& v, State& dv, double s) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw SolverError("ODE solution left the positive half-line at t = " + std::to_string(T - s));
    }
    dv = -f(T - s, v);
  };
  auto observer = [&](const State& v, double s) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw SolverError("ODE solution left the positive half-line at t = " + std::to_string(T - s));
    }
    out[m - 1 - idx] = v;
    ++idx;
  };
  State v = terminal;
  auto stepper = ode::make_controlled(1e-10, 1e-10, ode::runge_kutta_cash_karp54<State, double, State, double, ode::vector_space_algebra>());
  const double h0 = std::min(1e-3, (s_times[1] - s_times[0]) * 0.5);
  ode::integrate_times(stepper, rhs, v, s_times.begin(), s_times.end(), h0, observer);
  if (idx != m) throw SolverError("ODE integration did not reach every grid time");
  return out;
}

}  // namespace rra::detail
