#include "rra/opportunity.hpp"

#include "backward.hpp"
#include "rra/csv.hpp"
#include "rra/error.hpp"

#include <cmath>
#include <string>

namespace rra {

namespace {

using detail::BackwardResult;

double theta_squared(const MarketModel& market, double t) {
  if (market.dim == 0) return 0.0;
  const double y = market.reference_state();
  return (market.sigma(t, y).transpose() * market.lambda(t, y)).squaredNorm();
}

void require_deterministic(const MarketModel& market, const char* op) {
  if (!market.deterministic) {
    throw ValidationError(std::string(op) + ": market coefficients depend on the factor state");
  }
}

Eigen::VectorXd terminal_weight(const PathBundle& paths, double exponent) {
  const Eigen::VectorXd dT = paths.D.col(static_cast<Eigen::Index>(paths.n_steps));
  return exponent == 1.0 ? dT : Eigen::VectorXd(dT.array().pow(exponent));
}

// |phi|^2, phi.zeta and |zeta|^2 at step k for every path.
struct Quadratics {
  Eigen::ArrayXd phi2;
  Eigen::ArrayXd phi_zeta;
  Eigen::ArrayXd zeta2;
};

Quadratics quadratics(const std::vector<Field>& phi, std::size_t k, const std::vector<Eigen::VectorXd>& zeta,
                      Eigen::Index n) {
  Quadratics out{Eigen::ArrayXd::Zero(n), Eigen::ArrayXd::Zero(n), Eigen::ArrayXd::Zero(n)};
  const auto kk = static_cast<Eigen::Index>(k);
  for (std::size_t j = 0; j < phi.size(); ++j) {
    Eigen::ArrayXd f(n);
    if (phi[j].broadcasts()) {
      f.setConstant(phi[j](0, kk));
    } else {
      f = phi[j].col(kk).array();
    }
    out.phi2 += f.square();
    out.phi_zeta += f * zeta[j].array();
    out.zeta2 += zeta[j].array().square();
  }
  return out;
}

// Primal Bellman driver (q/2) L |phi + zeta/L|^2 plus (p-1) D^beta L^q when consuming.
detail::DriverFn primal_driver(const std::vector<Field>& phi, const PathBundle& paths, double q, double p,
                               double beta, bool consume) {
  return [&phi, &paths, q, p, beta, consume](std::size_t k, const Eigen::VectorXd& y,
                                              const std::vector<Eigen::VectorXd>& zeta,
                                              const Eigen::VectorXd&) -> Eigen::VectorXd {
    const Eigen::Index n = y.size();
    const Quadratics s = quadratics(phi, k, zeta, n);
    const Eigen::ArrayXd l = y.array();
    Eigen::ArrayXd g = 0.5 * q * (l * s.phi2 + 2.0 * s.phi_zeta + s.zeta2 / l);
    if (consume) {
      g += (p - 1.0) * paths.D.col(static_cast<Eigen::Index>(k)).array().pow(beta) * l.pow(q);
    }
    return g.matrix();
  };
}

// Driver of L* = L^beta:
// (q/2)(beta L* |phi|^2 + 2 phi.zeta*) + (p/2) nu*^2 / L* - D^beta.
detail::DriverFn dual_driver(const std::vector<Field>& phi, const PathBundle& paths, double q, double p,
                             double beta) {
  return [&phi, &paths, q, p, beta](std::size_t k, const Eigen::VectorXd& y,
                                     const std::vector<Eigen::VectorXd>& zeta,
                                     const Eigen::VectorXd& nu) -> Eigen::VectorXd {
    const Eigen::Index n = y.size();
    const Quadratics s = quadratics(phi, k, zeta, n);
    const Eigen::ArrayXd l = y.array();
    Eigen::ArrayXd g = 0.5 * q * (beta * l * s.phi2 + 2.0 * s.phi_zeta) + 0.5 * p * nu.array().square() / l;
    g -= paths.D.col(static_cast<Eigen::Index>(k)).array().pow(beta);
    return g.matrix();
  };
}

std::vector<Field> zero_fields(std::size_t d, Eigen::Index cols) {
  return std::vector<Field>(d, Field(1, cols));
}

}  // namespace

std::string to_string(SolverTag tag) { return tag == SolverTag::ode_exact ? "ode_exact" : "lsmc"; }

OpportunitySolution solve_ode(const MarketModel& market, const RiskAversionParams& params,
                              std::span<const double> grid) {
  market.validate();
  require_deterministic(market, "solve_ode");
  detail::validate_grid(grid, market.horizon);
  const double p = params.p();
  const double q = params.q();
  const double beta = params.beta();
  const bool consume = market.intermediate();
  const double y0 = market.reference_state();
  const double terminal = market.weight(market.horizon, y0);

  const auto values = detail::integrate_backward(grid, terminal, [&](double t, double l) {
    double dl = 0.5 * q * theta_squared(market, t) * l;
    if (consume) dl += (p - 1.0) * std::pow(market.weight(t, y0), beta) * std::pow(l, q);
    return dl;
  });

  const auto cols = static_cast<Eigen::Index>(grid.size());
  OpportunitySolution sol;
  sol.params = params;
  sol.consumption = market.consumption;
  sol.time_grid.assign(grid.begin(), grid.end());
  sol.L = Field(1, cols);
  for (Eigen::Index k = 0; k < cols; ++k) sol.L.at(0, k) = values[static_cast<std::size_t>(k)];
  sol.L.at(0, cols - 1) = terminal;
  sol.Z = zero_fields(market.dim, cols - 1);
  sol.dN = Field(1, cols - 1);
  sol.L_se = Field(1, cols);
  sol.solver_tag = SolverTag::ode_exact;
  return sol;
}

OpportunitySolution solve_lsmc(const MarketModel& market, const RiskAversionParams& params,
                               const PathBundle& paths, const LsmcOptions& options) {
  market.validate();
  detail::check_paths(market, paths);
  detail::validate_options(options);
  const double p = params.p();
  const double q = params.q();
  const double beta = params.beta();
  const std::vector<Field> phi = detail::risk_premium_w(market, paths);
  const double floor = options.floor_eps * market.k1;

  OpportunitySolution sol;
  sol.params = params;
  sol.consumption = market.consumption;
  sol.time_grid = paths.time_grid;
  sol.solver_tag = SolverTag::lsmc;
  sol.basis_degree = options.basis_degree;
  sol.picard_iters = options.picard_iters;
  sol.floor_eps = options.floor_eps;

  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  if (!market.intermediate()) {
    BackwardResult r = detail::backward_solve(market, paths, terminal_weight(paths, 1.0),
                                              primal_driver(phi, paths, q, p, beta, false), floor, options, 1.0);
    sol.L = std::move(r.value);
    sol.Z = std::move(r.zeta);
    sol.dN = std::move(r.dN);
    sol.L_se = std::move(r.se);
    sol.floor_count = r.floor_count;
  } else {
    BackwardResult r =
        detail::backward_solve(market, paths, terminal_weight(paths, beta), dual_driver(phi, paths, q, p, beta),
                               std::pow(floor, beta), options, beta);
    // Back to primal coordinates: L = (L*)^(1/beta), zeta^L = L zeta* / (beta L*),
    // dN^L = L dN* / (beta L*).
    const Eigen::ArrayXXd lstar = r.value.matrix().array();
    const Eigen::ArrayXXd l = lstar.pow(1.0 / beta);
    const Eigen::ArrayXXd ratio = l / (beta * lstar);
    sol.L = Field(l.matrix());
    sol.L_se = Field((r.se.matrix().array() * ratio).matrix());
    const Eigen::ArrayXXd left = ratio.leftCols(N);
    for (auto& z : r.zeta) z.matrix() = (z.matrix().array() * left).matrix();
    sol.Z = std::move(r.zeta);
    sol.dN = Field((r.dN.matrix().array() * left).matrix());
    sol.floor_count = r.floor_count;
  }
  sol.L.col(N) = paths.D.col(N);
  sol.L_se.col(N).setZero();
  detail::to_m_integrand(market, paths, sol.Z);
  const double pairs = static_cast<double>(paths.n_paths) * static_cast<double>(paths.n_steps);
  sol.reliable = static_cast<double>(sol.floor_count) <= 1e-3 * pairs;
  return sol;
}

Field dual_opportunity(const OpportunitySolution& sol) {
  if (sol.L.empty()) throw ValidationError("dual_opportunity: empty solution");
  if ((sol.L.matrix().array() <= 0.0).any()) throw ValidationError("dual_opportunity: L must be positive");
  return Field(sol.L.matrix().array().pow(sol.params.beta()).matrix());
}

ExponentialSolution solve_exponential(const MarketModel& market, std::span<const double> grid) {
  market.validate();
  if (market.intermediate()) throw ValidationError("solve_exponential: requires terminal-only consumption");
  require_deterministic(market, "solve_exponential");
  detail::validate_grid(grid, market.horizon);
  const double terminal = market.weight(market.horizon, market.reference_state());
  const auto values = detail::integrate_backward(
      grid, terminal, [&](double t, double l) { return 0.5 * theta_squared(market, t) * l; });
  const auto cols = static_cast<Eigen::Index>(grid.size());
  ExponentialSolution sol;
  sol.time_grid.assign(grid.begin(), grid.end());
  sol.ell = Field(1, cols);
  for (Eigen::Index k = 0; k < cols; ++k) sol.ell.at(0, k) = values[static_cast<std::size_t>(k)];
  sol.ell.at(0, cols - 1) = terminal;
  sol.z = zero_fields(market.dim, cols - 1);
  sol.n_incr = Field(1, cols - 1);
  sol.ell_se = Field(1, cols);
  sol.solver_tag = SolverTag::ode_exact;
  sol.claim_sup = terminal;
  return sol;
}

ExponentialSolution solve_exponential(const MarketModel& market, const PathBundle& paths,
                                      const LsmcOptions& options) {
  market.validate();
  if (market.intermediate()) throw ValidationError("solve_exponential: requires terminal-only consumption");
  detail::check_paths(market, paths);
  const std::vector<Field> phi = detail::risk_premium_w(market, paths);
  BackwardResult r =
      detail::backward_solve(market, paths, terminal_weight(paths, 1.0), primal_driver(phi, paths, 1.0, 0.0, 1.0, false),
                             options.floor_eps * market.k1, options, 1.0);
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  ExponentialSolution sol;
  sol.time_grid = paths.time_grid;
  sol.ell = std::move(r.value);
  sol.ell.col(N) = paths.D.col(N);
  sol.z = std::move(r.zeta);
  detail::to_m_integrand(market, paths, sol.z);
  sol.n_incr = std::move(r.dN);
  sol.ell_se = std::move(r.se);
  sol.solver_tag = SolverTag::lsmc;
  sol.claim_sup = paths.D.col(N).maxCoeff();
  return sol;
}

EtaProcess solve_eta(const MarketModel& market, std::span<const double> grid, double weight_exponent) {
  market.validate();
  require_deterministic(market, "solve_eta");
  detail::validate_grid(grid, market.horizon);
  const double y0 = market.reference_state();
  const bool consume = market.intermediate();
  const double terminal = std::pow(market.weight(market.horizon, y0), weight_exponent);
  const auto values = detail::integrate_backward(grid, terminal, [&](double t, double) {
    return consume ? -std::pow(market.weight(t, y0), weight_exponent) : 0.0;
  });
  const auto cols = static_cast<Eigen::Index>(grid.size());
  EtaProcess eta;
  eta.time_grid.assign(grid.begin(), grid.end());
  eta.weight_exponent = weight_exponent;
  eta.eta = Field(1, cols);
  for (Eigen::Index k = 0; k < cols; ++k) eta.eta.at(0, k) = values[static_cast<std::size_t>(k)];
  eta.eta.at(0, cols - 1) = terminal;
  eta.Z_eta = zero_fields(market.dim, cols - 1);
  eta.dN_eta = Field(1, cols - 1);
  eta.eta_se = Field(1, cols);
  eta.solver_tag = SolverTag::ode_exact;
  return eta;
}

EtaProcess solve_eta(const MarketModel& market, const PathBundle& paths, const LsmcOptions& options,
                     double weight_exponent) {
  market.validate();
  detail::check_paths(market, paths);
  const bool consume = market.intermediate();
  const Eigen::ArrayXXd dpow = paths.D.matrix().array().pow(weight_exponent);
  detail::DriverFn driver = [&dpow, consume](std::size_t k, const Eigen::VectorXd& y,
                                             const std::vector<Eigen::VectorXd>&,
                                             const Eigen::VectorXd&) -> Eigen::VectorXd {
    if (!consume) return Eigen::VectorXd::Zero(y.size());
    return -dpow.col(static_cast<Eigen::Index>(k)).matrix();
  };
  BackwardResult r = detail::backward_solve(market, paths, terminal_weight(paths, weight_exponent), driver,
                                            options.floor_eps * std::pow(market.k1, weight_exponent), options,
                                            weight_exponent);
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  EtaProcess eta;
  eta.time_grid = paths.time_grid;
  eta.weight_exponent = weight_exponent;
  eta.eta = std::move(r.value);
  eta.eta.col(N) = dpow.col(N).matrix();
  eta.Z_eta = std::move(r.zeta);
  detail::to_m_integrand(market, paths, eta.Z_eta);
  eta.dN_eta = std::move(r.dN);
  eta.eta_se = std::move(r.se);
  eta.solver_tag = SolverTag::lsmc;
  return eta;
}

void write_opportunity_csv(std::ostream& os, const OpportunitySolution& sol) {
  CsvWriter w(os);
  std::vector<std::string> names{"path_id", "t", "L"};
  for (std::size_t j = 0; j < sol.Z.size(); ++j) names.push_back("Z_" + std::to_string(j + 1));
  names.push_back("dN");
  w.header(names);
  const Eigen::Index N = static_cast<Eigen::Index>(sol.n_steps());
  for (Eigen::Index i = 0; i < sol.rows(); ++i) {
    for (Eigen::Index k = 0; k <= N; ++k) {
      w.field(static_cast<std::uint64_t>(i)).field(sol.time_grid[static_cast<std::size_t>(k)]).field(sol.L(i, k));
      for (const Field& z : sol.Z) w.field(k < N ? z(i, k) : 0.0);
      w.field(k < N ? sol.dN(i, k) : 0.0);
      w.end_row();
    }
  }
}

}  // namespace rra
