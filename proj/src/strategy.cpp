#include "rra/strategy.hpp"

#include "backward.hpp"
#include "rra/csv.hpp"
#include "rra/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rra {

namespace {

double state_of(const MarketModel& market, const PathBundle* paths, Eigen::Index i, Eigen::Index k) {
  if (paths == nullptr || !paths->has_factor()) return market.reference_state();
  return paths->factor(i, k);
}

// lambda + Z/scale per asset, one column per step.
std::vector<Field> premium_plus_hedge(const std::vector<double>& grid, const Field& scale,
                                      const std::vector<Field>& Z, const MarketModel& market,
                                      const PathBundle* paths, double factor) {
  const std::size_t d = market.dim;
  const auto N = static_cast<Eigen::Index>(grid.size() - 1);
  bool single = scale.broadcasts() && market.deterministic;
  for (const Field& z : Z) single = single && z.broadcasts();
  Eigen::Index rows = 1;
  if (!single) {
    if (!scale.broadcasts()) {
      rows = scale.rows();
    } else if (paths != nullptr) {
      rows = static_cast<Eigen::Index>(paths->n_paths);
    } else {
      throw ValidationError("stochastic market requires the path bundle");
    }
  }
  if (paths != nullptr && rows > 1 && static_cast<std::size_t>(rows) != paths->n_paths) {
    throw ValidationError("solution and path bundle disagree on the path count");
  }
  std::vector<Field> out(d, Field(rows, N));
  for (Eigen::Index k = 0; k < N; ++k) {
    const double t = grid[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Eigen::VectorXd lam = market.lambda(t, state_of(market, paths, i, k));
      const double s = scale(i, k);
      for (std::size_t j = 0; j < d; ++j) {
        out[j].at(i, k) = factor * (lam(static_cast<Eigen::Index>(j)) + Z[j](i, k) / s);
      }
    }
  }
  return out;
}

}  // namespace

Field consumption_fraction(const OpportunitySolution& sol, const Field& D) {
  if (sol.consumption != ConsumptionMode::intermediate) {
    throw ValidationError("consumption_fraction: terminal-only consumption has no propensity to consume");
  }
  const Eigen::Index cols = sol.L.cols();
  if (D.cols() != cols) throw ValidationError("consumption_fraction: D does not match the grid");
  const Eigen::Index rows = std::max(sol.L.rows(), D.rows());
  if (sol.L.rows() != rows && !sol.L.broadcasts()) throw ValidationError("consumption_fraction: row mismatch");
  if (D.rows() != rows && !D.broadcasts()) throw ValidationError("consumption_fraction: row mismatch");
  const double beta = sol.params.beta();
  Field kappa(rows, cols);
  for (Eigen::Index k = 0; k + 1 < cols; ++k) {
    for (Eigen::Index i = 0; i < rows; ++i) kappa.at(i, k) = std::pow(D(i, k) / sol.L(i, k), beta);
  }
  kappa.col(cols - 1).setOnes();
  return kappa;
}

std::vector<Field> optimal_fraction(const OpportunitySolution& sol, const MarketModel& market,
                                    const PathBundle* paths) {
  if (sol.Z.size() != market.dim) throw ValidationError("optimal_fraction: dimension mismatch");
  return premium_plus_hedge(sol.time_grid, sol.L, sol.Z, market, paths, sol.params.beta());
}

std::vector<Field> exponential_strategy(const ExponentialSolution& sol, const MarketModel& market,
                                        const PathBundle* paths) {
  if (market.intermediate()) throw ValidationError("exponential_strategy: requires terminal-only consumption");
  if (sol.z.size() != market.dim) throw ValidationError("exponential_strategy: dimension mismatch");
  return premium_plus_hedge(sol.time_grid, sol.ell, sol.z, market, paths, 1.0);
}

Field wealth(const MarketModel& market, const PathBundle& paths, const std::vector<Field>& pi,
             const Field& kappa, double x0) {
  if (!(x0 > 0.0)) throw ValidationError("wealth: x0 must be positive");
  if (pi.size() != paths.dim) throw ValidationError("wealth: strategy dimension does not match the paths");
  const auto n = static_cast<Eigen::Index>(paths.n_paths);
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  for (const Field& f : pi) {
    if (f.cols() < N || (!f.broadcasts() && f.rows() != n)) throw ValidationError("wealth: pi shape mismatch");
  }
  const bool consume = !kappa.empty();
  if (consume && (kappa.cols() != N + 1 || (!kappa.broadcasts() && kappa.rows() != n))) {
    throw ValidationError("wealth: kappa shape mismatch");
  }
  const std::size_t d = paths.dim;
  const Eigen::MatrixXd sigma0 = d > 0 ? market.sigma(0.0, market.reference_state()) : Eigen::MatrixXd();

  Field X(n, N + 1);
  const double log_x0 = std::log(x0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    double lx = log_x0;
    X.at(i, 0) = x0;
    for (Eigen::Index k = 0; k < N; ++k) {
      const double dt = paths.dt(static_cast<std::size_t>(k));
      double incr = 0.0;
      if (d > 0) {
        for (std::size_t j = 0; j < d; ++j) {
          v(static_cast<Eigen::Index>(j)) = pi[j](i, k);
          incr += pi[j](i, k) * paths.dR[j](i, k);
        }
        const Eigen::MatrixXd sigma = market.constant_volatility
                                          ? sigma0
                                          : market.sigma(paths.time_grid[static_cast<std::size_t>(k)],
                                                         paths.state(static_cast<std::size_t>(i), k));
        incr -= 0.5 * (sigma.transpose() * v).squaredNorm() * dt;
      }
      if (consume) incr -= 0.5 * (kappa(i, k) + kappa(i, k + 1)) * dt;
      lx += incr;
      const double x = std::exp(lx);
      if (!std::isfinite(lx) || !std::isfinite(x) || !(x > 0.0)) {
        throw SolverError("wealth overflow at path " + std::to_string(i) + ", step " + std::to_string(k),
                          static_cast<std::size_t>(k));
      }
      X.at(i, k + 1) = x;
    }
  }
  return X;
}

DualDensity dual_density(const OpportunitySolution& sol, const MarketModel& market, const PathBundle& paths) {
  detail::check_paths(market, paths);
  const auto n = static_cast<Eigen::Index>(paths.n_paths);
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  if (sol.L.cols() != N + 1) throw ValidationError("dual_density: solution and paths disagree on the grid");
  if (!sol.L.broadcasts() && sol.L.rows() != n) throw ValidationError("dual_density: path count mismatch");
  const std::vector<Field> phi = detail::risk_premium_w(market, paths);
  DualDensity out;
  out.y0 = sol.L(0, 0) * std::pow(market.x0, sol.params.p() - 1.0);
  out.Y_norm = Field(n, N + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    double ly = 0.0;
    out.Y_norm.at(i, 0) = 1.0;
    for (Eigen::Index k = 0; k < N; ++k) {
      const double dt = paths.dt(static_cast<std::size_t>(k));
      double incr = 0.0;
      for (std::size_t j = 0; j < phi.size(); ++j) {
        const double f = phi[j](i, k);
        incr -= f * paths.dW[j](i, k) + 0.5 * f * f * dt;
      }
      const double jump = sol.dN(i, k) / sol.L(i, k);
      incr += jump - 0.5 * jump * jump;
      ly += incr;
      const double y = std::exp(ly);
      if (!std::isfinite(ly) || !std::isfinite(y) || !(y > 0.0)) {
        throw SolverError("dual density overflow at path " + std::to_string(i) + ", step " + std::to_string(k),
                          static_cast<std::size_t>(k));
      }
      out.Y_norm.at(i, k + 1) = y;
    }
  }
  return out;
}

StrategyProfile build_profile(const OpportunitySolution& sol, const MarketModel& market, const PathBundle& paths) {
  StrategyProfile prof;
  prof.time_grid = paths.time_grid;
  prof.x0 = market.x0;
  const auto n = static_cast<Eigen::Index>(paths.n_paths);
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  if (market.intermediate()) {
    prof.kappa = consumption_fraction(sol, paths.D);
  } else {
    prof.kappa = Field(n, N + 1);
    prof.kappa.col(N).setOnes();
  }
  prof.pi = optimal_fraction(sol, market, &paths);
  prof.X = wealth(market, paths, prof.pi, market.intermediate() ? prof.kappa : Field(), market.x0);
  DualDensity dd = dual_density(sol, market, paths);
  prof.Y_norm = std::move(dd.Y_norm);
  prof.y0 = dd.y0;
  return prof;
}

void write_strategy_csv(std::ostream& os, const StrategyProfile& profile) {
  CsvWriter w(os);
  std::vector<std::string> names{"path_id", "t", "kappa"};
  for (std::size_t j = 0; j < profile.pi.size(); ++j) names.push_back("pi_" + std::to_string(j + 1));
  names.push_back("X");
  names.push_back("Y_norm");
  w.header(names);
  const Eigen::Index rows = profile.X.rows();
  const auto N = static_cast<Eigen::Index>(profile.time_grid.size() - 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k <= N; ++k) {
      w.field(static_cast<std::uint64_t>(i)).field(profile.time_grid[static_cast<std::size_t>(k)]);
      w.field(profile.kappa(i, k));
      for (const Field& f : profile.pi) w.field(f(i, std::min(k, N - 1)));
      w.field(profile.X(i, k)).field(profile.Y_norm(i, k));
      w.end_row();
    }
  }
}

}  // namespace rra
