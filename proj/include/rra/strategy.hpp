#pragma once

#include "rra/field.hpp"
#include "rra/market.hpp"
#include "rra/opportunity.hpp"

#include <ostream>
#include <vector>

namespace rra {

// Fractions, wealth and dual density on the grid. kappa, X and Y_norm have
// one column per grid time; pi has one column per step (held over the step).
struct StrategyProfile {
  std::vector<double> time_grid;
  double x0 = 1.0;
  double y0 = 0.0;
  Field kappa;
  std::vector<Field> pi;
  Field X;
  Field Y_norm;
};

struct DualDensity {
  Field Y_norm;
  double y0 = 0.0;
};

// kappa = (D/L)^beta with kappa_T = 1. `D` may broadcast.
Field consumption_fraction(const OpportunitySolution& sol, const Field& D);

// pi = beta (lambda + Z/L), one field per asset, n x N (1 x N when both the
// solution and the market are deterministic). `paths` supplies factor states.
std::vector<Field> optimal_fraction(const OpportunitySolution& sol, const MarketModel& market,
                                    const PathBundle* paths = nullptr);

// Monetary amounts theta = lambda + z/ell of the exponential problem.
std::vector<Field> exponential_strategy(const ExponentialSolution& sol, const MarketModel& market,
                                        const PathBundle* paths = nullptr);

// X = x0 E(pi.R - kappa.mu) by log-Euler steps; `kappa` may be empty
// (no consumption). Throws SolverError naming (path, step) on overflow.
Field wealth(const MarketModel& market, const PathBundle& paths, const std::vector<Field>& pi,
             const Field& kappa, double x0);

// Y/y0 = E(-lambda.M + N^L/L) with y0 = L_0 x0^(p-1).
DualDensity dual_density(const OpportunitySolution& sol, const MarketModel& market, const PathBundle& paths);

StrategyProfile build_profile(const OpportunitySolution& sol, const MarketModel& market, const PathBundle& paths);

// Rows (path_id, t, kappa, pi_1..pi_d, X, Y_norm) ordered by (path_id, t);
// the terminal row repeats the last step's pi.
void write_strategy_csv(std::ostream& os, const StrategyProfile& profile);

}  // namespace rra
