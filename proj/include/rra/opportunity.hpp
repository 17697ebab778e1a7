#pragma once

#include "rra/field.hpp"
#include "rra/market.hpp"

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

namespace rra {

enum class SolverTag { ode_exact, lsmc };

std::string to_string(SolverTag tag);

struct LsmcOptions {
  int basis_degree = 3;
  int picard_iters = 3;
  double floor_eps = 1e-6;
};

// Gridded estimate of the opportunity process L(p) with its Kunita-Watanabe
// parts: Z^L (integrand against M) and the orthogonal increments dN^L.
// L and L_se have one column per grid time; Z and dN one per step. ODE
// solutions carry a single broadcasting row with Z = dN = 0.
struct OpportunitySolution {
  RiskAversionParams params = RiskAversionParams::from_p(-1.0);
  ConsumptionMode consumption = ConsumptionMode::terminal_only;
  std::vector<double> time_grid;
  Field L;
  std::vector<Field> Z;
  Field dN;
  // Standard error of the fitted conditional expectation behind each L value.
  Field L_se;
  SolverTag solver_tag = SolverTag::ode_exact;
  int basis_degree = 0;
  int picard_iters = 0;
  double floor_eps = 0.0;
  std::size_t floor_count = 0;
  // False when flooring touched more than 0.1% of the (path, step) pairs.
  bool reliable = true;

  std::size_t n_steps() const { return time_grid.size() - 1; }
  Eigen::Index rows() const { return L.rows(); }
};

// Exponential opportunity process for the claim B = log(D_T): the Bellman
// BSDE at q = 1 without consumption, terminal value D_T.
struct ExponentialSolution {
  std::vector<double> time_grid;
  Field ell;
  std::vector<Field> z;
  Field n_incr;
  Field ell_se;
  SolverTag solver_tag = SolverTag::ode_exact;
  // sup |exp(B)| = sup D_T <= k2, used as the upper bound of ell.
  double claim_sup = 1.0;
};

// eta_t = E[ \int_t^T D^a dmu° | F_t ] with its integrand Z^eta and
// orthogonal increments; a = 1 gives the process of the p -> 0 limit.
struct EtaProcess {
  std::vector<double> time_grid;
  double weight_exponent = 1.0;
  Field eta;
  std::vector<Field> Z_eta;
  Field dN_eta;
  Field eta_se;
  SolverTag solver_tag = SolverTag::ode_exact;
};

// Deterministic markets: integrates, backward from L_T = D_T,
//   L'(t) = (q/2) theta^2(t) L + (p-1) D^beta L^q 1{intermediate},
// with theta^2 = lambda' Sigma lambda, using an adaptive embedded RK pair
// (local tolerance 1e-10), reporting values on `grid`.
OpportunitySolution solve_ode(const MarketModel& market, const RiskAversionParams& params,
                              std::span<const double> grid);

// Backward least-squares Monte Carlo for the Bellman BSDE on `paths`.
OpportunitySolution solve_lsmc(const MarketModel& market, const RiskAversionParams& params,
                               const PathBundle& paths, const LsmcOptions& options);

// L* = L^beta pointwise.
Field dual_opportunity(const OpportunitySolution& sol);

ExponentialSolution solve_exponential(const MarketModel& market, std::span<const double> grid);
ExponentialSolution solve_exponential(const MarketModel& market, const PathBundle& paths,
                                      const LsmcOptions& options);

EtaProcess solve_eta(const MarketModel& market, std::span<const double> grid,
                     double weight_exponent = 1.0);
EtaProcess solve_eta(const MarketModel& market, const PathBundle& paths, const LsmcOptions& options,
                     double weight_exponent = 1.0);

// Rows (path_id, t, L, Z_1..Z_d, dN) ordered by (path_id, t). The terminal
// row carries Z = dN = 0 since no increment follows T.
void write_opportunity_csv(std::ostream& os, const OpportunitySolution& sol);

}  // namespace rra
