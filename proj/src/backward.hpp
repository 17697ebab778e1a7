#pragma once

#include "rra/field.hpp"
#include "rra/market.hpp"
#include "rra/opportunity.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace rra::detail {

// Driver g of dV = g dt + zeta.dW + nu dW_perp, evaluated for all paths at
// step k. zeta holds the W-coordinates of the integrand (sigma' Z).
using DriverFn = std::function<Eigen::VectorXd(std::size_t k, const Eigen::VectorXd& value,
                                               const std::vector<Eigen::VectorXd>& zeta,
                                               const Eigen::VectorXd& nu)>;

struct BackwardResult {
  Field value;              // n x (N+1)
  std::vector<Field> zeta;  // d fields, n x N
  Field nu;                 // n x N, zero without factor noise
  Field dN;                 // orthogonal increments, n x N
  Field se;                 // n x (N+1)
  std::size_t floor_count = 0;
};

// Theta-scheme regression solver: trapezoidal in the driver, implicit on the
// first step back from T, `picard_iters` fixed-point sweeps per step.
// Regression uses the factor polynomial plus the columns of weight_features.
BackwardResult backward_solve(const MarketModel& market, const PathBundle& paths, const Eigen::VectorXd& terminal,
                              const DriverFn& driver, double floor, const LsmcOptions& options,
                              double weight_exponent);

// Extra regressors at `step`: D^a, or with a factor-driven D its conditional
// means E[D^a] at the next grid time and at T.
Eigen::MatrixXd weight_features(const MarketModel& market, const PathBundle& paths, double exponent,
                                std::size_t step);

// phi = sigma' lambda at every (path, k), k = 0..N; one row when deterministic.
std::vector<Field> risk_premium_w(const MarketModel& market, const PathBundle& paths);

// Converts W-coordinates zeta to the M-integrand sigma^{-T} zeta in place.
void to_m_integrand(const MarketModel& market, const PathBundle& paths, std::vector<Field>& zeta);

// Backward integration of a scalar ODE v'(t) = f(t, v) from v(T) = terminal,
// adaptive Cash-Karp stepping, values reported on `grid`.
std::vector<double> integrate_backward(std::span<const double> grid, double terminal,
                                       const std::function<double(double, double)>& f);

void validate_grid(std::span<const double> grid, double horizon);
void validate_options(const LsmcOptions& options);
void check_paths(const MarketModel& market, const PathBundle& paths);

}  // namespace rra::detail
