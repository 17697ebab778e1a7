#pragma once

#include "rra/config.hpp"
#include "rra/field.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rra {

// Power-utility exponent p with its conjugate q = p/(p-1) and risk tolerance
// beta = 1/(1-p). Both are derived at construction and never set independently.
class RiskAversionParams {
 public:
  // Throws ValidationError unless p lies in (-inf, 0) or (0, 1).
  static RiskAversionParams from_p(double p);

  double p() const { return p_; }
  double q() const { return q_; }
  double beta() const { return beta_; }

 private:
  RiskAversionParams(double p, double q, double beta) : p_(p), q_(q), beta_(beta) {}

  double p_;
  double q_;
  double beta_;
};

enum class ModelFamily { no_trade, merton, one_factor, custom };
enum class ConsumptionMode { terminal_only, intermediate };

std::string to_string(ModelFamily family);
std::string to_string(ConsumptionMode mode);
ConsumptionMode parse_consumption_mode(const std::string& text);

// Mean-reverting factor dY = speed (level - Y) dt + vol dB, with
// d<B, W_1> = rho dt against the first asset noise.
struct FactorDynamics {
  double initial = 0.0;
  double level = 0.0;
  double speed = 1.0;
  double vol = 0.0;
  double rho = 0.0;
  bool exact_transition = true;
};

// Continuous market R = M + \int d<M> lambda with M = \int sigma dW.
// Coefficients may depend on time and on the (optional) factor state.
struct MarketModel {
  ModelFamily family = ModelFamily::custom;
  double horizon = 1.0;
  std::size_t dim = 1;
  std::function<Eigen::VectorXd(double, double)> lambda_fn;
  std::function<Eigen::MatrixXd(double, double)> sigma_fn;
  std::function<double(double, double)> d_fn;
  std::optional<FactorDynamics> factor;
  double k1 = 1.0;
  double k2 = 1.0;
  ConsumptionMode consumption = ConsumptionMode::terminal_only;
  double x0 = 1.0;
  // Coefficient functions ignore the factor state.
  bool deterministic = true;
  // sigma_fn is constant in (t, y); lets solvers evaluate it once.
  bool constant_volatility = true;

  Eigen::VectorXd lambda(double t, double y) const { return lambda_fn(t, y); }
  Eigen::MatrixXd sigma(double t, double y) const { return sigma_fn(t, y); }
  // Utility weight D, clamped to [k1, k2].
  double weight(double t, double y) const;
  // mu°[t, T]: 1 + T - t with intermediate consumption, 1 otherwise.
  double remaining_mass(double t) const;
  bool intermediate() const { return consumption == ConsumptionMode::intermediate; }
  // State used when evaluating coefficients of a deterministic market.
  double reference_state() const { return factor ? factor->initial : 0.0; }

  // Checks the structural invariants (bounds, rank at the reference state).
  void validate() const;
};

// Builds one of the registered families from the `model.*` keys of `config`.
//   model.family       no_trade | merton | one_factor
//   model.horizon      T > 0
//   model.consumption  terminal_only | intermediate
//   model.x0           initial capital (default 1)
//   no_trade:   model.d_level (constant D, default 1)
//   merton:     model.drift, model.vol (comma lists, one entry per asset), model.d_level
//   one_factor: model.vol, model.lambda_bar, model.gamma, model.factor_level,
//               model.factor_speed, model.factor_vol, model.rho, model.factor_y0,
//               model.delta, model.k1, model.k2, model.exact_ou
// Keys that the chosen family does not use are rejected.
MarketModel build_market(const KeyValueConfig& config);

// Keys accepted by build_market for the given family name.
std::vector<std::string> market_keys(const std::string& family);

// Monte Carlo ensemble on a uniform grid. Increment fields have n_steps
// columns (increment over [t_k, t_{k+1}]); state fields have n_steps + 1.
struct PathBundle {
  std::vector<double> time_grid;
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::vector<Field> dW;  // asset noise, one field per component
  Field dW_factor;        // correlated factor noise; empty without factor
  Field factor;           // factor states; empty without factor
  std::vector<Field> dR;  // return increments Sigma lambda dt + sigma dW
  Field D;                // clamped utility weight

  bool has_factor() const { return !factor.empty(); }
  double dt(std::size_t k) const { return time_grid[k + 1] - time_grid[k]; }
  // Factor state at (path, k), or the market's reference state without factor.
  double state(std::size_t path, std::size_t k) const {
    return has_factor() ? factor(static_cast<Eigen::Index>(path), static_cast<Eigen::Index>(k)) : 0.0;
  }
};

std::vector<double> uniform_grid(double horizon, std::size_t n_steps);

// Euler discretization of dR (and of the factor, or its exact OU transition).
// Path i draws from the substream (seed, i) only, so output is bitwise
// identical for identical inputs regardless of thread count.
PathBundle simulate(const MarketModel& market, std::size_t n_paths, std::size_t n_steps,
                    std::uint64_t seed);

}  // namespace rra
