#pragma once

#include "rra/field.hpp"
#include "rra/market.hpp"
#include "rra/opportunity.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace rra {

// One line of the pass/fail matrix. For per-path solutions the row reports the
// path with the smallest margin at time t.
struct CheckRow {
  std::string check_name;
  double p = 0.0;
  std::optional<double> p0;
  double t = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  bool pass = true;
};

bool all_pass(const std::vector<CheckRow>& rows);

struct PropertyOptions {
  // Multiplier of the standard errors on stochastic markets.
  double slack_se = 3.0;
  // Relative allowance for floating-point rounding, also on deterministic markets.
  double rounding = 1e-8;
  LsmcOptions solver;
};

enum class ComparisonRegime {
  both_positive,       // 0 < p < p0 < 1
  both_negative,       // p < p0 < 0
  opposite_signs,      // p < 0 < p0 < 1
};

// Throws ValidationError when (p, p0) is in none of the three regimes.
ComparisonRegime comparison_regime(double p, double p0);

// Pointwise comparison of L*(p) with L*(p0) and of L(p) with L(p0), in the
// direction and with the constant (k1 or k2) fixed by the regime.
// E[\int_t^T D^beta dmu° | F_t] is computed with the solvers' own scheme
// (`paths` is required for LSMC solutions).
//
// With a factor, per-path checks cover the paths whose state lies in the
// central_range of its step.
std::vector<CheckRow> check_comparison_dual(const OpportunitySolution& sol_p, const OpportunitySolution& sol_p0,
                                            const MarketModel& market, const PathBundle* paths,
                                            const PropertyOptions& options = {});

// `solutions` sorted by ascending p, all p < 0, one consumption mode.
// Terminal-only: L(p) <= L(p0); intermediate: L(p) <= (k2/k1) mu°^(p0-p) L(p0).
std::vector<CheckRow> check_pure_investment_monotone(const std::vector<const OpportunitySolution*>& solutions,
                                                     const MarketModel& market, const PathBundle* paths = nullptr,
                                                     const PropertyOptions& options = {});

// p in (0,1): L >= mu°^(-p) eta >= k1;  p < 0: L <= mu°^(-p) eta <= k2 mu°^(1-p).
std::vector<CheckRow> check_opportunity_bounds(const OpportunitySolution& sol, const MarketModel& market,
                                               const PathBundle* paths, const PropertyOptions& options = {});

struct PhiCurve {
  std::vector<double> q_grid;
  std::vector<double> phi;
  std::vector<double> se;
  // q -> 1 limit exp(-E[r log r]) with r = Y_s / Y_t.
  double phi_one = 0.0;
  double phi_one_se = 0.0;
};

// phi(q) = E[(Y_s/Y_t)^q]^(1/(1-q)), pooled over paths. Y is n x (grid) with
// columns t_index < s_index.
PhiCurve phi_curve(const Field& Y, std::size_t t_index, std::size_t s_index, const std::vector<double>& q_grid);

// Adjacent grid pairs: phi(q_{i+1}) <= phi(q_i) + 2 (SE_i + SE_{i+1}).
std::vector<CheckRow> check_phi_monotone(const PhiCurve& curve, double p = 0.0);

struct QuadVarDiagnostic {
  std::vector<double> time_grid;
  // Regression estimate of E[[M]_T - [M]_t | F_t] per (path, t).
  Field estimate;
  Field se;
  double bound = 0.0;
};

// Remaining realized quadratic variation of the martingale part of L,
// projected on the step basis. Terminal-only p < 0: bound k2^2;
// intermediate p < 0: k2^2 (1+T)^(2-2 p1) with p1 = p unless given;
// p in (0,1) requires `cap` (a bound on L) and uses cap^2.
QuadVarDiagnostic quad_var_diagnostic(const OpportunitySolution& sol, const MarketModel& market,
                                      const PathBundle& paths, const LsmcOptions& options,
                                      std::optional<double> cap = std::nullopt,
                                      std::optional<double> p1 = std::nullopt);
QuadVarDiagnostic quad_var_diagnostic(const ExponentialSolution& sol, const MarketModel& market,
                                      const PathBundle& paths, const LsmcOptions& options);

std::vector<CheckRow> check_quad_var(const QuadVarDiagnostic& diag, const std::string& name, double p,
                                     const PropertyOptions& options = {});

// Terminal-only p < 0: E[\int_t^T |sigma' lambda|^2 ds | F_t] against
// (4 k2)/(q Lmin) + 2 QVbound / Lmin^2, Lmin the smallest value of L.
std::vector<CheckRow> check_lambda_bmo_proxy(const OpportunitySolution& sol, const MarketModel& market,
                                             const PathBundle& paths, const QuadVarDiagnostic& qv,
                                             const PropertyOptions& options = {});

// Columns (check_name, p, p0, t, lhs, rhs, slack, pass).
void write_checks_csv(std::ostream& os, const std::vector<CheckRow>& rows);

}  // namespace rra
