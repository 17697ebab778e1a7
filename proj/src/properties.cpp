#include "rra/properties.hpp"

#include "backward.hpp"
#include "rra/csv.hpp"
#include "rra/error.hpp"
#include "rra/regression.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>

namespace rra {

namespace {

enum class Direction { le, ge };

// Paths whose factor state lies in the central range of its step: the
// region where the regressions interpolate.
class Support {
 public:
  explicit Support(const PathBundle* paths) : paths_(paths) {
    if (paths_ == nullptr || !paths_->has_factor()) return;
    for (Eigen::Index k = 0; k < paths_->factor.cols(); ++k) band_.push_back(central_range(paths_->factor.col(k)));
  }
  bool contains(Eigen::Index i, Eigen::Index k, Eigen::Index rows) const {
    if (band_.empty() || rows == 1) return true;
    const double y = paths_->factor(i, k);
    const auto& [lo, hi] = band_[static_cast<std::size_t>(k)];
    return y >= lo && y <= hi;
  }

 private:
  const PathBundle* paths_;
  std::vector<std::pair<double, double>> band_;
};

struct Cell {
  double lhs;
  double rhs;
  double se;  // combined standard error of lhs - rhs
};

// Emits one row per grid time at the path with the smallest margin.
void emit(std::vector<CheckRow>& out, const std::string& name, double p, std::optional<double> p0,
          const std::vector<double>& grid, Eigen::Index rows, bool stochastic, Direction dir,
          const PropertyOptions& opt, const Support& support,
          const std::function<Cell(Eigen::Index, Eigen::Index)>& cell) {
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(grid.size()); ++k) {
    CheckRow best;
    double best_margin = std::numeric_limits<double>::infinity();
    bool first = true;
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!support.contains(i, k, rows)) continue;
      const Cell c = cell(i, k);
      const double slack = (stochastic ? opt.slack_se * c.se : 0.0) + opt.rounding * (std::abs(c.lhs) + std::abs(c.rhs));
      const double margin = dir == Direction::le ? c.rhs + slack - c.lhs : c.lhs + slack - c.rhs;
      if (!(margin >= best_margin) || first) {
        first = false;
        best_margin = std::isnan(margin) ? -std::numeric_limits<double>::infinity() : margin;
        best = CheckRow{name, p, p0, grid[static_cast<std::size_t>(k)], c.lhs, c.rhs, slack, margin >= 0.0};
      }
    }
    out.push_back(best);
  }
}

Field dual_se(const OpportunitySolution& sol) {
  const double beta = sol.params.beta();
  return Field((beta * sol.L.matrix().array().pow(beta - 1.0) * sol.L_se.matrix().array()).matrix());
}

bool is_stochastic(std::initializer_list<const Field*> fields) {
  for (const Field* f : fields) {
    if (f->rows() > 1) return true;
  }
  return false;
}

Eigen::Index row_count(std::initializer_list<const Field*> fields) {
  Eigen::Index r = 1;
  for (const Field* f : fields) r = std::max(r, f->rows());
  return r;
}

EtaProcess weight_integral(const MarketModel& market, const std::vector<double>& grid, const PathBundle* paths,
                           bool stochastic, const LsmcOptions& solver, double exponent) {
  if (!stochastic && market.deterministic) return solve_eta(market, grid, exponent);
  if (paths == nullptr) throw ValidationError("stochastic solutions need the path bundle for conditional expectations");
  return solve_eta(market, *paths, solver, exponent);
}

// Regression estimate of E[ sum_{j >= k} x_j | F_k ] for every (path, k).
void remaining_sum(const Eigen::MatrixXd& incr, const MarketModel& market, const PathBundle& paths,
                   const LsmcOptions& options, Field& est, Field& se) {
  const Eigen::Index n = incr.rows();
  const Eigen::Index N = incr.cols();
  est = Field(n, N + 1);
  se = Field(n, N + 1);
  Eigen::VectorXd tail = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = N - 1; k >= 0; --k) {
    tail += incr.col(k);
    const Eigen::VectorXd state =
        paths.has_factor() ? Eigen::VectorXd(paths.factor.col(k)) : Eigen::VectorXd();
    const StepRegression reg(state, n, options.basis_degree, static_cast<std::size_t>(k),
                             detail::weight_features(market, paths, 1.0, static_cast<std::size_t>(k)));
    const Eigen::VectorXd fit = reg.fit(tail);
    est.col(k) = fit.cwiseMax(0.0);
    se.col(k) = reg.fitted_se(tail, fit);
  }
}

Eigen::MatrixXd martingale_increments(const std::vector<Field>& Z, const Field& dN, const MarketModel& market,
                                      const PathBundle& paths) {
  const auto n = static_cast<Eigen::Index>(paths.n_paths);
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  Eigen::MatrixXd out(n, N);
  const std::size_t d = market.dim;
  const Eigen::MatrixXd sigma0 = d > 0 ? market.sigma(0.0, market.reference_state()) : Eigen::MatrixXd();
  Eigen::VectorXd z(static_cast<Eigen::Index>(d));
  Eigen::VectorXd dw(static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < N; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double m = dN(i, k);
      if (d > 0) {
        for (std::size_t j = 0; j < d; ++j) {
          z(static_cast<Eigen::Index>(j)) = Z[j](i, k);
          dw(static_cast<Eigen::Index>(j)) = paths.dW[j](i, k);
        }
        const Eigen::MatrixXd sigma = market.constant_volatility
                                          ? sigma0
                                          : market.sigma(paths.time_grid[static_cast<std::size_t>(k)],
                                                         paths.state(static_cast<std::size_t>(i), k));
        m += z.dot(sigma * dw);
      }
      out(i, k) = m * m;
    }
  }
  return out;
}

QuadVarDiagnostic qv_from_parts(const std::vector<Field>& Z, const Field& dN, bool single_row,
                                const MarketModel& market, const PathBundle& paths, const LsmcOptions& options,
                                double bound) {
  QuadVarDiagnostic diag;
  diag.time_grid = paths.time_grid;
  diag.bound = bound;
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  if (single_row) {
    diag.estimate = Field(1, N + 1);
    diag.se = Field(1, N + 1);
    return diag;
  }
  remaining_sum(martingale_increments(Z, dN, market, paths), market, paths, options, diag.estimate, diag.se);
  return diag;
}

}  // namespace

bool all_pass(const std::vector<CheckRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.pass; });
}

ComparisonRegime comparison_regime(double p, double p0) {
  RiskAversionParams::from_p(p);
  RiskAversionParams::from_p(p0);
  if (0.0 < p && p < p0 && p0 < 1.0) return ComparisonRegime::both_positive;
  if (p < p0 && p0 < 0.0) return ComparisonRegime::both_negative;
  if (p < 0.0 && 0.0 < p0 && p0 < 1.0) return ComparisonRegime::opposite_signs;
  throw ValidationError("(p, p0) = (" + format_number(p) + ", " + format_number(p0) +
                        ") lies in no comparison regime; need p < p0 with 0 < p, p0 < 0, or p < 0 < p0");
}

std::vector<CheckRow> check_comparison_dual(const OpportunitySolution& sa, const OpportunitySolution& sb,
                                            const MarketModel& market, const PathBundle* paths,
                                            const PropertyOptions& options) {
  const double p = sa.params.p();
  const double p0 = sb.params.p();
  const ComparisonRegime regime = comparison_regime(p, p0);
  if (sa.time_grid != sb.time_grid) throw ValidationError("check_comparison_dual: solutions on different grids");
  if (sa.consumption != sb.consumption || sa.consumption != market.consumption) {
    throw ValidationError("check_comparison_dual: consumption modes differ");
  }
  const double beta = sa.params.beta();
  const double beta0 = sb.params.beta();
  const double a = sa.params.q() / sb.params.q();
  const bool stochastic = is_stochastic({&sa.L, &sb.L});
  const EtaProcess W = weight_integral(market, sa.time_grid, paths, stochastic, options.solver, beta);

  const Field ls_a = dual_opportunity(sa);
  const Field ls_b = dual_opportunity(sb);
  const Field se_a = dual_se(sa);
  const Field se_b = dual_se(sb);
  const Eigen::Index rows = row_count({&sa.L, &sb.L, &W.eta});
  const bool any_stochastic = stochastic || W.eta.rows() > 1;

  const double c1 = regime == ComparisonRegime::both_negative ? market.k2 : market.k1;
  const double c2 = regime == ComparisonRegime::opposite_signs ? market.k1 : market.k2;
  const Direction dir = regime == ComparisonRegime::both_positive ? Direction::le : Direction::ge;

  std::vector<CheckRow> out;
  const Support support(paths);
  emit(out, "comparison_dual", p, p0, sa.time_grid, rows, any_stochastic, dir, options, support,
       [&](Eigen::Index i, Eigen::Index k) {
         const double w = W.eta(i, k);
         const double base = std::pow(c1, beta - beta0) * ls_b(i, k);
         const double rhs = std::pow(w, 1.0 - a) * std::pow(base, a);
         const double rel = std::hypot((1.0 - a) * W.eta_se(i, k) / w, a * se_b(i, k) / ls_b(i, k));
         return Cell{ls_a(i, k), rhs, std::hypot(se_a(i, k), std::abs(rhs) * rel)};
       });
  emit(out, "comparison_primal", p, p0, sa.time_grid, rows, any_stochastic, dir, options, support,
       [&](Eigen::Index i, Eigen::Index k) {
         const double mu = market.remaining_mass(sa.time_grid[static_cast<std::size_t>(k)]);
         const double r = p / p0;
         const double rhs = std::pow(c2 * mu, 1.0 - r) * std::pow(sb.L(i, k), r);
         const double rhs_se = std::abs(rhs * r) * sb.L_se(i, k) / sb.L(i, k);
         return Cell{sa.L(i, k), rhs, std::hypot(sa.L_se(i, k), rhs_se)};
       });
  return out;
}

std::vector<CheckRow> check_pure_investment_monotone(const std::vector<const OpportunitySolution*>& solutions,
                                                     const MarketModel& market, const PathBundle* paths,
                                                     const PropertyOptions& options) {
  std::vector<CheckRow> out;
  const Support support(paths);
  if (solutions.size() < 2) return out;
  for (const auto* s : solutions) {
    if (s->params.p() >= 0.0) throw ValidationError("check_pure_investment_monotone: all p must be negative");
    if (s->consumption != solutions.front()->consumption) {
      throw ValidationError("check_pure_investment_monotone: mixed consumption modes");
    }
    if (s->time_grid != solutions.front()->time_grid) {
      throw ValidationError("check_pure_investment_monotone: solutions on different grids");
    }
  }
  for (std::size_t j = 0; j + 1 < solutions.size(); ++j) {
    if (!(solutions[j]->params.p() < solutions[j + 1]->params.p())) {
      throw ValidationError("check_pure_investment_monotone: solutions must be sorted by ascending p");
    }
  }
  const bool consume = solutions.front()->consumption == ConsumptionMode::intermediate;
  for (std::size_t j = 0; j + 1 < solutions.size(); ++j) {
    const OpportunitySolution& a = *solutions[j];
    const OpportunitySolution& b = *solutions[j + 1];
    const double p = a.params.p();
    const double p0 = b.params.p();
    const Eigen::Index rows = row_count({&a.L, &b.L});
    emit(out, consume ? "pure_investment_bound" : "pure_investment_monotone", p, p0, a.time_grid, rows,
         is_stochastic({&a.L, &b.L}), Direction::le, options, support, [&](Eigen::Index i, Eigen::Index k) {
           double factor = 1.0;
           if (consume) {
             const double mu = market.remaining_mass(a.time_grid[static_cast<std::size_t>(k)]);
             factor = market.k2 / market.k1 * std::pow(mu, p0 - p);
           }
           return Cell{a.L(i, k), factor * b.L(i, k), std::hypot(a.L_se(i, k), factor * b.L_se(i, k))};
         });
  }
  return out;
}

std::vector<CheckRow> check_opportunity_bounds(const OpportunitySolution& sol, const MarketModel& market,
                                               const PathBundle* paths, const PropertyOptions& options) {
  const double p = sol.params.p();
  const bool stochastic = sol.L.rows() > 1;
  const EtaProcess eta = weight_integral(market, sol.time_grid, paths, stochastic, options.solver, 1.0);
  const Eigen::Index rows = row_count({&sol.L, &eta.eta});
  const bool any_stochastic = stochastic || eta.eta.rows() > 1;
  const Direction dir = p < 0.0 ? Direction::le : Direction::ge;
  auto mu = [&](Eigen::Index k) { return market.remaining_mass(sol.time_grid[static_cast<std::size_t>(k)]); };

  std::vector<CheckRow> out;
  const Support support(paths);
  emit(out, "bounds_inner", p, std::nullopt, sol.time_grid, rows, any_stochastic, dir, options, support,
       [&](Eigen::Index i, Eigen::Index k) {
         const double f = std::pow(mu(k), -p);
         return Cell{sol.L(i, k), f * eta.eta(i, k), std::hypot(sol.L_se(i, k), f * eta.eta_se(i, k))};
       });
  emit(out, "bounds_outer", p, std::nullopt, sol.time_grid, rows, any_stochastic, dir, options, support,
       [&](Eigen::Index i, Eigen::Index k) {
         const double f = std::pow(mu(k), -p);
         const double rhs = p < 0.0 ? market.k2 * std::pow(mu(k), 1.0 - p) : market.k1;
         return Cell{f * eta.eta(i, k), rhs, f * eta.eta_se(i, k)};
       });
  emit(out, "bounds_L", p, std::nullopt, sol.time_grid, rows, any_stochastic, dir, options, support,
       [&](Eigen::Index i, Eigen::Index k) {
         const double rhs = p < 0.0 ? market.k2 * std::pow(mu(k), 1.0 - p) : market.k1;
         return Cell{sol.L(i, k), rhs, sol.L_se(i, k)};
       });
  return out;
}

PhiCurve phi_curve(const Field& Y, std::size_t t_index, std::size_t s_index, const std::vector<double>& q_grid) {
  if (!(t_index < s_index) || static_cast<Eigen::Index>(s_index) >= Y.cols()) {
    throw ValidationError("phi_curve: need 0 <= t < s <= T on the grid");
  }
  if (q_grid.empty()) throw ValidationError("phi_curve: empty q grid");
  for (std::size_t j = 0; j < q_grid.size(); ++j) {
    if (!(q_grid[j] > 0.0 && q_grid[j] < 1.0)) throw ValidationError("phi_curve: q must lie in (0,1)");
    if (j > 0 && !(q_grid[j] > q_grid[j - 1])) throw ValidationError("phi_curve: q grid must be strictly increasing");
  }
  const Eigen::ArrayXd yt = Y.matrix().col(static_cast<Eigen::Index>(t_index)).array();
  const Eigen::ArrayXd ys = Y.matrix().col(static_cast<Eigen::Index>(s_index)).array();
  if ((yt <= 0.0).any() || (ys <= 0.0).any()) throw ValidationError("phi_curve: nonpositive Y value");
  const Eigen::ArrayXd r = ys / yt;
  const double n = static_cast<double>(r.size());
  auto mean_se = [n](const Eigen::ArrayXd& v) {
    const double m = v.mean();
    const double se = n > 1.0 ? std::sqrt((v - m).square().sum() / (n - 1.0) / n) : 0.0;
    return std::pair<double, double>(m, se);
  };

  PhiCurve c;
  c.q_grid = q_grid;
  for (double q : q_grid) {
    const auto [m, se] = mean_se(r.pow(q));
    const double phi = std::pow(m, 1.0 / (1.0 - q));
    c.phi.push_back(phi);
    c.se.push_back(phi / ((1.0 - q) * m) * se);
  }
  const auto [ent, ent_se] = mean_se(r * r.log());
  c.phi_one = std::exp(-ent);
  c.phi_one_se = c.phi_one * ent_se;
  return c;
}

std::vector<CheckRow> check_phi_monotone(const PhiCurve& curve, double p) {
  std::vector<CheckRow> out;
  for (std::size_t j = 0; j + 1 < curve.phi.size(); ++j) {
    const double slack = 2.0 * (curve.se[j] + curve.se[j + 1]);
    out.push_back(CheckRow{"phi_monotone", p, std::nullopt, curve.q_grid[j + 1], curve.phi[j + 1], curve.phi[j],
                           slack, curve.phi[j + 1] <= curve.phi[j] + slack});
  }
  return out;
}

QuadVarDiagnostic quad_var_diagnostic(const OpportunitySolution& sol, const MarketModel& market,
                                      const PathBundle& paths, const LsmcOptions& options, std::optional<double> cap,
                                      std::optional<double> p1) {
  detail::check_paths(market, paths);
  const double p = sol.params.p();
  double bound = 0.0;
  if (p > 0.0) {
    if (!cap) throw ValidationError("quad_var_diagnostic: p in (0,1) requires a localizing cap on L");
    bound = *cap * *cap;
  } else if (sol.consumption == ConsumptionMode::intermediate) {
    const double ref = p1.value_or(p);
    if (ref > p) throw ValidationError("quad_var_diagnostic: p1 must not exceed p");
    bound = market.k2 * market.k2 * std::pow(1.0 + market.horizon, 2.0 - 2.0 * ref);
  } else {
    bound = market.k2 * market.k2;
  }
  return qv_from_parts(sol.Z, sol.dN, sol.L.rows() == 1, market, paths, options, bound);
}

QuadVarDiagnostic quad_var_diagnostic(const ExponentialSolution& sol, const MarketModel& market,
                                      const PathBundle& paths, const LsmcOptions& options) {
  detail::check_paths(market, paths);
  return qv_from_parts(sol.z, sol.n_incr, sol.ell.rows() == 1, market, paths, options,
                       sol.claim_sup * sol.claim_sup);
}

std::vector<CheckRow> check_quad_var(const QuadVarDiagnostic& diag, const std::string& name, double p,
                                     const PropertyOptions& options) {
  std::vector<CheckRow> out;
  emit(out, name, p, std::nullopt, diag.time_grid, diag.estimate.rows(), diag.estimate.rows() > 1, Direction::le,
       options, Support(nullptr), [&](Eigen::Index i, Eigen::Index k) {
         return Cell{diag.estimate(i, k), diag.bound, diag.se(i, k)};
       });
  return out;
}

std::vector<CheckRow> check_lambda_bmo_proxy(const OpportunitySolution& sol, const MarketModel& market,
                                             const PathBundle& paths, const QuadVarDiagnostic& qv,
                                             const PropertyOptions& options) {
  const double p = sol.params.p();
  if (p >= 0.0 || sol.consumption != ConsumptionMode::terminal_only) {
    throw ValidationError("check_lambda_bmo_proxy: needs p < 0 without intermediate consumption");
  }
  detail::check_paths(market, paths);
  const double lmin = sol.L.matrix().minCoeff();
  const double bound = 4.0 * market.k2 / (sol.params.q() * lmin) + 2.0 * qv.bound / (lmin * lmin);
  const std::vector<Field> phi = detail::risk_premium_w(market, paths);
  const auto n = static_cast<Eigen::Index>(paths.n_paths);
  const auto N = static_cast<Eigen::Index>(paths.n_steps);

  QuadVarDiagnostic lam;
  lam.time_grid = paths.time_grid;
  lam.bound = bound;
  const bool single = market.deterministic;
  const Eigen::Index rows = single ? 1 : n;
  Eigen::MatrixXd incr = Eigen::MatrixXd::Zero(rows, N);
  for (Eigen::Index k = 0; k < N; ++k) {
    for (const Field& f : phi) {
      for (Eigen::Index i = 0; i < rows; ++i) incr(i, k) += f(i, k) * f(i, k) * paths.dt(static_cast<std::size_t>(k));
    }
  }
  if (single) {
    lam.estimate = Field(1, N + 1);
    lam.se = Field(1, N + 1);
    for (Eigen::Index k = N - 1; k >= 0; --k) lam.estimate.at(0, k) = lam.estimate(0, k + 1) + incr(0, k);
  } else {
    remaining_sum(incr, market, paths, options.solver, lam.estimate, lam.se);
  }
  return check_quad_var(lam, "lambda_bmo_proxy", p, options);
}

void write_checks_csv(std::ostream& os, const std::vector<CheckRow>& rows) {
  CsvWriter w(os);
  w.header({"check_name", "p", "p0", "t", "lhs", "rhs", "slack", "pass"});
  for (const CheckRow& r : rows) {
    w.field(r.check_name).field(r.p);
    if (r.p0) {
      w.field(*r.p0);
    } else {
      w.empty_field();
    }
    w.field(r.t).field(r.lhs).field(r.rhs).field(r.slack).field(std::string_view(r.pass ? "true" : "false"));
    w.end_row();
  }
}

}  // namespace rra
