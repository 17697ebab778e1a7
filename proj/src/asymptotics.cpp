#include "rra/asymptotics.hpp"

#include "rra/csv.hpp"
#include "rra/error.hpp"
#include "rra/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rra {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kRounding = 1e-10;

Metric undefined_metric() { return {kNaN, kNaN}; }

// sup_k of the path average of |diff(i, k)|, with the standard error of that
// average at the maximizing k.
Metric sup_mean_abs(const Eigen::ArrayXXd& diff) {
  Metric m{0.0, 0.0};
  const double n = static_cast<double>(diff.rows());
  for (Eigen::Index k = 0; k < diff.cols(); ++k) {
    const Eigen::ArrayXd a = diff.col(k).abs();
    const double mean = a.mean();
    if (k == 0 || mean > m.value) {
      m.value = mean;
      m.se = diff.rows() > 1 ? std::sqrt((a - mean).square().sum() / (n - 1.0) / n) : 0.0;
    }
  }
  return m;
}

// sqrt(E sum_k |sigma' diff_k|^2 dt_k) with a delta-method standard error.
Metric l2_under_m(const MarketModel& market, const PathBundle& paths, const std::vector<Eigen::ArrayXXd>& diff) {
  if (diff.empty()) return {0.0, 0.0};
  const Eigen::Index rows = diff[0].rows();
  const Eigen::Index N = diff[0].cols();
  const std::size_t d = diff.size();
  Eigen::ArrayXd s = Eigen::ArrayXd::Zero(rows);
  const Eigen::MatrixXd sigma0 = market.sigma(0.0, market.reference_state());
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < N; ++k) {
      for (std::size_t j = 0; j < d; ++j) v(static_cast<Eigen::Index>(j)) = diff[j](i, k);
      const Eigen::MatrixXd sigma =
          market.constant_volatility || rows == 1
              ? sigma0
              : market.sigma(paths.time_grid[static_cast<std::size_t>(k)], paths.state(static_cast<std::size_t>(i), k));
      s(i) += (sigma.transpose() * v).squaredNorm() * paths.dt(static_cast<std::size_t>(k));
    }
  }
  const double n = static_cast<double>(rows);
  const double mean = s.mean();
  const double se_mean = rows > 1 ? std::sqrt((s - mean).square().sum() / (n - 1.0) / n) : 0.0;
  const double value = std::sqrt(mean);
  return {value, value > 0.0 ? se_mean / (2.0 * value) : se_mean};
}

// Field values as a rows x cols array; a broadcasting field is replicated and,
// for a deterministic comparison (rows = 1), a per-path field contributes its
// first path.
Eigen::ArrayXXd expand(const Field& f, Eigen::Index rows) {
  if (f.rows() == rows) return f.matrix().array();
  if (f.rows() == 1) return f.matrix().array().replicate(rows, 1);
  if (rows == 1) return f.matrix().array().topRows(1);
  throw ValidationError("field row count does not match the path bundle");
}

// lambda + Z^eta / eta per asset and step.
std::vector<Eigen::ArrayXXd> eta_direction(const MarketModel& market, const PathBundle& paths,
                                           const EtaProcess& eta, Eigen::Index rows, bool with_lambda) {
  const std::size_t d = market.dim;
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  std::vector<Eigen::ArrayXXd> out(d, Eigen::ArrayXXd(rows, N));
  for (Eigen::Index k = 0; k < N; ++k) {
    const double t = paths.time_grid[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double y = rows == 1 || !paths.has_factor() ? market.reference_state()
                                                         : paths.state(static_cast<std::size_t>(i), k);
      const Eigen::VectorXd lam = with_lambda ? market.lambda(t, y) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
      for (std::size_t j = 0; j < d; ++j) {
        out[j](i, k) = lam(static_cast<Eigen::Index>(j)) + eta.Z_eta[j](i, k) / eta.eta(i, k);
      }
    }
  }
  return out;
}

bool p_matches_kind(double p, LimitKind kind) {
  return kind == LimitKind::zero_plus ? (p > 0.0 && p < 1.0) : p < 0.0;
}

MarketModel unit_weight_twin(const MarketModel& market) {
  MarketModel twin = market;
  twin.d_fn = [](double, double) { return 1.0; };
  twin.k1 = 1.0;
  twin.k2 = 1.0;
  return twin;
}

std::string format_metric(const Metric& m) { return m.defined() ? format_number(m.value) : ""; }

}  // namespace

bool Metric::defined() const { return !std::isnan(value); }

std::string to_string(LimitKind kind) {
  switch (kind) {
    case LimitKind::neg_infinity: return "neg_infinity";
    case LimitKind::zero_minus: return "zero_minus";
    case LimitKind::zero_plus: return "zero_plus";
    case LimitKind::exponential: return "exponential";
  }
  return "neg_infinity";
}

LimitKind parse_limit_kind(const std::string& text) {
  if (text == "neg_infinity") return LimitKind::neg_infinity;
  if (text == "zero_minus") return LimitKind::zero_minus;
  if (text == "zero_plus") return LimitKind::zero_plus;
  if (text == "exponential") return LimitKind::exponential;
  throw ValidationError("unknown limit kind '" + text + "'");
}

std::string market_fingerprint(const MarketModel& market) {
  std::ostringstream os;
  os << to_string(market.family) << ";T=" << format_number(market.horizon) << ";d=" << market.dim << ";"
     << to_string(market.consumption) << ";k1=" << format_number(market.k1) << ";k2=" << format_number(market.k2)
     << ";x0=" << format_number(market.x0) << (market.deterministic ? ";deterministic" : ";stochastic");
  return os.str();
}

SweepReport sweep(const MarketModel& market, std::vector<double> p_grid, LimitKind kind, const SimConfig& sim) {
  market.validate();
  if (p_grid.empty()) throw ValidationError("sweep: p_grid must not be empty");
  for (double p : p_grid) {
    RiskAversionParams::from_p(p);
    if (!p_matches_kind(p, kind)) {
      throw ValidationError("sweep: p = " + format_number(p) + " does not approach the " + to_string(kind) +
                            " limit");
    }
  }
  std::sort(p_grid.begin(), p_grid.end());
  if (std::adjacent_find(p_grid.begin(), p_grid.end()) != p_grid.end()) {
    throw ValidationError("sweep: p_grid has duplicate entries");
  }
  if (kind == LimitKind::exponential && market.intermediate()) {
    throw ValidationError("sweep: the exponential limit requires terminal-only consumption");
  }
  if (sim.method != "auto" && sim.method != "ode" && sim.method != "lsmc") {
    throw ValidationError("solver.method must be auto, ode or lsmc");
  }
  if (sim.method == "ode" && !market.deterministic) {
    throw ValidationError("solver.method = ode requires a deterministic market");
  }
  const bool use_ode = sim.method == "ode" || (sim.method == "auto" && market.deterministic);

  SweepReport rep;
  rep.kind = kind;
  rep.p_grid = p_grid;
  rep.market_fingerprint = market_fingerprint(market);
  rep.seed = sim.seed;
  rep.n_paths = sim.n_paths;
  rep.n_steps = sim.n_steps;
  rep.consumption = market.consumption;
  rep.deterministic = market.deterministic;
  rep.k1 = market.k1;

  const PathBundle paths = simulate(market, sim.n_paths, sim.n_steps, sim.seed);
  rep.time_grid = paths.time_grid;
  const auto N = static_cast<Eigen::Index>(paths.n_steps);
  const double T = market.horizon;

  const bool zero = kind == LimitKind::zero_minus || kind == LimitKind::zero_plus;
  if (zero) {
    rep.eta = use_ode ? solve_eta(market, paths.time_grid) : solve_eta(market, paths, sim.solver);
  }
  std::vector<Field> theta_hat;
  if (kind == LimitKind::exponential) {
    rep.exponential =
        use_ode ? solve_exponential(market, paths.time_grid) : solve_exponential(market, paths, sim.solver);
    theta_hat = exponential_strategy(*rep.exponential, market, &paths);
  }
  const bool varying_d = (paths.D.matrix().array() != paths.D.matrix()(0, 0)).any();
  std::optional<MarketModel> twin;
  std::optional<PathBundle> twin_paths;
  if (zero && varying_d) {
    twin = unit_weight_twin(market);
    twin_paths = paths;
    twin_paths->D.matrix().setOnes();
  }

  for (double p : p_grid) {
    SweepRecord rec;
    rec.p = p;
    rec.err_kappa = rec.err_pi = rec.err_Lstar = rec.err_wealth = rec.err_excess = undefined_metric();
    try {
      const auto params = RiskAversionParams::from_p(p);
      OpportunitySolution sol =
          use_ode ? solve_ode(market, params, paths.time_grid) : solve_lsmc(market, params, paths, sim.solver);
      rec.L0 = sol.L.matrix().col(0).mean();
      rec.L0_se = sol.L_se(0, 0);
      rec.u_p = rec.L0 * std::pow(market.x0, p) / p;
      rec.floor_count = sol.floor_count;
      rec.reliable = sol.reliable;

      const Field lstar = dual_opportunity(sol);
      const std::vector<Field> pi = optimal_fraction(sol, market, &paths);
      Eigen::Index rows = sol.L.rows();
      for (const Field& f : pi) rows = std::max(rows, f.rows());
      if (zero) rows = std::max(rows, rep.eta->eta.rows());
      if (kind == LimitKind::exponential) {
        for (const Field& f : theta_hat) rows = std::max(rows, f.rows());
      }
      const bool consume = market.intermediate();

      Field kappa;
      if (consume) kappa = consumption_fraction(sol, paths.D);

      if (kind == LimitKind::neg_infinity) {
        Eigen::ArrayXXd dl = expand(lstar, rows);
        Eigen::ArrayXXd dk(rows, N + 1);
        for (Eigen::Index k = 0; k <= N; ++k) {
          const double t = paths.time_grid[static_cast<std::size_t>(k)];
          dl.col(k) -= market.remaining_mass(t);
          if (consume) dk.col(k) = expand(kappa, rows).col(k) - 1.0 / (1.0 + T - t);
        }
        rec.err_Lstar = sup_mean_abs(dl);
        if (consume) rec.err_kappa = sup_mean_abs(dk.leftCols(N));
        std::vector<Eigen::ArrayXXd> dpi;
        for (const Field& f : pi) dpi.push_back(expand(f, rows));
        rec.err_pi = l2_under_m(market, paths, dpi);
        if (consume) {
          const Field X = wealth(market, paths, pi, kappa, market.x0);
          Eigen::ArrayXXd dx = X.matrix().array();
          for (Eigen::Index k = 0; k <= N; ++k) {
            const double lim = market.x0 * (1.0 + T - paths.time_grid[static_cast<std::size_t>(k)]) / (1.0 + T);
            dx.col(k) = (dx.col(k) - lim) / lim;
          }
          rec.err_wealth = sup_mean_abs(dx);
        }
      } else if (kind == LimitKind::exponential) {
        std::vector<Eigen::ArrayXXd> dpi;
        for (std::size_t j = 0; j < pi.size(); ++j) {
          dpi.push_back((1.0 - p) * expand(pi[j], rows) - expand(theta_hat[j], rows));
        }
        rec.err_pi = l2_under_m(market, paths, dpi);
        Eigen::ArrayXXd dl = expand(sol.L, rows) - expand(rep.exponential->ell, rows);
        rec.err_Lstar = sup_mean_abs(dl);
      } else {
        const EtaProcess& eta = *rep.eta;
        rec.err_Lstar = sup_mean_abs(expand(lstar, rows) - expand(eta.eta, rows));
        if (consume) {
          const Eigen::ArrayXXd target = expand(paths.D, rows) / expand(eta.eta, rows);
          rec.err_kappa = sup_mean_abs((expand(kappa, rows) - target).leftCols(N));
        }
        const auto dir = eta_direction(market, paths, eta, rows, true);
        std::vector<Eigen::ArrayXXd> dpi;
        for (std::size_t j = 0; j < pi.size(); ++j) dpi.push_back(expand(pi[j], rows) - dir[j]);
        rec.err_pi = l2_under_m(market, paths, dpi);
        if (twin) {
          const OpportunitySolution tsol = solve_lsmc(*twin, params, *twin_paths, sim.solver);
          const std::vector<Field> tpi = optimal_fraction(tsol, *twin, &*twin_paths);
          const auto hedge = eta_direction(market, paths, eta, rows, false);
          std::vector<Eigen::ArrayXXd> dex;
          for (std::size_t j = 0; j < pi.size(); ++j) {
            dex.push_back(expand(pi[j], rows) - expand(tpi[j], rows) - hedge[j]);
          }
          rec.err_excess = l2_under_m(market, paths, dex);
        }
      }
      rec.solution = std::move(sol);
      rec.solved = true;
    } catch (const SolverError& e) {
      rec.error = std::string("p = ") + format_number(p) + ": " + e.what();
    }
    rep.records.push_back(std::move(rec));
  }

  rep.order.resize(rep.records.size());
  for (std::size_t i = 0; i < rep.order.size(); ++i) rep.order[i] = i;
  if (kind != LimitKind::zero_minus) std::reverse(rep.order.begin(), rep.order.end());
  return rep;
}

CheckResult check_monotone(const std::vector<Metric>& errors, const std::string& name) {
  CheckResult r;
  std::vector<Metric> e;
  for (const Metric& m : errors) {
    if (m.defined()) e.push_back(m);
  }
  if (e.size() < 2) return r;
  double floor = e[0].value;
  for (std::size_t i = 1; i < e.size(); ++i) {
    floor = std::min(floor, e[i].value);
    if (e[i].value > 1.1 * e[i - 1].value + kRounding) {
      r.pass = false;
      r.diagnostics.push_back("non-decreasing error in " + name + ": " + format_number(e[i - 1].value) + " -> " +
                              format_number(e[i].value) + " at grid position " + std::to_string(i));
    }
  }
  const Metric& last = e.back();
  if (last.value > floor + 3.0 * last.se + kRounding) {
    r.pass = false;
    r.diagnostics.push_back(name + " ends at " + format_number(last.value) + ", above its noise floor " +
                            format_number(floor) + " by more than 3 SE");
  }
  return r;
}

namespace {

void merge(CheckResult& into, const CheckResult& from) {
  into.pass = into.pass && from.pass;
  into.diagnostics.insert(into.diagnostics.end(), from.diagnostics.begin(), from.diagnostics.end());
}

std::vector<Metric> ordered(const SweepReport& rep, Metric SweepRecord::*field) {
  std::vector<Metric> out;
  for (std::size_t idx : rep.order) out.push_back(rep.records[idx].*field);
  return out;
}

bool all_solved(const SweepReport& rep, CheckResult& r) {
  for (const auto& rec : rep.records) {
    if (!rec.solved) {
      r.pass = false;
      r.diagnostics.push_back("solver failure: " + rec.error);
    }
  }
  return r.pass;
}

}  // namespace

CheckResult check_neg_infinity(const SweepReport& report) {
  if (report.kind != LimitKind::neg_infinity) throw ValidationError("check_neg_infinity: wrong limit kind");
  if (report.records.size() < 3) throw ValidationError("check_neg_infinity: needs at least 3 grid points");
  CheckResult r;
  if (!all_solved(report, r)) return r;
  merge(r, check_monotone(ordered(report, &SweepRecord::err_kappa), "kappa"));
  merge(r, check_monotone(ordered(report, &SweepRecord::err_pi), "pi"));
  merge(r, check_monotone(ordered(report, &SweepRecord::err_Lstar), "Lstar"));
  if (report.consumption == ConsumptionMode::intermediate) {
    const Metric& w = report.records[report.order.back()].err_wealth;
    if (!(w.value <= 0.02)) {
      r.pass = false;
      r.diagnostics.push_back("limit wealth deviates by " + format_number(w.value) + " (relative), above 0.02");
    }
  }
  return r;
}

CheckResult check_exponential(const SweepReport& report, const ExponentialSolution& exp_sol) {
  if (report.kind != LimitKind::exponential) throw ValidationError("check_exponential: wrong limit kind");
  if (report.consumption == ConsumptionMode::intermediate) {
    throw ValidationError("check_exponential: report has intermediate consumption");
  }
  if (report.records.size() < 2) throw ValidationError("check_exponential: needs at least 2 grid points");
  CheckResult r;
  if (!all_solved(report, r)) return r;
  const auto cols = static_cast<Eigen::Index>(report.time_grid.size());
  if (exp_sol.ell.cols() != cols) throw ValidationError("check_exponential: grid mismatch");

  auto count_violations = [cols](const Field& lo, const Field& lo_se, const Field& hi, const Field& hi_se) {
    const Eigen::Index rows = std::max(lo.rows(), hi.rows());
    std::size_t bad = 0;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < cols; ++k) {
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double slack = 3.0 * std::hypot(lo_se(i, k), hi_se(i, k)) + 1e-8 * std::abs(hi(i, k));
        const double excess = lo(i, k) - hi(i, k) - slack;
        if (excess > 0.0) {
          ++bad;
          worst = std::max(worst, excess);
        }
      }
    }
    return std::pair<std::size_t, double>(bad, worst);
  };

  for (std::size_t j = 0; j + 1 < report.order.size(); ++j) {
    const SweepRecord& a = report.records[report.order[j]];
    const SweepRecord& b = report.records[report.order[j + 1]];
    const auto [bad, worst] = count_violations(b.solution.L, b.solution.L_se, a.solution.L, a.solution.L_se);
    if (bad > 0) {
      r.pass = false;
      r.diagnostics.push_back("L(" + format_number(b.p) + ") exceeds L(" + format_number(a.p) + ") at " +
                              std::to_string(bad) + " grid points (worst excess " + format_number(worst) +
                              "): pure-investment monotonicity in p violated");
    }
  }
  for (std::size_t idx : report.order) {
    const SweepRecord& a = report.records[idx];
    const auto [bad, worst] = count_violations(exp_sol.ell, exp_sol.ell_se, a.solution.L, a.solution.L_se);
    if (bad > 0) {
      r.pass = false;
      r.diagnostics.push_back("L(" + format_number(a.p) + ") falls below the exponential opportunity process at " +
                              std::to_string(bad) + " grid points (worst " + format_number(worst) + ")");
    }
  }
  merge(r, check_monotone(ordered(report, &SweepRecord::err_pi), "(1-p)pi vs theta"));
  return r;
}

CheckResult check_zero(const SweepReport& report, const EtaProcess& eta) {
  if (report.kind != LimitKind::zero_minus && report.kind != LimitKind::zero_plus) {
    throw ValidationError("check_zero: wrong limit kind");
  }
  if (report.records.size() < 2) throw ValidationError("check_zero: needs at least 2 grid points");
  CheckResult r;
  if (!all_solved(report, r)) return r;
  const auto cols = static_cast<Eigen::Index>(report.time_grid.size());
  if (eta.eta.cols() != cols) throw ValidationError("check_zero: eta grid mismatch");

  std::vector<Metric> lstar_err;
  for (std::size_t idx : report.order) {
    const SweepRecord& rec = report.records[idx];
    const Field lstar = dual_opportunity(rec.solution);
    const Eigen::Index rows = std::max(lstar.rows(), eta.eta.rows());
    lstar_err.push_back(sup_mean_abs(expand(lstar, rows) - expand(eta.eta, rows)));
  }
  merge(r, check_monotone(lstar_err, "Lstar vs eta"));
  merge(r, check_monotone(ordered(report, &SweepRecord::err_kappa), "kappa vs D/eta"));
  merge(r, check_monotone(ordered(report, &SweepRecord::err_pi), "pi vs lambda + Z^eta/eta"));
  merge(r, check_monotone(ordered(report, &SweepRecord::err_excess), "excess hedging demand"));

  if (report.kind == LimitKind::zero_plus) {
    // Finiteness proxy: L0 finite, above k1, and settling along the grid.
    std::vector<Metric> steps;
    const SweepRecord* prev = nullptr;
    for (std::size_t idx : report.order) {
      const SweepRecord& rec = report.records[idx];
      if (!std::isfinite(rec.L0) || !std::isfinite(rec.u_p) || rec.L0 < report.k1 - 3.0 * rec.L0_se - kRounding) {
        r.pass = false;
        r.diagnostics.push_back("value estimate at p = " + format_number(rec.p) + " is not finite or falls below k1");
      }
      if (prev != nullptr) steps.push_back({std::abs(rec.L0 - prev->L0), std::hypot(rec.L0_se, prev->L0_se)});
      prev = &rec;
    }
    merge(r, check_monotone(steps, "L0 increments"));
  }
  return r;
}

CheckResult check_report(SweepReport& report) {
  CheckResult r;
  switch (report.kind) {
    case LimitKind::neg_infinity: r = check_neg_infinity(report); break;
    case LimitKind::exponential:
      if (!report.exponential) throw ValidationError("check_report: exponential solution missing");
      r = check_exponential(report, *report.exponential);
      break;
    default:
      if (!report.eta) throw ValidationError("check_report: eta process missing");
      r = check_zero(report, *report.eta);
      break;
  }
  // Per-record flags: each metric passes at a record when it did not grow by
  // more than 10% from the previous grid point.
  for (std::size_t j = 0; j < report.order.size(); ++j) {
    SweepRecord& rec = report.records[report.order[j]];
    if (!rec.solved) {
      rec.pass_flags = "solver_failed";
      continue;
    }
    std::string flags;
    auto flag = [&](const char* name, Metric SweepRecord::*field) {
      const Metric& m = rec.*field;
      if (!m.defined()) return;
      bool ok = true;
      if (j > 0) {
        const Metric& prev = report.records[report.order[j - 1]].*field;
        ok = !prev.defined() || m.value <= 1.1 * prev.value + kRounding;
      }
      if (!flags.empty()) flags += ';';
      flags += std::string(name) + (ok ? "=pass" : "=fail");
    };
    flag("kappa", &SweepRecord::err_kappa);
    flag("pi", &SweepRecord::err_pi);
    flag("Lstar", &SweepRecord::err_Lstar);
    flag("excess", &SweepRecord::err_excess);
    rec.pass_flags = flags.empty() ? (r.pass ? "pass" : "fail") : flags;
  }
  return r;
}

void write_sweep_csv(std::ostream& os, const SweepReport& report) {
  CsvWriter w(os);
  w.header({"limit_kind", "p", "L0", "u_p", "err_kappa", "err_pi", "err_Lstar", "pass_flags"});
  for (const SweepRecord& rec : report.records) {
    w.field(to_string(report.kind)).field(rec.p);
    if (rec.solved) {
      w.field(rec.L0).field(rec.u_p);
    } else {
      w.empty_field().empty_field();
    }
    w.field(format_metric(rec.err_kappa)).field(format_metric(rec.err_pi)).field(format_metric(rec.err_Lstar));
    w.field(rec.pass_flags.empty() ? std::string(rec.solved ? "unchecked" : "solver_failed") : rec.pass_flags);
    w.end_row();
  }
}

}  // namespace rra
