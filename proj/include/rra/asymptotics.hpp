#pragma once

#include "rra/market.hpp"
#include "rra/opportunity.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace rra {

enum class LimitKind { neg_infinity, zero_minus, zero_plus, exponential };

std::string to_string(LimitKind kind);
LimitKind parse_limit_kind(const std::string& text);

// Monte Carlo settings shared by every p of a sweep.
struct SimConfig {
  std::size_t n_paths = 50000;
  std::size_t n_steps = 50;
  std::uint64_t seed = 0;
  LsmcOptions solver;
  // auto: ODE on deterministic markets, LSMC otherwise.
  std::string method = "auto";
};

// An error estimate and its Monte Carlo standard error. NaN marks a metric
// that does not apply to the sweep.
struct Metric {
  double value = 0.0;
  double se = 0.0;
  bool defined() const;
};

struct SweepRecord {
  double p = 0.0;
  double L0 = 0.0;
  double L0_se = 0.0;
  double u_p = 0.0;
  Metric err_kappa;
  Metric err_pi;
  Metric err_Lstar;
  // Relative sup-grid wealth error against x0 (1+T-t)/(1+T).
  Metric err_wealth;
  // Excess hedging demand pi(p) - pi(p; D = 1) against Z^eta/eta.
  Metric err_excess;
  bool solved = false;
  std::string error;
  std::string pass_flags;
  std::size_t floor_count = 0;
  bool reliable = true;
  OpportunitySolution solution;
};

// Records are stored in ascending p; `order` lists record indices from the
// grid point farthest from the limit to the closest.
struct SweepReport {
  LimitKind kind = LimitKind::neg_infinity;
  std::vector<double> p_grid;
  std::vector<SweepRecord> records;
  std::vector<std::size_t> order;
  std::vector<double> time_grid;
  std::string market_fingerprint;
  std::uint64_t seed = 0;
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  ConsumptionMode consumption = ConsumptionMode::terminal_only;
  bool deterministic = true;
  double k1 = 1.0;
  std::optional<EtaProcess> eta;
  std::optional<ExponentialSolution> exponential;
};

struct CheckResult {
  bool pass = true;
  std::vector<std::string> diagnostics;
};

// Solves every p on one shared path bundle and measures the distance to the
// limit objects of `kind`. Per-p solver failures are recorded, not thrown.
SweepReport sweep(const MarketModel& market, std::vector<double> p_grid, LimitKind kind, const SimConfig& sim);

// Error sequence ordered toward the limit passes when each entry is at most
// 110% of its predecessor and the last lies within 3 SE of the minimum.
CheckResult check_monotone(const std::vector<Metric>& errors, const std::string& name);

CheckResult check_neg_infinity(const SweepReport& report);
CheckResult check_exponential(const SweepReport& report, const ExponentialSolution& exp_sol);
CheckResult check_zero(const SweepReport& report, const EtaProcess& eta);

// Runs the check matching report.kind and writes per-record flags.
CheckResult check_report(SweepReport& report);

// Rows (limit_kind, p, L0, u_p, err_kappa, err_pi, err_Lstar, pass_flags) in
// ascending p; inapplicable metrics are left blank.
void write_sweep_csv(std::ostream& os, const SweepReport& report);

std::string market_fingerprint(const MarketModel& market);

}  // namespace rra
