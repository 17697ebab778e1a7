#include "rra/cli.hpp"

#include "CLI11.hpp"
#include "rra/asymptotics.hpp"
#include "rra/config.hpp"
#include "rra/csv.hpp"
#include "rra/error.hpp"
#include "rra/market.hpp"
#include "rra/opportunity.hpp"
#include "rra/parallel.hpp"
#include "rra/properties.hpp"
#include "rra/strategy.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

namespace rra {

namespace {

namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::string out;
  std::optional<double> p;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

const std::set<std::string> kRunKeys = {
    "sim.n_paths",     "sim.n_steps",      "sim.seed",     "solver.basis_degree", "solver.picard_iters",
    "solver.floor_eps", "solver.method",   "solver.p",     "sweep.limit_kind",    "sweep.p_grid",
    "check.slack_se",  "check.p_grid",     "output.dir"};

struct Setup {
  KeyValueConfig cfg;
  std::optional<MarketModel> market;
  SimConfig sim;
  fs::path out;
};

KeyValueConfig load_config(const Flags& f) {
  if (f.config.empty()) throw ValidationError("--config is required");
  if (!fs::exists(f.config)) throw ValidationError("config file '" + f.config + "' not found");
  return KeyValueConfig::load(f.config);
}

void reject_unknown_keys(const KeyValueConfig& cfg) {
  std::set<std::string> allowed = kRunKeys;
  if (cfg.has("model.family")) {
    for (const auto& k : market_keys(cfg.get_string("model.family"))) allowed.insert(k);
  }
  cfg.reject_unknown(allowed);
}

std::uint64_t parse_seed(std::string_view text, const std::string& what) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ValidationError(what + ": '" + std::string(text) + "' is not an unsigned integer");
  }
  return v;
}

std::uint64_t resolve_seed(const KeyValueConfig& cfg, const Flags& f) {
  if (f.seed) return *f.seed;
  if (cfg.has("sim.seed")) return cfg.get_u64("sim.seed");
  if (const char* env = std::getenv("RRA_SEED"); env != nullptr && *env != '\0') return parse_seed(env, "RRA_SEED");
  throw ValidationError("missing seed: pass --seed, set sim.seed or RRA_SEED");
}

fs::path resolve_out(const KeyValueConfig* cfg, const Flags& f, bool create) {
  std::string dir = f.out;
  if (dir.empty() && cfg != nullptr && cfg->has("output.dir")) dir = cfg->get_string("output.dir");
  if (dir.empty()) throw ValidationError("missing output directory: pass --out or set output.dir");
  const fs::path out(dir);
  if (!create) {
    if (!fs::is_directory(out)) throw ValidationError("output directory '" + dir + "' does not exist");
    return out;
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ValidationError("output directory '" + dir + "' cannot be created");
  return out;
}

std::size_t positive_count(const KeyValueConfig& cfg, const std::string& key, long long min) {
  const long long v = cfg.get_int(key);
  if (v < min) throw ValidationError(key + " must be at least " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

Setup setup(const Flags& f, bool need_solver) {
  Setup s{load_config(f), std::nullopt, {}, {}};
  s.market = build_market(s.cfg);
  reject_unknown_keys(s.cfg);
  s.sim.n_paths = positive_count(s.cfg, "sim.n_paths", 2);
  s.sim.n_steps = positive_count(s.cfg, "sim.n_steps", 1);
  s.sim.seed = resolve_seed(s.cfg, f);
  if (need_solver) {
    s.sim.solver.basis_degree = static_cast<int>(s.cfg.get_int("solver.basis_degree", 3));
    s.sim.solver.picard_iters = static_cast<int>(s.cfg.get_int("solver.picard_iters", 3));
    s.sim.solver.floor_eps = s.cfg.get_double("solver.floor_eps", 1e-6);
    s.sim.method = s.cfg.get_string("solver.method", "auto");
    if (s.sim.solver.basis_degree < 0) throw ValidationError("solver.basis_degree must be nonnegative");
    if (s.sim.solver.picard_iters < 1) throw ValidationError("solver.picard_iters must be at least 1");
    if (!(s.sim.solver.floor_eps > 0.0)) throw ValidationError("solver.floor_eps must be positive");
  }
  s.out = resolve_out(&s.cfg, f, true);
  return s;
}

bool use_ode(const MarketModel& market, const std::string& method) {
  if (method == "auto") return market.deterministic;
  if (method == "lsmc") return false;
  if (method == "ode") {
    if (!market.deterministic) throw ValidationError("solver.method = ode requires a deterministic market");
    return true;
  }
  throw ValidationError("solver.method must be auto, ode or lsmc");
}

OpportunitySolution solve_at(const MarketModel& market, double p, const PathBundle& paths, const SimConfig& sim) {
  const auto params = RiskAversionParams::from_p(p);
  try {
    return use_ode(market, sim.method) ? solve_ode(market, params, paths.time_grid)
                                       : solve_lsmc(market, params, paths, sim.solver);
  } catch (const SolverError& e) {
    throw SolverError("p = " + format_number(p) + ": " + e.what(), e.step());
  }
}

std::string p_label(double p) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%g", p);
  return std::string(buf, static_cast<std::size_t>(n));
}

template <class Write>
void write_file(const fs::path& path, Write&& write) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write '" + path.string() + "'");
  write(os);
  os.flush();
  if (!os) throw ValidationError("write to '" + path.string() + "' failed");
  std::cout << "wrote " << path.string() << '\n';
}

// Rows (path_id, t, R_1..R_d, [Y], D) with cumulative returns R.
void write_paths_csv(std::ostream& os, const PathBundle& b) {
  CsvWriter w(os);
  std::vector<std::string> head{"path_id", "t"};
  for (std::size_t j = 0; j < b.dim; ++j) head.push_back("R_" + std::to_string(j + 1));
  if (b.has_factor()) head.push_back("Y");
  head.push_back("D");
  w.header(head);
  std::vector<double> R(b.dim);
  for (std::size_t i = 0; i < b.n_paths; ++i) {
    std::fill(R.begin(), R.end(), 0.0);
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k <= b.n_steps; ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      if (k > 0) {
        for (std::size_t j = 0; j < b.dim; ++j) R[j] += b.dR[j](r, c - 1);
      }
      w.field(static_cast<std::uint64_t>(i)).field(b.time_grid[k]);
      for (double v : R) w.field(v);
      if (b.has_factor()) w.field(b.factor(r, c));
      w.field(b.D(r, c));
      w.end_row();
    }
  }
}

int cmd_simulate(const Flags& f) {
  const Setup s = setup(f, false);
  const PathBundle paths = simulate(*s.market, s.sim.n_paths, s.sim.n_steps, s.sim.seed);
  write_file(s.out / "paths.csv", [&](std::ostream& os) { write_paths_csv(os, paths); });
  return exit_ok;
}

int cmd_solve(const Flags& f) {
  const Setup s = setup(f, true);
  if (!f.p && !s.cfg.has("solver.p")) throw ValidationError("missing exponent: pass --p or set solver.p");
  const double p = f.p ? *f.p : s.cfg.get_double("solver.p");
  RiskAversionParams::from_p(p);
  const PathBundle paths = simulate(*s.market, s.sim.n_paths, s.sim.n_steps, s.sim.seed);
  const OpportunitySolution sol = solve_at(*s.market, p, paths, s.sim);
  const StrategyProfile profile = build_profile(sol, *s.market, paths);
  const std::string label = p_label(p);
  write_file(s.out / ("opportunity_p" + label + ".csv"), [&](std::ostream& os) { write_opportunity_csv(os, sol); });
  write_file(s.out / ("strategy_p" + label + ".csv"), [&](std::ostream& os) { write_strategy_csv(os, profile); });
  std::cout << "p = " << format_number(p) << ", L0 = " << format_number(sol.L.matrix().col(0).mean())
            << ", u = " << format_number(sol.L.matrix().col(0).mean() * std::pow(s.market->x0, p) / p) << '\n';
  return exit_ok;
}

std::vector<double> default_grid(LimitKind kind) {
  switch (kind) {
    case LimitKind::zero_minus: return {-0.4, -0.2, -0.1, -0.05};
    case LimitKind::zero_plus: return {0.05, 0.1, 0.2, 0.4};
    default: return {-32.0, -16.0, -8.0, -4.0, -2.0};
  }
}

int cmd_sweep(const Flags& f) {
  const Setup s = setup(f, true);
  const LimitKind kind = parse_limit_kind(s.cfg.get_string("sweep.limit_kind"));
  const std::vector<double> grid = s.cfg.has("sweep.p_grid") ? s.cfg.get_list("sweep.p_grid") : default_grid(kind);
  const std::size_t min_points = kind == LimitKind::neg_infinity ? 3 : 2;
  if (grid.size() < min_points) {
    throw ValidationError("sweep.p_grid needs at least " + std::to_string(min_points) + " entries for " +
                          to_string(kind));
  }
  SweepReport rep = sweep(*s.market, grid, kind, s.sim);
  const CheckResult res = check_report(rep);
  write_file(s.out / ("sweep_" + to_string(kind) + ".csv"), [&](std::ostream& os) { write_sweep_csv(os, rep); });

  bool solver_failed = false;
  for (const SweepRecord& r : rep.records) {
    if (!r.solved) {
      solver_failed = true;
      std::cerr << "solver failure: " << r.error << '\n';
    }
  }
  if (solver_failed) return exit_solver;
  for (const auto& d : res.diagnostics) std::cerr << "check: " << d << '\n';
  std::cout << to_string(kind) << ": " << (res.pass ? "pass" : "fail") << '\n';
  return res.pass ? exit_ok : exit_property;
}

void append(std::vector<CheckRow>& into, std::vector<CheckRow> rows) {
  into.insert(into.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
}

int cmd_check(const Flags& f) {
  const Setup s = setup(f, true);
  const MarketModel& market = *s.market;
  PropertyOptions opt;
  opt.slack_se = s.cfg.get_double("check.slack_se", 3.0);
  if (!(opt.slack_se >= 0.0)) throw ValidationError("check.slack_se must be nonnegative");
  opt.solver = s.sim.solver;

  std::vector<double> grid =
      s.cfg.has("check.p_grid") ? s.cfg.get_list("check.p_grid") : std::vector<double>{-4.0, -2.0, -1.0, 0.25, 0.5};
  std::sort(grid.begin(), grid.end());
  if (std::adjacent_find(grid.begin(), grid.end()) != grid.end()) {
    throw ValidationError("check.p_grid has duplicate entries");
  }
  for (double p : grid) RiskAversionParams::from_p(p);

  const PathBundle paths = simulate(market, s.sim.n_paths, s.sim.n_steps, s.sim.seed);
  const PathBundle* pp = use_ode(market, s.sim.method) ? nullptr : &paths;
  std::vector<OpportunitySolution> sols;
  for (double p : grid) sols.push_back(solve_at(market, p, paths, s.sim));

  std::vector<CheckRow> rows;
  for (std::size_t i = 0; i + 1 < sols.size(); ++i) {
    append(rows, check_comparison_dual(sols[i], sols[i + 1], market, pp, opt));
  }
  std::vector<const OpportunitySolution*> negative;
  for (const auto& sol : sols) {
    if (sol.params.p() < 0.0) negative.push_back(&sol);
  }
  if (negative.size() >= 2) append(rows, check_pure_investment_monotone(negative, market, pp, opt));
  for (const auto& sol : sols) append(rows, check_opportunity_bounds(sol, market, pp, opt));
  if (!negative.empty()) {
    const OpportunitySolution& sol = *negative.back();
    const DualDensity dd = dual_density(sol, market, paths);
    const PhiCurve curve = phi_curve(dd.Y_norm, 0, paths.n_steps, {0.1, 0.3, 0.5, 0.7, 0.9});
    append(rows, check_phi_monotone(curve, sol.params.p()));
  }
  for (const OpportunitySolution* sol : negative) {
    const QuadVarDiagnostic qv = quad_var_diagnostic(*sol, market, paths, opt.solver);
    append(rows, check_quad_var(qv, "qv_L", sol->params.p(), opt));
    if (!market.intermediate()) append(rows, check_lambda_bmo_proxy(*sol, market, paths, qv, opt));
  }

  write_file(s.out / "checks.csv", [&](std::ostream& os) { write_checks_csv(os, rows); });
  std::set<std::string> failed;
  for (const CheckRow& r : rows) {
    if (!r.pass) failed.insert(r.check_name);
  }
  for (const auto& name : failed) std::cerr << "check failed: " << name << '\n';
  std::cout << "checks: " << rows.size() << " rows, " << (failed.empty() ? "all pass" : "failures") << '\n';
  return failed.empty() ? exit_ok : exit_property;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("table has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

Table read_table(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read '" + path.string() + "'");
  Table t;
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("'" + path.string() + "' is empty");
  t.header = split_csv_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) throw ValidationError("'" + path.string() + "' has a ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

// Per-t path averages of the named columns.
void emit_means(CsvWriter& w, const std::string& source, const std::string& p, const Table& t,
                const std::vector<std::string>& columns) {
  const std::size_t tc = t.column("t");
  for (const auto& name : columns) {
    const std::size_t c = t.column(name);
    std::map<double, std::pair<double, std::size_t>> acc;
    std::map<double, std::string> text;
    for (const auto& row : t.rows) {
      const double time = parse_double(row[tc], "t");
      auto& a = acc[time];
      a.first += parse_double(row[c], name);
      ++a.second;
      text.emplace(time, row[tc]);
    }
    for (const auto& [time, a] : acc) {
      w.field(source).empty_field().field(p).field(text[time]).field(name + "_mean");
      w.field(a.first / static_cast<double>(a.second));
      w.end_row();
    }
  }
}

int cmd_report(const Flags& f) {
  std::optional<KeyValueConfig> cfg;
  if (!f.config.empty()) {
    cfg = load_config(f);
    reject_unknown_keys(*cfg);
  }
  const fs::path dir = resolve_out(cfg ? &*cfg : nullptr, f, false);
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path& p = entry.path();
    if (entry.is_regular_file() && p.extension() == ".csv" && p.filename() != "report_long.csv" &&
        p.filename() != "paths.csv") {
      inputs.push_back(p);
    }
  }
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw ValidationError("no tables to aggregate in '" + dir.string() + "'");

  std::size_t used = 0;
  write_file(dir / "report_long.csv", [&](std::ostream& os) {
    CsvWriter w(os);
    w.header({"source", "limit_kind", "p", "t", "metric", "value"});
    for (const fs::path& path : inputs) {
      const std::string source = path.filename().string();
      const std::string stem = path.stem().string();
      if (stem.rfind("sweep_", 0) == 0) {
        const Table t = read_table(path);
        const std::size_t kc = t.column("limit_kind");
        const std::size_t pc = t.column("p");
        for (const auto& row : t.rows) {
          for (const char* m : {"L0", "u_p", "err_kappa", "err_pi", "err_Lstar"}) {
            const std::string& v = row[t.column(m)];
            if (v.empty()) continue;
            w.field(source).field(row[kc]).field(row[pc]).empty_field().field(m).field(v);
            w.end_row();
          }
        }
      } else if (stem == "checks") {
        const Table t = read_table(path);
        const std::size_t nc = t.column("check_name");
        for (const auto& row : t.rows) {
          for (const char* m : {"lhs", "rhs", "slack"}) {
            w.field(source).empty_field().field(row[t.column("p")]).field(row[t.column("t")]);
            w.field(row[nc] + "." + m).field(row[t.column(m)]);
            w.end_row();
          }
          w.field(source).empty_field().field(row[t.column("p")]).field(row[t.column("t")]);
          w.field(row[nc] + ".pass").field(row[t.column("pass")] == "true" ? "1" : "0");
          w.end_row();
        }
      } else if (stem.rfind("opportunity_p", 0) == 0) {
        emit_means(w, source, stem.substr(13), read_table(path), {"L"});
      } else if (stem.rfind("strategy_p", 0) == 0) {
        const Table t = read_table(path);
        std::vector<std::string> cols;
        for (const auto& h : t.header) {
          if (h != "path_id" && h != "t") cols.push_back(h);
        }
        emit_means(w, source, stem.substr(10), t, cols);
      } else {
        continue;
      }
      ++used;
    }
  });
  std::cout << "aggregated " << used << " tables\n";
  return exit_ok;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Optimal investment and consumption under power utility", "rra"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  double p = 0.0;
  std::uint64_t seed = 0;
  app.add_option("--config", f.config, "Run configuration (section.key = value lines)");
  app.add_option("--out", f.out, "Output directory");
  auto* p_opt = app.add_option("--p", p, "Utility exponent p, overrides solver.p");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed, overrides sim.seed and RRA_SEED");
  app.add_option("--threads", f.threads, "Worker threads (0 = all cores)");
  auto* simulate_cmd = app.add_subcommand("simulate", "Write simulated paths");
  auto* solve_cmd = app.add_subcommand("solve", "Solve for one p and write opportunity and strategy tables");
  auto* sweep_cmd = app.add_subcommand("sweep", "Risk-aversion sweep toward a limit");
  auto* check_cmd = app.add_subcommand("check", "Run the inequality suite");
  auto* report_cmd = app.add_subcommand("report", "Aggregate tables into long format");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_validation;
  }
  if (p_opt->count() > 0) f.p = p;
  if (seed_opt->count() > 0) f.seed = seed;

  try {
    set_thread_count(f.threads);
    if (simulate_cmd->parsed()) return cmd_simulate(f);
    if (solve_cmd->parsed()) return cmd_solve(f);
    if (sweep_cmd->parsed()) return cmd_sweep(f);
    if (check_cmd->parsed()) return cmd_check(f);
    if (report_cmd->parsed()) return cmd_report(f);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_validation;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return exit_solver;
  } catch (const ResourceError& e) {
    std::cerr << "resource error: " << e.what() << '\n';
    return exit_solver;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_validation;
  }
  return exit_validation;
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("rra");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run(static_cast<int>(storage.size()), argv.data());
}

}  // namespace rra
