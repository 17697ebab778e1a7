#include "rra/market.hpp"

#include "rra/error.hpp"
#include "rra/parallel.hpp"
#include "rra/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <new>
#include <random>
#include <set>

namespace rra {

RiskAversionParams RiskAversionParams::from_p(double p) {
  if (!std::isfinite(p) || p == 0.0 || p >= 1.0) {
    throw ValidationError("risk aversion exponent p must lie in (-inf,0) or (0,1), got " +
                          std::to_string(p));
  }
  return RiskAversionParams(p, p / (p - 1.0), 1.0 / (1.0 - p));
}

std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::no_trade: return "no_trade";
    case ModelFamily::merton: return "merton";
    case ModelFamily::one_factor: return "one_factor";
    case ModelFamily::custom: return "custom";
  }
  return "custom";
}

std::string to_string(ConsumptionMode mode) {
  return mode == ConsumptionMode::intermediate ? "intermediate" : "terminal_only";
}

ConsumptionMode parse_consumption_mode(const std::string& text) {
  if (text == "intermediate") return ConsumptionMode::intermediate;
  if (text == "terminal_only") return ConsumptionMode::terminal_only;
  throw ValidationError("model.consumption must be terminal_only or intermediate, got '" + text + "'");
}

double MarketModel::weight(double t, double y) const { return std::clamp(d_fn(t, y), k1, k2); }

double MarketModel::remaining_mass(double t) const {
  return intermediate() ? 1.0 + horizon - t : 1.0;
}

void MarketModel::validate() const {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon T must be positive");
  if (!(x0 > 0.0) || !std::isfinite(x0)) throw ValidationError("initial capital x0 must be positive");
  if (!(k1 > 0.0) || !(k2 >= k1) || !std::isfinite(k2)) {
    throw ValidationError("weight bounds must satisfy 0 < k1 <= k2");
  }
  if (!lambda_fn || !sigma_fn || !d_fn) throw ValidationError("market coefficient function missing");
  if (factor) {
    if (!(std::abs(factor->rho) < 1.0)) throw ValidationError("factor correlation must satisfy |rho| < 1");
    if (!(factor->vol >= 0.0)) throw ValidationError("factor volatility must be non-negative");
    if (!(factor->speed >= 0.0)) throw ValidationError("factor reversion speed must be non-negative");
  }
  if (dim == 0) return;
  const double y = reference_state();
  const Eigen::MatrixXd s = sigma(0.0, y);
  if (s.rows() != static_cast<Eigen::Index>(dim) || s.cols() != static_cast<Eigen::Index>(dim)) {
    throw ValidationError("volatility matrix has wrong shape");
  }
  if (lambda(0.0, y).size() != static_cast<Eigen::Index>(dim)) {
    throw ValidationError("market price of risk has wrong dimension");
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(s);
  lu.setThreshold(1e-12);
  if (lu.rank() < static_cast<Eigen::Index>(dim)) throw ValidationError("singular volatility matrix");
}

namespace {

const std::set<std::string> kCommonKeys = {"model.family", "model.horizon", "model.consumption",
                                           "model.x0"};

std::set<std::string> family_keys(const std::string& family) {
  std::set<std::string> keys = kCommonKeys;
  if (family == "no_trade") {
    keys.insert("model.d_level");
  } else if (family == "merton") {
    keys.insert({"model.drift", "model.vol", "model.d_level"});
  } else if (family == "one_factor") {
    keys.insert({"model.vol", "model.lambda_bar", "model.gamma", "model.factor_level",
                 "model.factor_speed", "model.factor_vol", "model.rho", "model.factor_y0",
                 "model.delta", "model.k1", "model.k2", "model.exact_ou"});
  } else {
    throw ValidationError("unknown model family '" + family + "'");
  }
  return keys;
}

void require_positive(double v, const std::string& what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(what + " must be positive");
}

}  // namespace

std::vector<std::string> market_keys(const std::string& family) {
  const auto keys = family_keys(family);
  return {keys.begin(), keys.end()};
}

MarketModel build_market(const KeyValueConfig& config) {
  const std::string family = config.get_string("model.family");
  const auto allowed = family_keys(family);
  for (const auto& key : config.keys()) {
    if (key.rfind("model.", 0) == 0 && !allowed.count(key)) {
      throw ValidationError("config key '" + key + "' is not used by model family '" + family + "'");
    }
  }

  MarketModel m;
  m.horizon = config.get_double("model.horizon");
  require_positive(m.horizon, "model.horizon");
  m.consumption = parse_consumption_mode(config.get_string("model.consumption"));
  m.x0 = config.get_double("model.x0", 1.0);
  require_positive(m.x0, "model.x0");

  if (family == "no_trade") {
    m.family = ModelFamily::no_trade;
    const double level = config.get_double("model.d_level", 1.0);
    require_positive(level, "model.d_level");
    m.dim = 0;
    m.lambda_fn = [](double, double) { return Eigen::VectorXd(0); };
    m.sigma_fn = [](double, double) { return Eigen::MatrixXd(0, 0); };
    m.d_fn = [level](double, double) { return level; };
    m.k1 = m.k2 = level;
  } else if (family == "merton") {
    m.family = ModelFamily::merton;
    const auto drift = config.get_list("model.drift");
    const auto vol = config.get_list("model.vol");
    if (drift.size() != vol.size()) {
      throw ValidationError("model.drift and model.vol must list the same number of assets");
    }
    const double level = config.get_double("model.d_level", 1.0);
    require_positive(level, "model.d_level");
    m.dim = drift.size();
    Eigen::VectorXd lambda(m.dim);
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(m.dim, m.dim);
    for (std::size_t i = 0; i < m.dim; ++i) {
      if (!(vol[i] > 0.0) || !std::isfinite(vol[i])) {
        throw ValidationError("singular volatility: model.vol entries must be positive");
      }
      sigma(i, i) = vol[i];
      lambda(i) = drift[i] / (vol[i] * vol[i]);
    }
    m.lambda_fn = [lambda](double, double) { return lambda; };
    m.sigma_fn = [sigma](double, double) { return sigma; };
    m.d_fn = [level](double, double) { return level; };
    m.k1 = m.k2 = level;
  } else {
    m.family = ModelFamily::one_factor;
    m.dim = 1;
    const double vol = config.get_double("model.vol");
    if (!(vol > 0.0) || !std::isfinite(vol)) throw ValidationError("singular volatility: model.vol must be positive");
    const double lambda_bar = config.get_double("model.lambda_bar");
    const double gamma = config.get_double("model.gamma", 0.0);
    const double delta = config.get_double("model.delta", 0.0);
    FactorDynamics f;
    f.level = config.get_double("model.factor_level", 0.0);
    f.speed = config.get_double("model.factor_speed");
    f.vol = config.get_double("model.factor_vol");
    f.rho = config.get_double("model.rho", 0.0);
    f.initial = config.get_double("model.factor_y0", f.level);
    f.exact_transition = config.get_bool("model.exact_ou", true);
    if (!(std::abs(f.rho) < 1.0)) throw ValidationError("model.rho must satisfy |rho| < 1");
    if (f.vol < 0.0) throw ValidationError("model.factor_vol must be non-negative");
    if (f.speed < 0.0) throw ValidationError("model.factor_speed must be non-negative");
    m.factor = f;
    m.k1 = config.get_double("model.k1", 1.0);
    m.k2 = config.get_double("model.k2", 1.0);
    if (m.k1 > m.k2) throw ValidationError("model.k1 must not exceed model.k2");
    require_positive(m.k1, "model.k1");
    m.lambda_fn = [lambda_bar, gamma](double, double y) {
      return Eigen::VectorXd::Constant(1, lambda_bar + gamma * y);
    };
    m.sigma_fn = [vol](double, double) { return Eigen::MatrixXd::Constant(1, 1, vol); };
    m.d_fn = [delta](double, double y) { return std::exp(delta * y); };
    m.deterministic = gamma == 0.0 && delta == 0.0;
  }
  m.constant_volatility = true;
  m.validate();
  return m;
}

std::vector<double> uniform_grid(double horizon, std::size_t n_steps) {
  std::vector<double> grid(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) {
    grid[k] = horizon * static_cast<double>(k) / static_cast<double>(n_steps);
  }
  grid[n_steps] = horizon;
  return grid;
}

PathBundle simulate(const MarketModel& market, std::size_t n_paths, std::size_t n_steps,
                    std::uint64_t seed) {
  if (n_paths < 2) throw ValidationError("simulate: n_paths must be at least 2");
  if (n_steps < 1) throw ValidationError("simulate: n_steps must be at least 1");
  market.validate();
  const std::size_t d = market.dim;
  const auto fields = d * 2 + 4;
  if (n_paths > std::numeric_limits<std::size_t>::max() / (n_steps + 1) / fields / sizeof(double)) {
    throw ResourceError("simulate: requested ensemble size overflows addressable memory");
  }

  PathBundle b;
  b.time_grid = uniform_grid(market.horizon, n_steps);
  b.n_paths = n_paths;
  b.n_steps = n_steps;
  b.dim = d;
  b.seed = seed;
  const auto rows = static_cast<Eigen::Index>(n_paths);
  const auto steps = static_cast<Eigen::Index>(n_steps);
  try {
    b.dW.assign(d, Field(rows, steps));
    b.dR.assign(d, Field(rows, steps));
    b.D = Field(rows, steps + 1);
    if (market.factor) {
      b.factor = Field(rows, steps + 1);
      b.dW_factor = Field(rows, steps);
    }
  } catch (const std::bad_alloc&) {
    throw ResourceError("simulate: out of memory allocating " + std::to_string(n_paths) + " x " +
                        std::to_string(n_steps + 1) + " path arrays");
  }

  const double dt = market.horizon / static_cast<double>(n_steps);
  const double sqrt_dt = std::sqrt(dt);
  const bool constant_sigma = market.constant_volatility;
  const Eigen::MatrixXd sigma0 = d > 0 ? market.sigma(0.0, market.reference_state()) : Eigen::MatrixXd();

  parallel_for(n_paths, [&](std::size_t begin, std::size_t end) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(d));
    for (std::size_t i = begin; i < end; ++i) {
      CounterRng rng(seed, i);
      std::normal_distribution<double> normal(0.0, 1.0);
      const auto row = static_cast<Eigen::Index>(i);
      double y = market.reference_state();
      for (Eigen::Index k = 0; k < steps; ++k) {
        const double t = b.time_grid[static_cast<std::size_t>(k)];
        if (market.factor) b.factor.at(row, k) = y;
        b.D.at(row, k) = market.weight(t, y);

        for (std::size_t j = 0; j < d; ++j) z(static_cast<Eigen::Index>(j)) = normal(rng) * sqrt_dt;
        if (d > 0) {
          const Eigen::MatrixXd sigma = constant_sigma ? sigma0 : market.sigma(t, y);
          const Eigen::VectorXd lambda = market.lambda(t, y);
          const Eigen::VectorXd drift = sigma * (sigma.transpose() * lambda) * dt;
          const Eigen::VectorXd dr = drift + sigma * z;
          for (std::size_t j = 0; j < d; ++j) {
            b.dW[j].at(row, k) = z(static_cast<Eigen::Index>(j));
            b.dR[j].at(row, k) = dr(static_cast<Eigen::Index>(j));
          }
        }
        if (market.factor) {
          const FactorDynamics& f = *market.factor;
          const double perp = normal(rng) * sqrt_dt;
          const double asset = d > 0 ? z(0) : 0.0;
          const double dB = f.rho * asset + std::sqrt(1.0 - f.rho * f.rho) * perp;
          b.dW_factor.at(row, k) = dB;
          if (f.exact_transition && f.speed > 0.0) {
            const double decay = std::exp(-f.speed * dt);
            const double sd = f.vol * std::sqrt((1.0 - decay * decay) / (2.0 * f.speed));
            y = f.level + (y - f.level) * decay + sd * dB / sqrt_dt;
          } else {
            y += f.speed * (f.level - y) * dt + f.vol * dB;
          }
        }
      }
      if (market.factor) b.factor.at(row, steps) = y;
      b.D.at(row, steps) = market.weight(market.horizon, y);
    }
  });
  return b;
}

}  // namespace rra
