#include "rra/regression.hpp"

#include "rra/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace rra {

std::pair<double, double> central_range(const Eigen::Ref<const Eigen::VectorXd>& x, double tail) {
  if (x.size() == 0) return {0.0, 0.0};
  if (x.size() < 200) return {x.minCoeff(), x.maxCoeff()};
  std::vector<double> sorted(x.data(), x.data() + x.size());
  const auto lo_at = static_cast<std::ptrdiff_t>(tail * static_cast<double>(x.size()));
  const auto hi_at = static_cast<std::ptrdiff_t>(x.size()) - 1 - lo_at;
  std::nth_element(sorted.begin(), sorted.begin() + lo_at, sorted.end());
  const double lo = sorted[static_cast<std::size_t>(lo_at)];
  std::nth_element(sorted.begin(), sorted.begin() + hi_at, sorted.end());
  return {lo, sorted[static_cast<std::size_t>(hi_at)]};
}

StepRegression::StepRegression(const Eigen::Ref<const Eigen::VectorXd>& state, Eigen::Index n_paths,
                               int degree, std::size_t step, const Eigen::MatrixXd& extra) {
  if (degree < 0) throw ValidationError("basis degree must be non-negative");
  if (n_paths < 1) throw ValidationError("regression needs at least one path");

  int used_degree = 0;
  Eigen::VectorXd u;
  if (state.size() == n_paths && degree > 0) {
    const auto [lo, hi] = central_range(state);
    for (Eigen::Index i = 0; i < n_paths; ++i) {
      if (state(i) >= lo && state(i) <= hi) rows_.push_back(i);
    }
    if (rows_.size() == static_cast<std::size_t>(n_paths)) rows_.clear();
    const Eigen::VectorXd x = state.cwiseMax(lo).cwiseMin(hi);
    const double mean = x.mean();
    const double sd = std::sqrt((x.array() - mean).square().mean());
    if (sd > 1e-12 * (1.0 + std::abs(mean))) {
      u = (x.array() - mean) / sd;
      used_degree = degree;
    } else {
      rows_.clear();
    }
  }

  design_.resize(n_paths, used_degree + 1);
  design_.col(0).setOnes();
  for (int j = 1; j <= used_degree; ++j) design_.col(j) = design_.col(j - 1).cwiseProduct(u);

  // Extra columns enter only when at least 1% of their spread lies outside
  // the span of the columns already present.
  if (extra.rows() == n_paths) {
    for (Eigen::Index c = 0; c < extra.cols(); ++c) {
      const double mean = extra.col(c).mean();
      const double sd = std::sqrt((extra.col(c).array() - mean).square().mean());
      if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) continue;
      const Eigen::VectorXd z = (extra.col(c).array() - mean) / sd;
      const Eigen::MatrixXd a = fitted_rows(design_);
      const Eigen::VectorXd zc = fitted_rows(z);
      const Eigen::VectorXd resid = zc - a * a.colPivHouseholderQr().solve(zc);
      if (std::sqrt(resid.squaredNorm() / static_cast<double>(zc.size())) < 1e-2) continue;
      design_.conservativeResize(Eigen::NoChange, design_.cols() + 1);
      design_.col(design_.cols() - 1) = z;
    }
  }

  const Eigen::MatrixXd fitted_design = fitted_rows(design_);
  qr_.compute(fitted_design);
  qr_.setThreshold(1e-10);
  if (qr_.rank() < design_.cols() || fitted_design.rows() <= design_.cols()) {
    throw SolverError("regression design matrix numerically singular at step " + std::to_string(step),
                      step);
  }

  const Eigen::MatrixXd gram_inv = (fitted_design.transpose() * fitted_design)
                                       .ldlt()
                                       .solve(Eigen::MatrixXd::Identity(design_.cols(), design_.cols()));
  leverage_ = ((design_ * gram_inv).cwiseProduct(design_)).rowwise().sum();
}

Eigen::MatrixXd StepRegression::fitted_rows(const Eigen::MatrixXd& m) const {
  if (rows_.empty()) return m;
  return m(rows_, Eigen::placeholders::all);
}

Eigen::VectorXd StepRegression::coefficients(const Eigen::VectorXd& target) const {
  if (rows_.empty()) return qr_.solve(target);
  return qr_.solve(Eigen::VectorXd(target(rows_)));
}

Eigen::VectorXd StepRegression::fit(const Eigen::VectorXd& target) const {
  return design_ * coefficients(target);
}

Eigen::VectorXd StepRegression::fitted_se(const Eigen::VectorXd& target,
                                          const Eigen::VectorXd& fitted) const {
  const Eigen::VectorXd resid = target - fitted;
  const Eigen::VectorXd r = rows_.empty() ? resid : Eigen::VectorXd(resid(rows_));
  const double dof = static_cast<double>(r.size() - design_.cols());
  const double s2 = r.squaredNorm() / dof;
  return (leverage_.array() * s2).sqrt();
}

}  // namespace rra
