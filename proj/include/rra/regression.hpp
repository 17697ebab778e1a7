#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <utility>
#include <vector>

namespace rra {

// Sample quantiles at `tail` and 1 - `tail`; (lowest, highest) below 200 values.
std::pair<double, double> central_range(const Eigen::Ref<const Eigen::VectorXd>& x, double tail = 0.005);

// Least-squares projection onto polynomials of a scalar state at one time
// step: the conditional-expectation estimator of the backward solvers.
// Coefficients are fitted on the paths whose state lies in its central_range;
// beyond it the polynomial is held flat. The state is standardized before the
// monomials are formed; a degenerate (constant) state falls back to the
// constant basis.
class StepRegression {
 public:
  // `state` may be empty, meaning no state variable (constant basis only).
  // Columns of `extra` are appended as further regressors (standardized;
  // dropped when constant or when less than 1% of their spread lies outside
  // the span of the earlier columns). Throws SolverError (carrying `step`) if
  // the design matrix is rank deficient.
  StepRegression(const Eigen::Ref<const Eigen::VectorXd>& state, Eigen::Index n_paths, int degree,
                 std::size_t step, const Eigen::MatrixXd& extra = Eigen::MatrixXd());

  const Eigen::MatrixXd& design() const { return design_; }

  Eigen::Index basis_size() const { return design_.cols(); }
  Eigen::Index n_paths() const { return design_.rows(); }

  Eigen::VectorXd coefficients(const Eigen::VectorXd& target) const;
  // Fitted conditional expectation at every path.
  Eigen::VectorXd fit(const Eigen::VectorXd& target) const;
  // Standard error of the fitted value at every path: s * sqrt(h_i), with s
  // the residual standard deviation and h_i the leverage.
  Eigen::VectorXd fitted_se(const Eigen::VectorXd& target, const Eigen::VectorXd& fitted) const;

 private:
  Eigen::MatrixXd fitted_rows(const Eigen::MatrixXd& m) const;

  Eigen::MatrixXd design_;
  std::vector<Eigen::Index> rows_;  // fitting rows; empty means all
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
  Eigen::VectorXd leverage_;
};

}  // namespace rra
