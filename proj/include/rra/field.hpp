#pragma once

#include <Eigen/Dense>

#include <utility>

namespace rra {

// Values indexed by (path, grid index), stored column-major so that one time
// slice across all paths is contiguous. A field with a single row is
// deterministic and broadcasts to every path.
class Field {
 public:
  using Index = Eigen::Index;

  Field() = default;
  Field(Index rows, Index cols, double value = 0.0)
      : m_(Eigen::MatrixXd::Constant(rows, cols, value)) {}
  explicit Field(Eigen::MatrixXd m) : m_(std::move(m)) {}

  Index rows() const { return m_.rows(); }
  Index cols() const { return m_.cols(); }
  bool empty() const { return m_.size() == 0; }
  bool broadcasts() const { return m_.rows() == 1; }

  double operator()(Index path, Index k) const { return m_(broadcasts() ? 0 : path, k); }
  double& at(Index path, Index k) { return m_(path, k); }

  auto col(Index k) { return m_.col(k); }
  auto col(Index k) const { return m_.col(k); }

  const Eigen::MatrixXd& matrix() const { return m_; }
  Eigen::MatrixXd& matrix() { return m_; }

 private:
  Eigen::MatrixXd m_;
};

}  // namespace rra
