#pragma once

#include <Eigen/Dense>

#include <string>

namespace bilevel {

/// Dense convex QP:  min 1/2 x'Px + q'x  s.t.  Ax = b,  Gx <= h.
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
};

struct QpOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;
};

struct QpResult {
  Eigen::VectorXd x;
  bool converged = false;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double duality_gap = 0.0;
  std::string message;
};

/// Mehrotra predictor-corrector interior-point method on the dense KKT system.
QpResult solve_qp(const QpProblem& problem, const QpOptions& options = {});

}  // namespace bilevel
