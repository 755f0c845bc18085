// Dense strictly convex QP by the Goldfarb-Idnani dual active-set method:
//
//   minimize    0.5 x'Gx + g'x
//   subject to  A_eq x  = b_eq
//               A_in x >= b_in
//
// G must be symmetric positive definite. Multipliers follow the convention
// Gx + g = A_eq' lambda + A_in' mu with mu >= 0.
#pragma once

#include <Eigen/Dense>

namespace gaslift {

struct QPProblem {
  Eigen::MatrixXd G;
  Eigen::VectorXd g;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
};

enum class QPStatus { Optimal, Infeasible, NotConvex, DependentEqualities };

const char* to_string(QPStatus s);

struct QPResult {
  QPStatus status = QPStatus::Optimal;
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;  // equality multipliers
  Eigen::VectorXd mu;      // inequality multipliers, zero for inactive rows
  double objective = 0.0;
  int iterations = 0;
};

QPResult solve_qp(const QPProblem& qp);

}  // namespace gaslift
