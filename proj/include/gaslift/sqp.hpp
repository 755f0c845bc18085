// Dense SQP: exact first derivatives, damped BFGS Hessian, l1 merit with
// Armijo backtracking. Inequalities are c_in(x) >= 0.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gaslift {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

struct NLProblem {
  int n = 0;
  int m_eq = 0;
  int m_in = 0;
  /// Returns f(x); fills the gradient when the pointer is non-null.
  std::function<double(const VecX& x, VecX* grad)> objective;
  /// Fills c(x) and, when requested, the m x n Jacobian.
  std::function<void(const VecX& x, VecX& c, MatX* jac)> equalities;
  std::function<void(const VecX& x, VecX& c, MatX* jac)> inequalities;
  VecX lower;
  VecX upper;
  VecX x0;
  /// Optional: re-solves the dependent variables of a trial point so the
  /// equalities hold again, leaving the free ones untouched. Returns false
  /// when it cannot.
  std::function<bool(VecX& x)> restore;
  /// Optional: a positive semidefinite curvature model (for least squares,
  /// the Gauss-Newton matrix) used in place of the quasi-Newton updates.
  std::function<MatX(const VecX& x)> hessian;

  void validate() const;
};

/// Starting matrix for the quasi-Newton updates on a cold start.
enum class HessianStart { Identity, FiniteDifference };

struct SolverConfig {
  double kkt_tol = 1e-8;
  int max_iter = 200;
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 30;
  double bfgs_damping = 0.2;
  bool second_order_correction = true;
  int max_corrections = 4;       // chained second-order corrections per iteration
  HessianStart hessian_start = HessianStart::Identity;
  bool record_iterates = false;

  void validate() const;
};

enum class SolveStatus { Success, MaxIterations, LineSearchFailure, InfeasibleQP, EvaluationFailure };

const char* to_string(SolveStatus s);

struct KKTResult {
  SolveStatus status = SolveStatus::EvaluationFailure;
  VecX x;
  VecX lambda_eq;
  VecX mu_in;
  VecX z_bounds;     // positive for active lower bounds, negative for upper
  double objective = 0.0;
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
  int iterations = 0;
  double wall_time_s = 0.0;
  MatX hessian;      // final quasi-Newton matrix, reusable as a warm start
  std::vector<VecX> iterates;

  bool ok() const { return status == SolveStatus::Success; }
};

/// Solves the problem. `initial_hessian` seeds the quasi-Newton matrix;
/// otherwise `cfg.hessian_start` decides.
KKTResult solve(const NLProblem& problem, const SolverConfig& cfg = {},
                const MatX* initial_hessian = nullptr);

}  // namespace gaslift
