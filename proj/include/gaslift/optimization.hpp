// Economic problems on top of the SQP core: steady-state allocation, its
// brute-force grid verifier, and the collocation-based dynamic problem.
#pragma once

#include <array>
#include <utility>
#include <vector>

#include "gaslift/process_model.hpp"
#include "gaslift/sqp.hpp"

namespace gaslift {

struct EconomicSettings {
  Vec3 price = Vec3(20.0, 10.0, 30.0);   // weight per L/min of liquid
  double qg_min = 1.0;                   // sL/min
  double qg_max = 5.0;
  double qg_total_max = 7.5;
  double pressure_margin = 100.0;        // Pa kept on both square-root arguments

  void validate() const;
};

/// Profit rate J = sum(price * Q_l).
inline double profit(const Vec3& q_l, const EconomicSettings& econ) { return econ.price.dot(q_l); }

/// Per-well holdups as O(1) optimization variables: gas mass and gas-pocket
/// volume, each over a fixed reference. The gas volume keeps the liquid
/// holdup's pressure sensitivity well conditioned.
struct StateScaling {
  double gas_mass = 1e-4;      // kg
  double gas_volume = 1e-4;    // m3

  std::pair<double, double> to_scaled(double m_g, double m_l, const ModelParams& model) const;
  std::pair<double, double> from_scaled(double a, double b, const ModelParams& model) const;
  Vec6 to_scaled(const NetworkState& x, const ModelParams& model) const;
  NetworkState from_scaled(const Vec6& z, const ModelParams& model) const;
};

// ---------------------------------------------------------------------------
// Steady-state economics. Variables: [q_g(3), gas mass(3), gas volume(3)].

struct SSEconProblem {
  NLProblem problem;
  StateScaling scaling;
  ControlInputs decode_inputs(const VecX& z) const;
  NetworkState decode_state(const VecX& z, const ModelParams& model) const;
};

SSEconProblem build_ss_econ(const ThetaVector& theta, const DisturbanceState& dist, const ModelParams& model,
                            const EconomicSettings& econ, const ControlInputs& warm_u,
                            const NetworkState* warm_x = nullptr);

struct SSEconSolution {
  ControlInputs u;
  NetworkState x;
  Vec3 q_l = Vec3::Zero();
  double J = 0.0;
  KKTResult kkt;
};

SSEconSolution solve_ss_econ(const ThetaVector& theta, const DisturbanceState& dist, const ModelParams& model,
                             const EconomicSettings& econ, const SolverConfig& solver,
                             const ControlInputs& warm_u, const NetworkState* warm_x = nullptr,
                             const MatX* warm_hessian = nullptr);

/// Projects a setpoint triple onto the box, then scales the excess over the
/// minimum down proportionally when the total exceeds the gas budget.
Vec3 project_feasible(const Vec3& u, const EconomicSettings& econ);

// ---------------------------------------------------------------------------
// Grid oracle.

struct OracleResult {
  ControlInputs best;
  double J = 0.0;
  long candidates = 0;   // triples on the grid inside the gas budget
  long failures = 0;     // triples where a steady state could not be found
};

OracleResult brute_force_ss_oracle(const ThetaVector& theta, const DisturbanceState& dist,
                                   const ModelParams& model, const EconomicSettings& econ, double grid_step);

/// Single-threaded reference with the same enumeration order.
OracleResult brute_force_ss_oracle_serial(const ThetaVector& theta, const DisturbanceState& dist,
                                          const ModelParams& model, const EconomicSettings& econ,
                                          double grid_step);

// ---------------------------------------------------------------------------
// Dynamic economics on Radau IIA collocation.

struct CollocationGrid {
  int elements = 6;
  double element_length = 10.0;   // s

  static constexpr int kStages = 3;
  static const std::array<double, 3>& nodes();                         // c
  static const std::array<std::array<double, 3>, 3>& coefficients();   // A
  static const std::array<double, 3>& weights();                       // b

  double horizon() const { return elements * element_length; }
  void validate() const;
};

struct DRTOSettings {
  CollocationGrid grid;
  Vec3 move_weight = Vec3::Constant(0.01);   // R (diagonal)
  double du_max = 2.0;                       // sL/min per element
};

/// Variables per element: [u(3), scaled state at the three stages (3 x 6)].
struct DRTOProblem {
  NLProblem problem;
  StateScaling scaling;
  CollocationGrid grid;
  int element_size() const { return 3 + CollocationGrid::kStages * 6; }
  Vec3 inputs(const VecX& z, int element) const;
  NetworkState state(const VecX& z, int element, int stage, const ModelParams& model) const;
};

DRTOProblem build_drto(const ThetaVector& theta, const NetworkState& x_hat, const Vec3& u_prev,
                       const DisturbanceState& dist, const ModelParams& model, const EconomicSettings& econ,
                       const DRTOSettings& settings, const VecX* warm_start = nullptr);

/// Initial guess from simulating the model under constant inputs.
VecX drto_simulated_guess(const DRTOProblem& p, const ThetaVector& theta, const NetworkState& x_hat,
                          const Vec3& u, const DisturbanceState& dist, const ModelParams& model);

/// Shifts a previous solution (and optionally its Hessian) by one element,
/// repeating the last element.
VecX shift_solution(const VecX& z, int element_size);
MatX shift_hessian(const MatX& B, int element_size);

struct DRTOSolution {
  std::vector<Vec3> plan;    // inputs per element
  Vec3 first_move = Vec3::Zero();
  double predicted_profit = 0.0;   // horizon average of J
  KKTResult kkt;
};

DRTOSolution solve_drto(const ThetaVector& theta, const NetworkState& x_hat, const Vec3& u_prev,
                        const DisturbanceState& dist, const ModelParams& model, const EconomicSettings& econ,
                        const DRTOSettings& settings, const SolverConfig& solver, const VecX* warm_start = nullptr,
                        const MatX* warm_hessian = nullptr);

}  // namespace gaslift
