// Lumped three-well gas-lift network: mass balances, explicit algebraic
// chain, sensor map, steady-state solve and analytic Jacobians.
//
// Everything in here is strict SI (kg, s, Pa absolute, m). Standard liters,
// L/min and barg only appear through the conversion helpers in units.hpp.

#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace gaslift {

inline constexpr int kWells = 3;

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec10 = Eigen::Matrix<double, 10, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct PhysicalConstants {
  double rho_l = 998.2;         // kg/m3, water at 20 C
  double mu_mix = 1.002e-3;     // Pa s, mixture taken as liquid viscosity
  double M_g = 0.02897;         // kg/mol, air
  double R_gas = 8.314462618;   // J/(mol K)
  double T_amb = 293.15;        // K
  double g_acc = 9.81;          // m/s2
  double P_atm = 101325.0;      // Pa

  void validate() const;
};

struct RigGeometry {
  double diameter = 0.02;       // m
  double length = 3.7;          // m, well hose + riser
  double riser_height = 2.2;    // m

  double volume() const;        // total pipe volume, m3
  void validate() const;
};

struct ModelParams {
  PhysicalConstants constants;
  RigGeometry geometry;
};

/// Valve flow coefficients. Units are such that w = theta * sqrt(rho * dP)
/// yields kg/s with rho in kg/m3 and dP in Pa.
struct ThetaVector {
  Vec3 res = Vec3::Zero();
  Vec3 top = Vec3::Zero();

  Vec6 stacked() const;
  static ThetaVector from_stacked(const Vec6& v);
};

/// Differential states of the network (holdups in each well + riser).
struct NetworkState {
  Vec3 m_g = Vec3::Zero();
  Vec3 m_l = Vec3::Zero();

  Vec6 stacked() const;
  static NetworkState from_stacked(const Vec6& v);
};

struct WellAlgebraics {
  double rho_g = 0.0;
  double rho_mix = 0.0;
  double p_bi = 0.0;
  double p_rh = 0.0;
  double w_l = 0.0;
  double w_total = 0.0;
  double w_l_out = 0.0;
  double w_g_out = 0.0;
  double alpha_l = 0.0;
};

/// Gas-lift setpoints in standard liters per minute.
struct ControlInputs {
  Vec3 qg_sp = Vec3::Constant(2.5);
};

/// Reservoir valve openings (fraction) and pump outlet pressure (Pa abs).
struct DisturbanceState {
  Vec3 v_o = Vec3::Ones();
  double p_pump = 131325.0;
};

/// Noise-free sensor values. Pressures absolute Pa, Q_l in L/min, Q_g in sL/min.
struct ModelOutputs {
  Vec3 p_rh = Vec3::Zero();
  double p_pump = 0.0;
  Vec3 q_l = Vec3::Zero();
  Vec3 q_g = Vec3::Zero();

  Vec10 stacked() const;
  static ModelOutputs from_stacked(const Vec10& v);
};

enum class ModelErrc {
  NegativeDrivingPressure,
  PipeFlooded,
  NonPositiveGas,
  SubAtmosphericHead,
  NoConvergence,
  InfeasibleRegime,
};

const char* to_string(ModelErrc code);

class ModelError : public std::runtime_error {
 public:
  ModelError(ModelErrc code, int well, const std::string& detail);

  ModelErrc code() const noexcept { return code_; }
  int well() const noexcept { return well_; }

 private:
  ModelErrc code_;
  int well_;
};

// ---------------------------------------------------------------------------
// Single-well chain with derivatives. Local inputs are ordered as
// [m_g, m_l, w_g, theta_res, theta_top, v_o, p_pump].

namespace local {
inline constexpr int kMg = 0, kMl = 1, kWg = 2, kRes = 3, kTop = 4, kVo = 5, kPump = 6;
inline constexpr int kCount = 7;
}  // namespace local

using LocalGrad = Eigen::Matrix<double, 1, local::kCount>;

struct WellInputs {
  double m_g = 0.0;
  double m_l = 0.0;
  double w_g = 0.0;
  double theta_res = 0.0;
  double theta_top = 0.0;
  double v_o = 1.0;
  double p_pump = 0.0;
};

struct WellEval {
  WellAlgebraics alg;
  // Gradients with respect to the local inputs. Only filled when requested.
  LocalGrad d_w_l = LocalGrad::Zero();
  LocalGrad d_w_total = LocalGrad::Zero();
  LocalGrad d_w_l_out = LocalGrad::Zero();
  LocalGrad d_w_g_out = LocalGrad::Zero();
  LocalGrad d_p_rh = LocalGrad::Zero();
  LocalGrad d_p_bi = LocalGrad::Zero();
  LocalGrad d_rho_mix = LocalGrad::Zero();
};

/// Evaluates the explicit algebraic chain of one well. Throws ModelError when
/// the state leaves the physical domain.
WellEval evaluate_well(const WellInputs& in, const ModelParams& model, bool with_derivatives,
                       int well_index = 0);

// ---------------------------------------------------------------------------
// Network-level operations. Gas injection is passed as mass flow (kg/s).

std::array<WellAlgebraics, kWells> algebraics(const NetworkState& x, const Vec3& w_g,
                                              const DisturbanceState& dist, const ThetaVector& theta,
                                              const ModelParams& model);

NetworkState rhs(const NetworkState& x, const Vec3& w_g, const DisturbanceState& dist,
                 const ThetaVector& theta, const ModelParams& model);

ModelOutputs measurement_map(const NetworkState& x, const Vec3& w_g, const DisturbanceState& dist,
                             const ThetaVector& theta, const ModelParams& model);

struct SteadyStateOptions {
  double tolerance = 1e-10;     // on ||rhs||_inf, kg/s
  int max_iterations = 60;
};

/// Damped Newton on the per-well balances. The wells are decoupled, so each
/// 2x2 system is solved on its own.
NetworkState steady_state_solve(const ControlInputs& u, const DisturbanceState& dist,
                                const ThetaVector& theta, const ModelParams& model,
                                const NetworkState& guess, const SteadyStateOptions& opts = {});

/// Single well version used by the oracle and the problem builders.
std::pair<double, double> steady_state_well(double w_g, double v_o, double p_pump, double theta_res,
                                            double theta_top, const ModelParams& model,
                                            std::pair<double, double> guess, int well_index = 0,
                                            const SteadyStateOptions& opts = {});

/// A reasonable starting point for steady_state_solve.
NetworkState default_guess(const ModelParams& model);

struct ModelJacobians {
  Mat6 f_x = Mat6::Zero();                                   // d rhs / d state
  Mat6 f_theta = Mat6::Zero();                               // d rhs / d theta
  Eigen::Matrix<double, 6, 3> f_wg = Eigen::Matrix<double, 6, 3>::Zero();  // d rhs / d w_g
  Eigen::Matrix<double, 10, 6> h_x = Eigen::Matrix<double, 10, 6>::Zero();
  Eigen::Matrix<double, 10, 6> h_theta = Eigen::Matrix<double, 10, 6>::Zero();
  Eigen::Matrix<double, 10, 3> h_wg = Eigen::Matrix<double, 10, 3>::Zero();
};

ModelJacobians jacobians(const NetworkState& x, const Vec3& w_g, const DisturbanceState& dist,
                         const ThetaVector& theta, const ModelParams& model);

/// Valve coefficients that put the steady state at the requested operating
/// point (liquid rate in L/min, riser-head pressure in Pa gauge) for a given
/// injection (sL/min), pump pressure (Pa abs) and fully open reservoir valve.
ThetaVector calibrate_nominal_theta(const ModelParams& model, double q_l_lpm, double p_rh_gauge,
                                    double q_g_slpm, double p_pump);

/// Steady liquid production for given setpoints; convenience for the oracle,
/// the economics and tests.
Vec3 steady_liquid_rates(const ControlInputs& u, const DisturbanceState& dist,
                         const ThetaVector& theta, const ModelParams& model,
                         NetworkState* state_out = nullptr);

}  // namespace gaslift
