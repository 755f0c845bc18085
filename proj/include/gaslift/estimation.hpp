// Model adaptation: an extended Kalman filter with random-walk valve
// coefficients, the steady-state least-squares fit, and the Monte Carlo
// check of how well a parameter set is determined by steady data.
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaslift/process_model.hpp"
#include "gaslift/sqp.hpp"
#include "gaslift/twin.hpp"

namespace gaslift {

using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using Mat10 = Eigen::Matrix<double, 10, 10>;

/// Box for six estimated parameters, in the order of ThetaVector::stacked()
/// (or [theta_res, alpha_l] for the liquid-fraction set).
struct ParameterBounds {
  Vec6 lower = Vec6::Zero();
  Vec6 upper = Vec6::Zero();

  static ParameterBounds relative(const Vec6& nominal, double lo_factor, double hi_factor);
  Vec6 clamp(const Vec6& v) const { return v.cwiseMax(lower).cwiseMin(upper); }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Extended Kalman filter

struct EKFConfig {
  Mat12 P0 = Mat12::Identity();
  Mat6 Q_x = Mat6::Identity();
  Mat6 Q_theta = Mat6::Identity();
  Mat10 R_m = Mat10::Identity();
  double dt = 1.0;                 // s, one sensor period
  double max_substep = 1.0;        // s, implicit step inside the prediction
  double reset_inflation = 4.0;    // prior scale used after a covariance failure
  ParameterBounds bounds;

  /// Defaults built around a nominal operating point: 5% prior spread, 1%
  /// random walk per step on the coefficients, sensor variances from `noise`.
  static EKFConfig defaults(const ThetaVector& theta_nominal, const NetworkState& x_nominal,
                            const NoiseStd& noise);
  void validate() const;
};

struct EstimateRecord {
  double t = 0.0;
  ThetaVector theta_hat;
  NetworkState x_hat;
  Vec12 P_diag = Vec12::Zero();
  Vec10 innovation = Vec10::Zero();
  bool covariance_reset = false;
  int bound_hits = 0;     // coefficients clipped to the box at this step
};

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ExtendedKalmanFilter {
 public:
  ExtendedKalmanFilter(ModelParams model, EKFConfig cfg, const NetworkState& x0, const ThetaVector& theta0);

  /// Predicts over one filter period with the gas rates `q_g` (sL/min) held,
  /// then corrects with the measurement taken at the end of the period.
  EstimateRecord step(const MeasurementVector& y, const Vec3& q_g, const DisturbanceState& dist);

  /// Only the prediction; exposed for tests of the discrete propagation.
  void predict(const Vec3& q_g, const DisturbanceState& dist);
  void update(const MeasurementVector& y, const Vec3& q_g, const DisturbanceState& dist);

  /// One period from z and its Jacobian d z_next / d z.
  Vec12 propagate(const Vec12& z, const Vec3& q_g, const DisturbanceState& dist, Mat12* jac) const;

  const Vec12& mean() const { return z_; }
  const Mat12& covariance() const { return P_; }
  NetworkState state() const;
  ThetaVector theta() const;
  double time() const { return t_; }
  int resets() const { return resets_; }
  const EKFConfig& config() const { return cfg_; }

 private:
  void guard_covariance();

  ModelParams model_;
  EKFConfig cfg_;
  Vec12 z_ = Vec12::Zero();
  Mat12 P_ = Mat12::Identity();
  double t_ = 0.0;
  int resets_ = 0;
  bool reset_flag_ = false;
  int clipped_ = 0;
  Vec10 innovation_ = Vec10::Zero();
};

// ---------------------------------------------------------------------------
// Steady-state fit

enum class ParameterSet {
  ValveCoefficients,   // [theta_res, theta_top]
  LiquidFraction,      // [theta_res, alpha_l], theta_top held at nominal
};

const char* to_string(ParameterSet s);

/// Fitted outputs are [P_rh (kPa gauge) x3, Q_l (L/min) x3].
struct SSFitConfig {
  Mat6 V = Mat6::Identity();
  ParameterSet parameters = ParameterSet::ValveCoefficients;
  ParameterBounds bounds;
  ThetaVector theta_nominal;       // supplies theta_top for the liquid-fraction set
  SolverConfig solver;
  double pressure_margin = 100.0;  // Pa
  double bound_tolerance = 1e-6;   // relative distance counted as "on the bound"

  /// Valve-coefficient set with the box [0.1, 3] x nominal.
  static SSFitConfig defaults(const ThetaVector& theta_nominal);
  /// Liquid-fraction set: theta_res box as above, alpha_l in [alpha_min, alpha_max].
  static SSFitConfig liquid_fraction(const ThetaVector& theta_nominal, double alpha_min, double alpha_max);
  void validate() const;
};

/// Averaged plant data handed to the fit.
struct SteadyData {
  Vec3 p_rh = Vec3::Zero();   // Pa abs
  Vec3 q_l = Vec3::Zero();    // L/min
  Vec3 q_g = Vec3::Zero();    // sL/min, used as the model input
  double p_pump = 0.0;        // Pa abs

  static SteadyData mean_of(const std::vector<MeasurementVector>& window);
};

struct SSFitResult {
  Vec6 parameters = Vec6::Zero();
  ThetaVector theta;           // the valve coefficients in model form
  Vec3 alpha_l = Vec3::Zero(); // liquid-fraction set only
  NetworkState x;
  Vec6 residual = Vec6::Zero();
  double objective = 0.0;      // residual' V residual
  std::vector<int> at_bounds;  // parameter indices sitting on the box
  KKTResult kkt;
};

/// Fits the chosen parameter set to one averaged steady window. The model
/// sees fully open reservoir valves, so theta_res absorbs the opening.
SSFitResult ss_fit(const SteadyData& data, const ModelParams& model, const SSFitConfig& cfg,
                   const Vec6& guess);

/// The fit problem itself, for derivative checks.
NLProblem build_ss_fit(const SteadyData& data, const ModelParams& model, const SSFitConfig& cfg,
                       const Vec6& guess);

/// Model outputs [P_rh kPa gauge, Q_l L/min] of the fit at parameters `p`,
/// with states from a steady solve. Throws ModelError when none exists.
Vec6 fit_outputs(const Vec6& p, const SteadyData& data, const ModelParams& model, const SSFitConfig& cfg,
                 NetworkState* x_out = nullptr);

// ---------------------------------------------------------------------------
// Identifiability Monte Carlo

struct IdentifiabilityConfig {
  int runs = 100;
  SSFitConfig fit;
  ThetaVector theta_true;
  Vec3 v_o = Vec3(0.8, 0.6, 0.8);
  ControlInputs operating_point;
  SimConfig sim;
  int window_samples = 40;          // sensor samples averaged per run
  double correlation_threshold = 0.5;
  int histogram_bins = 20;
  std::uint64_t seed = 20240601;

  void validate() const;
};

struct ParameterStats {
  std::string name;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  int lower_hits = 0;
  int upper_hits = 0;
  std::vector<int> histogram;
  double hist_lo = 0.0;
  double hist_hi = 0.0;
};

/// 95% confidence ellipse of a parameter pair from the sample covariance.
struct ConfidenceEllipse {
  int i = 0;
  int j = 0;
  double center_i = 0.0;
  double center_j = 0.0;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double angle = 0.0;     // rad, major axis against the i axis
  double area = 0.0;
};

struct IdentifiabilityReport {
  ParameterSet parameters = ParameterSet::ValveCoefficients;
  int runs = 0;
  int failures = 0;
  int runs_with_bound_hits = 0;
  int total_bound_hits = 0;
  std::vector<Vec6> estimates;
  std::array<ParameterStats, 6> stats;
  Mat6 correlation = Mat6::Zero();
  std::vector<ConfidenceEllipse> ellipses;
  double correlation_threshold = 0.5;
  std::vector<std::pair<int, int>> correlated_pairs;   // |corr| above threshold

  double max_abs_correlation() const;
  std::string to_json() const;
  /// One row per run: run index followed by the six estimates.
  std::string estimates_csv() const;
  /// Long format: parameter, bin, lo, hi, count.
  std::string histogram_csv() const;
};

IdentifiabilityReport identifiability_mc(const ModelParams& model, const IdentifiabilityConfig& cfg);
IdentifiabilityReport identifiability_mc_serial(const ModelParams& model, const IdentifiabilityConfig& cfg);

}  // namespace gaslift
