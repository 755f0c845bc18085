// Digital twin of the rig: integrates the process model with fixed-step RK4,
// emulates the gas-flow loops as first-order lags and adds sensor noise.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaslift/process_model.hpp"

namespace gaslift {

using MeasurementVector = ModelOutputs;

struct NoiseStd {
  double pressure_pa = 50.0;
  double liquid_lpm = 0.1;
  double gas_slpm = 0.05;
};

struct SimConfig {
  double dt_int = 0.05;          // s
  double sensor_period = 1.0;    // s
  double tau_ctrl = 1.33;        // s
  NoiseStd noise;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

struct ProfileKnot {
  double t = 0.0;                // s
  Vec3 v_o = Vec3::Ones();
  double p_pump = 131325.0;      // Pa abs
};

/// Piecewise-linear replay of reservoir valve openings and pump pressure.
/// Held constant before the first and after the last knot.
class DisturbanceProfile {
 public:
  DisturbanceProfile() = default;
  explicit DisturbanceProfile(std::vector<ProfileKnot> knots);

  DisturbanceState at(double t) const;
  const std::vector<ProfileKnot>& knots() const { return knots_; }
  void validate(const PhysicalConstants& c) const;

 private:
  std::vector<ProfileKnot> knots_;
};

/// Declining production in wells 1 and 3 over a 20 minute run.
DisturbanceProfile default_depletion_profile(const PhysicalConstants& c = {});

struct TwinSnapshot {
  double t = 0.0;
  NetworkState true_state;
  ThetaVector true_theta;
  MeasurementVector measured;
  Vec3 setpoint = Vec3::Zero();    // sL/min commanded
  Vec3 applied_qg = Vec3::Zero();  // sL/min delivered by the flow loops
  DisturbanceState dist;
};

class SimulationDiverged : public std::runtime_error {
 public:
  SimulationDiverged(double t, const std::string& what);
  double time() const noexcept { return t_; }

 private:
  double t_;
};

class DigitalTwin {
 public:
  DigitalTwin(ModelParams model, ThetaVector true_theta, SimConfig cfg, DisturbanceProfile profile);

  /// Places the plant at steady state for the given setpoints at t = 0.
  TwinSnapshot initialize(const ControlInputs& u0);

  /// Advances one sensor period holding the setpoints constant.
  TwinSnapshot step(const ControlInputs& setpoints);

  /// Changes the plant's valve coefficients from now on (fault injection).
  void set_true_theta(const ThetaVector& theta) { theta_ = theta; }

  const TwinSnapshot& snapshot() const { return last_; }
  const ModelParams& model() const { return model_; }
  const SimConfig& config() const { return cfg_; }
  const DisturbanceProfile& profile() const { return profile_; }

 private:
  MeasurementVector measure(const NetworkState& x, const Vec3& q_g, const DisturbanceState& d);
  NetworkState derivative(const NetworkState& x, const Vec3& q_g, double t) const;

  ModelParams model_;
  ThetaVector theta_;
  SimConfig cfg_;
  DisturbanceProfile profile_;

  double t_ = 0.0;
  NetworkState x_;
  Vec3 q_g_ = Vec3::Zero();
  Vec3 setpoint_ = Vec3::Zero();
  TwinSnapshot last_;
  // One stream per sensor channel, in ModelOutputs stacking order.
  std::vector<std::mt19937_64> channel_rng_;
};

struct ScenarioResult {
  std::vector<TwinSnapshot> snapshots;
  std::optional<std::string> failure;
};

/// Called once per sensor period with the newest snapshot; returns the
/// setpoints to hold over the next period.
using SetpointPolicy = std::function<ControlInputs(const TwinSnapshot&)>;

ScenarioResult run_scenario(DigitalTwin& twin, const ControlInputs& u0, const SetpointPolicy& policy,
                            double horizon);

}  // namespace gaslift
