// Closed-loop decision policies. Each supervisor sees every sensor sample and
// returns a decision on its own schedule.
#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "gaslift/estimation.hpp"
#include "gaslift/optimization.hpp"
#include "gaslift/ssd.hpp"
#include "gaslift/twin.hpp"

namespace gaslift {

enum class SupervisorKind { ROPA, SSRTO, DRTO, FIXED };

const char* to_string(SupervisorKind k);
/// Accepts the lower-case names used on the command line.
std::optional<SupervisorKind> parse_supervisor_kind(std::string_view name);

struct SupervisorConfig {
  SupervisorKind kind = SupervisorKind::ROPA;
  double period_s = 10.0;
  double K_u = 0.4;                          // input filter gain
  Vec3 fixed_inputs = Vec3::Constant(2.5);   // sL/min, FIXED only
  EconomicSettings econ;
  SolverConfig solver;
  ThetaVector theta_nominal;
  NoiseStd assumed_noise;                    // sensor noise the filter is tuned for
  std::optional<EKFConfig> ekf;              // built from the nominal point when empty
  SSFitConfig fit;
  SSDConfig ssd;
  DRTOSettings drto;

  static SupervisorConfig defaults(SupervisorKind kind, const ThetaVector& theta_nominal);
  /// Checks gains and that the period is a whole number of sensor periods.
  void validate(double sensor_period) const;
};

struct DecisionTiming {
  double adapt_ms = 0.0;   // estimation or steady-state fit, including SSD
  double opt_ms = 0.0;     // economic solve
  double total_ms = 0.0;   // whole iteration, including per-sample filter work
};

struct SupervisorDecision {
  double t = 0.0;
  Vec3 u_star = Vec3::Zero();      // optimizer output
  Vec3 u_applied = Vec3::Zero();   // filtered and projected setpoints
  bool acted = false;
  DecisionTiming timing;
  std::optional<ThetaVector> theta_hat;
  std::optional<SolveStatus> solve_status;
  int solver_iterations = 0;
  double stationarity = 0.0;
  double feasibility = 0.0;
  std::string note;                // why nothing was done, when that happens
};

/// u_prev + K_u (u_star - u_prev), projected onto the box and gas budget.
Vec3 filter_inputs(const Vec3& u_prev, const Vec3& u_star, double K_u, const EconomicSettings& econ);

class Supervisor {
 public:
  Supervisor(SupervisorConfig cfg, ModelParams model);
  virtual ~Supervisor() = default;
  Supervisor(const Supervisor&) = delete;
  Supervisor& operator=(const Supervisor&) = delete;

  /// Starts from the plant's first snapshot with setpoints `u0` in force.
  /// Validates the configuration against the plant's sensor period.
  void reset(const TwinSnapshot& first, const Vec3& u0, double sensor_period);

  /// Feeds one sensor sample. Returns a decision when the period has elapsed.
  std::optional<SupervisorDecision> on_sample(const TwinSnapshot& s);

  /// Replaces the NLP solver settings for subsequent decisions.
  void set_solver_config(const SolverConfig& solver);

  /// Setpoints currently in force.
  const Vec3& setpoints() const { return u_; }
  const SupervisorConfig& config() const { return cfg_; }
  SupervisorKind kind() const { return cfg_.kind; }

 protected:
  /// Disturbance as the supervisor's model sees it: open valves, measured pump.
  static DisturbanceState model_disturbance(const MeasurementVector& y);
  Vec3 filter_and_project(const Vec3& u_star) const { return filter_inputs(u_, u_star, cfg_.K_u, cfg_.econ); }

  virtual void start(const TwinSnapshot& first) = 0;
  /// Per-sample work (filter updates, buffering). Timed as adaptation.
  virtual void sample(const TwinSnapshot& s) = 0;
  virtual SupervisorDecision decide(const TwinSnapshot& s) = 0;

  SupervisorConfig cfg_;
  ModelParams model_;
  Vec3 u_ = Vec3::Zero();

 private:
  int period_samples_ = 1;
  int count_ = 0;
  double pending_sample_ms_ = 0.0;
};

/// Fixed setpoints, reissued every period.
class FixedSupervisor final : public Supervisor {
 public:
  using Supervisor::Supervisor;

 private:
  void start(const TwinSnapshot&) override {}
  void sample(const TwinSnapshot&) override {}
  SupervisorDecision decide(const TwinSnapshot& s) override;
};

/// EKF at every sample, steady-state economics on the current estimate.
class RopaSupervisor final : public Supervisor {
 public:
  using Supervisor::Supervisor;
  const ExtendedKalmanFilter* filter() const { return ekf_.get(); }

 private:
  void start(const TwinSnapshot& first) override;
  void sample(const TwinSnapshot& s) override;
  SupervisorDecision decide(const TwinSnapshot& s) override;

  std::unique_ptr<ExtendedKalmanFilter> ekf_;
  Vec3 last_qg_ = Vec3::Zero();
  std::optional<SSEconSolution> last_;
};

/// Steady-state detection gates a least-squares fit and the same economics.
class SsrtoSupervisor final : public Supervisor {
 public:
  using Supervisor::Supervisor;
  const std::optional<SSFitResult>& last_fit() const { return fit_; }

 private:
  void start(const TwinSnapshot& first) override;
  void sample(const TwinSnapshot& s) override;
  SupervisorDecision decide(const TwinSnapshot& s) override;

  std::deque<MeasurementVector> window_;
  std::optional<SSFitResult> fit_;
  std::optional<SSEconSolution> last_;
};

/// EKF at every sample, receding-horizon collocation problem at each period.
class DrtoSupervisor final : public Supervisor {
 public:
  using Supervisor::Supervisor;
  const ExtendedKalmanFilter* filter() const { return ekf_.get(); }

 private:
  void start(const TwinSnapshot& first) override;
  void sample(const TwinSnapshot& s) override;
  SupervisorDecision decide(const TwinSnapshot& s) override;

  std::unique_ptr<ExtendedKalmanFilter> ekf_;
  Vec3 last_qg_ = Vec3::Zero();
  VecX last_solution_;
  MatX last_hessian_;
  std::vector<Vec3> last_plan_;
};

std::unique_ptr<Supervisor> make_supervisor(const SupervisorConfig& cfg, const ModelParams& model);

}  // namespace gaslift
