// Experiment runner: configuration file, closed-loop runs against a co-run
// fixed baseline, CSV logs, metrics, run comparison, and the step-response
// tuning utility.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaslift/estimation.hpp"
#include "gaslift/optimization.hpp"
#include "gaslift/supervisors.hpp"
#include "gaslift/twin.hpp"

namespace gaslift {

// ---------------------------------------------------------------------------
// Configuration

/// A bad configuration value. `path` is the file (or "<defaults>"), `field`
/// the dotted key, e.g. "ropa.input_filter_gain".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, std::string field, const std::string& message);
  const std::string& path() const noexcept { return path_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string path_;
  std::string field_;
};

/// Operating point the nominal valve coefficients are solved for.
struct CalibrationPoint {
  double liquid_rate_lpm = 10.0;
  double riser_head_pa_gauge = 5000.0;
  double gas_rate_slpm = 2.5;
  double pump_pressure_barg = 0.3;
};

struct ExperimentSettings {
  double horizon_s = 1200.0;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  Vec3 initial_inputs = Vec3::Constant(2.5);   // sL/min
  bool parallel = true;                        // runs spread over OpenMP threads
  double moving_average_s = 60.0;
};

struct SupervisorTuning {
  double ropa_period_s = 10.0;
  double ropa_filter_gain = 0.4;
  double ssrto_period_s = 10.0;
  double ssrto_filter_gain = 0.4;
  SSDConfig ssd;
  Vec6 adaptation_weights = Vec6::Ones();      // diagonal of the fit weighting
  DRTOSettings drto;                           // element length is the DRTO period
  Vec3 fixed_inputs = Vec3::Constant(2.5);
};

struct StepTestSpec {
  int well = 0;                                // zero-based
  double magnitude_slpm = 0.5;
  double horizon_s = 300.0;
  Vec3 base_inputs = Vec3::Constant(2.5);
  double settle_fraction = 0.95;
};

struct IdentifiabilitySettings {
  int runs = 100;
  ParameterSet parameters = ParameterSet::ValveCoefficients;
  Vec3 valve_openings = Vec3(0.8, 0.6, 0.8);
  Vec3 operating_inputs = Vec3::Constant(2.5);
  int window_samples = 40;
  std::uint64_t seed = 20240601;
  double alpha_min = 0.5;
  double alpha_max = 1.0 - 1e-6;
  double correlation_threshold = 0.5;
};

struct HarnessConfig {
  std::string source = "<defaults>";
  ModelParams model;
  CalibrationPoint calibration;
  std::optional<ThetaVector> plant_theta;      // true coefficients; calibrated when empty
  SimConfig sim;
  std::string scenario_name = "depletion";
  DisturbanceProfile scenario;
  ExperimentSettings experiment;
  EconomicSettings econ;
  SolverConfig solver;
  SupervisorTuning tuning;
  IdentifiabilitySettings identifiability;
  StepTestSpec step_test;
  double oracle_grid_slpm = 0.1;
  double oracle_time_s = 0.0;                  // scenario time the oracle is evaluated at

  static HarnessConfig defaults();
  /// Missing sections keep their defaults; unknown keys are errors.
  static HarnessConfig parse(const std::string& json_text, const std::string& source = "<string>");
  static HarnessConfig load(const std::filesystem::path& file);

  /// Complete effective configuration, loadable by parse().
  std::string to_json() const;
  void validate() const;

  ThetaVector nominal_theta() const;
  ThetaVector true_theta() const { return plant_theta ? *plant_theta : nominal_theta(); }
  SupervisorConfig supervisor(SupervisorKind kind) const;
  IdentifiabilityConfig identifiability_config() const;
};

// ---------------------------------------------------------------------------
// Closed-loop runs

struct RunTrace {
  SupervisorKind kind = SupervisorKind::FIXED;
  std::uint64_t seed = 0;
  std::vector<TwinSnapshot> samples;           // excludes the t = 0 snapshot
  std::vector<SupervisorDecision> decisions;
  std::optional<std::string> failure;          // samples hold what ran before it
};

/// One supervisor against one twin realization.
RunTrace simulate(const HarnessConfig& cfg, SupervisorKind kind, std::uint64_t seed);

/// Every (kind, seed) pair, in kind-major order. Each run owns its twin.
std::vector<RunTrace> simulate_all(const HarnessConfig& cfg, const std::vector<SupervisorKind>& kinds);

struct LogRow {
  std::uint64_t seed = 0;
  double t = 0.0;
  MeasurementVector measured;
  Vec3 setpoint = Vec3::Zero();
  ThetaVector theta;
  NetworkState state;
};

struct DecisionRow {
  std::uint64_t seed = 0;
  double t = 0.0;
  SupervisorKind kind = SupervisorKind::FIXED;
  bool acted = false;
  Vec3 u_star = Vec3::Zero();
  Vec3 u_applied = Vec3::Zero();
  double adapt_ms = 0.0;
  double opt_ms = 0.0;
  double total_ms = 0.0;
};

inline constexpr const char* kLogVersion = "# gaslift-log v1";
inline constexpr const char* kDecisionsVersion = "# gaslift-decisions v1";

std::vector<LogRow> log_rows(const std::vector<RunTrace>& runs);
std::vector<DecisionRow> decision_rows(const std::vector<RunTrace>& runs);

/// Column order: seed, t, p_rh_1..3 (Pa abs), p_pump, q_l_1..3 (L/min),
/// q_g_1..3 (sL/min), qg_sp_1..3, theta_res_1..3, theta_top_1..3,
/// m_g_1..3 (kg), m_l_1..3 (kg). Values round-trip exactly.
std::string write_log_csv(const std::vector<LogRow>& rows);
/// Throws std::runtime_error on an unknown version line or a malformed row.
std::vector<LogRow> read_log_csv(const std::string& text);

/// Column order: seed, t, kind, acted, u_star_1..3, u_applied_1..3,
/// t_adapt_ms, t_opt_ms, t_total_ms.
std::string write_decisions_csv(const std::vector<DecisionRow>& rows);
std::vector<DecisionRow> read_decisions_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Metrics

struct TimingStats {
  int count = 0;
  double mean_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
};

struct MetricsSummary {
  std::vector<double> t;                 // s
  std::vector<double> profit;            // seed-averaged J
  std::vector<double> baseline_profit;
  std::vector<double> percent;           // 100 (J - J_fix) / J_fix
  std::vector<double> percent_smoothed;  // trailing moving average
  std::vector<Vec3> mean_setpoints;      // seed-averaged, sL/min
  double cumulative_profit = 0.0;        // J integrated over minutes
  double cumulative_baseline_profit = 0.0;
  double cumulative_percent_min = 0.0;   // unsmoothed percent integrated over minutes
  double mean_percent = 0.0;
  std::vector<double> input_changes;     // |du| per decision and well, seeds in ascending order
  std::array<double, 5> input_change_quartiles{};  // min, q1, median, q3, max of |du|
  std::vector<double> acting_ms;         // wall time of each acting decision
  int decisions = 0;
  int acted = 0;
  TimingStats timing;                    // every decision
  TimingStats acting_timing;             // decisions that changed the setpoints
};

/// Trailing average over `window` samples; the first samples use what is available.
std::vector<double> moving_average(const std::vector<double>& series, int window);

/// Linear-interpolation quartiles (min, q1, median, q3, max). Empty input gives zeros.
std::array<double, 5> quartiles(std::vector<double> values);

TimingStats timing_stats(const std::vector<double>& ms);

/// Pure function of the logs. Seeds are averaged sample by sample over the
/// prefix every seed reached.
MetricsSummary compute_metrics(const std::vector<LogRow>& log, const std::vector<LogRow>& baseline,
                               const std::vector<DecisionRow>& decisions, const EconomicSettings& econ,
                               const Vec3& initial_inputs, double sample_period, double moving_average_s);

/// Scalar part of the summary as JSON text.
std::string metrics_json(const MetricsSummary& m);

// ---------------------------------------------------------------------------
// Run directories

struct RunResult {
  std::filesystem::path dir;
  MetricsSummary metrics;
  std::vector<std::string> failures;
};

/// Runs `kind` and the fixed baseline on every seed and writes log.csv,
/// baseline_log.csv, decisions.csv, profile.csv, summary.json and
/// config.json to `out_dir`. Files are written even when a run fails.
RunResult run_experiment(const HarnessConfig& cfg, SupervisorKind kind, const std::filesystem::path& out_dir);

/// Recomputes the metrics of a run directory from its CSV files.
MetricsSummary recompute_metrics(const std::filesystem::path& run_dir);

class ComparisonError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ComparisonEntry {
  std::string label;
  SupervisorKind kind = SupervisorKind::FIXED;
  MetricsSummary metrics;
};

struct ComparisonReport {
  std::vector<ComparisonEntry> entries;

  /// Profit and timing orderings plus deltas against the first entry.
  std::string to_json() const;
  /// Long format: label, t, percent, percent_smoothed.
  std::string profile_csv() const;
  /// Long format: label, index, abs_change.
  std::string input_usage_csv() const;
  /// Long format: label, index, total_ms (acting decisions).
  std::string timing_csv() const;
};

/// Run directories must share scenario, seeds, horizon and sample period.
ComparisonReport compare_runs(const std::vector<std::filesystem::path>& run_dirs);

// ---------------------------------------------------------------------------
// Step response

class NoSettling : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepTestReport {
  int well = 0;
  double magnitude_slpm = 0.0;
  double control_response_s = 0.0;       // injected gas rate reaches the settle fraction
  double plant_response_s = 0.0;         // liquid rate reaches the settle fraction
  double recommended_period_s = 0.0;
  std::vector<double> t;
  std::vector<double> gas_rate;
  std::vector<double> liquid_rate;

  std::string to_json() const;
};

/// Time at which `y` first covers `fraction` of its change from y.front() to
/// y.back(), linearly interpolated between samples.
double crossing_time(const std::vector<double>& t, const std::vector<double>& y, double fraction);

/// max(1, round(0.5 (plant - control))).
double recommended_period(double control_response_s, double plant_response_s);

/// Noise-free twin at steady state with the scenario's initial disturbance,
/// then a setpoint step on one well.
StepTestReport step_test(const HarnessConfig& cfg);

// ---------------------------------------------------------------------------
// Oracle

struct OracleCheck {
  double t = 0.0;
  DisturbanceState dist;
  OracleResult grid;
  SSEconSolution nlp;
  double grid_step = 0.0;

  std::string to_json() const;
};

/// Brute-force steady optimum for the true plant at the configured scenario
/// time, next to the NLP optimum for the same problem.
OracleCheck oracle_check(const HarnessConfig& cfg);

}  // namespace gaslift
