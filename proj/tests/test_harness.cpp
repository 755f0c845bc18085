#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "doctest.h"
#include "gaslift/harness.hpp"

using namespace gaslift;
using nlohmann::json;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gaslift_harness_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Short closed-loop settings that keep a full run under a second or two.
HarnessConfig short_run(double horizon_s, std::vector<std::uint64_t> seeds) {
  HarnessConfig cfg = HarnessConfig::defaults();
  cfg.experiment.horizon_s = horizon_s;
  cfg.experiment.seeds = std::move(seeds);
  return cfg;
}

std::string config_field(const std::string& text) {
  try {
    HarnessConfig::parse(text, "test.json");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "test.json");
    return e.field();
  }
  return "<accepted>";
}

LogRow synthetic_row(std::uint64_t seed, double t, const Vec3& q_l, const Vec3& sp) {
  LogRow r;
  r.seed = seed;
  r.t = t;
  r.measured.q_l = q_l;
  r.setpoint = sp;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST_CASE("config: the full dump parses back to the same configuration") {
  const auto cfg = HarnessConfig::defaults();
  cfg.validate();
  const std::string dumped = cfg.to_json();
  const auto again = HarnessConfig::parse(dumped, "dump.json");
  CHECK(again.to_json() == dumped);
  CHECK(again.scenario.knots().size() == cfg.scenario.knots().size());
  CHECK((again.nominal_theta().stacked() - cfg.nominal_theta().stacked()).norm() == 0.0);
}

TEST_CASE("config: execution and tuning values appear as named keys with their defaults") {
  const json j = json::parse(HarnessConfig::defaults().to_json());
  CHECK(j["sensors"]["sample_period_s"] == 1.0);
  CHECK(j["ropa"]["period_s"] == 10.0);
  CHECK(j["ropa"]["input_filter_gain"] == 0.4);
  CHECK(j["ssrto"]["ssd_period_s"] == 10.0);
  CHECK(j["ssrto"]["ssd_alpha"] == 0.9);
  CHECK(j["ssrto"]["ssd_window_s"] == 40.0);
  CHECK(j["ssrto"]["input_filter_gain"] == 0.4);
  CHECK(j["ssrto"]["adaptation_weights"] == json::array({1.0, 1.0, 1.0, 1.0, 1.0, 1.0}));
  CHECK(j["drto"]["sampling_time_s"] == 10.0);
  CHECK(j["drto"]["horizon_elements"] == 6);
  CHECK(j["drto"]["move_weight"] == json::array({0.01, 0.01, 0.01}));
  CHECK(j["drto"]["max_input_change_slpm"] == 2.0);
  CHECK(j["fixed"]["inputs_slpm"] == json::array({2.5, 2.5, 2.5}));
  CHECK(j["economics"]["gas_total_max_slpm"] == 7.5);
  CHECK(j["experiment"]["horizon_s"] == 1200.0);
  CHECK(j["experiment"]["seeds"].size() == 4);
  CHECK(j["calibration"]["liquid_rate_lpm"] == 10.0);
  CHECK(j["calibration"]["riser_head_pressure_pa_gauge"] == 5000.0);
  CHECK(j["oracle"]["grid_step_slpm"] == 0.1);
}

TEST_CASE("config: partial files override only what they name") {
  const auto cfg = HarnessConfig::parse(R"({"ropa": {"input_filter_gain": 0.25}, "drto": {"move_weight": 0.1}})");
  CHECK(cfg.tuning.ropa_filter_gain == 0.25);
  CHECK(cfg.tuning.drto.move_weight == Vec3::Constant(0.1));
  CHECK(cfg.tuning.ssrto_filter_gain == 0.4);
  CHECK(cfg.supervisor(SupervisorKind::ROPA).K_u == 0.25);
  CHECK(cfg.supervisor(SupervisorKind::SSRTO).K_u == 0.4);
}

TEST_CASE("config: errors name the file and the dotted field") {
  CHECK(config_field(R"({"ropa": {"input_filter_gain": 0.0}})") == "ropa.input_filter_gain");
  CHECK(config_field(R"({"ropa": {"input_filter_gain": 1.5}})") == "ropa.input_filter_gain");
  CHECK(config_field(R"({"ropa": {"input_filter_gian": 0.5}})") == "ropa.input_filter_gian");
  CHECK(config_field(R"({"ropa": {"period_s": 2.5}})") == "ropa.period_s");
  CHECK(config_field(R"({"ropa": {"period_s": "ten"}})") == "ropa.period_s");
  CHECK(config_field(R"({"drto": {"max_input_change_slpm": -1}})") == "drto.max_input_change_slpm");
  CHECK(config_field(R"({"drto": {"horizon_elements": 0}})") == "drto.horizon_elements");
  CHECK(config_field(R"({"experiment": {"seeds": []}})") == "experiment.seeds");
  CHECK(config_field(R"({"experiment": {"seeds": [1, 1]}})") == "experiment.seeds");
  CHECK(config_field(R"({"experiment": {"horizon_s": 30}})") == "experiment.horizon_s");
  CHECK(config_field(R"({"experiment": {"initial_inputs_slpm": [3, 3, 3]}})") == "experiment.initial_inputs_slpm");
  CHECK(config_field(R"({"fixed": {"inputs_slpm": [2.5, 2.5]}})") == "fixed.inputs_slpm");
  CHECK(config_field(R"({"step_test": {"well": 4}})") == "step_test.well");
  CHECK(config_field(R"({"scenario": {"knots": [{"time_s": 0, "valve_openings": [0.5, 1.2, 0.5]}]}})") ==
        "scenario.knots");
  CHECK(config_field(R"({"scenario": {"knots": [{"time_s": 0}]}})") == "scenario.knots[0].valve_openings");
  CHECK(config_field(R"({"identifiability": {"parameter_set": "both"}})") == "identifiability.parameter_set");
  CHECK(config_field(R"({"twin": {"noise": {"pressure_pa": -1}}})") == "twin");
  CHECK(config_field(R"({"ropa": 3})") == "ropa");
  CHECK(config_field(R"({"ropa": )") == "<document>");
}

TEST_CASE("config: supervisor settings follow the tuning sections") {
  const auto cfg = HarnessConfig::defaults();
  const auto ssrto = cfg.supervisor(SupervisorKind::SSRTO);
  CHECK(ssrto.period_s == 10.0);
  CHECK(ssrto.ssd.window_samples() == 40);
  CHECK(ssrto.fit.V == Mat6::Identity());
  const auto drto = cfg.supervisor(SupervisorKind::DRTO);
  CHECK(drto.period_s == drto.drto.grid.element_length);
  CHECK(drto.drto.du_max == 2.0);
  const auto fixed = cfg.supervisor(SupervisorKind::FIXED);
  CHECK(fixed.fixed_inputs == Vec3::Constant(2.5));
  const auto id = cfg.identifiability_config();
  CHECK(id.runs == 100);
  CHECK(id.v_o == Vec3(0.8, 0.6, 0.8));
}

// ---------------------------------------------------------------------------
// Logs

TEST_CASE("log csv: values read back exactly and the version is enforced") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  std::vector<LogRow> rows;
  for (int i = 0; i < 20; ++i) {
    LogRow r;
    r.seed = static_cast<std::uint64_t>(i % 3);
    r.t = i * 0.1;
    r.measured = ModelOutputs::from_stacked(Vec10::NullaryExpr([&] { return u(rng); }));
    r.setpoint = Vec3::NullaryExpr([&] { return u(rng); });
    r.theta = ThetaVector::from_stacked(Vec6::NullaryExpr([&] { return u(rng) * 1e-11; }));
    r.state = NetworkState::from_stacked(Vec6::NullaryExpr([&] { return u(rng) * 1e-9; }));
    rows.push_back(r);
  }
  const std::string text = write_log_csv(rows);
  CHECK(text.rfind(std::string(kLogVersion) + "\nseed,t,p_rh_1,", 0) == 0);
  const auto back = read_log_csv(text);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].seed == rows[i].seed);
    CHECK(back[i].t == rows[i].t);
    CHECK(back[i].measured.stacked() == rows[i].measured.stacked());
    CHECK(back[i].setpoint == rows[i].setpoint);
    CHECK(back[i].theta.stacked() == rows[i].theta.stacked());
    CHECK(back[i].state.stacked() == rows[i].state.stacked());
  }
  CHECK(write_log_csv(back) == text);

  std::string other = text;
  other.replace(0, std::string(kLogVersion).size(), "# gaslift-log v2");
  CHECK_THROWS_AS(read_log_csv(other), std::runtime_error);
  CHECK_THROWS_AS(read_log_csv("seed,t\n1,0\n"), std::runtime_error);
  std::string broken = text;
  broken.insert(broken.rfind('\n', broken.size() - 2) + 1, "1,2,x\n");
  CHECK_THROWS_AS(read_log_csv(broken), std::runtime_error);
}

TEST_CASE("decisions csv: round trip keeps kinds, flags and timings") {
  std::vector<DecisionRow> rows{
      {1, 10.0, SupervisorKind::SSRTO, false, Vec3(1, 2, 3), Vec3(2.5, 2.5, 2.5), 0.01, 0.0, 0.011},
      {1, 20.0, SupervisorKind::SSRTO, true, Vec3(1.5, 1, 5), Vec3(2.1, 1.9, 3.5), 0.2, 0.1, 0.3125},
  };
  const std::string text = write_decisions_csv(rows);
  const auto back = read_decisions_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].kind == SupervisorKind::SSRTO);
  CHECK_FALSE(back[0].acted);
  CHECK(back[1].acted);
  CHECK(back[1].u_applied == rows[1].u_applied);
  CHECK(back[1].total_ms == 0.3125);
  CHECK(write_decisions_csv(back) == text);
  CHECK_THROWS_AS(read_decisions_csv(std::string(kLogVersion) + "\n"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Metrics

TEST_CASE("moving average: trailing window, partial at the start") {
  const std::vector<double> s{1, 2, 3, 4, 5, 6};
  const auto m = moving_average(s, 3);
  CHECK(m[0] == doctest::Approx(1.0));
  CHECK(m[1] == doctest::Approx(1.5));
  CHECK(m[2] == doctest::Approx(2.0));
  CHECK(m[5] == doctest::Approx(5.0));
  CHECK(moving_average(s, 1) == s);
  const auto wide = moving_average(s, 100);
  CHECK(wide.back() == doctest::Approx(3.5));
  CHECK(moving_average(std::vector<double>(5, 2.0), 60) == std::vector<double>(5, 2.0));
  CHECK_THROWS_AS(moving_average(s, 0), std::invalid_argument);
}

TEST_CASE("quartiles and timing statistics") {
  const auto q = quartiles({4, 1, 3, 2, 5});
  CHECK(q == std::array<double, 5>{1, 2, 3, 4, 5});
  const auto q2 = quartiles({0, 1});
  CHECK(q2[1] == doctest::Approx(0.25));
  CHECK(q2[2] == doctest::Approx(0.5));
  CHECK(quartiles({}) == std::array<double, 5>{});
  const auto t = timing_stats({2.0, 4.0, 6.0});
  CHECK(t.count == 3);
  CHECK(t.mean_ms == 4.0);
  CHECK(t.min_ms == 2.0);
  CHECK(t.max_ms == 6.0);
}

TEST_CASE("metrics: a run against itself shows no difference anywhere") {
  auto cfg = short_run(120.0, {1, 2});
  const auto runs = simulate_all(cfg, {SupervisorKind::FIXED});
  const auto log = log_rows(runs);
  const auto m = compute_metrics(log, log, decision_rows(runs), cfg.econ, cfg.experiment.initial_inputs, 1.0, 60.0);
  REQUIRE(m.percent.size() == 120);
  for (double p : m.percent) CHECK(p == 0.0);
  for (double p : m.percent_smoothed) CHECK(p == 0.0);
  CHECK(m.cumulative_percent_min == 0.0);
  CHECK(m.cumulative_profit == m.cumulative_baseline_profit);
  CHECK(m.decisions == 24);
  CHECK(m.acted == 24);
  CHECK(m.input_change_quartiles == std::array<double, 5>{});
}

TEST_CASE("metrics: profit, percentages and input moves on a hand-made log") {
  const EconomicSettings econ;   // prices 20, 10, 30
  std::vector<LogRow> log, base;
  const Vec3 sp(2.5, 2.5, 2.5);
  for (std::uint64_t seed : {7u, 3u}) {
    for (int k = 1; k <= 4; ++k) {
      // The baseline earns 600; the run earns 660 on odd samples and 600 otherwise.
      base.push_back(synthetic_row(seed, k, Vec3(10, 10, 10), sp));
      log.push_back(synthetic_row(seed, k, k % 2 ? Vec3(11, 11, 11) : Vec3(10, 10, 10), sp));
    }
  }
  std::vector<DecisionRow> dec{
      {3, 2.0, SupervisorKind::ROPA, true, Vec3::Zero(), Vec3(3.5, 2.5, 1.5), 1, 1, 2.0},
      {3, 4.0, SupervisorKind::ROPA, true, Vec3::Zero(), Vec3(3.5, 2.0, 1.5), 1, 1, 4.0},
      {7, 2.0, SupervisorKind::ROPA, false, Vec3::Zero(), Vec3(2.5, 2.5, 2.5), 1, 0, 1.0},
  };
  const auto m = compute_metrics(log, base, dec, econ, sp, 1.0, 2.0);
  REQUIRE(m.percent.size() == 4);
  CHECK(m.profit[0] == doctest::Approx(660.0));
  CHECK(m.baseline_profit[1] == doctest::Approx(600.0));
  CHECK(m.percent[0] == doctest::Approx(10.0));
  CHECK(m.percent[1] == doctest::Approx(0.0));
  CHECK(m.percent_smoothed[0] == doctest::Approx(10.0));
  CHECK(m.percent_smoothed[1] == doctest::Approx(5.0));
  CHECK(m.percent_smoothed[3] == doctest::Approx(5.0));
  CHECK(m.mean_percent == doctest::Approx(5.0));
  // Cumulative values integrate the unsmoothed series over minutes.
  CHECK(m.cumulative_percent_min == doctest::Approx(20.0 / 60.0));
  CHECK(m.cumulative_profit == doctest::Approx((660.0 * 2 + 600.0 * 2) / 60.0));
  // Seed 3 moves (1, 0, 1) then (0, 0.5, 0); seed 7 holds.
  CHECK(m.input_changes.size() == 9);
  CHECK(m.input_change_quartiles[4] == doctest::Approx(1.0));
  CHECK(m.input_change_quartiles[2] == doctest::Approx(0.0));
  CHECK(m.decisions == 3);
  CHECK(m.acted == 2);
  CHECK(m.timing.mean_ms == doctest::Approx(7.0 / 3.0));
  CHECK(m.acting_timing.mean_ms == doctest::Approx(3.0));
  CHECK(m.acting_timing.min_ms == 2.0);
}

TEST_CASE("metrics: the baseline must cover every seed of the run") {
  std::vector<LogRow> log{synthetic_row(1, 1.0, Vec3::Ones(), Vec3::Constant(2.5)),
                          synthetic_row(2, 1.0, Vec3::Ones(), Vec3::Constant(2.5))};
  std::vector<LogRow> base{log.front()};
  CHECK_THROWS_AS(compute_metrics(log, base, {}, EconomicSettings{}, Vec3::Constant(2.5), 1.0, 60.0),
                  std::runtime_error);
}

// ---------------------------------------------------------------------------
// Runs

TEST_CASE("run: output files, exact recomputation and byte-identical repeats") {
  auto cfg = short_run(120.0, {1, 2});
  const auto dir_a = scratch_dir("repeat_a");
  const auto dir_b = scratch_dir("repeat_b");
  const auto a = run_experiment(cfg, SupervisorKind::ROPA, dir_a);
  CHECK(a.failures.empty());
  for (const char* f : {"log.csv", "baseline_log.csv", "decisions.csv", "profile.csv", "summary.json", "config.json"}) {
    CHECK(std::filesystem::exists(dir_a / f));
  }
  const json summary = json::parse(slurp(dir_a / "summary.json"));
  CHECK(summary["supervisor"] == "ropa");
  CHECK(summary["seeds"] == json::array({1, 2}));
  CHECK(summary["replicates"]["count"] == 2);
  CHECK(summary["metrics"] == json::parse(metrics_json(recompute_metrics(dir_a))));
  CHECK(summary["metrics"]["decisions"] == 24);

  cfg.experiment.parallel = false;
  run_experiment(cfg, SupervisorKind::ROPA, dir_b);
  CHECK(slurp(dir_a / "log.csv") == slurp(dir_b / "log.csv"));
  CHECK(slurp(dir_a / "baseline_log.csv") == slurp(dir_b / "baseline_log.csv"));
  CHECK(slurp(dir_a / "profile.csv") == slurp(dir_b / "profile.csv"));

  const auto rows = read_log_csv(slurp(dir_a / "log.csv"));
  CHECK(rows.size() == 240);
  CHECK(rows.front().seed == 1);
  CHECK(rows.back().seed == 2);
  CHECK(rows.back().t == doctest::Approx(120.0));
}

TEST_CASE("run: a different seed gives a different noise realization") {
  const auto a = simulate(short_run(60.0, {1}), SupervisorKind::FIXED, 1);
  const auto b = simulate(short_run(60.0, {2}), SupervisorKind::FIXED, 2);
  CHECK(a.samples.back().measured.q_l != b.samples.back().measured.q_l);
  CHECK(a.samples.back().true_state.stacked() == b.samples.back().true_state.stacked());
}

TEST_CASE("run: fixed baseline as the supervisor compares to itself") {
  const auto dir = scratch_dir("fixed");
  const auto r = run_experiment(short_run(60.0, {4}), SupervisorKind::FIXED, dir);
  CHECK(r.metrics.cumulative_percent_min == 0.0);
  for (double p : r.metrics.percent) CHECK(p == 0.0);
  for (const auto& u : r.metrics.mean_setpoints) CHECK(u == Vec3::Constant(2.5));
  CHECK(slurp(dir / "log.csv") == slurp(dir / "baseline_log.csv"));
}

TEST_CASE("run: averaging seeds shrinks the noise-driven spread of the input profile") {
  auto cfg = short_run(200.0, {1, 2});
  const auto avg = run_experiment(cfg, SupervisorKind::ROPA, scratch_dir("avg")).metrics;
  std::vector<MetricsSummary> single;
  for (std::uint64_t seed : {1u, 2u}) {
    single.push_back(run_experiment(short_run(200.0, {seed}), SupervisorKind::ROPA,
                                    scratch_dir("single" + std::to_string(seed)))
                         .metrics);
  }
  cfg.sim.noise = NoiseStd{0.0, 0.0, 0.0};
  cfg.experiment.seeds = {1};
  const auto clean = run_experiment(cfg, SupervisorKind::ROPA, scratch_dir("clean")).metrics;
  auto spread = [&](const MetricsSummary& m) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.mean_setpoints.size(); ++k) {
      s += (m.mean_setpoints[k] - clean.mean_setpoints[k]).squaredNorm();
    }
    return s / static_cast<double>(m.mean_setpoints.size());
  };
  const double averaged = spread(avg);
  const double singles = 0.5 * (spread(single[0]) + spread(single[1]));
  MESSAGE("spread averaged " << averaged << ", single seeds " << spread(single[0]) << " / " << spread(single[1]));
  CHECK(averaged > 0.0);
  CHECK(averaged < singles);
}

TEST_CASE("run: a failing run keeps its partial log and reports the failure") {
  auto cfg = HarnessConfig::parse(R"({
    "scenario": {"name": "pump trip", "knots": [
      {"time_s": 0, "valve_openings": [0.8, 0.6, 0.8]},
      {"time_s": 30, "valve_openings": [0.8, 0.6, 0.8]},
      {"time_s": 60, "valve_openings": [0.8, 0.6, 0.8], "pump_pressure_barg": 0.01}]},
    "experiment": {"horizon_s": 120, "seeds": [1]}})");
  const auto dir = scratch_dir("failure");
  const auto r = run_experiment(cfg, SupervisorKind::ROPA, dir);
  REQUIRE(r.failures.size() == 2);
  CHECK(r.failures.front().find("ropa seed 1") == 0);
  const auto rows = read_log_csv(slurp(dir / "log.csv"));
  CHECK(rows.size() > 10);
  CHECK(rows.size() < 120);
  const json summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary["failures"].size() == 2);
  CHECK(summary["metrics"]["samples"] == rows.size());
}

// ---------------------------------------------------------------------------
// Comparison

TEST_CASE("compare: a run against itself gives zero deltas") {
  const auto dir = scratch_dir("self");
  run_experiment(short_run(60.0, {1}), SupervisorKind::ROPA, dir);
  const auto rep = compare_runs({dir, dir});
  const json j = json::parse(rep.to_json());
  REQUIRE(j["entries"].size() == 2);
  for (const auto& [key, value] : j["entries"][1]["delta"].items()) {
    CAPTURE(key);
    CHECK(value.get<double>() == 0.0);
  }
  CHECK(rep.profile_csv().rfind("label,t,percent,percent_smoothed\n", 0) == 0);
  CHECK(rep.input_usage_csv().rfind("label,index,abs_change\n", 0) == 0);
  CHECK(rep.timing_csv().rfind("label,index,total_ms\n", 0) == 0);
}

TEST_CASE("compare: runs on different scenarios or seeds are rejected") {
  const auto a = scratch_dir("cmp_a");
  const auto b = scratch_dir("cmp_b");
  const auto c = scratch_dir("cmp_c");
  run_experiment(short_run(60.0, {1}), SupervisorKind::FIXED, a);
  run_experiment(short_run(60.0, {2}), SupervisorKind::FIXED, b);
  auto cfg = short_run(60.0, {1});
  cfg.scenario = DisturbanceProfile({ProfileKnot{0.0, Vec3::Ones(), cfg.scenario.at(0.0).p_pump}});
  run_experiment(cfg, SupervisorKind::FIXED, c);
  CHECK_THROWS_AS(compare_runs({a, b}), ComparisonError);
  CHECK_THROWS_AS(compare_runs({a, c}), ComparisonError);
  CHECK_THROWS_AS(compare_runs({}), ComparisonError);
  CHECK_NOTHROW(compare_runs({a, a}));
}

TEST_CASE("compare: orderings sort by cumulative improvement and by acting time") {
  auto cfg = short_run(300.0, {1});
  const auto ropa = scratch_dir("ord_ropa");
  const auto fixed = scratch_dir("ord_fixed");
  run_experiment(cfg, SupervisorKind::FIXED, fixed);
  run_experiment(cfg, SupervisorKind::ROPA, ropa);
  const json j = json::parse(compare_runs({fixed, ropa}).to_json());
  CHECK(j["reference"] == "gaslift_harness_ord_fixed");
  CHECK(j["profit_ordering"][0] == "gaslift_harness_ord_ropa");
  CHECK(j["timing_ordering"] == json::array({"gaslift_harness_ord_ropa"}));
  CHECK(j["entries"][1]["delta"]["cumulative_percent_min"].get<double>() > 0.0);
}

// ---------------------------------------------------------------------------
// Step response

TEST_CASE("crossing time: first-order response crosses 95% at tau ln 20") {
  const double tau = 5.0;
  std::vector<double> t, y;
  for (int k = 0; k <= 1000; ++k) {
    t.push_back(0.1 * k);
    y.push_back(3.0 - 2.0 * std::exp(-t.back() / tau));
  }
  CHECK(crossing_time(t, y, 0.95) == doctest::Approx(tau * std::log(20.0)).epsilon(1e-3));
  std::vector<double> down(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) down[k] = -y[k];
  CHECK(crossing_time(t, down, 0.95) == doctest::Approx(tau * std::log(20.0)).epsilon(1e-3));
  CHECK_THROWS_AS(crossing_time(t, std::vector<double>(t.size(), 1.0), 0.95), NoSettling);
  std::vector<double> ramp(t.begin(), t.end());
  CHECK_THROWS_AS(crossing_time(t, ramp, 0.95), NoSettling);
}

TEST_CASE("recommended period: half the response gap, at least one second") {
  CHECK(recommended_period(4.0, 24.0) == 10.0);
  CHECK(recommended_period(4.0, 20.0) == 8.0);
  CHECK(recommended_period(4.0, 4.5) == 1.0);
  CHECK(recommended_period(10.0, 5.0) == 1.0);
}

TEST_CASE("step test: flow loop tracks in about 4 s and the plant settles in about 20 s") {
  const auto rep = step_test(HarnessConfig::defaults());
  MESSAGE("control " << rep.control_response_s << " s, plant " << rep.plant_response_s << " s, period "
                     << rep.recommended_period_s << " s");
  CHECK(rep.control_response_s == doctest::Approx(1.33 * std::log(20.0)).epsilon(0.05));
  CHECK(rep.control_response_s == doctest::Approx(4.0).epsilon(0.1));
  CHECK(rep.plant_response_s >= 10.0);
  CHECK(rep.plant_response_s <= 30.0);
  CHECK(rep.recommended_period_s >= 5.0);
  CHECK(rep.recommended_period_s <= 15.0);
  CHECK(rep.t.size() == 301);
  const json j = json::parse(rep.to_json());
  CHECK(j["well"] == 1);
}

TEST_CASE("step test: a zero step is refused instead of timed") {
  auto cfg = HarnessConfig::defaults();
  cfg.step_test.magnitude_slpm = 0.0;
  CHECK_THROWS_AS(step_test(cfg), NoSettling);
}

TEST_CASE("step test: a downward step on another well gives the same kind of report") {
  auto cfg = HarnessConfig::parse(R"({"step_test": {"well": 3, "magnitude_slpm": -0.5}})");
  const auto rep = step_test(cfg);
  CHECK(rep.well == 2);
  CHECK(rep.gas_rate.back() == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(rep.control_response_s == doctest::Approx(4.0).epsilon(0.1));
  CHECK(rep.recommended_period_s >= 1.0);
}

// ---------------------------------------------------------------------------
// Oracle

TEST_CASE("oracle check: the NLP optimum sits within one grid cell of the brute-force optimum") {
  auto cfg = HarnessConfig::defaults();
  cfg.oracle_time_s = 1200.0;
  const auto check = oracle_check(cfg);
  CHECK(check.dist.v_o == Vec3(0.4, 0.6, 0.4));
  CHECK(check.grid.failures == 0);
  CHECK((check.nlp.u.qg_sp - check.grid.best.qg_sp).cwiseAbs().maxCoeff() <= cfg.oracle_grid_slpm + 1e-9);
  CHECK(check.nlp.J >= check.grid.J * (1.0 - 1e-9));
  const json j = json::parse(check.to_json());
  CHECK(j["within_one_cell"] == true);
}
