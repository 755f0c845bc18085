#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gaslift/harness.hpp"

namespace gaslift {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Closed-loop runs

RunTrace simulate(const HarnessConfig& cfg, SupervisorKind kind, std::uint64_t seed) {
  RunTrace run;
  run.kind = kind;
  run.seed = seed;
  SimConfig sim = cfg.sim;
  sim.rng_seed = seed;
  try {
    DigitalTwin twin(cfg.model, cfg.true_theta(), sim, cfg.scenario);
    auto supervisor = make_supervisor(cfg.supervisor(kind), cfg.model);
    ControlInputs u;
    u.qg_sp = cfg.experiment.initial_inputs;
    supervisor->reset(twin.initialize(u), u.qg_sp, sim.sensor_period);

    const long samples = std::lround(cfg.experiment.horizon_s / sim.sensor_period);
    run.samples.reserve(static_cast<std::size_t>(samples));
    run.decisions.reserve(static_cast<std::size_t>(samples));
    for (long k = 0; k < samples; ++k) {
      run.samples.push_back(twin.step(u));
      if (auto d = supervisor->on_sample(run.samples.back())) {
        u.qg_sp = d->u_applied;
        run.decisions.push_back(std::move(*d));
      }
    }
  } catch (const std::exception& e) {
    run.failure = e.what();
  }
  return run;
}

std::vector<RunTrace> simulate_all(const HarnessConfig& cfg, const std::vector<SupervisorKind>& kinds) {
  const auto& seeds = cfg.experiment.seeds;
  const int jobs = static_cast<int>(kinds.size() * seeds.size());
  std::vector<RunTrace> runs(static_cast<std::size_t>(jobs));
#pragma omp parallel for schedule(dynamic) if (cfg.experiment.parallel)
  for (int j = 0; j < jobs; ++j) {
    const auto kind = kinds[static_cast<std::size_t>(j) / seeds.size()];
    const auto seed = seeds[static_cast<std::size_t>(j) % seeds.size()];
    runs[static_cast<std::size_t>(j)] = simulate(cfg, kind, seed);
  }
  return runs;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

constexpr int kLogColumns = 27;
constexpr int kDecisionColumns = 13;

const char* kLogHeader =
    "seed,t,p_rh_1,p_rh_2,p_rh_3,p_pump,q_l_1,q_l_2,q_l_3,q_g_1,q_g_2,q_g_3,qg_sp_1,qg_sp_2,qg_sp_3,"
    "theta_res_1,theta_res_2,theta_res_3,theta_top_1,theta_top_2,theta_top_3,"
    "m_g_1,m_g_2,m_g_3,m_l_1,m_l_2,m_l_3";

const char* kDecisionHeader =
    "seed,t,kind,acted,u_star_1,u_star_2,u_star_3,u_applied_1,u_applied_2,u_applied_3,"
    "t_adapt_ms,t_opt_ms,t_total_ms";

// Shortest representation that reads back to the same double.
void put(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

void put(std::string& out, const Vec3& v) {
  for (int i = 0; i < 3; ++i) {
    out += ',';
    put(out, v(i));
  }
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

double to_double(std::string_view s, int line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("csv line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t to_seed(std::string_view s, int line) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("csv line " + std::to_string(line) + ": bad seed '" + std::string(s) + "'");
  }
  return v;
}

Vec3 to_vec3(const std::vector<std::string_view>& f, int first, int line) {
  return Vec3(to_double(f[first], line), to_double(f[first + 1], line), to_double(f[first + 2], line));
}

// Checks the version and header lines and returns the data lines.
std::vector<std::string_view> data_lines(std::string_view text, const char* version, const char* header) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty() || lines[0] != version) {
    throw std::runtime_error(std::string("unsupported csv version, expected '") + version + "'");
  }
  if (lines.size() < 2 || lines[1] != header) throw std::runtime_error("unexpected csv header");
  return {lines.begin() + 2, lines.end()};
}

}  // namespace

std::vector<LogRow> log_rows(const std::vector<RunTrace>& runs) {
  std::vector<LogRow> rows;
  for (const auto& run : runs) {
    for (const auto& s : run.samples) {
      rows.push_back(LogRow{run.seed, s.t, s.measured, s.setpoint, s.true_theta, s.true_state});
    }
  }
  return rows;
}

std::vector<DecisionRow> decision_rows(const std::vector<RunTrace>& runs) {
  std::vector<DecisionRow> rows;
  for (const auto& run : runs) {
    for (const auto& d : run.decisions) {
      rows.push_back(DecisionRow{run.seed, d.t, run.kind, d.acted, d.u_star, d.u_applied, d.timing.adapt_ms,
                                 d.timing.opt_ms, d.timing.total_ms});
    }
  }
  return rows;
}

std::string write_log_csv(const std::vector<LogRow>& rows) {
  std::string out = std::string(kLogVersion) + "\n" + kLogHeader + "\n";
  out.reserve(out.size() + rows.size() * 500);
  for (const auto& r : rows) {
    out += std::to_string(r.seed);
    out += ',';
    put(out, r.t);
    put(out, r.measured.p_rh);
    out += ',';
    put(out, r.measured.p_pump);
    put(out, r.measured.q_l);
    put(out, r.measured.q_g);
    put(out, r.setpoint);
    put(out, r.theta.res);
    put(out, r.theta.top);
    put(out, r.state.m_g);
    put(out, r.state.m_l);
    out += '\n';
  }
  return out;
}

std::vector<LogRow> read_log_csv(const std::string& text) {
  std::vector<LogRow> rows;
  int line = 2;
  for (auto l : data_lines(text, kLogVersion, kLogHeader)) {
    ++line;
    if (l.empty()) continue;
    const auto f = split(l);
    if (static_cast<int>(f.size()) != kLogColumns) {
      throw std::runtime_error("log line " + std::to_string(line) + ": expected " + std::to_string(kLogColumns) +
                               " columns");
    }
    LogRow r;
    r.seed = to_seed(f[0], line);
    r.t = to_double(f[1], line);
    r.measured.p_rh = to_vec3(f, 2, line);
    r.measured.p_pump = to_double(f[5], line);
    r.measured.q_l = to_vec3(f, 6, line);
    r.measured.q_g = to_vec3(f, 9, line);
    r.setpoint = to_vec3(f, 12, line);
    r.theta.res = to_vec3(f, 15, line);
    r.theta.top = to_vec3(f, 18, line);
    r.state.m_g = to_vec3(f, 21, line);
    r.state.m_l = to_vec3(f, 24, line);
    rows.push_back(r);
  }
  return rows;
}

std::string write_decisions_csv(const std::vector<DecisionRow>& rows) {
  std::string out = std::string(kDecisionsVersion) + "\n" + kDecisionHeader + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed);
    out += ',';
    put(out, r.t);
    out += ',';
    out += to_string(r.kind);
    out += r.acted ? ",1" : ",0";
    put(out, r.u_star);
    put(out, r.u_applied);
    for (double ms : {r.adapt_ms, r.opt_ms, r.total_ms}) {
      out += ',';
      put(out, ms);
    }
    out += '\n';
  }
  return out;
}

std::vector<DecisionRow> read_decisions_csv(const std::string& text) {
  std::vector<DecisionRow> rows;
  int line = 2;
  for (auto l : data_lines(text, kDecisionsVersion, kDecisionHeader)) {
    ++line;
    if (l.empty()) continue;
    const auto f = split(l);
    if (static_cast<int>(f.size()) != kDecisionColumns) {
      throw std::runtime_error("decisions line " + std::to_string(line) + ": wrong column count");
    }
    DecisionRow r;
    r.seed = to_seed(f[0], line);
    r.t = to_double(f[1], line);
    std::string kind(f[2]);
    for (auto& c : kind) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const auto parsed = parse_supervisor_kind(kind);
    if (!parsed) throw std::runtime_error("decisions line " + std::to_string(line) + ": unknown kind");
    r.kind = *parsed;
    if (f[3] != "0" && f[3] != "1") throw std::runtime_error("decisions line " + std::to_string(line) + ": bad flag");
    r.acted = f[3] == "1";
    r.u_star = to_vec3(f, 4, line);
    r.u_applied = to_vec3(f, 7, line);
    r.adapt_ms = to_double(f[10], line);
    r.opt_ms = to_double(f[11], line);
    r.total_ms = to_double(f[12], line);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Run directories

namespace {

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

json vec_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

Vec3 vec_from(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

std::string profile_csv(const MetricsSummary& m) {
  std::string out = "t,qg_sp_1,qg_sp_2,qg_sp_3,profit,baseline_profit,percent,percent_smoothed\n";
  for (std::size_t k = 0; k < m.t.size(); ++k) {
    put(out, m.t[k]);
    put(out, m.mean_setpoints[k]);
    for (double v : {m.profit[k], m.baseline_profit[k], m.percent[k], m.percent_smoothed[k]}) {
      out += ',';
      put(out, v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace

RunResult run_experiment(const HarnessConfig& cfg, SupervisorKind kind, const std::filesystem::path& out_dir) {
  std::vector<SupervisorKind> kinds{kind};
  if (kind != SupervisorKind::FIXED) kinds.push_back(SupervisorKind::FIXED);
  const auto runs = simulate_all(cfg, kinds);
  const auto per_kind = cfg.experiment.seeds.size();
  const std::vector<RunTrace> own(runs.begin(), runs.begin() + static_cast<long>(per_kind));
  const std::vector<RunTrace> base(runs.end() - static_cast<long>(per_kind), runs.end());

  RunResult result;
  result.dir = out_dir;
  for (const auto& r : runs) {
    if (r.failure) {
      result.failures.push_back(std::string(to_string(r.kind)) + " seed " + std::to_string(r.seed) + ": " +
                                *r.failure);
    }
  }

  std::filesystem::create_directories(out_dir);
  const std::string log_text = write_log_csv(log_rows(own));
  const std::string base_text = write_log_csv(log_rows(base));
  const std::string decisions_text = write_decisions_csv(decision_rows(own));
  write_file(out_dir / "log.csv", log_text);
  write_file(out_dir / "baseline_log.csv", base_text);
  write_file(out_dir / "decisions.csv", decisions_text);
  write_file(out_dir / "config.json", cfg.to_json());

  // Metrics come from the text just written, so recomputation matches exactly.
  result.metrics = compute_metrics(read_log_csv(log_text), read_log_csv(base_text),
                                   read_decisions_csv(decisions_text), cfg.econ, cfg.experiment.initial_inputs,
                                   cfg.sim.sensor_period, cfg.experiment.moving_average_s);
  write_file(out_dir / "profile.csv", profile_csv(result.metrics));

  json knots = json::array();
  for (const auto& k : cfg.scenario.knots()) {
    knots.push_back({{"time_s", k.t}, {"valve_openings", vec_json(k.v_o)}, {"pump_pressure_pa", k.p_pump}});
  }
  json summary;
  summary["format"] = "gaslift-summary v1";
  summary["supervisor"] = to_string(kind);
  summary["scenario"] = {{"name", cfg.scenario_name}, {"knots", knots}};
  summary["seeds"] = cfg.experiment.seeds;
  summary["replicates"] = {{"count", cfg.experiment.seeds.size()},
                           {"note", "seed-averaged replicates; the rig averaged two experiments"}};
  summary["horizon_s"] = cfg.experiment.horizon_s;
  summary["sample_period_s"] = cfg.sim.sensor_period;
  summary["moving_average_s"] = cfg.experiment.moving_average_s;
  summary["initial_inputs_slpm"] = vec_json(cfg.experiment.initial_inputs);
  summary["prices"] = vec_json(cfg.econ.price);
  summary["noise"] = {{"pressure_pa", cfg.sim.noise.pressure_pa},
                      {"liquid_lpm", cfg.sim.noise.liquid_lpm},
                      {"gas_slpm", cfg.sim.noise.gas_slpm}};
  summary["failures"] = result.failures;
  summary["metrics"] = json::parse(metrics_json(result.metrics));
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
  return result;
}

MetricsSummary recompute_metrics(const std::filesystem::path& run_dir) {
  const json summary = json::parse(read_file(run_dir / "summary.json"));
  if (summary.value("format", "") != "gaslift-summary v1") {
    throw std::runtime_error(run_dir.string() + ": unsupported summary format");
  }
  EconomicSettings econ;
  econ.price = vec_from(summary.at("prices"));
  return compute_metrics(read_log_csv(read_file(run_dir / "log.csv")),
                         read_log_csv(read_file(run_dir / "baseline_log.csv")),
                         read_decisions_csv(read_file(run_dir / "decisions.csv")), econ,
                         vec_from(summary.at("initial_inputs_slpm")), summary.at("sample_period_s").get<double>(),
                         summary.at("moving_average_s").get<double>());
}

// ---------------------------------------------------------------------------
// Step response

double crossing_time(const std::vector<double>& t, const std::vector<double>& y, double fraction) {
  if (t.size() != y.size() || t.size() < 2) throw std::invalid_argument("crossing_time: need matching series");
  const double start = y.front();
  const double change = y.back() - start;
  if (!(std::abs(change) > 1e-12 * (1.0 + std::abs(start)))) {
    throw NoSettling("response shows no change to settle to");
  }
  // The tail must already sit within the band the crossing is measured against.
  const double band = (1.0 - fraction) * std::abs(change);
  const std::size_t tail = t.size() - std::max<std::size_t>(2, t.size() / 10);
  for (std::size_t k = tail; k < y.size(); ++k) {
    if (std::abs(y[k] - y.back()) > band) throw NoSettling("response still moving at the end of the horizon");
  }
  for (std::size_t k = 1; k < y.size(); ++k) {
    const double covered = (y[k] - start) / change;
    if (covered >= fraction) {
      const double before = (y[k - 1] - start) / change;
      const double w = (fraction - before) / (covered - before);
      return t[k - 1] + w * (t[k] - t[k - 1]);
    }
  }
  throw NoSettling("response never reaches the settle fraction");
}

double recommended_period(double control_response_s, double plant_response_s) {
  return std::max(1.0, std::round(0.5 * (plant_response_s - control_response_s)));
}

StepTestReport step_test(const HarnessConfig& cfg) {
  const auto& spec = cfg.step_test;
  if (spec.magnitude_slpm == 0.0) throw NoSettling("zero-magnitude step has no response to time");

  SimConfig sim = cfg.sim;
  sim.noise = NoiseStd{0.0, 0.0, 0.0};
  const DisturbanceState d0 = cfg.scenario.at(0.0);
  DigitalTwin twin(cfg.model, cfg.true_theta(), sim, DisturbanceProfile({ProfileKnot{0.0, d0.v_o, d0.p_pump}}));

  ControlInputs u;
  u.qg_sp = spec.base_inputs;
  const TwinSnapshot s0 = twin.initialize(u);
  u.qg_sp(spec.well) += spec.magnitude_slpm;

  StepTestReport rep;
  rep.well = spec.well;
  rep.magnitude_slpm = spec.magnitude_slpm;
  rep.t.push_back(s0.t);
  rep.gas_rate.push_back(s0.measured.q_g(spec.well));
  rep.liquid_rate.push_back(s0.measured.q_l(spec.well));
  const long samples = std::lround(spec.horizon_s / sim.sensor_period);
  for (long k = 0; k < samples; ++k) {
    const TwinSnapshot s = twin.step(u);
    rep.t.push_back(s.t);
    rep.gas_rate.push_back(s.measured.q_g(spec.well));
    rep.liquid_rate.push_back(s.measured.q_l(spec.well));
  }
  rep.control_response_s = crossing_time(rep.t, rep.gas_rate, spec.settle_fraction);
  rep.plant_response_s = crossing_time(rep.t, rep.liquid_rate, spec.settle_fraction);
  rep.recommended_period_s = recommended_period(rep.control_response_s, rep.plant_response_s);
  return rep;
}

std::string StepTestReport::to_json() const {
  json j;
  j["well"] = well + 1;
  j["magnitude_slpm"] = magnitude_slpm;
  j["control_response_s"] = control_response_s;
  j["plant_response_s"] = plant_response_s;
  j["recommended_period_s"] = recommended_period_s;
  j["t"] = t;
  j["gas_rate_slpm"] = gas_rate;
  j["liquid_rate_lpm"] = liquid_rate;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Oracle

OracleCheck oracle_check(const HarnessConfig& cfg) {
  OracleCheck out;
  out.t = cfg.oracle_time_s;
  out.dist = cfg.scenario.at(cfg.oracle_time_s);
  out.grid_step = cfg.oracle_grid_slpm;
  const ThetaVector theta = cfg.true_theta();
  out.grid = brute_force_ss_oracle(theta, out.dist, cfg.model, cfg.econ, cfg.oracle_grid_slpm);
  out.nlp = solve_ss_econ(theta, out.dist, cfg.model, cfg.econ, cfg.solver, out.grid.best);
  return out;
}

std::string OracleCheck::to_json() const {
  json j;
  j["t_s"] = t;
  j["valve_openings"] = vec_json(dist.v_o);
  j["pump_pressure_pa"] = dist.p_pump;
  j["grid_step_slpm"] = grid_step;
  j["grid"] = {{"inputs_slpm", vec_json(grid.best.qg_sp)},
               {"profit", grid.J},
               {"candidates", grid.candidates},
               {"failures", grid.failures}};
  j["nlp"] = {{"inputs_slpm", vec_json(nlp.u.qg_sp)},
              {"profit", nlp.J},
              {"status", to_string(nlp.kkt.status)},
              {"iterations", nlp.kkt.iterations},
              {"stationarity", nlp.kkt.stationarity}};
  const double max_gap = (nlp.u.qg_sp - grid.best.qg_sp).cwiseAbs().maxCoeff();
  j["max_input_gap_slpm"] = max_gap;
  j["within_one_cell"] = max_gap <= grid_step + 1e-9;
  j["relative_profit_gap"] = grid.J != 0.0 ? (nlp.J - grid.J) / std::abs(grid.J) : 0.0;
  return j.dump(2) + "\n";
}

}  // namespace gaslift
