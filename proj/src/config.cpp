#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gaslift/harness.hpp"
#include "gaslift/units.hpp"

namespace gaslift {

using nlohmann::json;

ConfigError::ConfigError(std::string path, std::string field, const std::string& message)
    : std::runtime_error(path + ": " + field + ": " + message), path_(std::move(path)), field_(std::move(field)) {}

namespace {

// Walks one JSON object, remembering which keys were read so that leftovers
// (usually typos) can be reported with their full dotted name.
class Section {
 public:
  Section(const json& node, std::string prefix, const std::string& source)
      : node_(node), prefix_(std::move(prefix)), source_(source) {
    if (!node_.is_object()) fail("", "expected an object");
  }

  bool has(const char* key) const { return node_.contains(key); }

  void number(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(key, "must be finite");
    }
  }

  void integer(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }

  void unsigned_integer(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void boolean(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }

  void text(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }

  template <int N>
  void vector(const char* key, Eigen::Matrix<double, N, 1>& out) {
    if (const json* v = take(key)) out = as_vector<N>(*v, key);
  }

  /// A single number broadcast to all entries, or an array.
  void vec3_or_scalar(const char* key, Vec3& out) {
    if (const json* v = take(key)) {
      if (v->is_number()) {
        out = Vec3::Constant(v->get<double>());
      } else {
        out = as_vector<3>(*v, key);
      }
    }
  }

  void seeds(const char* key, std::vector<std::uint64_t>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "expected an array of seeds");
      out.clear();
      for (const auto& s : *v) {
        if (!s.is_number_unsigned()) fail(key, "seeds must be non-negative integers");
        out.push_back(s.get<std::uint64_t>());
      }
    }
  }

  std::optional<Section> child(const char* key) {
    if (const json* v = take(key)) return Section(*v, field(key), source_);
    return std::nullopt;
  }

  const json* take(const char* key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) fail(it.key(), "unknown key");
    }
  }

  std::string field(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    throw ConfigError(source_, key.empty() ? prefix_ : field(key), message);
  }

 private:
  template <int N>
  Eigen::Matrix<double, N, 1> as_vector(const json& v, const char* key) const {
    if (!v.is_array() || v.size() != static_cast<std::size_t>(N)) {
      fail(key, "expected an array of " + std::to_string(N) + " numbers");
    }
    Eigen::Matrix<double, N, 1> out;
    for (int i = 0; i < N; ++i) {
      if (!v[i].is_number()) fail(key, "expected an array of " + std::to_string(N) + " numbers");
      out(i) = v[i].get<double>();
      if (!std::isfinite(out(i))) fail(key, "must be finite");
    }
    return out;
  }

  const json& node_;
  std::string prefix_;
  const std::string& source_;
  std::set<std::string> seen_;
};

json array_of(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

json array_of(const Vec6& v) {
  json a = json::array();
  for (int i = 0; i < 6; ++i) a.push_back(v(i));
  return a;
}

const char* parameter_set_key(ParameterSet s) {
  return s == ParameterSet::LiquidFraction ? "liquid_fraction" : "valve_coefficients";
}

void read_scenario(Section& sec, HarnessConfig& cfg) {
  sec.text("name", cfg.scenario_name);
  const json* knots = sec.take("knots");
  if (!knots) return;
  if (!knots->is_array() || knots->empty()) sec.fail("knots", "expected a non-empty array");
  std::vector<ProfileKnot> out;
  for (std::size_t i = 0; i < knots->size(); ++i) {
    Section k((*knots)[i], sec.field("knots[" + std::to_string(i) + "]"), cfg.source);
    ProfileKnot knot;
    double pump_barg = units::pa_to_barg(knot.p_pump, cfg.model.constants);
    if (!k.has("time_s")) k.fail("time_s", "required");
    if (!k.has("valve_openings")) k.fail("valve_openings", "required");
    k.number("time_s", knot.t);
    k.vector<3>("valve_openings", knot.v_o);
    k.number("pump_pressure_barg", pump_barg);
    k.finish();
    knot.p_pump = units::barg_to_pa(pump_barg, cfg.model.constants);
    out.push_back(knot);
  }
  cfg.scenario = DisturbanceProfile(std::move(out));
}

void check(bool ok, const HarnessConfig& cfg, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(cfg.source, field, message);
}

bool whole_multiple(double value, double unit) {
  const double ratio = value / unit;
  return ratio >= 1.0 - 1e-12 && std::abs(ratio - std::round(ratio)) <= 1e-9;
}

bool feasible_inputs(const Vec3& u, const EconomicSettings& econ) {
  return (u.array() >= econ.qg_min).all() && (u.array() <= econ.qg_max).all() &&
         u.sum() <= econ.qg_total_max + 1e-12;
}

// Runs a module's own validation and reports its complaint under `field`.
template <class Fn>
void delegate(const HarnessConfig& cfg, const char* field, Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(cfg.source, field, e.what());
  }
}

}  // namespace

HarnessConfig HarnessConfig::defaults() {
  HarnessConfig cfg;
  cfg.scenario = default_depletion_profile(cfg.model.constants);
  return cfg;
}

HarnessConfig HarnessConfig::parse(const std::string& json_text, const std::string& source) {
  HarnessConfig cfg = defaults();
  cfg.source = source;
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source, "<document>", e.what());
  }
  Section top(root, "", cfg.source);

  if (auto model = top.child("model")) {
    if (auto c = model->child("constants")) {
      auto& k = cfg.model.constants;
      c->number("liquid_density_kg_m3", k.rho_l);
      c->number("mixture_viscosity_pa_s", k.mu_mix);
      c->number("gas_molar_mass_kg_mol", k.M_g);
      c->number("gas_constant_j_mol_k", k.R_gas);
      c->number("temperature_k", k.T_amb);
      c->number("gravity_m_s2", k.g_acc);
      c->number("atmospheric_pressure_pa", k.P_atm);
      c->finish();
    }
    if (auto g = model->child("geometry")) {
      g->number("diameter_m", cfg.model.geometry.diameter);
      g->number("length_m", cfg.model.geometry.length);
      g->number("riser_height_m", cfg.model.geometry.riser_height);
      g->finish();
    }
    model->finish();
    // Knot pressures are stored in Pa; rebuild the default scenario in case
    // the atmospheric pressure changed.
    cfg.scenario = default_depletion_profile(cfg.model.constants);
  }
  if (auto c = top.child("calibration")) {
    c->number("liquid_rate_lpm", cfg.calibration.liquid_rate_lpm);
    c->number("riser_head_pressure_pa_gauge", cfg.calibration.riser_head_pa_gauge);
    c->number("gas_rate_slpm", cfg.calibration.gas_rate_slpm);
    c->number("pump_pressure_barg", cfg.calibration.pump_pressure_barg);
    c->finish();
  }
  if (auto p = top.child("plant")) {
    if (!p->has("theta_res") || !p->has("theta_top")) {
      p->fail("", "theta_res and theta_top must be given together");
    }
    ThetaVector th;
    p->vector<3>("theta_res", th.res);
    p->vector<3>("theta_top", th.top);
    p->finish();
    cfg.plant_theta = th;
  }
  if (auto s = top.child("sensors")) {
    s->number("sample_period_s", cfg.sim.sensor_period);
    s->finish();
  }
  if (auto t = top.child("twin")) {
    t->number("integration_step_s", cfg.sim.dt_int);
    t->number("flow_loop_time_constant_s", cfg.sim.tau_ctrl);
    if (auto n = t->child("noise")) {
      n->number("pressure_pa", cfg.sim.noise.pressure_pa);
      n->number("liquid_lpm", cfg.sim.noise.liquid_lpm);
      n->number("gas_slpm", cfg.sim.noise.gas_slpm);
      n->finish();
    }
    t->finish();
  }
  if (auto s = top.child("scenario")) {
    read_scenario(*s, cfg);
    s->finish();
  }
  if (auto e = top.child("experiment")) {
    e->number("horizon_s", cfg.experiment.horizon_s);
    e->seeds("seeds", cfg.experiment.seeds);
    e->vector<3>("initial_inputs_slpm", cfg.experiment.initial_inputs);
    e->boolean("parallel", cfg.experiment.parallel);
    e->number("moving_average_s", cfg.experiment.moving_average_s);
    e->finish();
  }
  if (auto e = top.child("economics")) {
    e->vector<3>("prices", cfg.econ.price);
    e->number("gas_min_slpm", cfg.econ.qg_min);
    e->number("gas_max_slpm", cfg.econ.qg_max);
    e->number("gas_total_max_slpm", cfg.econ.qg_total_max);
    e->number("pressure_margin_pa", cfg.econ.pressure_margin);
    e->finish();
  }
  if (auto s = top.child("solver")) {
    s->number("kkt_tolerance", cfg.solver.kkt_tol);
    s->integer("max_iterations", cfg.solver.max_iter);
    s->finish();
  }
  if (auto r = top.child("ropa")) {
    r->number("period_s", cfg.tuning.ropa_period_s);
    r->number("input_filter_gain", cfg.tuning.ropa_filter_gain);
    r->finish();
  }
  if (auto s = top.child("ssrto")) {
    s->number("ssd_period_s", cfg.tuning.ssrto_period_s);
    s->number("input_filter_gain", cfg.tuning.ssrto_filter_gain);
    s->number("ssd_alpha", cfg.tuning.ssd.alpha);
    s->number("ssd_window_s", cfg.tuning.ssd.window_s);
    s->vector<6>("adaptation_weights", cfg.tuning.adaptation_weights);
    s->finish();
  }
  if (auto d = top.child("drto")) {
    d->number("sampling_time_s", cfg.tuning.drto.grid.element_length);
    d->integer("horizon_elements", cfg.tuning.drto.grid.elements);
    d->vec3_or_scalar("move_weight", cfg.tuning.drto.move_weight);
    d->number("max_input_change_slpm", cfg.tuning.drto.du_max);
    d->finish();
  }
  if (auto f = top.child("fixed")) {
    f->vector<3>("inputs_slpm", cfg.tuning.fixed_inputs);
    f->finish();
  }
  if (auto i = top.child("identifiability")) {
    auto& id = cfg.identifiability;
    std::string set = parameter_set_key(id.parameters);
    i->integer("runs", id.runs);
    i->text("parameter_set", set);
    if (set == "valve_coefficients") {
      id.parameters = ParameterSet::ValveCoefficients;
    } else if (set == "liquid_fraction") {
      id.parameters = ParameterSet::LiquidFraction;
    } else {
      i->fail("parameter_set", "expected valve_coefficients or liquid_fraction");
    }
    i->vector<3>("valve_openings", id.valve_openings);
    i->vector<3>("operating_inputs_slpm", id.operating_inputs);
    i->integer("window_samples", id.window_samples);
    i->unsigned_integer("seed", id.seed);
    Eigen::Vector2d alpha(id.alpha_min, id.alpha_max);
    i->vector<2>("liquid_fraction_bounds", alpha);
    id.alpha_min = alpha(0);
    id.alpha_max = alpha(1);
    i->number("correlation_threshold", id.correlation_threshold);
    i->finish();
  }
  if (auto s = top.child("step_test")) {
    int well = cfg.step_test.well + 1;
    s->integer("well", well);
    cfg.step_test.well = well - 1;
    s->number("magnitude_slpm", cfg.step_test.magnitude_slpm);
    s->number("horizon_s", cfg.step_test.horizon_s);
    s->vector<3>("base_inputs_slpm", cfg.step_test.base_inputs);
    s->number("settle_fraction", cfg.step_test.settle_fraction);
    s->finish();
  }
  if (auto o = top.child("oracle")) {
    o->number("grid_step_slpm", cfg.oracle_grid_slpm);
    o->number("time_s", cfg.oracle_time_s);
    o->finish();
  }
  top.finish();
  cfg.tuning.ssd.sample_period = cfg.sim.sensor_period;
  cfg.validate();
  return cfg;
}

HarnessConfig HarnessConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError(file.string(), "<document>", "cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), file.string());
}

std::string HarnessConfig::to_json() const {
  const auto& k = model.constants;
  json j;
  j["model"]["constants"] = {
      {"liquid_density_kg_m3", k.rho_l}, {"mixture_viscosity_pa_s", k.mu_mix},
      {"gas_molar_mass_kg_mol", k.M_g},  {"gas_constant_j_mol_k", k.R_gas},
      {"temperature_k", k.T_amb},        {"gravity_m_s2", k.g_acc},
      {"atmospheric_pressure_pa", k.P_atm}};
  j["model"]["geometry"] = {{"diameter_m", model.geometry.diameter},
                            {"length_m", model.geometry.length},
                            {"riser_height_m", model.geometry.riser_height}};
  j["calibration"] = {{"liquid_rate_lpm", calibration.liquid_rate_lpm},
                      {"riser_head_pressure_pa_gauge", calibration.riser_head_pa_gauge},
                      {"gas_rate_slpm", calibration.gas_rate_slpm},
                      {"pump_pressure_barg", calibration.pump_pressure_barg}};
  if (plant_theta) {
    j["plant"] = {{"theta_res", array_of(plant_theta->res)}, {"theta_top", array_of(plant_theta->top)}};
  }
  j["sensors"] = {{"sample_period_s", sim.sensor_period}};
  j["twin"] = {{"integration_step_s", sim.dt_int},
               {"flow_loop_time_constant_s", sim.tau_ctrl},
               {"noise",
                {{"pressure_pa", sim.noise.pressure_pa},
                 {"liquid_lpm", sim.noise.liquid_lpm},
                 {"gas_slpm", sim.noise.gas_slpm}}}};
  json knots = json::array();
  for (const auto& knot : scenario.knots()) {
    knots.push_back({{"time_s", knot.t},
                     {"valve_openings", array_of(knot.v_o)},
                     {"pump_pressure_barg", units::pa_to_barg(knot.p_pump, k)}});
  }
  j["scenario"] = {{"name", scenario_name}, {"knots", knots}};
  j["experiment"] = {{"horizon_s", experiment.horizon_s},
                     {"seeds", experiment.seeds},
                     {"initial_inputs_slpm", array_of(experiment.initial_inputs)},
                     {"parallel", experiment.parallel},
                     {"moving_average_s", experiment.moving_average_s}};
  j["economics"] = {{"prices", array_of(econ.price)},
                    {"gas_min_slpm", econ.qg_min},
                    {"gas_max_slpm", econ.qg_max},
                    {"gas_total_max_slpm", econ.qg_total_max},
                    {"pressure_margin_pa", econ.pressure_margin}};
  j["solver"] = {{"kkt_tolerance", solver.kkt_tol}, {"max_iterations", solver.max_iter}};
  j["ropa"] = {{"period_s", tuning.ropa_period_s}, {"input_filter_gain", tuning.ropa_filter_gain}};
  j["ssrto"] = {{"ssd_period_s", tuning.ssrto_period_s},
                {"input_filter_gain", tuning.ssrto_filter_gain},
                {"ssd_alpha", tuning.ssd.alpha},
                {"ssd_window_s", tuning.ssd.window_s},
                {"adaptation_weights", array_of(tuning.adaptation_weights)}};
  j["drto"] = {{"sampling_time_s", tuning.drto.grid.element_length},
               {"horizon_elements", tuning.drto.grid.elements},
               {"move_weight", array_of(tuning.drto.move_weight)},
               {"max_input_change_slpm", tuning.drto.du_max}};
  j["fixed"] = {{"inputs_slpm", array_of(tuning.fixed_inputs)}};
  j["identifiability"] = {{"runs", identifiability.runs},
                          {"parameter_set", parameter_set_key(identifiability.parameters)},
                          {"valve_openings", array_of(identifiability.valve_openings)},
                          {"operating_inputs_slpm", array_of(identifiability.operating_inputs)},
                          {"window_samples", identifiability.window_samples},
                          {"seed", identifiability.seed},
                          {"liquid_fraction_bounds", {identifiability.alpha_min, identifiability.alpha_max}},
                          {"correlation_threshold", identifiability.correlation_threshold}};
  j["step_test"] = {{"well", step_test.well + 1},
                    {"magnitude_slpm", step_test.magnitude_slpm},
                    {"horizon_s", step_test.horizon_s},
                    {"base_inputs_slpm", array_of(step_test.base_inputs)},
                    {"settle_fraction", step_test.settle_fraction}};
  j["oracle"] = {{"grid_step_slpm", oracle_grid_slpm}, {"time_s", oracle_time_s}};
  return j.dump(2) + "\n";
}

void HarnessConfig::validate() const {
  delegate(*this, "model.constants", [&] { model.constants.validate(); });
  delegate(*this, "model.geometry", [&] { model.geometry.validate(); });
  delegate(*this, "twin", [&] { sim.validate(); });
  delegate(*this, "scenario.knots", [&] { scenario.validate(model.constants); });
  delegate(*this, "economics", [&] { econ.validate(); });
  delegate(*this, "solver", [&] { solver.validate(); });

  check(calibration.liquid_rate_lpm > 0.0, *this, "calibration.liquid_rate_lpm", "must be positive");
  check(calibration.gas_rate_slpm > 0.0, *this, "calibration.gas_rate_slpm", "must be positive");
  if (plant_theta) {
    check((plant_theta->stacked().array() > 0.0).all(), *this, "plant", "valve coefficients must be positive");
  }

  const double dt = sim.sensor_period;
  check(experiment.horizon_s > tuning.ssd.window_s, *this, "experiment.horizon_s",
        "must exceed the SSD window");
  check(whole_multiple(experiment.horizon_s, dt), *this, "experiment.horizon_s",
        "must be a multiple of the sensor period");
  check(!experiment.seeds.empty(), *this, "experiment.seeds", "at least one seed is required");
  {
    auto sorted = experiment.seeds;
    std::sort(sorted.begin(), sorted.end());
    check(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), *this, "experiment.seeds",
          "seeds must be distinct");
  }
  check(feasible_inputs(experiment.initial_inputs, econ), *this, "experiment.initial_inputs_slpm",
        "outside the gas constraints");
  check(experiment.moving_average_s >= dt, *this, "experiment.moving_average_s",
        "must cover at least one sample");

  check(tuning.ropa_filter_gain > 0.0 && tuning.ropa_filter_gain <= 1.0, *this, "ropa.input_filter_gain",
        "must lie in (0, 1]");
  check(whole_multiple(tuning.ropa_period_s, dt), *this, "ropa.period_s", "must be a multiple of the sensor period");
  check(tuning.ssrto_filter_gain > 0.0 && tuning.ssrto_filter_gain <= 1.0, *this, "ssrto.input_filter_gain",
        "must lie in (0, 1]");
  check(whole_multiple(tuning.ssrto_period_s, dt), *this, "ssrto.ssd_period_s",
        "must be a multiple of the sensor period");
  check(tuning.ssd.alpha > 0.0 && tuning.ssd.alpha < 1.0, *this, "ssrto.ssd_alpha", "must lie in (0, 1)");
  delegate(*this, "ssrto.ssd_window_s", [&] { tuning.ssd.validate(); });
  check((tuning.adaptation_weights.array() > 0.0).all(), *this, "ssrto.adaptation_weights", "must be positive");
  check(whole_multiple(tuning.drto.grid.element_length, dt), *this, "drto.sampling_time_s",
        "must be a multiple of the sensor period");
  delegate(*this, "drto.horizon_elements", [&] { tuning.drto.grid.validate(); });
  check((tuning.drto.move_weight.array() >= 0.0).all(), *this, "drto.move_weight", "must be non-negative");
  check(tuning.drto.du_max > 0.0, *this, "drto.max_input_change_slpm", "must be positive");
  check(feasible_inputs(tuning.fixed_inputs, econ), *this, "fixed.inputs_slpm", "outside the gas constraints");

  check(step_test.well >= 0 && step_test.well < kWells, *this, "step_test.well", "must be 1, 2 or 3");
  check((step_test.base_inputs.array() >= econ.qg_min).all() && (step_test.base_inputs.array() <= econ.qg_max).all(),
        *this, "step_test.base_inputs_slpm", "outside the per-well bounds");
  {
    Vec3 stepped = step_test.base_inputs;
    if (step_test.well >= 0 && step_test.well < kWells) stepped(step_test.well) += step_test.magnitude_slpm;
    check((stepped.array() >= econ.qg_min).all() && (stepped.array() <= econ.qg_max).all(), *this,
          "step_test.magnitude_slpm", "stepped inputs leave the per-well bounds");
  }
  check(step_test.horizon_s > 0.0 && whole_multiple(step_test.horizon_s, dt), *this, "step_test.horizon_s",
        "must be a positive multiple of the sensor period");
  check(step_test.settle_fraction > 0.0 && step_test.settle_fraction < 1.0, *this, "step_test.settle_fraction",
        "must lie in (0, 1)");

  check(oracle_grid_slpm > 0.0, *this, "oracle.grid_step_slpm", "must be positive");
  check(oracle_time_s >= 0.0, *this, "oracle.time_s", "must be non-negative");

  const auto& id = identifiability;
  check(id.alpha_min > 0.0 && id.alpha_min < id.alpha_max && id.alpha_max <= 1.0, *this,
        "identifiability.liquid_fraction_bounds", "need 0 < lower < upper <= 1");
  check(feasible_inputs(id.operating_inputs, econ), *this, "identifiability.operating_inputs_slpm",
        "outside the gas constraints");
  check((id.valve_openings.array() > 0.0).all() && (id.valve_openings.array() <= 1.0).all(), *this,
        "identifiability.valve_openings", "must lie in (0, 1]");
  delegate(*this, "identifiability", [&] { identifiability_config().validate(); });

  for (auto kind : {SupervisorKind::ROPA, SupervisorKind::SSRTO, SupervisorKind::DRTO, SupervisorKind::FIXED}) {
    const std::string section = kind == SupervisorKind::FIXED ? "fixed" : [&] {
      std::string s = to_string(kind);
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      return s;
    }();
    delegate(*this, section.c_str(), [&] { supervisor(kind).validate(dt); });
  }
}

ThetaVector HarnessConfig::nominal_theta() const {
  return calibrate_nominal_theta(model, calibration.liquid_rate_lpm, calibration.riser_head_pa_gauge,
                                 calibration.gas_rate_slpm,
                                 units::barg_to_pa(calibration.pump_pressure_barg, model.constants));
}

SupervisorConfig HarnessConfig::supervisor(SupervisorKind kind) const {
  SupervisorConfig c = SupervisorConfig::defaults(kind, nominal_theta());
  c.econ = econ;
  c.solver = solver;
  c.assumed_noise = sim.noise;
  c.fixed_inputs = tuning.fixed_inputs;
  c.fit.V = tuning.adaptation_weights.asDiagonal();
  c.ssd = tuning.ssd;
  c.ssd.sample_period = sim.sensor_period;
  c.drto = tuning.drto;
  switch (kind) {
    case SupervisorKind::ROPA:
    case SupervisorKind::FIXED:
      c.period_s = tuning.ropa_period_s;
      c.K_u = tuning.ropa_filter_gain;
      break;
    case SupervisorKind::SSRTO:
      c.period_s = tuning.ssrto_period_s;
      c.K_u = tuning.ssrto_filter_gain;
      break;
    case SupervisorKind::DRTO:
      c.period_s = tuning.drto.grid.element_length;
      c.K_u = 1.0;
      break;
  }
  return c;
}

IdentifiabilityConfig HarnessConfig::identifiability_config() const {
  const auto& id = identifiability;
  IdentifiabilityConfig c;
  c.runs = id.runs;
  c.theta_true = true_theta();
  c.fit = id.parameters == ParameterSet::ValveCoefficients
              ? SSFitConfig::defaults(nominal_theta())
              : SSFitConfig::liquid_fraction(nominal_theta(), id.alpha_min, id.alpha_max);
  c.fit.V = tuning.adaptation_weights.asDiagonal();
  c.v_o = id.valve_openings;
  c.operating_point.qg_sp = id.operating_inputs;
  c.sim = sim;
  c.window_samples = id.window_samples;
  c.seed = id.seed;
  c.correlation_threshold = id.correlation_threshold;
  return c;
}

}  // namespace gaslift
