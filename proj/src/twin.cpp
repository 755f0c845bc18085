#include "gaslift/twin.hpp"

#include <cmath>
#include <sstream>

#include "gaslift/units.hpp"

namespace gaslift {

void SimConfig::validate() const {
  if (!(dt_int > 0.0) || !(sensor_period > 0.0) || dt_int > sensor_period) {
    throw std::invalid_argument("need 0 < dt_int <= sensor_period");
  }
  const double steps = sensor_period / dt_int;
  if (std::abs(steps - std::round(steps)) > 1e-9) {
    throw std::invalid_argument("sensor_period must be a multiple of dt_int");
  }
  if (!(tau_ctrl > 0.0)) throw std::invalid_argument("tau_ctrl must be positive");
  if (noise.pressure_pa < 0.0 || noise.liquid_lpm < 0.0 || noise.gas_slpm < 0.0) {
    throw std::invalid_argument("noise standard deviations must be non-negative");
  }
}

DisturbanceProfile::DisturbanceProfile(std::vector<ProfileKnot> knots) : knots_(std::move(knots)) {}

DisturbanceState DisturbanceProfile::at(double t) const {
  DisturbanceState d;
  if (knots_.empty()) return d;
  if (t <= knots_.front().t) {
    d.v_o = knots_.front().v_o;
    d.p_pump = knots_.front().p_pump;
    return d;
  }
  if (t >= knots_.back().t) {
    d.v_o = knots_.back().v_o;
    d.p_pump = knots_.back().p_pump;
    return d;
  }
  std::size_t k = 1;
  while (knots_[k].t < t) ++k;
  const auto& a = knots_[k - 1];
  const auto& b = knots_[k];
  const double s = (t - a.t) / (b.t - a.t);
  d.v_o = a.v_o + s * (b.v_o - a.v_o);
  d.p_pump = a.p_pump + s * (b.p_pump - a.p_pump);
  return d;
}

void DisturbanceProfile::validate(const PhysicalConstants& c) const {
  if (knots_.empty()) throw std::invalid_argument("disturbance profile has no knots");
  for (std::size_t k = 0; k < knots_.size(); ++k) {
    const auto& kn = knots_[k];
    if (k > 0 && !(kn.t > knots_[k - 1].t)) {
      throw std::invalid_argument("disturbance knot times must be strictly increasing");
    }
    if (!(kn.v_o.minCoeff() > 0.0) || kn.v_o.maxCoeff() > 1.0) {
      throw std::invalid_argument("valve openings must lie in (0, 1]");
    }
    if (!(kn.p_pump > c.P_atm)) throw std::invalid_argument("pump pressure must exceed atmosphere");
  }
}

DisturbanceProfile default_depletion_profile(const PhysicalConstants& c) {
  const double p_pump = units::barg_to_pa(0.3, c);
  auto knot = [&](double minutes, double v1, double v2, double v3) {
    return ProfileKnot{minutes * 60.0, Vec3(v1, v2, v3), p_pump};
  };
  return DisturbanceProfile({
      knot(0.0, 0.8, 0.6, 0.8),
      knot(4.0, 0.8, 0.6, 0.8),
      knot(12.0, 0.4, 0.6, 0.8),
      knot(18.0, 0.4, 0.6, 0.4),
      knot(20.0, 0.4, 0.6, 0.4),
  });
}

SimulationDiverged::SimulationDiverged(double t, const std::string& what)
    : std::runtime_error(what), t_(t) {}

DigitalTwin::DigitalTwin(ModelParams model, ThetaVector true_theta, SimConfig cfg, DisturbanceProfile profile)
    : model_(std::move(model)), theta_(true_theta), cfg_(cfg), profile_(std::move(profile)) {
  cfg_.validate();
  model_.constants.validate();
  model_.geometry.validate();
  profile_.validate(model_.constants);
  for (int ch = 0; ch < 10; ++ch) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg_.rng_seed & 0xffffffffu),
                      static_cast<std::uint32_t>(cfg_.rng_seed >> 32), static_cast<std::uint32_t>(ch)};
    channel_rng_.emplace_back(seq);
  }
}

MeasurementVector DigitalTwin::measure(const NetworkState& x, const Vec3& q_g, const DisturbanceState& d) {
  const Vec3 w_g = units::slpm_to_kgs(q_g, model_.constants);
  Vec10 y = measurement_map(x, w_g, d, theta_, model_).stacked();
  const double stds[10] = {cfg_.noise.pressure_pa, cfg_.noise.pressure_pa, cfg_.noise.pressure_pa,
                           cfg_.noise.pressure_pa, cfg_.noise.liquid_lpm,  cfg_.noise.liquid_lpm,
                           cfg_.noise.liquid_lpm,  cfg_.noise.gas_slpm,    cfg_.noise.gas_slpm,
                           cfg_.noise.gas_slpm};
  for (int ch = 0; ch < 10; ++ch) {
    // Always draw so the streams stay aligned when a std is zero.
    std::normal_distribution<double> n(0.0, 1.0);
    y(ch) += stds[ch] * n(channel_rng_[ch]);
  }
  return MeasurementVector::from_stacked(y);
}

TwinSnapshot DigitalTwin::initialize(const ControlInputs& u0) {
  t_ = 0.0;
  setpoint_ = u0.qg_sp;
  q_g_ = u0.qg_sp;
  const DisturbanceState d = profile_.at(0.0);
  try {
    x_ = steady_state_solve(u0, d, theta_, model_, default_guess(model_));
  } catch (const ModelError& e) {
    throw SimulationDiverged(0.0, std::string("initial steady state: ") + e.what());
  }
  last_ = TwinSnapshot{t_, x_, theta_, measure(x_, q_g_, d), setpoint_, q_g_, d};
  return last_;
}

NetworkState DigitalTwin::derivative(const NetworkState& x, const Vec3& q_g, double t) const {
  return rhs(x, units::slpm_to_kgs(q_g, model_.constants), profile_.at(t), theta_, model_);
}

TwinSnapshot DigitalTwin::step(const ControlInputs& setpoints) {
  if (setpoints.qg_sp.minCoeff() < 0.0 || setpoints.qg_sp.maxCoeff() > 6.0 || !setpoints.qg_sp.allFinite()) {
    throw std::invalid_argument("gas setpoints outside the actuator range [0, 6] sL/min");
  }
  setpoint_ = setpoints.qg_sp;
  const int n_steps = static_cast<int>(std::lround(cfg_.sensor_period / cfg_.dt_int));
  const double h = cfg_.dt_int;
  const double t_start = t_;
  const Vec3 q0 = q_g_;
  // The flow loop lag has a closed-form response under a held setpoint, so
  // RK4 only integrates the holdups and evaluates the lag exactly.
  auto q_at = [&](double t) -> Vec3 {
    return setpoint_ + (q0 - setpoint_) * std::exp(-(t - t_start) / cfg_.tau_ctrl);
  };

  try {
    Vec6 x = x_.stacked();
    for (int k = 0; k < n_steps; ++k) {
      const double t = t_start + k * h;
      auto f = [&](const Vec6& xs, double tt) { return derivative(NetworkState::from_stacked(xs), q_at(tt), tt).stacked(); };
      const Vec6 k1 = f(x, t);
      const Vec6 k2 = f(x + 0.5 * h * k1, t + 0.5 * h);
      const Vec6 k3 = f(x + 0.5 * h * k2, t + 0.5 * h);
      const Vec6 k4 = f(x + h * k3, t + h);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!x.allFinite()) throw SimulationDiverged(t + h, "non-finite state");
    }
    x_ = NetworkState::from_stacked(x);
  } catch (const ModelError& e) {
    std::ostringstream os;
    os << "model evaluation failed near t = " << t_start << " s: " << e.what();
    throw SimulationDiverged(t_start, os.str());
  }

  t_ = t_start + n_steps * h;
  q_g_ = q_at(t_);
  const DisturbanceState d = profile_.at(t_);
  try {
    last_ = TwinSnapshot{t_, x_, theta_, measure(x_, q_g_, d), setpoint_, q_g_, d};
  } catch (const ModelError& e) {
    throw SimulationDiverged(t_, e.what());
  }
  return last_;
}

ScenarioResult run_scenario(DigitalTwin& twin, const ControlInputs& u0, const SetpointPolicy& policy,
                            double horizon) {
  const double period = twin.config().sensor_period;
  const double n_real = horizon / period;
  const long n = std::lround(n_real);
  if (horizon < 0.0 || std::abs(n_real - static_cast<double>(n)) > 1e-9) {
    throw std::invalid_argument("horizon must be a non-negative multiple of the sensor period");
  }
  ScenarioResult result;
  result.snapshots.reserve(static_cast<std::size_t>(n) + 1);
  result.snapshots.push_back(twin.initialize(u0));
  ControlInputs u = u0;
  for (long k = 0; k < n; ++k) {
    try {
      if (policy) u = policy(result.snapshots.back());
      result.snapshots.push_back(twin.step(u));
    } catch (const std::exception& e) {
      result.failure = e.what();
      break;
    }
  }
  return result;
}

}  // namespace gaslift
