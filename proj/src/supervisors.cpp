#include "gaslift/supervisors.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace gaslift {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void record_solve(SupervisorDecision& d, const KKTResult& kkt) {
  d.solve_status = kkt.status;
  d.solver_iterations = kkt.iterations;
  d.stationarity = kkt.stationarity;
  d.feasibility = kkt.feasibility;
}

NetworkState initial_estimate(const Vec3& u0, const SupervisorConfig& cfg, const ModelParams& model,
                              const DisturbanceState& dist) {
  ControlInputs u;
  u.qg_sp = u0;
  return steady_state_solve(u, dist, cfg.theta_nominal, model, default_guess(model));
}

std::unique_ptr<ExtendedKalmanFilter> make_filter(const SupervisorConfig& cfg, const ModelParams& model,
                                                  const NetworkState& x0) {
  const EKFConfig ekf = cfg.ekf ? *cfg.ekf : EKFConfig::defaults(cfg.theta_nominal, x0, cfg.assumed_noise);
  return std::make_unique<ExtendedKalmanFilter>(model, ekf, x0, cfg.theta_nominal);
}

}  // namespace

Vec3 filter_inputs(const Vec3& u_prev, const Vec3& u_star, double K_u, const EconomicSettings& econ) {
  return project_feasible(u_prev + K_u * (u_star - u_prev), econ);
}

const char* to_string(SupervisorKind k) {
  switch (k) {
    case SupervisorKind::ROPA: return "ropa";
    case SupervisorKind::SSRTO: return "ssrto";
    case SupervisorKind::DRTO: return "drto";
    case SupervisorKind::FIXED: return "fixed";
  }
  return "?";
}

std::optional<SupervisorKind> parse_supervisor_kind(std::string_view name) {
  for (SupervisorKind k : {SupervisorKind::ROPA, SupervisorKind::SSRTO, SupervisorKind::DRTO, SupervisorKind::FIXED}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

SupervisorConfig SupervisorConfig::defaults(SupervisorKind kind, const ThetaVector& theta_nominal) {
  SupervisorConfig c;
  c.kind = kind;
  c.theta_nominal = theta_nominal;
  c.fit = SSFitConfig::defaults(theta_nominal);
  return c;
}

void SupervisorConfig::validate(double sensor_period) const {
  if (!(K_u > 0.0 && K_u <= 1.0)) throw std::invalid_argument("supervisor: K_u must lie in (0, 1]");
  if (!(sensor_period > 0.0)) throw std::invalid_argument("supervisor: sensor period must be positive");
  const double ratio = period_s / sensor_period;
  if (!(period_s > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1.0) {
    throw std::invalid_argument("supervisor: period_s must be a positive multiple of the sensor period");
  }
  econ.validate();
  solver.validate();
  if ((theta_nominal.stacked().array() <= 0.0).any()) {
    throw std::invalid_argument("supervisor: theta_nominal must be positive");
  }
  if ((fixed_inputs.array() < econ.qg_min).any() || (fixed_inputs.array() > econ.qg_max).any() ||
      fixed_inputs.sum() > econ.qg_total_max + 1e-12) {
    throw std::invalid_argument("supervisor: fixed_inputs violate the gas constraints");
  }
  if (ekf) ekf->validate();
  switch (kind) {
    case SupervisorKind::SSRTO:
      fit.validate();
      ssd.validate();
      if (std::abs(ssd.sample_period - sensor_period) > 1e-12) {
        throw std::invalid_argument("supervisor: SSD sample period must equal the sensor period");
      }
      break;
    case SupervisorKind::DRTO:
      drto.grid.validate();
      if (!(drto.du_max > 0.0)) throw std::invalid_argument("supervisor: drto.du_max must be positive");
      if ((drto.move_weight.array() < 0.0).any()) {
        throw std::invalid_argument("supervisor: drto.move_weight must be non-negative");
      }
      break;
    default:
      break;
  }
}

// ---------------------------------------------------------------------------

Supervisor::Supervisor(SupervisorConfig cfg, ModelParams model) : cfg_(std::move(cfg)), model_(std::move(model)) {}

void Supervisor::reset(const TwinSnapshot& first, const Vec3& u0, double sensor_period) {
  cfg_.validate(sensor_period);
  u_ = project_feasible(u0, cfg_.econ);
  period_samples_ = static_cast<int>(std::lround(cfg_.period_s / sensor_period));
  count_ = 0;
  pending_sample_ms_ = 0.0;
  start(first);
}

std::optional<SupervisorDecision> Supervisor::on_sample(const TwinSnapshot& s) {
  const auto t0 = Clock::now();
  sample(s);
  pending_sample_ms_ += elapsed_ms(t0);
  if (++count_ % period_samples_ != 0) return std::nullopt;

  const auto t1 = Clock::now();
  SupervisorDecision d = decide(s);
  d.t = s.t;
  if (d.acted) {
    u_ = d.u_applied;
  } else {
    d.u_applied = u_;
  }
  d.timing.adapt_ms += pending_sample_ms_;
  d.timing.total_ms = elapsed_ms(t1) + pending_sample_ms_;
  pending_sample_ms_ = 0.0;
  return d;
}

DisturbanceState Supervisor::model_disturbance(const MeasurementVector& y) {
  DisturbanceState d;
  d.v_o = Vec3::Ones();
  d.p_pump = y.p_pump;
  return d;
}

void Supervisor::set_solver_config(const SolverConfig& solver) {
  solver.validate();
  cfg_.solver = solver;
}

// ---------------------------------------------------------------------------

SupervisorDecision FixedSupervisor::decide(const TwinSnapshot&) {
  SupervisorDecision d;
  d.u_star = cfg_.fixed_inputs;
  d.u_applied = project_feasible(cfg_.fixed_inputs, cfg_.econ);
  d.acted = true;
  return d;
}

// ---------------------------------------------------------------------------

void RopaSupervisor::start(const TwinSnapshot& first) {
  const DisturbanceState dist = model_disturbance(first.measured);
  ekf_ = make_filter(cfg_, model_, initial_estimate(u_, cfg_, model_, dist));
  last_qg_ = first.measured.q_g;
  last_.reset();
}

void RopaSupervisor::sample(const TwinSnapshot& s) {
  ekf_->step(s.measured, last_qg_, model_disturbance(s.measured));
  last_qg_ = s.measured.q_g;
}

SupervisorDecision RopaSupervisor::decide(const TwinSnapshot& s) {
  SupervisorDecision d;
  d.theta_hat = ekf_->theta();
  const auto t0 = Clock::now();
  ControlInputs warm_u;
  warm_u.qg_sp = last_ ? last_->u.qg_sp : u_;
  try {
    SSEconSolution sol = solve_ss_econ(*d.theta_hat, model_disturbance(s.measured), model_, cfg_.econ, cfg_.solver,
                                       warm_u, last_ ? &last_->x : nullptr);
    record_solve(d, sol.kkt);
    if (sol.kkt.ok()) {
      d.u_star = sol.u.qg_sp;
      d.u_applied = filter_and_project(d.u_star);
      d.acted = true;
      last_ = std::move(sol);
    } else {
      d.note = std::string("optimizer: ") + to_string(sol.kkt.status);
    }
  } catch (const std::exception& e) {
    d.note = std::string("optimizer: ") + e.what();
  }
  d.timing.opt_ms = elapsed_ms(t0);
  if (!d.acted) d.u_star = u_;
  return d;
}

// ---------------------------------------------------------------------------

void SsrtoSupervisor::start(const TwinSnapshot&) {
  window_.clear();
  fit_.reset();
  last_.reset();
}

void SsrtoSupervisor::sample(const TwinSnapshot& s) {
  window_.push_back(s.measured);
  while (static_cast<int>(window_.size()) > cfg_.ssd.window_samples()) window_.pop_front();
}

SupervisorDecision SsrtoSupervisor::decide(const TwinSnapshot&) {
  SupervisorDecision d;
  d.u_star = u_;
  const auto t0 = Clock::now();
  const int n = cfg_.ssd.window_samples();
  if (static_cast<int>(window_.size()) < n) {
    d.note = "ssd: window filling";
    d.timing.adapt_ms = elapsed_ms(t0);
    return d;
  }

  std::array<std::vector<double>, 3> series;
  for (int w = 0; w < kWells; ++w) {
    series[w].reserve(n);
    for (const auto& y : window_) series[w].push_back(y.q_l(w));
  }
  SSVerdict verdict;
  try {
    verdict = network_steady({std::span<const double>(series[0]), std::span<const double>(series[1]),
                              std::span<const double>(series[2])},
                             cfg_.ssd);
  } catch (const std::exception& e) {
    d.note = std::string("ssd: ") + e.what();
    d.timing.adapt_ms = elapsed_ms(t0);
    return d;
  }
  if (!verdict.steady) {
    d.note = "ssd: not steady";
    d.timing.adapt_ms = elapsed_ms(t0);
    return d;
  }

  const SteadyData data = SteadyData::mean_of(std::vector<MeasurementVector>(window_.begin(), window_.end()));
  const Vec6 guess = fit_ ? fit_->parameters : cfg_.theta_nominal.stacked();
  std::optional<SSFitResult> fit;
  try {
    fit = ss_fit(data, model_, cfg_.fit, guess);
  } catch (const std::exception& e) {
    d.note = std::string("fit: ") + e.what();
  }
  d.timing.adapt_ms = elapsed_ms(t0);
  if (!fit) return d;
  if (!fit->kkt.ok()) {
    d.note = std::string("fit: ") + to_string(fit->kkt.status);
    return d;
  }
  fit_ = fit;
  d.theta_hat = fit->theta;

  const auto t1 = Clock::now();
  DisturbanceState dist;
  dist.p_pump = data.p_pump;
  ControlInputs warm_u;
  warm_u.qg_sp = last_ ? last_->u.qg_sp : u_;
  try {
    SSEconSolution sol =
        solve_ss_econ(fit->theta, dist, model_, cfg_.econ, cfg_.solver, warm_u, last_ ? &last_->x : nullptr);
    record_solve(d, sol.kkt);
    if (sol.kkt.ok()) {
      d.u_star = sol.u.qg_sp;
      d.u_applied = filter_and_project(d.u_star);
      d.acted = true;
      last_ = std::move(sol);
    } else {
      d.note = std::string("optimizer: ") + to_string(sol.kkt.status);
    }
  } catch (const std::exception& e) {
    d.note = std::string("optimizer: ") + e.what();
  }
  d.timing.opt_ms = elapsed_ms(t1);
  return d;
}

// ---------------------------------------------------------------------------

void DrtoSupervisor::start(const TwinSnapshot& first) {
  const DisturbanceState dist = model_disturbance(first.measured);
  ekf_ = make_filter(cfg_, model_, initial_estimate(u_, cfg_, model_, dist));
  last_qg_ = first.measured.q_g;
  last_solution_.resize(0);
  last_hessian_.resize(0, 0);
  last_plan_.clear();
}

void DrtoSupervisor::sample(const TwinSnapshot& s) {
  ekf_->step(s.measured, last_qg_, model_disturbance(s.measured));
  last_qg_ = s.measured.q_g;
}

SupervisorDecision DrtoSupervisor::decide(const TwinSnapshot& s) {
  SupervisorDecision d;
  d.theta_hat = ekf_->theta();
  const int element_size = 3 + CollocationGrid::kStages * 6;
  VecX warm;
  MatX warm_hessian;
  if (last_solution_.size() > 0) {
    warm = shift_solution(last_solution_, element_size);
    if (last_hessian_.rows() == last_solution_.size()) warm_hessian = shift_hessian(last_hessian_, element_size);
  }

  const auto t0 = Clock::now();
  bool solved = false;
  try {
    const DRTOSolution sol = solve_drto(*d.theta_hat, ekf_->state(), u_, model_disturbance(s.measured), model_,
                                        cfg_.econ, cfg_.drto, cfg_.solver, warm.size() ? &warm : nullptr,
                                        warm_hessian.size() ? &warm_hessian : nullptr);
    record_solve(d, sol.kkt);
    if (sol.kkt.ok()) {
      solved = true;
      d.u_star = sol.first_move;
      d.u_applied = project_feasible(sol.first_move, cfg_.econ);
      d.acted = true;
      last_solution_ = sol.kkt.x;
      last_hessian_ = sol.kkt.hessian;
      last_plan_ = sol.plan;
    } else {
      d.note = std::string("optimizer: ") + to_string(sol.kkt.status);
    }
  } catch (const std::exception& e) {
    d.note = std::string("optimizer: ") + e.what();
  }
  d.timing.opt_ms = elapsed_ms(t0);

  if (!solved) {
    if (last_plan_.size() >= 2) {
      d.u_star = last_plan_[1];
      d.u_applied = project_feasible(last_plan_[1], cfg_.econ);
      d.acted = true;
      d.note += "; applied the shifted previous plan";
      last_plan_.erase(last_plan_.begin());
      last_solution_ = warm;
      last_hessian_ = warm_hessian;
    } else {
      d.u_star = u_;
      last_plan_.clear();
      last_solution_.resize(0);
      last_hessian_.resize(0, 0);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Supervisor> make_supervisor(const SupervisorConfig& cfg, const ModelParams& model) {
  switch (cfg.kind) {
    case SupervisorKind::ROPA: return std::make_unique<RopaSupervisor>(cfg, model);
    case SupervisorKind::SSRTO: return std::make_unique<SsrtoSupervisor>(cfg, model);
    case SupervisorKind::DRTO: return std::make_unique<DrtoSupervisor>(cfg, model);
    case SupervisorKind::FIXED: return std::make_unique<FixedSupervisor>(cfg, model);
  }
  throw std::invalid_argument("make_supervisor: unknown kind");
}

}  // namespace gaslift
