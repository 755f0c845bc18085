#include "gaslift/process_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "gaslift/units.hpp"

namespace gaslift {

namespace {

LocalGrad unit(int k) {
  LocalGrad e = LocalGrad::Zero();
  e(k) = 1.0;
  return e;
}

std::string well_detail(const char* what, int well, double value) {
  std::ostringstream os;
  os << what << " (well " << well + 1 << ", value " << value << ")";
  return os.str();
}

}  // namespace

void PhysicalConstants::validate() const {
  for (double v : {rho_l, mu_mix, M_g, R_gas, T_amb, g_acc, P_atm}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("physical constants must be strictly positive");
    }
  }
}

double RigGeometry::volume() const {
  return std::numbers::pi * diameter * diameter / 4.0 * length;
}

void RigGeometry::validate() const {
  if (!(diameter > 0.0) || !(length > 0.0) || !(riser_height > 0.0)) {
    throw std::invalid_argument("rig geometry must be strictly positive");
  }
  if (riser_height > length) {
    throw std::invalid_argument("riser height cannot exceed total pipe length");
  }
}

Vec6 ThetaVector::stacked() const {
  Vec6 v;
  v << res, top;
  return v;
}

ThetaVector ThetaVector::from_stacked(const Vec6& v) {
  ThetaVector t;
  t.res = v.head<3>();
  t.top = v.tail<3>();
  return t;
}

Vec6 NetworkState::stacked() const {
  Vec6 v;
  v << m_g, m_l;
  return v;
}

NetworkState NetworkState::from_stacked(const Vec6& v) {
  NetworkState x;
  x.m_g = v.head<3>();
  x.m_l = v.tail<3>();
  return x;
}

Vec10 ModelOutputs::stacked() const {
  Vec10 v;
  v << p_rh, p_pump, q_l, q_g;
  return v;
}

ModelOutputs ModelOutputs::from_stacked(const Vec10& v) {
  ModelOutputs y;
  y.p_rh = v.segment<3>(0);
  y.p_pump = v(3);
  y.q_l = v.segment<3>(4);
  y.q_g = v.segment<3>(7);
  return y;
}

const char* to_string(ModelErrc code) {
  switch (code) {
    case ModelErrc::NegativeDrivingPressure: return "NegativeDrivingPressure";
    case ModelErrc::PipeFlooded: return "PipeFlooded";
    case ModelErrc::NonPositiveGas: return "NonPositiveGas";
    case ModelErrc::SubAtmosphericHead: return "SubAtmosphericHead";
    case ModelErrc::NoConvergence: return "NoConvergence";
    case ModelErrc::InfeasibleRegime: return "InfeasibleRegime";
  }
  return "Unknown";
}

ModelError::ModelError(ModelErrc code, int well, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), well_(well) {}

WellEval evaluate_well(const WellInputs& in, const ModelParams& model, bool with_derivatives,
                       int well_index) {
  using namespace local;
  const auto& c = model.constants;
  const auto& geo = model.geometry;
  const double volume = geo.volume();

  WellEval out;
  auto& a = out.alg;

  if (!(in.m_g > 0.0)) {
    throw ModelError(ModelErrc::NonPositiveGas, well_index, well_detail("gas holdup", well_index, in.m_g));
  }
  const double v_gas = volume - in.m_l / c.rho_l;
  if (!(v_gas > 0.0) || !(in.m_l > 0.0)) {
    throw ModelError(ModelErrc::PipeFlooded, well_index, well_detail("liquid holdup", well_index, in.m_l));
  }

  // Volume constraint eliminates the implicit gas density.
  a.rho_g = in.m_g / v_gas;
  const double k_gas = c.R_gas * c.T_amb / c.M_g;
  a.p_bi = k_gas * a.rho_g;

  const double dp_res = in.p_pump - a.p_bi;
  if (!(dp_res > 0.0)) {
    throw ModelError(ModelErrc::NegativeDrivingPressure, well_index,
                     well_detail("pump minus injection pressure", well_index, dp_res));
  }
  const double s_res = std::sqrt(c.rho_l * dp_res);
  a.w_l = in.v_o * in.theta_res * s_res;

  const double m_total = in.m_g + in.m_l;
  a.rho_mix = m_total / volume;
  const double k_fric = 128.0 * c.mu_mix * geo.length / (std::numbers::pi * std::pow(geo.diameter, 4));
  const double fric = k_fric * (in.w_g + a.w_l) / a.rho_mix;
  a.p_rh = a.p_bi - a.rho_mix * c.g_acc * geo.riser_height - fric;

  const double dp_top = a.p_rh - c.P_atm;
  if (dp_top < 0.0) {
    throw ModelError(ModelErrc::SubAtmosphericHead, well_index,
                     well_detail("riser head above atmosphere", well_index, dp_top));
  }
  const double s_top = std::sqrt(a.rho_mix * dp_top);
  a.w_total = in.theta_top * s_top;
  a.alpha_l = in.m_l / m_total;
  a.w_l_out = a.alpha_l * a.w_total;
  a.w_g_out = (1.0 - a.alpha_l) * a.w_total;

  if (!with_derivatives) return out;

  const LocalGrad d_vgas = -unit(kMl) / c.rho_l;
  const LocalGrad d_rho_g = unit(kMg) / v_gas - (in.m_g / (v_gas * v_gas)) * d_vgas;
  out.d_p_bi = k_gas * d_rho_g;
  const LocalGrad d_dp_res = unit(kPump) - out.d_p_bi;
  const LocalGrad d_s_res = (c.rho_l / (2.0 * s_res)) * d_dp_res;
  out.d_w_l = in.theta_res * s_res * unit(kVo) + in.v_o * s_res * unit(kRes) +
              in.v_o * in.theta_res * d_s_res;

  out.d_rho_mix = (unit(kMg) + unit(kMl)) / volume;
  const LocalGrad d_fric = (k_fric / a.rho_mix) * (unit(kWg) + out.d_w_l) -
                           (k_fric * (in.w_g + a.w_l) / (a.rho_mix * a.rho_mix)) * out.d_rho_mix;
  out.d_p_rh = out.d_p_bi - c.g_acc * geo.riser_height * out.d_rho_mix - d_fric;

  LocalGrad d_s_top = LocalGrad::Zero();
  if (s_top > 0.0) {
    d_s_top = (dp_top * out.d_rho_mix + a.rho_mix * out.d_p_rh) / (2.0 * s_top);
  }
  out.d_w_total = s_top * unit(kTop) + in.theta_top * d_s_top;

  const LocalGrad d_alpha = unit(kMl) / m_total - (in.m_l / (m_total * m_total)) * (unit(kMg) + unit(kMl));
  out.d_w_l_out = a.w_total * d_alpha + a.alpha_l * out.d_w_total;
  out.d_w_g_out = -a.w_total * d_alpha + (1.0 - a.alpha_l) * out.d_w_total;
  return out;
}

namespace {

WellInputs well_inputs(const NetworkState& x, const Vec3& w_g, const DisturbanceState& dist,
                       const ThetaVector& theta, int i) {
  return WellInputs{x.m_g(i), x.m_l(i), w_g(i), theta.res(i), theta.top(i), dist.v_o(i), dist.p_pump};
}

}  // namespace

std::array<WellAlgebraics, kWells> algebraics(const NetworkState& x, const Vec3& w_g,
                                              const DisturbanceState& dist, const ThetaVector& theta,
                                              const ModelParams& model) {
  std::array<WellAlgebraics, kWells> out;
  for (int i = 0; i < kWells; ++i) {
    out[i] = evaluate_well(well_inputs(x, w_g, dist, theta, i), model, false, i).alg;
  }
  return out;
}

NetworkState rhs(const NetworkState& x, const Vec3& w_g, const DisturbanceState& dist,
                 const ThetaVector& theta, const ModelParams& model) {
  NetworkState dx;
  for (int i = 0; i < kWells; ++i) {
    const auto a = evaluate_well(well_inputs(x, w_g, dist, theta, i), model, false, i).alg;
    dx.m_g(i) = w_g(i) - a.w_g_out;
    dx.m_l(i) = a.w_l - a.w_l_out;
  }
  return dx;
}

ModelOutputs measurement_map(const NetworkState& x, const Vec3& w_g, const DisturbanceState& dist,
                             const ThetaVector& theta, const ModelParams& model) {
  // Liquid meters sit upstream of the reservoir valves, so they read the
  // reservoir inflow w_l rather than the riser outflow.
  ModelOutputs y;
  y.p_pump = dist.p_pump;
  for (int i = 0; i < kWells; ++i) {
    const auto a = evaluate_well(well_inputs(x, w_g, dist, theta, i), model, false, i).alg;
    y.p_rh(i) = a.p_rh;
    y.q_l(i) = units::kgs_to_lpm(a.w_l, model.constants);
    y.q_g(i) = units::kgs_to_slpm(w_g(i), model.constants);
  }
  return y;
}

ModelJacobians jacobians(const NetworkState& x, const Vec3& w_g, const DisturbanceState& dist,
                         const ThetaVector& theta, const ModelParams& model) {
  using namespace local;
  ModelJacobians jac;
  const double c_lpm = units::kgs_to_lpm(1.0, model.constants);
  const double c_slpm = units::kgs_to_slpm(1.0, model.constants);
  for (int i = 0; i < kWells; ++i) {
    const auto e = evaluate_well(well_inputs(x, w_g, dist, theta, i), model, true, i);
    const int rg = i, rl = 3 + i;
    const int cg = i, cl = 3 + i;

    jac.f_x(rg, cg) = -e.d_w_g_out(kMg);
    jac.f_x(rg, cl) = -e.d_w_g_out(kMl);
    jac.f_x(rl, cg) = e.d_w_l(kMg) - e.d_w_l_out(kMg);
    jac.f_x(rl, cl) = e.d_w_l(kMl) - e.d_w_l_out(kMl);

    jac.f_theta(rg, i) = -e.d_w_g_out(kRes);
    jac.f_theta(rg, 3 + i) = -e.d_w_g_out(kTop);
    jac.f_theta(rl, i) = e.d_w_l(kRes) - e.d_w_l_out(kRes);
    jac.f_theta(rl, 3 + i) = e.d_w_l(kTop) - e.d_w_l_out(kTop);

    jac.f_wg(rg, i) = 1.0 - e.d_w_g_out(kWg);
    jac.f_wg(rl, i) = e.d_w_l(kWg) - e.d_w_l_out(kWg);

    jac.h_x(i, cg) = e.d_p_rh(kMg);
    jac.h_x(i, cl) = e.d_p_rh(kMl);
    jac.h_theta(i, i) = e.d_p_rh(kRes);
    jac.h_theta(i, 3 + i) = e.d_p_rh(kTop);
    jac.h_wg(i, i) = e.d_p_rh(kWg);

    jac.h_x(4 + i, cg) = c_lpm * e.d_w_l(kMg);
    jac.h_x(4 + i, cl) = c_lpm * e.d_w_l(kMl);
    jac.h_theta(4 + i, i) = c_lpm * e.d_w_l(kRes);
    jac.h_theta(4 + i, 3 + i) = c_lpm * e.d_w_l(kTop);
    jac.h_wg(4 + i, i) = c_lpm * e.d_w_l(kWg);

    jac.h_wg(7 + i, i) = c_slpm;
  }
  return jac;
}

NetworkState default_guess(const ModelParams& model) {
  const auto& c = model.constants;
  const double volume = model.geometry.volume();
  const double gas_fraction = 0.15;
  const double rho_g = (c.P_atm + 0.24e5) * c.M_g / (c.R_gas * c.T_amb);
  NetworkState x;
  x.m_g = Vec3::Constant(rho_g * gas_fraction * volume);
  x.m_l = Vec3::Constant(c.rho_l * (1.0 - gas_fraction) * volume);
  return x;
}

namespace {

struct WellResidual {
  Eigen::Vector2d r;
  Eigen::Matrix2d jac;
};

WellResidual well_residual(double m_g, double m_l, const WellInputs& base, const ModelParams& model,
                           int well, bool with_jac) {
  using namespace local;
  WellInputs in = base;
  in.m_g = m_g;
  in.m_l = m_l;
  const auto e = evaluate_well(in, model, with_jac, well);
  WellResidual res;
  res.r << in.w_g - e.alg.w_g_out, e.alg.w_l - e.alg.w_l_out;
  if (with_jac) {
    res.jac << -e.d_w_g_out(kMg), -e.d_w_g_out(kMl),
        e.d_w_l(kMg) - e.d_w_l_out(kMg), e.d_w_l(kMl) - e.d_w_l_out(kMl);
  }
  return res;
}

// Newton from one starting point. Returns false when it stalls.
bool newton_well(const WellInputs& base, const ModelParams& model, int well, double& m_g,
                 double& m_l, const SteadyStateOptions& opts) {
  const auto& c = model.constants;
  const double volume = model.geometry.volume();
  // Residual scaling: gas balance relative to injection, liquid to 1 L/min.
  const double s_g = std::max(base.w_g, 1e-9);
  const double s_l = units::lpm_to_kgs(1.0, c);
  auto merit = [&](const Eigen::Vector2d& r) {
    return std::hypot(r(0) / s_g, r(1) / s_l);
  };

  WellResidual cur;
  try {
    cur = well_residual(m_g, m_l, base, model, well, true);
  } catch (const ModelError&) {
    return false;
  }
  for (int it = 0; it < opts.max_iterations; ++it) {
    if (cur.r.cwiseAbs().maxCoeff() < 1e-3 * opts.tolerance) return true;
    const Eigen::Vector2d step = cur.jac.fullPivLu().solve(-cur.r);
    if (!step.allFinite()) return false;

    // Keep the trial inside the physical domain.
    double lambda = 1.0;
    if (m_g + step(0) <= 0.0) lambda = std::min(lambda, 0.9 * m_g / -step(0));
    const double m_l_max = c.rho_l * volume;
    if (m_l + step(1) >= m_l_max) lambda = std::min(lambda, 0.9 * (m_l_max - m_l) / step(1));

    const double phi0 = merit(cur.r);
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      const double mg_t = m_g + lambda * step(0);
      const double ml_t = m_l + lambda * step(1);
      try {
        auto trial = well_residual(mg_t, ml_t, base, model, well, true);
        if (merit(trial.r) <= (1.0 - 1e-4 * lambda) * phi0 || merit(trial.r) < 1e-14) {
          m_g = mg_t;
          m_l = ml_t;
          cur = trial;
          accepted = true;
          break;
        }
      } catch (const ModelError&) {
      }
      lambda *= 0.5;
    }
    if (!accepted) {
      return cur.r.cwiseAbs().maxCoeff() < opts.tolerance;
    }
  }
  return cur.r.cwiseAbs().maxCoeff() < opts.tolerance;
}

}  // namespace

std::pair<double, double> steady_state_well(double w_g, double v_o, double p_pump, double theta_res,
                                            double theta_top, const ModelParams& model,
                                            std::pair<double, double> guess, int well_index,
                                            const SteadyStateOptions& opts) {
  const WellInputs base{0.0, 0.0, w_g, theta_res, theta_top, v_o, p_pump};
  const auto& c = model.constants;
  const double volume = model.geometry.volume();

  std::vector<std::pair<double, double>> starts{guess};
  // Fallback starts: spread over gas fraction and pressure.
  for (double frac : {0.15, 0.05, 0.3, 0.5}) {
    for (double p : {c.P_atm + 0.24e5, c.P_atm + 0.1e5, 0.5 * (c.P_atm + p_pump)}) {
      const double rho_g = p * c.M_g / (c.R_gas * c.T_amb);
      starts.emplace_back(rho_g * frac * volume, c.rho_l * (1.0 - frac) * volume);
    }
  }
  double best_res = std::numeric_limits<double>::infinity();
  for (auto [m_g, m_l] : starts) {
    if (!(m_g > 0.0) || !(m_l > 0.0)) continue;
    if (newton_well(base, model, well_index, m_g, m_l, opts)) {
      return {m_g, m_l};
    }
    try {
      best_res = std::min(best_res, well_residual(m_g, m_l, base, model, well_index, false).r.cwiseAbs().maxCoeff());
    } catch (const ModelError&) {
    }
  }
  if (!std::isfinite(best_res)) {
    throw ModelError(ModelErrc::InfeasibleRegime, well_index,
                     well_detail("no feasible steady state found, w_g", well_index, w_g));
  }
  throw ModelError(ModelErrc::NoConvergence, well_index,
                   well_detail("steady-state residual", well_index, best_res));
}

NetworkState steady_state_solve(const ControlInputs& u, const DisturbanceState& dist,
                                const ThetaVector& theta, const ModelParams& model,
                                const NetworkState& guess, const SteadyStateOptions& opts) {
  const Vec3 w_g = units::slpm_to_kgs(u.qg_sp, model.constants);
  NetworkState x;
  for (int i = 0; i < kWells; ++i) {
    auto [m_g, m_l] = steady_state_well(w_g(i), dist.v_o(i), dist.p_pump, theta.res(i), theta.top(i),
                                        model, {guess.m_g(i), guess.m_l(i)}, i, opts);
    x.m_g(i) = m_g;
    x.m_l(i) = m_l;
  }
  return x;
}

Vec3 steady_liquid_rates(const ControlInputs& u, const DisturbanceState& dist,
                         const ThetaVector& theta, const ModelParams& model,
                         NetworkState* state_out) {
  const NetworkState x = steady_state_solve(u, dist, theta, model, default_guess(model));
  if (state_out) *state_out = x;
  const Vec3 w_g = units::slpm_to_kgs(u.qg_sp, model.constants);
  return measurement_map(x, w_g, dist, theta, model).q_l;
}

ThetaVector calibrate_nominal_theta(const ModelParams& model, double q_l_lpm, double p_rh_gauge,
                                    double q_g_slpm, double p_pump) {
  const auto& c = model.constants;
  const auto& geo = model.geometry;
  const double volume = geo.volume();
  const double w_l = units::lpm_to_kgs(q_l_lpm, c);
  const double w_g = units::slpm_to_kgs(q_g_slpm, c);
  const double w_total = w_l + w_g;
  const double ratio = w_l / w_g;  // m_l / m_g at steady state
  const double p_rh = c.P_atm + p_rh_gauge;
  const double k_fric = 128.0 * c.mu_mix * geo.length / (std::numbers::pi * std::pow(geo.diameter, 4));

  // Fixed point in the injection pressure; rho_mix depends on it only
  // through the small gas volume, so this contracts quickly.
  double p_bi = p_rh + 0.85 * c.rho_l * c.g_acc * geo.riser_height;
  double rho_mix = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double rho_g = p_bi * c.M_g / (c.R_gas * c.T_amb);
    const double m_g = volume / (ratio / c.rho_l + 1.0 / rho_g);
    rho_mix = (m_g + ratio * m_g) / volume;
    const double next = p_rh + rho_mix * c.g_acc * geo.riser_height + k_fric * w_total / rho_mix;
    const double delta = std::abs(next - p_bi);
    p_bi = next;
    if (delta < 1e-10) break;
  }
  if (!(p_pump > p_bi)) {
    throw ModelError(ModelErrc::NegativeDrivingPressure, 0, "calibration target needs p_bi above pump pressure");
  }
  ThetaVector theta;
  theta.res.setConstant(w_l / std::sqrt(c.rho_l * (p_pump - p_bi)));
  theta.top.setConstant(w_total / std::sqrt(rho_mix * p_rh_gauge));
  return theta;
}

}  // namespace gaslift
