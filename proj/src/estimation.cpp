#include "gaslift/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "gaslift/units.hpp"
#include "scaled_well.hpp"

namespace gaslift {

using detail::evaluate_scaled_well;
using detail::ScaledWell;

void ParameterBounds::validate() const {
  if (!((lower.array() > 0.0).all() && (lower.array() < upper.array()).all())) {
    throw std::invalid_argument("parameter bounds: need 0 < lower < upper");
  }
}

ParameterBounds ParameterBounds::relative(const Vec6& nominal, double lo_factor, double hi_factor) {
  ParameterBounds b;
  b.lower = lo_factor * nominal;
  b.upper = hi_factor * nominal;
  return b;
}

// ===========================================================================
// Extended Kalman filter

namespace {

template <typename Derived>
bool symmetric_pd(const Eigen::MatrixBase<Derived>& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m.derived());
  return llt.info() == Eigen::Success;
}

}  // namespace

EKFConfig EKFConfig::defaults(const ThetaVector& theta_nominal, const NetworkState& x_nominal,
                              const NoiseStd& noise) {
  EKFConfig c;
  const Vec6 th = theta_nominal.stacked();
  const Vec6 xs = x_nominal.stacked();
  c.P0.setZero();
  c.P0.topLeftCorner<6, 6>() = (0.05 * xs).array().square().matrix().asDiagonal();
  c.P0.bottomRightCorner<6, 6>() = (0.05 * th).array().square().matrix().asDiagonal();
  c.Q_x = (1e-3 * xs).array().square().matrix().asDiagonal();
  c.Q_theta = (0.01 * th).array().square().matrix().asDiagonal();
  Vec10 sd;
  sd << Vec3::Constant(noise.pressure_pa), noise.pressure_pa, Vec3::Constant(noise.liquid_lpm),
      Vec3::Constant(noise.gas_slpm);
  // A noiseless channel would make the innovation covariance singular.
  c.R_m = sd.cwiseMax(1e-6).array().square().matrix().asDiagonal();
  c.bounds = ParameterBounds::relative(th, 0.1, 3.0);
  return c;
}

void EKFConfig::validate() const {
  auto spd = [](const auto& m, const char* name) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff()) || !symmetric_pd(m)) {
      throw std::invalid_argument(std::string("EKF config: ") + name + " must be symmetric positive definite");
    }
  };
  spd(P0, "P0");
  spd(Q_x, "Q_x");
  spd(Q_theta, "Q_theta");
  spd(R_m, "R_m");
  if (!(dt > 0.0 && max_substep > 0.0)) throw std::invalid_argument("EKF config: dt and max_substep must be positive");
  if (!(reset_inflation >= 1.0)) throw std::invalid_argument("EKF config: reset_inflation must be >= 1");
  bounds.validate();
}

ExtendedKalmanFilter::ExtendedKalmanFilter(ModelParams model, EKFConfig cfg, const NetworkState& x0,
                                           const ThetaVector& theta0)
    : model_(std::move(model)), cfg_(std::move(cfg)) {
  cfg_.validate();
  z_ << x0.stacked(), cfg_.bounds.clamp(theta0.stacked());
  P_ = cfg_.P0;
}

NetworkState ExtendedKalmanFilter::state() const { return NetworkState::from_stacked(z_.head<6>()); }
ThetaVector ExtendedKalmanFilter::theta() const { return ThetaVector::from_stacked(z_.tail<6>()); }

namespace {

using LocalSens = Eigen::Matrix<double, 6, 12>;
using Mat12x12 = Eigen::Matrix<double, 12, 12>;

// Two-stage Radau IIA (order 3, L-stable). The fast pressure mode of the
// holdups makes explicit steps of more than ~0.05 s unstable; this one takes
// a whole sensor period. The step derivative comes from differentiating the
// converged stage equations, so it is exact for the discrete map.
constexpr double kA11 = 5.0 / 12.0, kA12 = -1.0 / 12.0, kA21 = 3.0 / 4.0, kA22 = 1.0 / 4.0;

bool radau_step(Vec6& y, double h, const Vec3& w_g, const DisturbanceState& dist, const ThetaVector& th,
                const ModelParams& model, LocalSens* local) {
  const Vec6 y0 = y;
  const Vec6 tol = 1e-13 * (y0.cwiseAbs().array() + 1e-12).matrix();
  Vec6 y1 = y0, y2 = y0;
  ModelJacobians j1, j2;
  Eigen::PartialPivLU<Mat12x12> lu;
  bool converged = false;
  try {
    for (int it = 0; it < 25 && !converged; ++it) {
      const Vec6 f1 = rhs(NetworkState::from_stacked(y1), w_g, dist, th, model).stacked();
      const Vec6 f2 = rhs(NetworkState::from_stacked(y2), w_g, dist, th, model).stacked();
      j1 = jacobians(NetworkState::from_stacked(y1), w_g, dist, th, model);
      j2 = jacobians(NetworkState::from_stacked(y2), w_g, dist, th, model);
      Eigen::Matrix<double, 12, 1> g;
      g << y1 - y0 - h * (kA11 * f1 + kA12 * f2), y2 - y0 - h * (kA21 * f1 + kA22 * f2);
      Mat12x12 m = Mat12x12::Identity();
      m.topLeftCorner<6, 6>() -= h * kA11 * j1.f_x;
      m.topRightCorner<6, 6>() -= h * kA12 * j2.f_x;
      m.bottomLeftCorner<6, 6>() -= h * kA21 * j1.f_x;
      m.bottomRightCorner<6, 6>() -= h * kA22 * j2.f_x;
      lu.compute(m);
      const Eigen::Matrix<double, 12, 1> dk = lu.solve(-g);
      if (!dk.allFinite()) return false;
      y1 += dk.head<6>();
      y2 += dk.tail<6>();
      converged = (dk.head<6>().cwiseAbs().array() <= tol.array()).all() &&
                  (dk.tail<6>().cwiseAbs().array() <= tol.array()).all();
    }
  } catch (const ModelError&) {
    return false;
  }
  if (!converged) return false;
  if (local) {
    Eigen::Matrix<double, 12, 12> rhs_sens;
    rhs_sens.leftCols<6>() << Mat6::Identity(), Mat6::Identity();
    rhs_sens.topRightCorner<6, 6>() = h * (kA11 * j1.f_theta + kA12 * j2.f_theta);
    rhs_sens.bottomRightCorner<6, 6>() = h * (kA21 * j1.f_theta + kA22 * j2.f_theta);
    *local = lu.solve(rhs_sens).bottomRows<6>();
  }
  y = y2;
  return true;
}

// Advances over h, halving the step where Newton fails.
void radau_advance(Vec6& y, LocalSens* sens, double h, const Vec3& w_g, const DisturbanceState& dist,
                   const ThetaVector& th, const ModelParams& model, int depth) {
  Vec6 trial = y;
  LocalSens local;
  if (radau_step(trial, h, w_g, dist, th, model, sens ? &local : nullptr)) {
    y = trial;
    if (sens) {
      LocalSens next = local.leftCols<6>() * *sens;
      next.rightCols<6>() += local.rightCols<6>();
      *sens = next;
    }
    return;
  }
  if (depth >= 8) throw ModelError(ModelErrc::NoConvergence, -1, "EKF prediction: implicit step did not converge");
  radau_advance(y, sens, 0.5 * h, w_g, dist, th, model, depth + 1);
  radau_advance(y, sens, 0.5 * h, w_g, dist, th, model, depth + 1);
}

}  // namespace

Vec12 ExtendedKalmanFilter::propagate(const Vec12& z, const Vec3& q_g, const DisturbanceState& dist,
                                      Mat12* jac) const {
  const Vec3 w_g = units::slpm_to_kgs(q_g, model_.constants);
  const ThetaVector th = ThetaVector::from_stacked(z.tail<6>());
  const int steps = std::max(1, static_cast<int>(std::ceil(cfg_.dt / cfg_.max_substep - 1e-9)));
  const double h = cfg_.dt / steps;

  Vec6 y = z.head<6>();
  LocalSens S = LocalSens::Zero();
  S.leftCols<6>().setIdentity();
  for (int s = 0; s < steps; ++s) radau_advance(y, jac ? &S : nullptr, h, w_g, dist, th, model_, 0);

  Vec12 out;
  out << y, z.tail<6>();
  if (jac) {
    jac->setZero();
    jac->topRows<6>() = S;
    jac->bottomRightCorner<6, 6>().setIdentity();
  }
  return out;
}

void ExtendedKalmanFilter::predict(const Vec3& q_g, const DisturbanceState& dist) {
  Mat12 F;
  try {
    z_ = propagate(z_, q_g, dist, &F);
  } catch (const ModelError& e) {
    throw EstimationError(std::string("EKF prediction left the model domain: ") + e.what());
  }
  Mat12 Q = Mat12::Zero();
  Q.topLeftCorner<6, 6>() = cfg_.Q_x;
  Q.bottomRightCorner<6, 6>() = cfg_.Q_theta;
  P_ = F * P_ * F.transpose() + Q;
  P_ = 0.5 * (P_ + P_.transpose()).eval();
  t_ += cfg_.dt;
}

void ExtendedKalmanFilter::update(const MeasurementVector& y, const Vec3& q_g, const DisturbanceState& dist) {
  using Mat10x12 = Eigen::Matrix<double, 10, 12>;
  const Vec3 w_g = units::slpm_to_kgs(q_g, model_.constants);
  const NetworkState x = state();
  const ThetaVector th = theta();
  ModelOutputs pred;
  ModelJacobians J;
  try {
    pred = measurement_map(x, w_g, dist, th, model_);
    J = jacobians(x, w_g, dist, th, model_);
  } catch (const ModelError& e) {
    throw EstimationError(std::string("EKF update outside the model domain: ") + e.what());
  }
  Mat10x12 H;
  H << J.h_x, J.h_theta;
  innovation_ = y.stacked() - pred.stacked();

  const Mat10 S = H * P_ * H.transpose() + cfg_.R_m;
  Eigen::LLT<Mat10> llt(S);
  if (llt.info() != Eigen::Success) {
    guard_covariance();
    return;
  }
  const Eigen::Matrix<double, 12, 10> K = llt.solve(H * P_).transpose();
  z_ += K * innovation_;

  // Joseph form keeps the posterior symmetric and PSD under roundoff.
  const Mat12 IKH = Mat12::Identity() - K * H;
  P_ = IKH * P_ * IKH.transpose() + K * cfg_.R_m * K.transpose();
  P_ = 0.5 * (P_ + P_.transpose()).eval();
  guard_covariance();

  const Vec6 th_new = z_.tail<6>();
  const Vec6 clipped = cfg_.bounds.clamp(th_new);
  clipped_ = static_cast<int>((clipped.array() != th_new.array()).count());
  z_.tail<6>() = clipped;

  // Keep the holdups inside the domain where the chain is defined.
  const double v_total = model_.geometry.volume();
  for (int w = 0; w < kWells; ++w) {
    z_(w) = std::max(z_(w), 1e-9);
    z_(3 + w) = std::clamp(z_(3 + w), 1e-6, 0.999 * model_.constants.rho_l * v_total);
  }
}

void ExtendedKalmanFilter::guard_covariance() {
  if (symmetric_pd(P_)) return;
  P_ = cfg_.reset_inflation * cfg_.P0;
  ++resets_;
  reset_flag_ = true;
}

EstimateRecord ExtendedKalmanFilter::step(const MeasurementVector& y, const Vec3& q_g,
                                          const DisturbanceState& dist) {
  reset_flag_ = false;
  clipped_ = 0;
  predict(q_g, dist);
  update(y, q_g, dist);
  EstimateRecord r;
  r.t = t_;
  r.theta_hat = theta();
  r.x_hat = state();
  r.P_diag = P_.diagonal();
  r.innovation = innovation_;
  r.covariance_reset = reset_flag_;
  r.bound_hits = clipped_;
  return r;
}

// ===========================================================================
// Steady-state fit

const char* to_string(ParameterSet s) {
  switch (s) {
    case ParameterSet::ValveCoefficients: return "theta_res+theta_top";
    case ParameterSet::LiquidFraction: return "theta_res+alpha_l";
  }
  return "?";
}

SSFitConfig SSFitConfig::defaults(const ThetaVector& theta_nominal) {
  SSFitConfig c;
  c.theta_nominal = theta_nominal;
  c.bounds = ParameterBounds::relative(theta_nominal.stacked(), 0.1, 3.0);
  return c;
}

SSFitConfig SSFitConfig::liquid_fraction(const ThetaVector& theta_nominal, double alpha_min, double alpha_max) {
  SSFitConfig c = defaults(theta_nominal);
  c.parameters = ParameterSet::LiquidFraction;
  c.bounds.lower.tail<3>().setConstant(alpha_min);
  c.bounds.upper.tail<3>().setConstant(alpha_max);
  return c;
}

void SSFitConfig::validate() const {
  if ((V - V.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw std::invalid_argument("ss fit: V must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat6> es(V);
  if (es.eigenvalues().minCoeff() < -1e-12) throw std::invalid_argument("ss fit: V must be positive semidefinite");
  bounds.validate();
  if (parameters == ParameterSet::LiquidFraction && !(bounds.upper.tail<3>().array() < 1.0).all()) {
    throw std::invalid_argument("ss fit: liquid fraction bounds must stay below 1");
  }
  if (!((theta_nominal.top.array() > 0.0).all())) throw std::invalid_argument("ss fit: nominal theta_top missing");
  solver.validate();
}

SteadyData SteadyData::mean_of(const std::vector<MeasurementVector>& window) {
  if (window.empty()) throw std::invalid_argument("steady data: empty window");
  Vec10 acc = Vec10::Zero();
  for (const auto& y : window) acc += y.stacked();
  const ModelOutputs m = ModelOutputs::from_stacked(acc / static_cast<double>(window.size()));
  SteadyData d;
  d.p_rh = m.p_rh;
  d.q_l = m.q_l;
  d.q_g = m.q_g;
  d.p_pump = m.p_pump;
  return d;
}

namespace {

constexpr double kPressureUnit = 1000.0;   // fitted pressures in kPa
constexpr int kFitVars = 12;               // [scaled parameters(6), a(3), b(3)]

using Row4 = Eigen::Matrix<double, 1, 4>;   // d/d[first parameter, second parameter, a, b]

struct FitWell {
  double gas = 0.0;      // balances in sL/min and L/min equivalents
  double liquid = 0.0;
  double p_rh = 0.0;     // kPa gauge
  double q_l = 0.0;      // L/min
  double p_bi = 0.0;     // Pa abs
  double p_rh_abs = 0.0;
  Row4 d_gas = Row4::Zero();
  Row4 d_liquid = Row4::Zero();
  Row4 d_p_rh = Row4::Zero();
  Row4 d_q_l = Row4::Zero();
  Row4 d_p_bi = Row4::Zero();
};

struct FitContext {
  SteadyData data;
  ModelParams model;
  SSFitConfig cfg;
  StateScaling sc;
  Vec6 scale;            // raw parameter = scaled variable * scale
  double gas_unit = 0.0;
  double liq_unit = 0.0;

  FitContext(const SteadyData& d, const ModelParams& m, const SSFitConfig& c) : data(d), model(m), cfg(c) {
    scale << c.theta_nominal.res, (c.parameters == ParameterSet::ValveCoefficients ? c.theta_nominal.top
                                                                                   : Vec3::Ones());
    gas_unit = units::slpm_to_kgs(1.0, m.constants);
    liq_unit = units::lpm_to_kgs(1.0, m.constants);
  }

  FitWell eval(double t_res, double t_second, double a, double b, int w, bool deriv) const {
    using namespace local;
    const bool valves = cfg.parameters == ParameterSet::ValveCoefficients;
    const double th_res = t_res * scale(w);
    const double th_top = valves ? t_second * scale(3 + w) : cfg.theta_nominal.top(w);
    const double w_g = data.q_g(w) * gas_unit;
    const ScaledWell e = evaluate_scaled_well(a, b, w_g, th_res, th_top, 1.0, data.p_pump, model, sc, deriv, w);
    const auto& alg = e.eval.alg;
    const double kg = sc.gas_mass / gas_unit;
    const double kl = -model.constants.rho_l * sc.gas_volume / liq_unit;
    const double vol_rate = model.constants.rho_l * sc.gas_volume;

    FitWell out;
    out.p_rh_abs = alg.p_rh;
    out.p_rh = (alg.p_rh - model.constants.P_atm) / kPressureUnit;
    out.q_l = alg.w_l / liq_unit;
    out.p_bi = alg.p_bi;
    auto pick = [&](const LocalGrad& g, double second_col_scale) {
      Row4 r;
      r << g(kRes) * scale(w), (valves ? g(kTop) * second_col_scale : 0.0), g(kMg), g(kMl);
      return r;
    };
    if (valves) {
      out.gas = kg * e.da_dt;
      out.liquid = kl * e.db_dt;
      if (deriv) {
        out.d_gas = kg * pick(e.d_da_dt, scale(3 + w));
        out.d_liquid = kl * pick(e.d_db_dt, scale(3 + w));
      }
    } else {
      // The outlet split uses the estimated fraction instead of m_l / m_total.
      const double alpha = t_second;
      out.gas = kg * (w_g - (1.0 - alpha) * alg.w_total) / sc.gas_mass;
      out.liquid = kl * -(alg.w_l - alpha * alg.w_total) / vol_rate;
      if (deriv) {
        const Row4 dwt = pick(e.eval.d_w_total, 0.0);
        const Row4 dwl = pick(e.eval.d_w_l, 0.0);
        out.d_gas = kg * (-(1.0 - alpha) * dwt) / sc.gas_mass;
        out.d_gas(1) = kg * alg.w_total / sc.gas_mass;
        out.d_liquid = kl * -(dwl - alpha * dwt) / vol_rate;
        out.d_liquid(1) = kl * alg.w_total / vol_rate;
      }
    }
    if (deriv) {
      const double s2 = valves ? scale(3 + w) : 0.0;
      out.d_p_rh = pick(e.eval.d_p_rh, s2) / kPressureUnit;
      out.d_q_l = pick(e.eval.d_w_l, s2) / liq_unit;
      out.d_p_bi = pick(e.eval.d_p_bi, s2);
    }
    return out;
  }

  FitWell eval(const VecX& z, int w, bool deriv) const {
    return eval(z(w), z(3 + w), z(6 + w), z(9 + w), w, deriv);
  }

  double volume_upper() const { return 0.999 * model.geometry.volume() / sc.gas_volume; }

  /// Newton on one well's balances for fixed parameters, run down to the
  /// rounding floor so the fitted outputs are not limited by the states.
  bool settle(double t_res, double t_second, double& a, double& b, int w) const {
    double norm = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 60; ++iter) {
      FitWell f;
      try {
        f = eval(t_res, t_second, a, b, w, true);
      } catch (const ModelError&) {
        return false;
      }
      const Eigen::Vector2d r(f.gas, f.liquid);
      norm = r.cwiseAbs().maxCoeff();
      if (norm < 1e-15) return true;
      Eigen::Matrix2d J;
      J << f.d_gas(2), f.d_gas(3), f.d_liquid(2), f.d_liquid(3);
      const Eigen::Vector2d step = J.partialPivLu().solve(-r);
      if (!step.allFinite()) return false;
      double lambda = 1.0;
      bool accepted = false;
      for (int k = 0; k < 30 && !accepted; ++k, lambda *= 0.5) {
        const double a_try = a + lambda * step(0);
        const double b_try = b + lambda * step(1);
        if (a_try <= 0.0 || b_try <= 0.0 || b_try >= volume_upper()) continue;
        try {
          const FitWell g = eval(t_res, t_second, a_try, b_try, w, false);
          if (std::max(std::abs(g.gas), std::abs(g.liquid)) < (1.0 - 1e-4 * lambda) * norm) {
            a = a_try;
            b = b_try;
            accepted = true;
          }
        } catch (const ModelError&) {
        }
      }
      if (!accepted) return norm < 1e-10;
    }
    return norm < 1e-10;
  }
};

/// Starting states: the standard model's steady state at the guess, then
/// settled under the fitted split when that differs.
bool initial_states(const FitContext& ctx, const Vec6& t, Vec6& ab) {
  const auto& c = ctx.model.constants;
  for (int w = 0; w < kWells; ++w) {
    const double th_top = ctx.cfg.parameters == ParameterSet::ValveCoefficients ? t(3 + w) * ctx.scale(3 + w)
                                                                                 : ctx.cfg.theta_nominal.top(w);
    double a = 0.0, b = 0.0;
    try {
      const NetworkState g = default_guess(ctx.model);
      const auto [m_g, m_l] = steady_state_well(ctx.data.q_g(w) * units::slpm_to_kgs(1.0, c), 1.0, ctx.data.p_pump,
                                                t(w) * ctx.scale(w), th_top, ctx.model, {g.m_g(w), g.m_l(w)}, w);
      std::tie(a, b) = ctx.sc.to_scaled(m_g, m_l, ctx.model);
    } catch (const ModelError&) {
      return false;
    }
    if (!ctx.settle(t(w), t(3 + w), a, b, w)) return false;
    ab(w) = a;
    ab(3 + w) = b;
  }
  return true;
}

NLProblem make_fit_problem(const FitContext& ctx, const Vec6& guess) {
  NLProblem p;
  p.n = kFitVars;
  p.m_eq = 2 * kWells;
  p.m_in = 2 * kWells;
  p.lower.resize(kFitVars);
  p.upper.resize(kFitVars);
  p.lower << ctx.cfg.bounds.lower.cwiseQuotient(ctx.scale), Vec3::Constant(1e-3), Vec3::Constant(1e-3);
  p.upper << ctx.cfg.bounds.upper.cwiseQuotient(ctx.scale), Vec3::Constant(100.0),
      Vec3::Constant(ctx.volume_upper());

  const Vec6 t0 = ctx.cfg.bounds.clamp(guess).cwiseQuotient(ctx.scale);
  Vec6 ab = Vec6::Zero();
  if (!initial_states(ctx, t0, ab)) {
    throw ModelError(ModelErrc::NoConvergence, -1, "ss fit: no steady state at the initial guess");
  }
  p.x0.resize(kFitVars);
  p.x0 << t0, ab;

  Vec6 y_meas;
  y_meas << (ctx.data.p_rh.array() - ctx.model.constants.P_atm).matrix() / kPressureUnit, ctx.data.q_l;
  const Mat6 V = ctx.cfg.V;

  using OutputJac = Eigen::Matrix<double, 6, kFitVars>;
  auto outputs = [ctx](const VecX& z, OutputJac* dy) {
    Vec6 y;
    if (dy) dy->setZero();
    for (int w = 0; w < kWells; ++w) {
      const FitWell f = ctx.eval(z, w, dy != nullptr);
      y(w) = f.p_rh;
      y(3 + w) = f.q_l;
      if (dy) {
        const int cols[4] = {w, 3 + w, 6 + w, 9 + w};
        for (int k = 0; k < 4; ++k) {
          (*dy)(w, cols[k]) = f.d_p_rh(k);
          (*dy)(3 + w, cols[k]) = f.d_q_l(k);
        }
      }
    }
    return y;
  };

  p.objective = [outputs, y_meas, V](const VecX& z, VecX* grad) {
    OutputJac dy;
    const Vec6 r = y_meas - outputs(z, grad ? &dy : nullptr);
    if (grad) *grad = -2.0 * dy.transpose() * (V * r);
    return r.dot(V * r);
  };

  // Gauss-Newton curvature: the residuals vanish at an exact fit, where
  // quasi-Newton updates stall.
  p.hessian = [outputs, V](const VecX& z) {
    OutputJac dy;
    outputs(z, &dy);
    return MatX(2.0 * dy.transpose() * V * dy);
  };

  p.equalities = [ctx](const VecX& z, VecX& c, MatX* jac) {
    c.resize(6);
    if (jac) jac->setZero(6, kFitVars);
    for (int w = 0; w < kWells; ++w) {
      const FitWell f = ctx.eval(z, w, jac != nullptr);
      c(w) = f.gas;
      c(3 + w) = f.liquid;
      if (jac) {
        const int cols[4] = {w, 3 + w, 6 + w, 9 + w};
        for (int k = 0; k < 4; ++k) {
          (*jac)(w, cols[k]) = f.d_gas(k);
          (*jac)(3 + w, cols[k]) = f.d_liquid(k);
        }
      }
    }
  };

  p.inequalities = [ctx](const VecX& z, VecX& c, MatX* jac) {
    c.resize(6);
    if (jac) jac->setZero(6, kFitVars);
    const double margin = ctx.cfg.pressure_margin;
    for (int w = 0; w < kWells; ++w) {
      const FitWell f = ctx.eval(z, w, jac != nullptr);
      c(w) = (ctx.data.p_pump - f.p_bi - margin) / kPressureUnit;
      c(3 + w) = (f.p_rh_abs - ctx.model.constants.P_atm - margin) / kPressureUnit;
      if (jac) {
        const int cols[4] = {w, 3 + w, 6 + w, 9 + w};
        for (int k = 0; k < 4; ++k) {
          (*jac)(w, cols[k]) = -f.d_p_bi(k) / kPressureUnit;
          (*jac)(3 + w, cols[k]) = f.d_p_rh(k);
        }
      }
    }
  };

  const VecX lo = p.lower, hi = p.upper;
  p.restore = [ctx, lo, hi](VecX& z) {
    for (int w = 0; w < kWells; ++w) {
      double a = z(6 + w), b = z(9 + w);
      if (!ctx.settle(z(w), z(3 + w), a, b, w)) return false;
      z(6 + w) = a;
      z(9 + w) = b;
    }
    return (z.array() >= lo.array()).all() && (z.array() <= hi.array()).all();
  };
  return p;
}

}  // namespace

NLProblem build_ss_fit(const SteadyData& data, const ModelParams& model, const SSFitConfig& cfg, const Vec6& guess) {
  cfg.validate();
  return make_fit_problem(FitContext(data, model, cfg), guess);
}

Vec6 fit_outputs(const Vec6& params, const SteadyData& data, const ModelParams& model, const SSFitConfig& cfg,
                 NetworkState* x_out) {
  const FitContext ctx(data, model, cfg);
  const Vec6 t = params.cwiseQuotient(ctx.scale);
  Vec6 ab;
  if (!initial_states(ctx, t, ab)) throw ModelError(ModelErrc::NoConvergence, -1, "fit outputs: no steady state");
  Vec6 y;
  for (int w = 0; w < kWells; ++w) {
    const FitWell f = ctx.eval(t(w), t(3 + w), ab(w), ab(3 + w), w, false);
    y(w) = f.p_rh;
    y(3 + w) = f.q_l;
  }
  if (x_out) *x_out = ctx.sc.from_scaled(ab, model);
  return y;
}

SSFitResult ss_fit(const SteadyData& data, const ModelParams& model, const SSFitConfig& cfg, const Vec6& guess) {
  cfg.validate();
  const FitContext ctx(data, model, cfg);
  const NLProblem p = make_fit_problem(ctx, guess);
  SSFitResult out;
  out.kkt = solve(p, cfg.solver);
  const VecX& z = out.kkt.x;
  out.parameters = z.head<6>().cwiseProduct(ctx.scale);
  Vec6 ab;
  ab << z.segment<3>(6), z.segment<3>(9);
  out.x = ctx.sc.from_scaled(ab, model);
  out.theta.res = out.parameters.head<3>();
  if (cfg.parameters == ParameterSet::ValveCoefficients) {
    out.theta.top = out.parameters.tail<3>();
  } else {
    out.theta.top = cfg.theta_nominal.top;
    out.alpha_l = out.parameters.tail<3>();
  }
  Vec6 y_meas;
  y_meas << (data.p_rh.array() - model.constants.P_atm).matrix() / kPressureUnit, data.q_l;
  for (int w = 0; w < kWells; ++w) {
    const FitWell f = ctx.eval(z, w, false);
    out.residual(w) = y_meas(w) - f.p_rh;
    out.residual(3 + w) = y_meas(3 + w) - f.q_l;
  }
  out.objective = out.residual.dot(cfg.V * out.residual);
  for (int i = 0; i < 6; ++i) {
    const double tol = cfg.bound_tolerance * std::max(std::abs(cfg.bounds.upper(i)), 1e-12);
    if (out.parameters(i) - cfg.bounds.lower(i) <= tol || cfg.bounds.upper(i) - out.parameters(i) <= tol) {
      out.at_bounds.push_back(i);
    }
  }
  return out;
}

// ===========================================================================
// Identifiability Monte Carlo

void IdentifiabilityConfig::validate() const {
  if (runs < 30) throw std::invalid_argument("identifiability: at least 30 runs are needed");
  if (window_samples < 1) throw std::invalid_argument("identifiability: window_samples must be positive");
  if (histogram_bins < 1) throw std::invalid_argument("identifiability: histogram_bins must be positive");
  if (!(correlation_threshold > 0.0 && correlation_threshold < 1.0)) {
    throw std::invalid_argument("identifiability: correlation_threshold must lie in (0, 1)");
  }
  fit.validate();
  sim.validate();
}

namespace {

struct RunOutcome {
  bool ok = false;
  Vec6 estimate = Vec6::Zero();
  std::vector<int> at_bounds;
};

/// Nominal fit guess: nominal coefficients, and for the liquid-fraction set
/// the split the nominal model predicts at the operating point.
Vec6 nominal_guess(const ModelParams& model, const IdentifiabilityConfig& cfg) {
  Vec6 g = cfg.fit.theta_nominal.stacked();
  if (cfg.fit.parameters == ParameterSet::LiquidFraction) {
    DisturbanceState d;
    d.p_pump = units::barg_to_pa(0.3, model.constants);
    NetworkState x;
    steady_liquid_rates(cfg.operating_point, d, cfg.fit.theta_nominal, model, &x);
    g.tail<3>() = x.m_l.cwiseQuotient(x.m_l + x.m_g);
  }
  return cfg.fit.bounds.clamp(g);
}

RunOutcome one_run(const ModelParams& model, const IdentifiabilityConfig& cfg, const Vec6& guess, int run) {
  RunOutcome out;
  SimConfig sim = cfg.sim;
  sim.rng_seed = cfg.seed + static_cast<std::uint64_t>(run);
  ProfileKnot k;
  k.t = 0.0;
  k.v_o = cfg.v_o;
  k.p_pump = units::barg_to_pa(0.3, model.constants);
  try {
    DigitalTwin twin(model, cfg.theta_true, sim, DisturbanceProfile({k}));
    twin.initialize(cfg.operating_point);
    std::vector<MeasurementVector> window;
    window.reserve(cfg.window_samples);
    for (int i = 0; i < cfg.window_samples; ++i) window.push_back(twin.step(cfg.operating_point).measured);
    const SSFitResult fit = ss_fit(SteadyData::mean_of(window), model, cfg.fit, guess);
    if (!fit.kkt.ok()) return out;
    out.ok = true;
    out.estimate = fit.parameters;
    out.at_bounds = fit.at_bounds;
  } catch (const std::exception&) {
    out.ok = false;
  }
  return out;
}

const char* parameter_name(ParameterSet set, int i) {
  static const char* valves[6] = {"theta_res_1", "theta_res_2", "theta_res_3", "theta_top_1", "theta_top_2", "theta_top_3"};
  static const char* fraction[6] = {"theta_res_1", "theta_res_2", "theta_res_3", "alpha_l_1", "alpha_l_2", "alpha_l_3"};
  return set == ParameterSet::ValveCoefficients ? valves[i] : fraction[i];
}

IdentifiabilityReport summarize(const IdentifiabilityConfig& cfg, const std::vector<RunOutcome>& runs) {
  IdentifiabilityReport rep;
  rep.parameters = cfg.fit.parameters;
  rep.runs = static_cast<int>(runs.size());
  rep.correlation_threshold = cfg.correlation_threshold;
  for (int i = 0; i < 6; ++i) rep.stats[i].name = parameter_name(cfg.fit.parameters, i);

  for (const auto& r : runs) {
    if (!r.ok) {
      ++rep.failures;
      continue;
    }
    rep.estimates.push_back(r.estimate);
    if (!r.at_bounds.empty()) ++rep.runs_with_bound_hits;
    rep.total_bound_hits += static_cast<int>(r.at_bounds.size());
    for (int i : r.at_bounds) {
      const bool upper = std::abs(r.estimate(i) - cfg.fit.bounds.upper(i)) < std::abs(r.estimate(i) - cfg.fit.bounds.lower(i));
      (upper ? rep.stats[i].upper_hits : rep.stats[i].lower_hits)++;
    }
  }
  const int n = static_cast<int>(rep.estimates.size());
  if (n == 0) return rep;

  Vec6 mean = Vec6::Zero();
  for (const auto& e : rep.estimates) mean += e;
  mean /= n;
  Mat6 cov = Mat6::Zero();
  for (const auto& e : rep.estimates) cov += (e - mean) * (e - mean).transpose();
  if (n > 1) cov /= (n - 1);

  for (int i = 0; i < 6; ++i) {
    auto& s = rep.stats[i];
    s.mean = mean(i);
    s.stddev = std::sqrt(cov(i, i));
    s.min = s.max = rep.estimates.front()(i);
    for (const auto& e : rep.estimates) {
      s.min = std::min(s.min, e(i));
      s.max = std::max(s.max, e(i));
    }
    s.hist_lo = s.min;
    s.hist_hi = s.max > s.min ? s.max : s.min + 1.0;
    s.histogram.assign(cfg.histogram_bins, 0);
    for (const auto& e : rep.estimates) {
      int bin = static_cast<int>((e(i) - s.hist_lo) / (s.hist_hi - s.hist_lo) * cfg.histogram_bins);
      s.histogram[std::clamp(bin, 0, cfg.histogram_bins - 1)]++;
    }
  }

  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      const double d = std::sqrt(cov(i, i) * cov(j, j));
      rep.correlation(i, j) = i == j ? 1.0 : (d > 0.0 ? cov(i, j) / d : 0.0);
    }
  }

  // 95% region of a bivariate normal: chi-square quantile with 2 dof.
  const double chi2 = -2.0 * std::log(0.05);
  for (int i = 0; i < 6; ++i) {
    for (int j = i + 1; j < 6; ++j) {
      Eigen::Matrix2d c;
      c << cov(i, i), cov(i, j), cov(j, i), cov(j, j);
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c);
      const Eigen::Vector2d lam = es.eigenvalues().cwiseMax(0.0);
      ConfidenceEllipse el;
      el.i = i;
      el.j = j;
      el.center_i = mean(i);
      el.center_j = mean(j);
      el.semi_major = std::sqrt(chi2 * lam(1));
      el.semi_minor = std::sqrt(chi2 * lam(0));
      const Eigen::Vector2d v = es.eigenvectors().col(1);
      el.angle = std::atan2(v(1), v(0));
      el.area = std::numbers::pi * el.semi_major * el.semi_minor;
      rep.ellipses.push_back(el);
      if (std::abs(rep.correlation(i, j)) > cfg.correlation_threshold) rep.correlated_pairs.emplace_back(i, j);
    }
  }
  return rep;
}

}  // namespace

double IdentifiabilityReport::max_abs_correlation() const {
  double m = 0.0;
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) m = std::max(m, std::abs(correlation(i, j)));
  return m;
}

std::string IdentifiabilityReport::to_json() const {
  nlohmann::json j;
  j["parameter_set"] = to_string(parameters);
  j["runs"] = runs;
  j["failures"] = failures;
  j["runs_with_bound_hits"] = runs_with_bound_hits;
  j["total_bound_hits"] = total_bound_hits;
  j["correlation_threshold"] = correlation_threshold;
  j["max_abs_correlation"] = max_abs_correlation();
  for (const auto& s : stats) {
    j["parameters"].push_back({{"name", s.name},
                               {"mean", s.mean},
                               {"std", s.stddev},
                               {"min", s.min},
                               {"max", s.max},
                               {"lower_hits", s.lower_hits},
                               {"upper_hits", s.upper_hits}});
  }
  for (int i = 0; i < 6; ++i) {
    std::vector<double> row(6);
    for (int k = 0; k < 6; ++k) row[k] = correlation(i, k);
    j["correlation"].push_back(row);
  }
  for (const auto& e : ellipses) {
    j["ellipses"].push_back({{"i", stats[e.i].name},
                             {"j", stats[e.j].name},
                             {"center", {e.center_i, e.center_j}},
                             {"semi_major", e.semi_major},
                             {"semi_minor", e.semi_minor},
                             {"angle_rad", e.angle},
                             {"area", e.area}});
  }
  j["correlated_pairs"] = nlohmann::json::array();
  for (const auto& [a, b] : correlated_pairs) j["correlated_pairs"].push_back({stats[a].name, stats[b].name});
  return j.dump(2);
}

std::string IdentifiabilityReport::estimates_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "run";
  for (const auto& s : stats) os << ',' << s.name;
  os << '\n';
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    os << r;
    for (int i = 0; i < 6; ++i) os << ',' << estimates[r](i);
    os << '\n';
  }
  return os.str();
}

std::string IdentifiabilityReport::histogram_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "parameter,bin,lo,hi,count\n";
  for (const auto& s : stats) {
    const int bins = static_cast<int>(s.histogram.size());
    const double width = bins > 0 ? (s.hist_hi - s.hist_lo) / bins : 0.0;
    for (int b = 0; b < bins; ++b) {
      os << s.name << ',' << b << ',' << s.hist_lo + b * width << ',' << s.hist_lo + (b + 1) * width << ','
         << s.histogram[b] << '\n';
    }
  }
  return os.str();
}

IdentifiabilityReport identifiability_mc(const ModelParams& model, const IdentifiabilityConfig& cfg) {
  cfg.validate();
  const Vec6 guess = nominal_guess(model, cfg);
  std::vector<RunOutcome> runs(cfg.runs);
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < cfg.runs; ++r) runs[r] = one_run(model, cfg, guess, r);
  return summarize(cfg, runs);
}

IdentifiabilityReport identifiability_mc_serial(const ModelParams& model, const IdentifiabilityConfig& cfg) {
  cfg.validate();
  const Vec6 guess = nominal_guess(model, cfg);
  std::vector<RunOutcome> runs(cfg.runs);
  for (int r = 0; r < cfg.runs; ++r) runs[r] = one_run(model, cfg, guess, r);
  return summarize(cfg, runs);
}

}  // namespace gaslift
