#include "gaslift/optimization.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "scaled_well.hpp"

namespace gaslift {

namespace {

constexpr double kProfitScale = 100.0;   // objective is J / 100
constexpr double kGuardScale = 1000.0;   // guard rows in kPa

using detail::evaluate_scaled_well;
using detail::ScaledWell;

double volume_upper(const ModelParams& model, const StateScaling& s) {
  return 0.999 * model.geometry.volume() / s.gas_volume;
}

}  // namespace

void EconomicSettings::validate() const {
  if (!(qg_min > 0.0 && qg_min < qg_max)) throw std::invalid_argument("economics: need 0 < qg_min < qg_max");
  if (!(qg_total_max >= kWells * qg_min)) throw std::invalid_argument("economics: gas budget below the minimum rates");
  if (!(pressure_margin >= 0.0)) throw std::invalid_argument("economics: pressure margin must be non-negative");
  if (!(price.array() >= 0.0).all()) throw std::invalid_argument("economics: prices must be non-negative");
}

std::pair<double, double> StateScaling::to_scaled(double m_g, double m_l, const ModelParams& model) const {
  const double v_gas = model.geometry.volume() - m_l / model.constants.rho_l;
  return {m_g / gas_mass, v_gas / gas_volume};
}

std::pair<double, double> StateScaling::from_scaled(double a, double b, const ModelParams& model) const {
  const double m_l = model.constants.rho_l * (model.geometry.volume() - b * gas_volume);
  return {a * gas_mass, m_l};
}

Vec6 StateScaling::to_scaled(const NetworkState& x, const ModelParams& model) const {
  Vec6 z;
  for (int w = 0; w < kWells; ++w) {
    const auto [a, b] = to_scaled(x.m_g(w), x.m_l(w), model);
    z(w) = a;
    z(kWells + w) = b;
  }
  return z;
}

NetworkState StateScaling::from_scaled(const Vec6& z, const ModelParams& model) const {
  NetworkState x;
  for (int w = 0; w < kWells; ++w) {
    const auto [m_g, m_l] = from_scaled(z(w), z(kWells + w), model);
    x.m_g(w) = m_g;
    x.m_l(w) = m_l;
  }
  return x;
}

Vec3 project_feasible(const Vec3& u, const EconomicSettings& econ) {
  Vec3 p = u.cwiseMax(econ.qg_min).cwiseMin(econ.qg_max);
  const double total = p.sum();
  if (total > econ.qg_total_max) {
    const double excess = total - kWells * econ.qg_min;
    const double room = econ.qg_total_max - kWells * econ.qg_min;
    for (int w = 0; w < kWells; ++w) p(w) = econ.qg_min + (p(w) - econ.qg_min) * room / excess;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Steady-state economics

ControlInputs SSEconProblem::decode_inputs(const VecX& z) const {
  ControlInputs u;
  u.qg_sp = z.head<3>();
  return u;
}

NetworkState SSEconProblem::decode_state(const VecX& z, const ModelParams& model) const {
  Vec6 s;
  s << z.segment<3>(3), z.segment<3>(6);
  return scaling.from_scaled(s, model);
}

SSEconProblem build_ss_econ(const ThetaVector& theta, const DisturbanceState& dist, const ModelParams& model,
                            const EconomicSettings& econ, const ControlInputs& warm_u,
                            const NetworkState* warm_x) {
  econ.validate();
  SSEconProblem out;
  const StateScaling sc = out.scaling;
  const auto& c = model.constants;
  const double gas_unit = units::slpm_to_kgs(1.0, c);
  const double liq_unit = units::lpm_to_kgs(1.0, c);

  NLProblem& p = out.problem;
  p.n = 9;
  p.m_eq = 6;
  p.m_in = 1 + 2 * kWells;
  p.lower.resize(9);
  p.upper.resize(9);
  p.lower << Vec3::Constant(econ.qg_min), Vec3::Constant(1e-3), Vec3::Constant(1e-3);
  p.upper << Vec3::Constant(econ.qg_max), Vec3::Constant(100.0), Vec3::Constant(volume_upper(model, sc));

  const Vec3 u0 = project_feasible(warm_u.qg_sp, econ);
  NetworkState x0;
  if (warm_x) {
    x0 = *warm_x;
  } else {
    ControlInputs cu;
    cu.qg_sp = u0;
    x0 = steady_state_solve(cu, dist, theta, model, default_guess(model));
  }
  const Vec6 s0 = sc.to_scaled(x0, model);
  p.x0.resize(9);
  p.x0 << u0, s0.head<3>(), s0.tail<3>();
  p.x0 = p.x0.cwiseMax(p.lower).cwiseMin(p.upper);

  auto eval = [=](const VecX& z, int w, bool deriv) {
    return evaluate_scaled_well(z(3 + w), z(6 + w), z(w) * gas_unit, theta.res(w), theta.top(w), dist.v_o(w),
                                dist.p_pump, model, sc, deriv, w);
  };

  p.objective = [=](const VecX& z, VecX* grad) {
    double f = 0.0;
    if (grad) grad->setZero(9);
    for (int w = 0; w < kWells; ++w) {
      const ScaledWell e = eval(z, w, grad != nullptr);
      const double k = -econ.price(w) / (liq_unit * kProfitScale);
      f += k * e.eval.alg.w_l;
      if (grad) {
        (*grad)(w) += k * e.eval.d_w_l(local::kWg) * gas_unit;
        (*grad)(3 + w) += k * e.eval.d_w_l(local::kMg);
        (*grad)(6 + w) += k * e.eval.d_w_l(local::kMl);
      }
    }
    return f;
  };

  // Gas and liquid balances, in sL/min and L/min equivalents.
  p.equalities = [=](const VecX& z, VecX& r, MatX* jac) {
    r.resize(6);
    if (jac) jac->setZero(6, 9);
    const double kg = sc.gas_mass / gas_unit;
    const double kl = -model.constants.rho_l * sc.gas_volume / liq_unit;
    for (int w = 0; w < kWells; ++w) {
      const ScaledWell e = eval(z, w, jac != nullptr);
      r(w) = kg * e.da_dt;
      r(3 + w) = kl * e.db_dt;
      if (jac) {
        (*jac)(w, w) = kg * e.d_da_dt(local::kWg) * gas_unit;
        (*jac)(w, 3 + w) = kg * e.d_da_dt(local::kMg);
        (*jac)(w, 6 + w) = kg * e.d_da_dt(local::kMl);
        (*jac)(3 + w, w) = kl * e.d_db_dt(local::kWg) * gas_unit;
        (*jac)(3 + w, 3 + w) = kl * e.d_db_dt(local::kMg);
        (*jac)(3 + w, 6 + w) = kl * e.d_db_dt(local::kMl);
      }
    }
  };

  p.inequalities = [=](const VecX& z, VecX& r, MatX* jac) {
    r.resize(7);
    if (jac) jac->setZero(7, 9);
    r(0) = econ.qg_total_max - z.head<3>().sum();
    if (jac) jac->block(0, 0, 1, 3).setConstant(-1.0);
    for (int w = 0; w < kWells; ++w) {
      const ScaledWell e = eval(z, w, jac != nullptr);
      const auto& alg = e.eval.alg;
      r(1 + w) = (dist.p_pump - alg.p_bi - econ.pressure_margin) / kGuardScale;
      r(4 + w) = (alg.p_rh - model.constants.P_atm - econ.pressure_margin) / kGuardScale;
      if (jac) {
        const LocalGrad gb = -e.eval.d_p_bi / kGuardScale;
        const LocalGrad gr = e.eval.d_p_rh / kGuardScale;
        (*jac)(1 + w, w) = gb(local::kWg) * gas_unit;
        (*jac)(1 + w, 3 + w) = gb(local::kMg);
        (*jac)(1 + w, 6 + w) = gb(local::kMl);
        (*jac)(4 + w, w) = gr(local::kWg) * gas_unit;
        (*jac)(4 + w, 3 + w) = gr(local::kMg);
        (*jac)(4 + w, 6 + w) = gr(local::kMl);
      }
    }
  };
  // States follow the injection through the per-well steady-state solve.
  const VecX lo = p.lower, hi = p.upper;
  p.restore = [=](VecX& z) {
    try {
      for (int w = 0; w < kWells; ++w) {
        const auto guess = sc.from_scaled(z(3 + w), z(6 + w), model);
        const auto [m_g, m_l] = steady_state_well(z(w) * gas_unit, dist.v_o(w), dist.p_pump, theta.res(w),
                                                  theta.top(w), model, guess, w);
        const auto [a, b] = sc.to_scaled(m_g, m_l, model);
        z(3 + w) = a;
        z(6 + w) = b;
      }
    } catch (const ModelError&) {
      return false;
    }
    return (z.array() >= lo.array()).all() && (z.array() <= hi.array()).all();
  };
  return out;
}

SSEconSolution solve_ss_econ(const ThetaVector& theta, const DisturbanceState& dist, const ModelParams& model,
                             const EconomicSettings& econ, const SolverConfig& solver,
                             const ControlInputs& warm_u, const NetworkState* warm_x,
                             const MatX* warm_hessian) {
  const SSEconProblem prob = build_ss_econ(theta, dist, model, econ, warm_u, warm_x);
  const MatX* hess = (warm_hessian && warm_hessian->rows() == prob.problem.n) ? warm_hessian : nullptr;
  SSEconSolution sol;
  sol.kkt = solve(prob.problem, solver, hess);
  sol.u = prob.decode_inputs(sol.kkt.x);
  sol.x = prob.decode_state(sol.kkt.x, model);
  const auto alg = algebraics(sol.x, units::slpm_to_kgs(sol.u.qg_sp, model.constants), dist, theta, model);
  for (int w = 0; w < kWells; ++w) sol.q_l(w) = units::kgs_to_lpm(alg[w].w_l, model.constants);
  sol.J = profit(sol.q_l, econ);
  return sol;
}

// ---------------------------------------------------------------------------
// Grid oracle

namespace {

struct Grid {
  int points = 0;
  double step = 0.0;
  double start = 0.0;
  double value(int i) const { return start + step * i; }
};

Grid make_grid(const EconomicSettings& econ, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("oracle: grid step must be positive");
  const double cells = (econ.qg_max - econ.qg_min) / step;
  const double rounded = std::round(cells);
  if (std::abs(cells - rounded) > 1e-9 * std::max(1.0, cells))
    throw std::invalid_argument("oracle: grid step must divide the setpoint range");
  return Grid{static_cast<int>(rounded) + 1, step, econ.qg_min};
}

void grid_point(const Grid& g, long idx, Vec3& u) {
  const long n = g.points;
  u << g.value(static_cast<int>(idx / (n * n))), g.value(static_cast<int>((idx / n) % n)),
      g.value(static_cast<int>(idx % n));
}

struct Best {
  double J = -std::numeric_limits<double>::infinity();
  long idx = -1;
  long candidates = 0;
  long failures = 0;

  void offer(double J_new, long idx_new) {
    if (J_new > J || (J_new == J && idx_new < idx)) {
      J = J_new;
      idx = idx_new;
    }
  }
};

void visit(const Grid& g, long idx, const ThetaVector& theta, const DisturbanceState& dist,
           const ModelParams& model, const EconomicSettings& econ, Best& best) {
  Vec3 u;
  grid_point(g, idx, u);
  if (u.sum() > econ.qg_total_max + 1e-9) return;
  ++best.candidates;
  try {
    ControlInputs cu;
    cu.qg_sp = u;
    best.offer(profit(steady_liquid_rates(cu, dist, theta, model), econ), idx);
  } catch (const ModelError&) {
    ++best.failures;
  }
}

OracleResult finish(const Grid& g, const Best& best) {
  if (best.idx < 0) throw ModelError(ModelErrc::InfeasibleRegime, -1, "oracle: no grid point could be evaluated");
  OracleResult r;
  Vec3 u;
  grid_point(g, best.idx, u);
  r.best.qg_sp = u;
  r.J = best.J;
  r.candidates = best.candidates;
  r.failures = best.failures;
  return r;
}

}  // namespace

OracleResult brute_force_ss_oracle_serial(const ThetaVector& theta, const DisturbanceState& dist,
                                          const ModelParams& model, const EconomicSettings& econ,
                                          double grid_step) {
  const Grid g = make_grid(econ, grid_step);
  const long total = static_cast<long>(g.points) * g.points * g.points;
  Best best;
  for (long idx = 0; idx < total; ++idx) visit(g, idx, theta, dist, model, econ, best);
  return finish(g, best);
}

OracleResult brute_force_ss_oracle(const ThetaVector& theta, const DisturbanceState& dist,
                                   const ModelParams& model, const EconomicSettings& econ, double grid_step) {
  const Grid g = make_grid(econ, grid_step);
  const long total = static_cast<long>(g.points) * g.points * g.points;
  Best best;
#pragma omp parallel
  {
    Best local;
#pragma omp for schedule(dynamic, 256) nowait
    for (long idx = 0; idx < total; ++idx) visit(g, idx, theta, dist, model, econ, local);
#pragma omp critical(gaslift_oracle_merge)
    {
      best.candidates += local.candidates;
      best.failures += local.failures;
      if (local.idx >= 0) best.offer(local.J, local.idx);
    }
  }
  return finish(g, best);
}

// ---------------------------------------------------------------------------
// Collocation

const std::array<double, 3>& CollocationGrid::nodes() {
  static const double r6 = std::sqrt(6.0);
  static const std::array<double, 3> c{(4.0 - r6) / 10.0, (4.0 + r6) / 10.0, 1.0};
  return c;
}

const std::array<std::array<double, 3>, 3>& CollocationGrid::coefficients() {
  static const double r6 = std::sqrt(6.0);
  static const std::array<std::array<double, 3>, 3> a{{
      {(88.0 - 7.0 * r6) / 360.0, (296.0 - 169.0 * r6) / 1800.0, (-2.0 + 3.0 * r6) / 225.0},
      {(296.0 + 169.0 * r6) / 1800.0, (88.0 + 7.0 * r6) / 360.0, (-2.0 - 3.0 * r6) / 225.0},
      {(16.0 - r6) / 36.0, (16.0 + r6) / 36.0, 1.0 / 9.0},
  }};
  return a;
}

const std::array<double, 3>& CollocationGrid::weights() { return coefficients()[2]; }

void CollocationGrid::validate() const {
  if (elements < 1) throw std::invalid_argument("collocation: need at least one element");
  if (!(element_length > 0.0)) throw std::invalid_argument("collocation: element length must be positive");
}

Vec3 DRTOProblem::inputs(const VecX& z, int element) const { return z.segment<3>(element * element_size()); }

NetworkState DRTOProblem::state(const VecX& z, int element, int stage, const ModelParams& model) const {
  const Vec6 s = z.segment<6>(element * element_size() + 3 + 6 * stage);
  return scaling.from_scaled(s, model);
}

namespace {

// Per-point evaluation shared by the DRTO callbacks.
struct PointEval {
  std::array<ScaledWell, kWells> wells;
};

PointEval eval_point(const VecX& z, int offset, const Vec3& u, const ThetaVector& theta,
                     const DisturbanceState& dist, const ModelParams& model, const StateScaling& sc,
                     bool deriv) {
  const double gas_unit = units::slpm_to_kgs(1.0, model.constants);
  PointEval pe;
  for (int w = 0; w < kWells; ++w) {
    pe.wells[w] = evaluate_scaled_well(z(offset + w), z(offset + kWells + w), u(w) * gas_unit, theta.res(w),
                                       theta.top(w), dist.v_o(w), dist.p_pump, model, sc, deriv, w);
  }
  return pe;
}

}  // namespace

DRTOProblem build_drto(const ThetaVector& theta, const NetworkState& x_hat, const Vec3& u_prev,
                       const DisturbanceState& dist, const ModelParams& model, const EconomicSettings& econ,
                       const DRTOSettings& settings, const VecX* warm_start) {
  econ.validate();
  settings.grid.validate();
  if (!(settings.du_max > 0.0)) throw std::invalid_argument("drto: move limit must be positive");
  if (!(settings.move_weight.array() >= 0.0).all()) throw std::invalid_argument("drto: move weights must be >= 0");

  DRTOProblem out;
  out.grid = settings.grid;
  const StateScaling sc = out.scaling;
  const int N = settings.grid.elements;
  const int E = out.element_size();
  const double h = settings.grid.element_length;
  const double horizon = settings.grid.horizon();
  const auto& A = CollocationGrid::coefficients();
  const auto& bw = CollocationGrid::weights();
  const double gas_unit = units::slpm_to_kgs(1.0, model.constants);
  const double liq_unit = units::lpm_to_kgs(1.0, model.constants);
  const Vec6 s_hat = sc.to_scaled(x_hat, model);

  NLProblem& p = out.problem;
  p.n = N * E;
  p.m_eq = N * 3 * 6;
  p.m_in = N * (1 + 2 * kWells) + N * 3 * 2 * kWells;
  p.lower.resize(p.n);
  p.upper.resize(p.n);
  Vec6 s_lo, s_hi;
  s_lo.setConstant(1e-3);
  s_hi << Vec3::Constant(100.0), Vec3::Constant(volume_upper(model, sc));
  for (int k = 0; k < N; ++k) {
    p.lower.segment<3>(k * E).setConstant(econ.qg_min);
    p.upper.segment<3>(k * E).setConstant(econ.qg_max);
    for (int j = 0; j < 3; ++j) {
      p.lower.segment<6>(k * E + 3 + 6 * j) = s_lo;
      p.upper.segment<6>(k * E + 3 + 6 * j) = s_hi;
    }
  }

  auto stage_offset = [E](int k, int j) { return k * E + 3 + 6 * j; };

  const double obj_scale = 1.0 / (horizon * kProfitScale);
  p.objective = [=](const VecX& z, VecX* grad) {
    if (grad) grad->setZero(z.size());
    double f = 0.0;
    for (int k = 0; k < N; ++k) {
      const Vec3 u = z.segment<3>(k * E);
      for (int j = 0; j < 3; ++j) {
        const int off = stage_offset(k, j);
        const PointEval pe = eval_point(z, off, u, theta, dist, model, sc, grad != nullptr);
        for (int w = 0; w < kWells; ++w) {
          const double kq = -obj_scale * h * bw[j] * econ.price(w) / liq_unit;
          f += kq * pe.wells[w].eval.alg.w_l;
          if (grad) {
            (*grad)(off + w) += kq * pe.wells[w].eval.d_w_l(local::kMg);
            (*grad)(off + kWells + w) += kq * pe.wells[w].eval.d_w_l(local::kMl);
          }
        }
      }
      const Vec3 prev = k == 0 ? u_prev : Vec3(z.segment<3>((k - 1) * E));
      const Vec3 du = u - prev;
      const double kr = obj_scale / h;
      f += kr * du.dot(settings.move_weight.cwiseProduct(du));
      if (grad) {
        const Vec3 g = 2.0 * kr * settings.move_weight.cwiseProduct(du);
        grad->segment<3>(k * E) += g;
        if (k > 0) grad->segment<3>((k - 1) * E) -= g;
      }
    }
    return f;
  };

  // X_kj - X_k0 - h * sum_l A_jl F(X_kl, u_k) = 0
  p.equalities = [=](const VecX& z, VecX& r, MatX* jac) {
    r.resize(N * 18);
    if (jac) jac->setZero(N * 18, z.size());
    for (int k = 0; k < N; ++k) {
      const Vec3 u = z.segment<3>(k * E);
      std::array<PointEval, 3> pe;
      std::array<Vec6, 3> F;
      for (int l = 0; l < 3; ++l) {
        pe[l] = eval_point(z, stage_offset(k, l), u, theta, dist, model, sc, jac != nullptr);
        for (int w = 0; w < kWells; ++w) {
          F[l](w) = pe[l].wells[w].da_dt;
          F[l](kWells + w) = pe[l].wells[w].db_dt;
        }
      }
      const Vec6 start = k == 0 ? s_hat : Vec6(z.segment<6>(stage_offset(k - 1, 2)));
      for (int j = 0; j < 3; ++j) {
        const int row = k * 18 + 6 * j;
        Vec6 res = z.segment<6>(stage_offset(k, j)) - start;
        for (int l = 0; l < 3; ++l) res -= h * A[j][l] * F[l];
        r.segment<6>(row) = res;
        if (!jac) continue;
        MatX& J = *jac;
        for (int i = 0; i < 6; ++i) J(row + i, stage_offset(k, j) + i) += 1.0;
        if (k > 0)
          for (int i = 0; i < 6; ++i) J(row + i, stage_offset(k - 1, 2) + i) -= 1.0;
        for (int l = 0; l < 3; ++l) {
          const double c = -h * A[j][l];
          const int col = stage_offset(k, l);
          for (int w = 0; w < kWells; ++w) {
            const ScaledWell& e = pe[l].wells[w];
            J(row + w, col + w) += c * e.d_da_dt(local::kMg);
            J(row + w, col + kWells + w) += c * e.d_da_dt(local::kMl);
            J(row + w, k * E + w) += c * e.d_da_dt(local::kWg) * gas_unit;
            J(row + kWells + w, col + w) += c * e.d_db_dt(local::kMg);
            J(row + kWells + w, col + kWells + w) += c * e.d_db_dt(local::kMl);
            J(row + kWells + w, k * E + w) += c * e.d_db_dt(local::kWg) * gas_unit;
          }
        }
      }
    }
  };

  // Rows per element: budget, 3 upper move limits, 3 lower move limits; then
  // two pressure guards per well at every collocation point.
  p.inequalities = [=](const VecX& z, VecX& r, MatX* jac) {
    const int m = N * 7 + N * 18;
    r.resize(m);
    if (jac) jac->setZero(m, z.size());
    for (int k = 0; k < N; ++k) {
      const Vec3 u = z.segment<3>(k * E);
      const Vec3 prev = k == 0 ? u_prev : Vec3(z.segment<3>((k - 1) * E));
      const int row = 7 * k;
      r(row) = econ.qg_total_max - u.sum();
      for (int w = 0; w < kWells; ++w) {
        r(row + 1 + w) = settings.du_max - (u(w) - prev(w));
        r(row + 4 + w) = settings.du_max + (u(w) - prev(w));
      }
      if (jac) {
        MatX& J = *jac;
        for (int w = 0; w < kWells; ++w) {
          J(row, k * E + w) = -1.0;
          J(row + 1 + w, k * E + w) = -1.0;
          J(row + 4 + w, k * E + w) = 1.0;
          if (k > 0) {
            J(row + 1 + w, (k - 1) * E + w) = 1.0;
            J(row + 4 + w, (k - 1) * E + w) = -1.0;
          }
        }
      }
      for (int j = 0; j < 3; ++j) {
        const int off = stage_offset(k, j);
        const PointEval pe = eval_point(z, off, u, theta, dist, model, sc, jac != nullptr);
        const int grow = N * 7 + (k * 3 + j) * 6;
        for (int w = 0; w < kWells; ++w) {
          const WellEval& e = pe.wells[w].eval;
          r(grow + w) = (dist.p_pump - e.alg.p_bi - econ.pressure_margin) / kGuardScale;
          r(grow + 3 + w) = (e.alg.p_rh - model.constants.P_atm - econ.pressure_margin) / kGuardScale;
          if (jac) {
            MatX& J = *jac;
            J(grow + w, off + w) = -e.d_p_bi(local::kMg) / kGuardScale;
            J(grow + w, off + kWells + w) = -e.d_p_bi(local::kMl) / kGuardScale;
            J(grow + w, k * E + w) = -e.d_p_bi(local::kWg) * gas_unit / kGuardScale;
            J(grow + 3 + w, off + w) = e.d_p_rh(local::kMg) / kGuardScale;
            J(grow + 3 + w, off + kWells + w) = e.d_p_rh(local::kMl) / kGuardScale;
            J(grow + 3 + w, k * E + w) = e.d_p_rh(local::kWg) * gas_unit / kGuardScale;
          }
        }
      }
    }
  };

  // States follow the inputs: Newton on each element's stage equations, one
  // well at a time since the wells do not interact.
  const VecX lo = p.lower, hi = p.upper;
  p.restore = [=](VecX& z) {
    using Vec6d = Eigen::Matrix<double, 6, 1>;
    using Mat6d = Eigen::Matrix<double, 6, 6>;
    try {
      for (int k = 0; k < N; ++k) {
        const Vec3 u = z.segment<3>(k * E);
        for (int w = 0; w < kWells; ++w) {
          const double start_a = k == 0 ? s_hat(w) : z(stage_offset(k - 1, 2) + w);
          const double start_b = k == 0 ? s_hat(kWells + w) : z(stage_offset(k - 1, 2) + kWells + w);
          Vec6d v;   // [a, b] per stage
          for (int j = 0; j < 3; ++j) {
            v(2 * j) = z(stage_offset(k, j) + w);
            v(2 * j + 1) = z(stage_offset(k, j) + kWells + w);
          }
          bool converged = false;
          for (int iter = 0; iter < 30 && !converged; ++iter) {
            std::array<ScaledWell, 3> e;
            for (int l = 0; l < 3; ++l) {
              e[l] = evaluate_scaled_well(v(2 * l), v(2 * l + 1), u(w) * gas_unit, theta.res(w), theta.top(w),
                                          dist.v_o(w), dist.p_pump, model, sc, true, w);
            }
            Vec6d r;
            Mat6d J = Mat6d::Identity();
            for (int j = 0; j < 3; ++j) {
              r(2 * j) = v(2 * j) - start_a;
              r(2 * j + 1) = v(2 * j + 1) - start_b;
              for (int l = 0; l < 3; ++l) {
                const double c = h * A[j][l];
                r(2 * j) -= c * e[l].da_dt;
                r(2 * j + 1) -= c * e[l].db_dt;
                J(2 * j, 2 * l) -= c * e[l].d_da_dt(local::kMg);
                J(2 * j, 2 * l + 1) -= c * e[l].d_da_dt(local::kMl);
                J(2 * j + 1, 2 * l) -= c * e[l].d_db_dt(local::kMg);
                J(2 * j + 1, 2 * l + 1) -= c * e[l].d_db_dt(local::kMl);
              }
            }
            if (r.cwiseAbs().maxCoeff() < 1e-12) {
              converged = true;
              break;
            }
            v += J.partialPivLu().solve(-r);
          }
          if (!converged) return false;
          for (int j = 0; j < 3; ++j) {
            z(stage_offset(k, j) + w) = v(2 * j);
            z(stage_offset(k, j) + kWells + w) = v(2 * j + 1);
          }
        }
      }
    } catch (const ModelError&) {
      return false;
    }
    return (z.array() >= lo.array()).all() && (z.array() <= hi.array()).all();
  };

  if (warm_start && warm_start->size() == p.n) {
    p.x0 = *warm_start;
  } else {
    p.x0 = drto_simulated_guess(out, theta, x_hat, u_prev, dist, model);
  }
  p.x0 = p.x0.cwiseMax(p.lower).cwiseMin(p.upper);
  return out;
}

VecX drto_simulated_guess(const DRTOProblem& p, const ThetaVector& theta, const NetworkState& x_hat,
                          const Vec3& u, const DisturbanceState& dist, const ModelParams& model) {
  const int N = p.grid.elements;
  const int E = p.element_size();
  const double h = p.grid.element_length;
  const auto& c = CollocationGrid::nodes();
  const Vec3 w_g = units::slpm_to_kgs(u, model.constants);
  // The liquid holdup has time constants down to ~20 ms at low injection.
  constexpr double kMaxSubstep = 0.02;

  VecX z(N * E);
  NetworkState x = x_hat;
  bool diverged = false;
  auto f = [&](const NetworkState& s) { return rhs(s, w_g, dist, theta, model).stacked(); };
  for (int k = 0; k < N; ++k) {
    z.segment<3>(k * E) = u;
    double t_prev = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double span = (c[j] - t_prev) * h;
      t_prev = c[j];
      if (!diverged) {
        try {
          const int substeps = static_cast<int>(std::ceil(span / kMaxSubstep));
          const double dt = span / substeps;
          Vec6 y = x.stacked();
          for (int s = 0; s < substeps; ++s) {
            const Vec6 k1 = f(NetworkState::from_stacked(y));
            const Vec6 k2 = f(NetworkState::from_stacked(y + 0.5 * dt * k1));
            const Vec6 k3 = f(NetworkState::from_stacked(y + 0.5 * dt * k2));
            const Vec6 k4 = f(NetworkState::from_stacked(y + dt * k3));
            y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
          }
          x = NetworkState::from_stacked(y);
        } catch (const ModelError&) {
          diverged = true;
        }
      }
      z.segment<6>(k * E + 3 + 6 * j) = p.scaling.to_scaled(x, model);
    }
  }
  return z;
}

VecX shift_solution(const VecX& z, int element_size) {
  const int N = static_cast<int>(z.size()) / element_size;
  VecX out(z.size());
  for (int k = 0; k < N; ++k) {
    const int src = std::min(k + 1, N - 1);
    out.segment(k * element_size, element_size) = z.segment(src * element_size, element_size);
  }
  return out;
}

MatX shift_hessian(const MatX& B, int element_size) {
  const int n = static_cast<int>(B.rows());
  const int N = n / element_size;
  const int E = element_size;
  MatX out = MatX::Zero(n, n);
  if (N > 1) out.topLeftCorner((N - 1) * E, (N - 1) * E) = B.bottomRightCorner((N - 1) * E, (N - 1) * E);
  out.bottomRightCorner(E, E) = B.bottomRightCorner(E, E);
  return out;
}

DRTOSolution solve_drto(const ThetaVector& theta, const NetworkState& x_hat, const Vec3& u_prev,
                        const DisturbanceState& dist, const ModelParams& model, const EconomicSettings& econ,
                        const DRTOSettings& settings, const SolverConfig& solver, const VecX* warm_start,
                        const MatX* warm_hessian) {
  const DRTOProblem prob = build_drto(theta, x_hat, u_prev, dist, model, econ, settings, warm_start);
  const MatX* hess = (warm_hessian && warm_hessian->rows() == prob.problem.n) ? warm_hessian : nullptr;
  DRTOSolution sol;
  sol.kkt = solve(prob.problem, solver, hess);
  const int N = prob.grid.elements;
  sol.plan.resize(N);
  for (int k = 0; k < N; ++k) sol.plan[k] = prob.inputs(sol.kkt.x, k);
  sol.first_move = sol.plan.front();

  const auto& bw = CollocationGrid::weights();
  double integral = 0.0;
  for (int k = 0; k < N; ++k) {
    for (int j = 0; j < 3; ++j) {
      const NetworkState x = prob.state(sol.kkt.x, k, j, model);
      try {
        const auto alg = algebraics(x, units::slpm_to_kgs(sol.plan[k], model.constants), dist, theta, model);
        Vec3 q_l;
        for (int w = 0; w < kWells; ++w) q_l(w) = units::kgs_to_lpm(alg[w].w_l, model.constants);
        integral += prob.grid.element_length * bw[j] * profit(q_l, econ);
      } catch (const ModelError&) {
        integral = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  sol.predicted_profit = integral / prob.grid.horizon();
  return sol;
}

}  // namespace gaslift
