// Single-well evaluation in optimizer coordinates (scaled gas mass `a`,
// scaled gas-pocket volume `b`). Shared by the economic problems and the
// steady-state fit.
#pragma once

#include "gaslift/optimization.hpp"
#include "gaslift/units.hpp"

namespace gaslift::detail {

struct ScaledWell {
  WellEval eval;          // physical chain, gradients converted to (a, b)
  double da_dt = 0.0;
  double db_dt = 0.0;
  LocalGrad d_da_dt = LocalGrad::Zero();
  LocalGrad d_db_dt = LocalGrad::Zero();
};

inline ScaledWell evaluate_scaled_well(double a, double b, double w_g, double theta_res, double theta_top,
                                       double v_o, double p_pump, const ModelParams& model,
                                       const StateScaling& s, bool with_derivatives, int well = 0) {
  const auto [m_g, m_l] = s.from_scaled(a, b, model);
  WellInputs in;
  in.m_g = m_g;
  in.m_l = m_l;
  in.w_g = w_g;
  in.theta_res = theta_res;
  in.theta_top = theta_top;
  in.v_o = v_o;
  in.p_pump = p_pump;

  ScaledWell out;
  out.eval = evaluate_well(in, model, with_derivatives, well);
  const double rho_l = model.constants.rho_l;
  const double vol_rate = rho_l * s.gas_volume;
  const auto& alg = out.eval.alg;
  out.da_dt = (w_g - alg.w_g_out) / s.gas_mass;
  out.db_dt = -(alg.w_l - alg.w_l_out) / vol_rate;
  if (!with_derivatives) return out;

  auto convert = [&](LocalGrad& g) {
    g(local::kMg) *= s.gas_mass;
    g(local::kMl) *= -vol_rate;
  };
  WellEval& e = out.eval;
  convert(e.d_w_l);
  convert(e.d_w_total);
  convert(e.d_w_l_out);
  convert(e.d_w_g_out);
  convert(e.d_p_rh);
  convert(e.d_p_bi);
  convert(e.d_rho_mix);

  out.d_da_dt = -e.d_w_g_out / s.gas_mass;
  out.d_da_dt(local::kWg) += 1.0 / s.gas_mass;
  out.d_db_dt = -(e.d_w_l - e.d_w_l_out) / vol_rate;
  return out;
}

}  // namespace gaslift::detail
