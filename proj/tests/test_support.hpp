#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "gaslift/process_model.hpp"
#include "gaslift/sqp.hpp"
#include "gaslift/units.hpp"

namespace gaslift::testing {

inline ModelParams rig() { return ModelParams{}; }

inline double pump_pressure(const ModelParams& m = rig()) { return units::barg_to_pa(0.3, m.constants); }

inline ThetaVector nominal_theta(const ModelParams& m = rig()) {
  return calibrate_nominal_theta(m, 10.0, 5000.0, 2.5, pump_pressure(m));
}

inline DisturbanceState dist(const Vec3& v_o, const ModelParams& m = rig()) {
  DisturbanceState d;
  d.v_o = v_o;
  d.p_pump = pump_pressure(m);
  return d;
}

inline ControlInputs inputs(double a, double b, double c) {
  ControlInputs u;
  u.qg_sp << a, b, c;
  return u;
}

// Central-difference check of one callback family. Relative error is taken
// against the larger of the entry and a per-row floor.
inline double fd_error_rows(const std::function<void(const VecX&, VecX&, MatX*)>& fn, const VecX& x) {
  VecX c;
  MatX jac;
  fn(x, c, &jac);
  double worst = 0.0;
  for (int j = 0; j < x.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
    VecX xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    VecX cp, cm;
    fn(xp, cp, nullptr);
    fn(xm, cm, nullptr);
    const VecX fd = (cp - cm) / (2.0 * h);
    for (int i = 0; i < c.size(); ++i) {
      const double scale = std::max(std::abs(jac(i, j)), 1e-3 * jac.row(i).cwiseAbs().maxCoeff() + 1e-12);
      worst = std::max(worst, std::abs(fd(i) - jac(i, j)) / scale);
    }
  }
  return worst;
}

inline double fd_error_objective(const NLProblem& p, const VecX& x) {
  auto as_rows = [&](const VecX& z, VecX& c, MatX* jac) {
    VecX g;
    c.resize(1);
    c(0) = p.objective(z, jac ? &g : nullptr);
    if (jac) *jac = g.transpose();
  };
  return fd_error_rows(as_rows, x);
}

}  // namespace gaslift::testing
