#include "gaslift/sqp.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gaslift/qp.hpp"

namespace gaslift {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Success: return "Success";
    case SolveStatus::MaxIterations: return "MaxIterations";
    case SolveStatus::LineSearchFailure: return "LineSearchFailure";
    case SolveStatus::InfeasibleQP: return "InfeasibleQP";
    case SolveStatus::EvaluationFailure: return "EvaluationFailure";
  }
  return "Unknown";
}

void NLProblem::validate() const {
  if (n <= 0) throw std::invalid_argument("problem has no variables");
  if (!objective) throw std::invalid_argument("problem has no objective");
  if (m_eq > 0 && !equalities) throw std::invalid_argument("equality callback missing");
  if (m_in > 0 && !inequalities) throw std::invalid_argument("inequality callback missing");
  if (lower.size() != n || upper.size() != n || x0.size() != n) {
    throw std::invalid_argument("bounds or initial point have the wrong size");
  }
  if ((lower.array() > upper.array()).any()) throw std::invalid_argument("lower bound above upper bound");
}

void SolverConfig::validate() const {
  if (!(kkt_tol > 0.0) || max_iter <= 0 || !(armijo > 0.0 && armijo < 0.5) ||
      !(backtrack > 0.0 && backtrack < 1.0) || max_backtracks <= 0 || max_corrections < 0 ||
      !(bfgs_damping > 0.0 && bfgs_damping < 1.0)) {
    throw std::invalid_argument("invalid solver configuration");
  }
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Eval {
  VecX x;
  double f = kInf;
  VecX grad;
  VecX c_eq, c_in;
  MatX j_eq, j_in;
  bool ok = false;
};

Eval evaluate(const NLProblem& p, const VecX& x, bool derivatives) {
  Eval e;
  e.x = x;
  try {
    e.f = p.objective(x, derivatives ? &e.grad : nullptr);
    e.c_eq.resize(p.m_eq);
    e.c_in.resize(p.m_in);
    if (p.m_eq > 0) p.equalities(x, e.c_eq, derivatives ? &e.j_eq : nullptr);
    if (p.m_in > 0) p.inequalities(x, e.c_in, derivatives ? &e.j_in : nullptr);
    if (!derivatives) {
      e.ok = std::isfinite(e.f) && e.c_eq.allFinite() && e.c_in.allFinite();
    } else {
      if (p.m_eq == 0) e.j_eq = MatX::Zero(0, p.n);
      if (p.m_in == 0) e.j_in = MatX::Zero(0, p.n);
      e.ok = std::isfinite(e.f) && e.grad.allFinite() && e.c_eq.allFinite() && e.c_in.allFinite() &&
             e.j_eq.allFinite() && e.j_in.allFinite();
    }
  } catch (const std::exception&) {
    e.ok = false;
  }
  return e;
}

double violation(const NLProblem& p, const Eval& e) {
  double v = e.c_eq.lpNorm<1>();
  for (int i = 0; i < p.m_in; ++i) v += std::max(0.0, -e.c_in(i));
  return v;
}

double max_violation(const NLProblem& p, const Eval& e) {
  double v = p.m_eq > 0 ? e.c_eq.cwiseAbs().maxCoeff() : 0.0;
  for (int i = 0; i < p.m_in; ++i) v = std::max(v, -e.c_in(i));
  for (int i = 0; i < p.n; ++i) {
    v = std::max(v, p.lower(i) - e.x(i));
    v = std::max(v, e.x(i) - p.upper(i));
  }
  return v;
}

VecX clamp(const NLProblem& p, const VecX& x) { return x.cwiseMax(p.lower).cwiseMin(p.upper); }

// Clamped point, passed through the problem's restoration when it has one. A
// failed restoration leaves the clamped point for the merit test to judge.
VecX trial_point(const NLProblem& p, const VecX& x) {
  VecX out = clamp(p, x);
  if (p.restore) {
    VecX restored = out;
    if (p.restore(restored)) out = clamp(p, restored);
  }
  return out;
}

void kkt_residuals(const NLProblem& p, const Eval& e, KKTResult& r) {
  VecX grad_l = e.grad;
  if (p.m_eq > 0) grad_l -= e.j_eq.transpose() * r.lambda_eq;
  if (p.m_in > 0) grad_l -= e.j_in.transpose() * r.mu_in;
  grad_l -= r.z_bounds;
  r.stationarity = grad_l.cwiseAbs().maxCoeff();
  r.feasibility = max_violation(p, e);
  double comp = 0.0;
  for (int i = 0; i < p.m_in; ++i) comp = std::max(comp, std::abs(r.mu_in(i) * e.c_in(i)));
  for (int i = 0; i < p.n; ++i) {
    const double z = r.z_bounds(i);
    if (z > 0.0) comp = std::max(comp, std::abs(z * (e.x(i) - p.lower(i))));
    if (z < 0.0) comp = std::max(comp, std::abs(z * (p.upper(i) - e.x(i))));
  }
  r.complementarity = comp;
}

VecX lagrangian_gradient(const Eval& e, const VecX& lambda, const VecX& mu) {
  VecX g = e.grad;
  if (lambda.size() > 0) g -= e.j_eq.transpose() * lambda;
  if (mu.size() > 0) g -= e.j_in.transpose() * mu;
  return g;
}

// Adds the equality Gram term and, if still needed, a diagonal shift. The
// Gram term leaves the subproblem solution unchanged on the linearized
// equality set.
MatX make_positive_definite(MatX H, const MatX& j_eq) {
  const int n = static_cast<int>(H.rows());
  if (j_eq.rows() > 0) H += j_eq.transpose() * j_eq;
  const double base = 1e-8 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
  double shift = 0.0;
  for (int k = 0; k < 60; ++k) {
    Eigen::LLT<MatX> llt(H + shift * MatX::Identity(n, n));
    if (llt.info() == Eigen::Success) break;
    shift = shift == 0.0 ? base : 4.0 * shift;
  }
  H.diagonal().array() += shift;
  return H;
}

// Central differences of the analytic Lagrangian gradient, symmetrized and
// made positive definite.
MatX lagrangian_hessian_fd(const NLProblem& p, const Eval& at, const VecX& lambda, const VecX& mu) {
  const int n = p.n;
  MatX H(n, n);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(at.x(j)));
    VecX xp = at.x, xm = at.x;
    xp(j) += h;
    xm(j) -= h;
    const Eval ep = evaluate(p, xp, true);
    const Eval em = evaluate(p, xm, true);
    if (!ep.ok || !em.ok) return MatX::Identity(n, n);
    H.col(j) = (lagrangian_gradient(ep, lambda, mu) - lagrangian_gradient(em, lambda, mu)) / (2.0 * h);
  }
  return make_positive_definite(0.5 * (H + H.transpose()), at.j_eq);
}

}  // namespace

KKTResult solve(const NLProblem& p, const SolverConfig& cfg, const MatX* initial_hessian) {
  p.validate();
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto finish = [&](KKTResult& r) {
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  };

  const int n = p.n;
  KKTResult res;
  res.lambda_eq = VecX::Zero(p.m_eq);
  res.mu_in = VecX::Zero(p.m_in);
  res.z_bounds = VecX::Zero(n);

  Eval cur = evaluate(p, trial_point(p, p.x0), true);
  res.x = cur.x;
  if (!cur.ok) {
    res.status = SolveStatus::EvaluationFailure;
    return finish(res);
  }
  const bool warm = initial_hessian && initial_hessian->rows() == n;
  MatX B = warm ? *initial_hessian : MatX::Identity(n, n);
  bool rescale_pending = !warm;
  double nu = 1.0;

  // Index sets for finite bounds, assembled once.
  std::vector<int> lo_idx, up_idx;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(p.lower(i))) lo_idx.push_back(i);
    if (std::isfinite(p.upper(i))) up_idx.push_back(i);
  }
  const int n_lo = static_cast<int>(lo_idx.size());
  const int n_up = static_cast<int>(up_idx.size());

  std::optional<Eval> best;
  KKTResult best_mult;
  auto consider_best = [&](const Eval& e, const KKTResult& mult) {
    if (max_violation(p, e) > cfg.kkt_tol) return;
    if (!best || e.f < best->f) {
      best = e;
      best_mult = mult;
    }
  };

  QPProblem qp;
  qp.A_in.resize(p.m_in + n_lo + n_up, n);
  qp.b_in.resize(p.m_in + n_lo + n_up);

  res.status = SolveStatus::MaxIterations;
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    if (cfg.record_iterates) res.iterates.push_back(cur.x);

    if (p.hessian) {
      MatX model_h;
      try {
        model_h = p.hessian(cur.x);
      } catch (const std::exception&) {
        res.status = SolveStatus::EvaluationFailure;
        break;
      }
      B = make_positive_definite(0.5 * (model_h + model_h.transpose()), cur.j_eq);
    }
    qp.G = 0.5 * (B + B.transpose());
    qp.g = cur.grad;
    qp.A_eq = cur.j_eq;
    qp.b_eq = -cur.c_eq;
    qp.A_in.setZero();
    if (p.m_in > 0) {
      qp.A_in.topRows(p.m_in) = cur.j_in;
      qp.b_in.head(p.m_in) = -cur.c_in;
    }
    for (int k = 0; k < n_lo; ++k) {
      qp.A_in(p.m_in + k, lo_idx[k]) = 1.0;
      qp.b_in(p.m_in + k) = p.lower(lo_idx[k]) - cur.x(lo_idx[k]);
    }
    for (int k = 0; k < n_up; ++k) {
      qp.A_in(p.m_in + n_lo + k, up_idx[k]) = -1.0;
      qp.b_in(p.m_in + n_lo + k) = cur.x(up_idx[k]) - p.upper(up_idx[k]);
    }
    QPResult sub = solve_qp(qp);
    if (it == 0 && !warm && !p.hessian && cfg.hessian_start == HessianStart::FiniteDifference &&
        sub.status == QPStatus::Optimal) {
      // Seed the quasi-Newton matrix with the curvature at the start point,
      // using the multipliers of the identity-Hessian subproblem.
      B = lagrangian_hessian_fd(p, cur, sub.lambda, VecX(sub.mu.head(p.m_in)));
      rescale_pending = false;
      qp.G = B;
      sub = solve_qp(qp);
    }
    if (sub.status != QPStatus::Optimal) {
      res.status = SolveStatus::InfeasibleQP;
      break;
    }

    res.lambda_eq = sub.lambda;
    res.mu_in = sub.mu.head(p.m_in);
    res.z_bounds.setZero();
    for (int k = 0; k < n_lo; ++k) res.z_bounds(lo_idx[k]) += sub.mu(p.m_in + k);
    for (int k = 0; k < n_up; ++k) res.z_bounds(up_idx[k]) -= sub.mu(p.m_in + n_lo + k);

    kkt_residuals(p, cur, res);
    consider_best(cur, res);
    if (res.stationarity <= cfg.kkt_tol && res.feasibility <= cfg.kkt_tol &&
        res.complementarity <= cfg.kkt_tol) {
      res.status = SolveStatus::Success;
      break;
    }

    const VecX d = sub.x;
    const double mult_max = std::max(sub.lambda.size() ? sub.lambda.cwiseAbs().maxCoeff() : 0.0,
                                      p.m_in ? res.mu_in.cwiseAbs().maxCoeff() : 0.0);
    if (nu < 1.1 * mult_max) nu = 1.5 * mult_max;

    const double phi0 = cur.f + nu * violation(p, cur);
    double dphi = cur.grad.dot(d) - nu * violation(p, cur);
    dphi = std::min(dphi, -1e-3 * d.dot(qp.G * d));

    // Merit changes below rounding level of phi0 are accepted.
    const double noise = 1e-14 * (1.0 + std::abs(phi0));
    const double predicted = -(cur.grad.dot(d) + 0.5 * d.dot(qp.G * d));
    double alpha = 1.0;
    Eval trial;
    bool accepted = false;
    for (int ls = 0; ls < cfg.max_backtracks; ++ls) {
      trial = evaluate(p, trial_point(p, cur.x + alpha * d), false);
      const double phi = trial.ok ? trial.f + nu * violation(p, trial) : kInf;
      if (phi <= phi0 + cfg.armijo * alpha * dphi + noise) {
        accepted = true;
        break;
      }
      if (ls == 0 && cfg.second_order_correction && trial.ok && (p.m_eq > 0 || p.m_in > 0)) {
        // Same QP with the constraint values taken at the latest trial point,
        // which bends the step back toward the curved constraint set.
        QPProblem corr = qp;
        Eval soc = trial;
        double viol_prev = violation(p, trial);
        for (int k = 0; k < cfg.max_corrections; ++k) {
          const VecX step = soc.x - cur.x;
          if (p.m_eq > 0) corr.b_eq = -(soc.c_eq - cur.j_eq * step);
          if (p.m_in > 0) corr.b_in.head(p.m_in) = -(soc.c_in - cur.j_in * step);
          const QPResult sub_soc = solve_qp(corr);
          if (sub_soc.status != QPStatus::Optimal) break;
          soc = evaluate(p, trial_point(p, cur.x + sub_soc.x), false);
          if (!soc.ok) break;
          const double phi_soc = soc.f + nu * violation(p, soc);
          if (phi_soc <= phi0 + cfg.armijo * dphi + noise) {
            trial = std::move(soc);
            accepted = true;
            break;
          }
          const double viol = violation(p, soc);
          if (viol > 0.5 * viol_prev) break;
          viol_prev = viol;
        }
        if (accepted) break;
      }
      alpha *= cfg.backtrack;
    }
    const double feas_floor = 0.1 * cfg.kkt_tol;
    if (!accepted && max_violation(p, cur) <= feas_floor) {
      // Near a feasible solution the l1 merit is dominated by rounding in the
      // constraint values; accept a full step that stays feasible and does
      // not raise the objective.
      trial = evaluate(p, trial_point(p, cur.x + d), false);
      accepted = trial.ok && max_violation(p, trial) <= feas_floor && trial.f <= cur.f + noise;
    }
    if (!(accepted && alpha == 1.0) && predicted <= 10.0 * noise && res.feasibility <= cfg.kkt_tol &&
        res.complementarity <= cfg.kkt_tol) {
      // The full step was refused and the model promises no decrease the
      // objective can resolve: this feasible point is as good as it gets.
      res.status = SolveStatus::Success;
      break;
    }
    if (!accepted) {
      res.status = SolveStatus::LineSearchFailure;
      break;
    }

    Eval next = evaluate(p, trial.x, true);
    if (!next.ok) {
      res.status = SolveStatus::EvaluationFailure;
      break;
    }

    if (p.hessian) {
      cur = std::move(next);
      continue;
    }

    // Damped BFGS on the Lagrangian.
    const VecX s = next.x - cur.x;
    const VecX y0 = lagrangian_gradient(next, res.lambda_eq, res.mu_in) -
                    lagrangian_gradient(cur, res.lambda_eq, res.mu_in);
    if (rescale_pending && s.dot(y0) > 0.0) {
      // Size the identity start to the observed curvature before the first update.
      B *= y0.squaredNorm() / s.dot(y0);
      rescale_pending = false;
    }
    const VecX Bs = B * s;
    const double sBs = s.dot(Bs);
    if (sBs > 1e-300 && s.norm() > 1e-14 * (1.0 + cur.x.norm())) {
      double sy = s.dot(y0);
      VecX y = y0;
      if (sy < cfg.bfgs_damping * sBs) {
        const double theta = (1.0 - cfg.bfgs_damping) * sBs / (sBs - sy);
        y = theta * y0 + (1.0 - theta) * Bs;
        sy = s.dot(y);
      }
      B += y * y.transpose() / sy - Bs * Bs.transpose() / sBs;
    }
    cur = std::move(next);
  }

  res.iterations = it;
  res.x = cur.x;
  res.objective = cur.f;
  res.hessian = B;
  if (res.status == SolveStatus::Success) {
    return finish(res);
  }
  if (best) {
    const auto iterates = std::move(res.iterates);
    const auto status = res.status;
    res = best_mult;
    res.iterates = std::move(iterates);
    res.status = status;
    res.x = best->x;
    res.objective = best->f;
  }
  res.iterations = it;
  res.hessian = B;
  return finish(res);
}

}  // namespace gaslift
