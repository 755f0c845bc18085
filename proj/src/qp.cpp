#include "gaslift/qp.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace gaslift {

const char* to_string(QPStatus s) {
  switch (s) {
    case QPStatus::Optimal: return "Optimal";
    case QPStatus::Infeasible: return "Infeasible";
    case QPStatus::NotConvex: return "NotConvex";
    case QPStatus::DependentEqualities: return "DependentEqualities";
  }
  return "Unknown";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Working factorization. With J'GJ = I and the active normals N, the
// invariant is J' N = [R; 0] with R upper triangular (first `active`
// columns of R in use).
struct ActiveSet {
  Eigen::MatrixXd J;
  Eigen::MatrixXd R;
  std::vector<int> index;   // constraint id per active slot: eq as -(i+1), ineq as i
  Eigen::VectorXd u;        // multipliers per slot (slot `active` is the candidate)
  int active = 0;
  double r_norm = 1.0;
};

// z = J2 * d2 (primal step direction) and r = R^-1 d1 (dual step direction).
void step_directions(const ActiveSet& s, const Eigen::VectorXd& d, Eigen::VectorXd& z, Eigen::VectorXd& r) {
  const int n = static_cast<int>(d.size());
  const int q = s.active;
  z = s.J.rightCols(n - q) * d.tail(n - q);
  r.resize(q);
  for (int i = q - 1; i >= 0; --i) {
    double sum = d(i);
    for (int j = i + 1; j < q; ++j) sum -= s.R(i, j) * r(j);
    r(i) = sum / s.R(i, i);
  }
}

// Rotates d so that only its first active+1 entries are non-zero, applying the
// same rotations to J, then appends d as a new column of R.
bool add_constraint(ActiveSet& s, Eigen::VectorXd& d) {
  const int n = static_cast<int>(d.size());
  for (int j = n - 1; j >= s.active + 1; --j) {
    double cc = d(j - 1);
    double ss = d(j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    d(j) = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d(j - 1) = -h;
    } else {
      d(j - 1) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n; ++k) {
      const double t1 = s.J(k, j - 1);
      const double t2 = s.J(k, j);
      s.J(k, j - 1) = t1 * cc + t2 * ss;
      s.J(k, j) = xny * (t1 + s.J(k, j - 1)) - t2;
    }
  }
  ++s.active;
  const int q = s.active;
  s.R.col(q - 1).head(q) = d.head(q);
  if (std::abs(d(q - 1)) <= kEps * s.r_norm) return false;
  s.r_norm = std::max(s.r_norm, std::abs(d(q - 1)));
  return true;
}

void delete_constraint(ActiveSet& s, int n_eq, int constraint) {
  const int n = static_cast<int>(s.J.rows());
  int qq = -1;
  for (int i = n_eq; i < s.active; ++i) {
    if (s.index[i] == constraint) {
      qq = i;
      break;
    }
  }
  if (qq < 0) return;
  for (int i = qq; i < s.active - 1; ++i) {
    s.index[i] = s.index[i + 1];
    s.u(i) = s.u(i + 1);
    s.R.col(i) = s.R.col(i + 1);
  }
  s.index[s.active - 1] = s.index[s.active];
  s.u(s.active - 1) = s.u(s.active);
  s.index[s.active] = 0;
  s.u(s.active) = 0.0;
  s.R.col(s.active - 1).head(s.active).setZero();
  --s.active;
  const int q = s.active;
  if (q == 0) return;

  for (int j = qq; j < q; ++j) {
    double cc = s.R(j, j);
    double ss = s.R(j + 1, j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    s.R(j + 1, j) = 0.0;
    if (cc < 0.0) {
      s.R(j, j) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      s.R(j, j) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = j + 1; k < q; ++k) {
      const double t1 = s.R(j, k);
      const double t2 = s.R(j + 1, k);
      s.R(j, k) = t1 * cc + t2 * ss;
      s.R(j + 1, k) = xny * (t1 + s.R(j, k)) - t2;
    }
    for (int k = 0; k < n; ++k) {
      const double t1 = s.J(k, j);
      const double t2 = s.J(k, j + 1);
      s.J(k, j) = t1 * cc + t2 * ss;
      s.J(k, j + 1) = xny * (s.J(k, j) + t1) - t2;
    }
  }
}

}  // namespace

QPResult solve_qp(const QPProblem& qp) {
  const int n = static_cast<int>(qp.g.size());
  const int p = static_cast<int>(qp.b_eq.size());
  const int m = static_cast<int>(qp.b_in.size());

  QPResult res;
  res.lambda = Eigen::VectorXd::Zero(p);
  res.mu = Eigen::VectorXd::Zero(m);

  Eigen::LLT<Eigen::MatrixXd> llt(qp.G);
  if (llt.info() != Eigen::Success) {
    res.status = QPStatus::NotConvex;
    res.x = Eigen::VectorXd::Zero(n);
    return res;
  }
  const Eigen::MatrixXd L = llt.matrixL();
  const double c1 = qp.G.trace();

  ActiveSet s;
  // J = L^-T, so J J' = G^-1.
  s.J = L.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n, n));
  s.R = Eigen::MatrixXd::Zero(n, n);
  s.index.assign(static_cast<std::size_t>(n + p + m + 1), 0);
  s.u = Eigen::VectorXd::Zero(n + p + m + 1);
  const double c2 = s.J.trace();

  Eigen::VectorXd x = -llt.solve(qp.g);

  Eigen::VectorXd d(n), z(n), r;

  // Equalities first; they never leave the active set.
  for (int i = 0; i < p; ++i) {
    const Eigen::VectorXd np = qp.A_eq.row(i).transpose();
    d = s.J.transpose() * np;
    step_directions(s, d, z, r);
    const double zn = z.dot(np);
    double t2 = 0.0;
    if (std::abs(z.dot(z)) > kEps) t2 = (qp.b_eq(i) - np.dot(x)) / zn;
    x += t2 * z;
    s.u(s.active) = t2;
    s.u.head(s.active) -= t2 * r;
    s.index[s.active] = -i - 1;
    if (!add_constraint(s, d)) {
      res.status = QPStatus::DependentEqualities;
      res.x = x;
      return res;
    }
  }

  std::vector<int> inactive(m);    // i when inactive, -1 when active
  std::vector<bool> allowed(m, true);
  for (int i = 0; i < m; ++i) inactive[i] = i;
  Eigen::VectorXd slack(m);

  const int max_iter = 50 * (n + m + 10);
  int iter = 0;
  while (true) {
    if (++iter > max_iter) {
      res.status = QPStatus::Infeasible;
      break;
    }
    for (int i = p; i < s.active; ++i) inactive[s.index[i]] = -1;
    double psi = 0.0;
    for (int i = 0; i < m; ++i) {
      allowed[i] = true;
      slack(i) = qp.A_in.row(i).dot(x) - qp.b_in(i);
      psi += std::min(0.0, slack(i));
    }
    if (std::abs(psi) <= m * kEps * c1 * c2 * 100.0) break;

  choose:
    // Most violated constraint among the inactive, non-excluded ones.
    double worst = 0.0;
    int ip = -1;
    for (int i = 0; i < m; ++i) {
      if (slack(i) < worst && inactive[i] != -1 && allowed[i]) {
        worst = slack(i);
        ip = i;
      }
    }
    if (ip < 0) break;
    const Eigen::VectorXd np = qp.A_in.row(ip).transpose();
    s.u(s.active) = 0.0;
    s.index[s.active] = ip;

    while (true) {
      d = s.J.transpose() * np;
      step_directions(s, d, z, r);

      // Largest dual step keeping active inequality multipliers non-negative.
      double t1 = kInf;
      int drop = -1;
      for (int k = p; k < s.active; ++k) {
        if (r(k) > 0.0 && s.u(k) / r(k) < t1) {
          t1 = s.u(k) / r(k);
          drop = s.index[k];
        }
      }
      // Full primal step making constraint ip active.
      double t2 = kInf;
      if (std::abs(z.dot(z)) > kEps) t2 = -slack(ip) / z.dot(np);
      const double t = std::min(t1, t2);

      if (t >= kInf) {
        res.status = QPStatus::Infeasible;
        res.x = x;
        res.iterations = iter;
        return res;
      }
      if (t2 >= kInf) {
        // Pure dual step: the new normal is dependent on the active ones.
        s.u.head(s.active) -= t * r;
        s.u(s.active) += t;
        inactive[drop] = drop;
        delete_constraint(s, p, drop);
        continue;
      }

      x += t * z;
      s.u.head(s.active) -= t * r;
      s.u(s.active) += t;

      if (t == t2) {
        if (!add_constraint(s, d)) {
          // Numerically dependent on the active set: exclude it this round.
          allowed[ip] = false;
          delete_constraint(s, p, ip);
          inactive[ip] = ip;
          goto choose;
        }
        inactive[ip] = -1;
        break;
      }
      inactive[drop] = drop;
      delete_constraint(s, p, drop);
      slack(ip) = np.dot(x) - qp.b_in(ip);
    }
  }

  res.x = x;
  res.objective = 0.5 * x.dot(qp.G * x) + qp.g.dot(x);
  res.iterations = iter;
  for (int i = 0; i < s.active; ++i) {
    const int id = s.index[i];
    if (id < 0) {
      res.lambda(-id - 1) = s.u(i);
    } else {
      res.mu(id) = s.u(i);
    }
  }
  return res;
}

}  // namespace gaslift
