#include <cmath>
#include <random>

#include "doctest.h"
#include "gaslift/optimization.hpp"
#include "gaslift/units.hpp"
#include "test_support.hpp"

using namespace gaslift;
using namespace gaslift::testing;

namespace {

Vec3 random_feasible_inputs(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ud(1.0, 2.5);
  return Vec3(ud(rng), ud(rng), ud(rng));
}

DisturbanceState depletion_start() {
  DisturbanceState d;
  d.v_o = Vec3(0.8, 0.6, 0.8);
  d.p_pump = pump_pressure();
  return d;
}

}  // namespace

TEST_CASE("ss econ: derivatives match central differences") {
  const auto m = rig();
  const auto th = nominal_theta();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> vo(0.5, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    DisturbanceState d = dist(Vec3::Ones());
    d.v_o = Vec3(vo(rng), vo(rng), vo(rng));
    ControlInputs u;
    u.qg_sp = random_feasible_inputs(rng);
    const auto prob = build_ss_econ(th, d, m, EconomicSettings{}, u);
    // Move off the steady manifold a little.
    VecX x = prob.problem.x0;
    for (int i = 3; i < 9; ++i) x(i) *= 1.0 + 0.002 * (rng() % 2 ? 1.0 : -1.0);
    worst = std::max(worst, fd_error_objective(prob.problem, x));
    worst = std::max(worst, fd_error_rows(prob.problem.equalities, x));
    worst = std::max(worst, fd_error_rows(prob.problem.inequalities, x));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("ss econ: identical wells with equal prices share gas evenly") {
  EconomicSettings econ;
  econ.price = Vec3::Constant(20.0);
  ControlInputs start;
  start.qg_sp = Vec3(1.2, 2.0, 4.0);
  const auto sol = solve_ss_econ(nominal_theta(), dist(Vec3::Ones()), rig(), econ, SolverConfig{}, start);
  REQUIRE(sol.kkt.ok());
  for (int w = 0; w < 3; ++w) CHECK(sol.u.qg_sp(w) == doctest::Approx(2.5).epsilon(1e-6));
}

TEST_CASE("ss econ: solution satisfies the budget and KKT tolerance") {
  const auto sol = solve_ss_econ(nominal_theta(), depletion_start(), rig(), EconomicSettings{}, SolverConfig{},
                                 ControlInputs{});
  REQUIRE(sol.kkt.ok());
  CHECK(sol.u.qg_sp.sum() <= 7.5 + 1e-8);
  CHECK((sol.u.qg_sp.array() >= 1.0 - 1e-8).all());
  CHECK((sol.u.qg_sp.array() <= 5.0 + 1e-8).all());
  CHECK(sol.kkt.stationarity <= 1e-8);
  CHECK(sol.kkt.feasibility <= 1e-8);
  // States returned are the steady state of the returned inputs.
  ControlInputs u = sol.u;
  const auto x = steady_state_solve(u, depletion_start(), nominal_theta(), rig(), sol.x);
  CHECK((x.m_g - sol.x.m_g).cwiseAbs().maxCoeff() < 1e-6 * x.m_g.maxCoeff());
}

TEST_CASE("oracle: parallel and serial enumerations agree exactly") {
  const auto a = brute_force_ss_oracle(nominal_theta(), depletion_start(), rig(), EconomicSettings{}, 0.25);
  const auto b = brute_force_ss_oracle_serial(nominal_theta(), depletion_start(), rig(), EconomicSettings{}, 0.25);
  CHECK(a.J == b.J);
  CHECK(a.best.qg_sp == b.best.qg_sp);
  CHECK(a.candidates == b.candidates);
  CHECK(a.failures == b.failures);
}

TEST_CASE("oracle: candidate count and step validation") {
  const auto r = brute_force_ss_oracle(nominal_theta(), dist(Vec3::Ones()), rig(), EconomicSettings{}, 0.5);
  // Nine levels per well; count triples with total <= 7.5 directly.
  long expected = 0;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j)
      for (int k = 0; k < 9; ++k)
        if (3.0 + 0.5 * (i + j + k) <= 7.5 + 1e-9) ++expected;
  CHECK(r.candidates == expected);
  CHECK(r.best.qg_sp.sum() <= 7.5 + 1e-9);
  CHECK_THROWS_AS(brute_force_ss_oracle(nominal_theta(), dist(Vec3::Ones()), rig(), EconomicSettings{}, 0.3),
                  std::invalid_argument);
}

TEST_CASE("oracle: fine grid never beats the NLP and agrees on the allocation") {
  const auto th = nominal_theta();
  const auto d = depletion_start();
  const auto nlp = solve_ss_econ(th, d, rig(), EconomicSettings{}, SolverConfig{}, ControlInputs{});
  REQUIRE(nlp.kkt.ok());
  const auto grid = brute_force_ss_oracle(th, d, rig(), EconomicSettings{}, 0.1);
  CHECK(grid.candidates <= 68921);
  CHECK(grid.J <= nlp.J + 1e-6);
  CHECK((grid.best.qg_sp - nlp.u.qg_sp).cwiseAbs().maxCoeff() <= 0.1 + 1e-9);
  CHECK(nlp.J - grid.J <= 0.005 * nlp.J);
  // Well 3 carries the highest price and gets priority over well 2.
  CHECK(grid.best.qg_sp(2) > grid.best.qg_sp(1));
}

TEST_CASE("collocation: Radau IIA coefficients satisfy the quadrature identities") {
  const auto& c = CollocationGrid::nodes();
  const auto& A = CollocationGrid::coefficients();
  const auto& b = CollocationGrid::weights();
  for (int i = 0; i < 3; ++i) {
    double row = 0.0;
    for (int j = 0; j < 3; ++j) row += A[i][j];
    CHECK(row == doctest::Approx(c[i]).epsilon(1e-14));
    CHECK(A[2][i] == b[i]);
  }
  CHECK(c[2] == 1.0);
  // The weights integrate polynomials up to degree 4 exactly on [0, 1].
  for (int deg = 0; deg <= 4; ++deg) {
    double q = 0.0;
    for (int j = 0; j < 3; ++j) q += b[j] * std::pow(c[j], deg);
    CHECK(q == doctest::Approx(1.0 / (deg + 1)).epsilon(1e-14));
  }
  // Stage conditions: sum_j A_ij c_j^(k-1) = c_i^k / k for k = 1..3.
  for (int i = 0; i < 3; ++i)
    for (int k = 1; k <= 3; ++k) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j) s += A[i][j] * std::pow(c[j], k - 1);
      CHECK(s == doctest::Approx(std::pow(c[i], k) / k).epsilon(1e-13));
    }
}

TEST_CASE("drto: problem dimensions follow the grid") {
  const auto m = rig();
  const auto th = nominal_theta();
  const auto d = depletion_start();
  ControlInputs u;
  const auto x = steady_state_solve(u, d, th, m, default_guess(m));
  const auto p = build_drto(th, x, u.qg_sp, d, m, EconomicSettings{}, DRTOSettings{});
  CHECK(p.problem.n == 6 * 21);
  CHECK(p.problem.m_eq == 6 * 18);
  CHECK(p.problem.m_in == 6 * 25);
  CHECK_NOTHROW(p.problem.validate());
}

TEST_CASE("drto: derivatives match central differences") {
  const auto m = rig();
  const auto th = nominal_theta();
  const auto d = depletion_start();
  ControlInputs u;
  u.qg_sp = Vec3(2.0, 1.5, 3.0);
  const auto x = steady_state_solve(ControlInputs{}, d, th, m, default_guess(m));
  DRTOSettings s;
  s.grid.elements = 3;
  const auto p = build_drto(th, x, Vec3::Constant(2.5), d, m, EconomicSettings{}, s);
  VecX z = drto_simulated_guess(p, th, x, u.qg_sp, d, m);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (int i = 0; i < z.size(); ++i) z(i) *= 1.0 + 0.001 * ud(rng);
  CHECK(fd_error_objective(p.problem, z) < 1e-6);
  CHECK(fd_error_rows(p.problem.equalities, z) < 1e-6);
  CHECK(fd_error_rows(p.problem.inequalities, z) < 1e-6);
}

TEST_CASE("drto: prohibitive move weight holds the inputs") {
  const auto m = rig();
  const auto th = nominal_theta();
  const auto d = depletion_start();
  const Vec3 u_prev(2.0, 2.0, 2.0);
  ControlInputs u;
  u.qg_sp = u_prev;
  const auto x = steady_state_solve(u, d, th, m, default_guess(m));
  DRTOSettings s;
  s.move_weight = Vec3::Constant(1e6);
  SolverConfig solver;
  solver.hessian_start = HessianStart::FiniteDifference;
  const auto sol = solve_drto(th, x, u_prev, d, m, EconomicSettings{}, s, solver);
  REQUIRE(sol.kkt.ok());
  for (const auto& step : sol.plan) CHECK((step - u_prev).cwiseAbs().maxCoeff() < 0.01);
}

namespace {

struct SteadyOptimum {
  SSEconSolution ss;
  DisturbanceState d;
};

SteadyOptimum steady_optimum() {
  SteadyOptimum o;
  o.d = depletion_start();
  o.ss = solve_ss_econ(nominal_theta(), o.d, rig(), EconomicSettings{}, SolverConfig{}, ControlInputs{});
  return o;
}

}  // namespace

TEST_CASE("drto: at the steady optimum the first move stays there") {
  const auto o = steady_optimum();
  REQUIRE(o.ss.kkt.ok());
  const auto sol =
      solve_drto(nominal_theta(), o.ss.x, o.ss.u.qg_sp, o.d, rig(), EconomicSettings{}, DRTOSettings{}, SolverConfig{});
  REQUIRE(sol.kkt.ok());
  CHECK((sol.first_move - o.ss.u.qg_sp).cwiseAbs().maxCoeff() < 1e-4);
  // The plan may exploit the transient near the end of the horizon, so the
  // average can only sit at or slightly above the steady value.
  CHECK(sol.predicted_profit >= o.ss.J - 1e-6);
  CHECK(sol.predicted_profit <= o.ss.J * 1.001);
}

TEST_CASE("drto: mid-horizon inputs approach the steady optimum on a long horizon") {
  const auto o = steady_optimum();
  REQUIRE(o.ss.kkt.ok());
  const auto m = rig();
  const auto th = nominal_theta();
  ControlInputs start;
  start.qg_sp = Vec3(2.5, 2.5, 2.5);
  const auto x = steady_state_solve(start, o.d, th, m, default_guess(m));
  DRTOSettings s;
  s.grid.elements = 12;
  const auto sol = solve_drto(th, x, start.qg_sp, o.d, m, EconomicSettings{}, s, SolverConfig{});
  REQUIRE(sol.kkt.ok());
  const double first_gap = (sol.plan.front() - o.ss.u.qg_sp).cwiseAbs().maxCoeff();
  const double mid_gap = (sol.plan[s.grid.elements / 2] - o.ss.u.qg_sp).cwiseAbs().maxCoeff();
  MESSAGE("first-element gap " << first_gap << ", mid-horizon gap " << mid_gap);
  CHECK(mid_gap < 0.05);
  CHECK(mid_gap < first_gap);
  for (const auto& step : sol.plan) CHECK(step.sum() <= 7.5 + 1e-8);
}

TEST_CASE("drto: collocation states match an RK4 replay of the plan") {
  const auto m = rig();
  const auto th = nominal_theta();
  const auto d = depletion_start();
  ControlInputs start;
  start.qg_sp = Vec3(2.5, 2.5, 2.5);
  const auto x0 = steady_state_solve(start, d, th, m, default_guess(m));
  const DRTOSettings s;
  const auto prob = build_drto(th, x0, start.qg_sp, d, m, EconomicSettings{}, s);
  const auto sol = solve_drto(th, x0, start.qg_sp, d, m, EconomicSettings{}, s, SolverConfig{});
  REQUIRE(sol.kkt.ok());

  // Fine RK4 over each element with the element's inputs held.
  Vec6 y = x0.stacked();
  const Vec6 scale = y.cwiseAbs();
  double worst = 0.0;
  const int sub = 400;
  for (int k = 0; k < s.grid.elements; ++k) {
    const Vec3 w_g = units::slpm_to_kgs(sol.plan[k], m.constants);
    auto f = [&](const Vec6& v) { return rhs(NetworkState::from_stacked(v), w_g, d, th, m).stacked(); };
    const double dt = s.grid.element_length / sub;
    for (int i = 0; i < sub; ++i) {
      const Vec6 k1 = f(y), k2 = f(y + 0.5 * dt * k1), k3 = f(y + 0.5 * dt * k2), k4 = f(y + dt * k3);
      y += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    const Vec6 coll = prob.state(sol.kkt.x, k, 2, m).stacked();
    worst = std::max(worst, ((coll - y).cwiseQuotient(scale)).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 0.01);
}

TEST_CASE("drto: shifting drops the first element and repeats the last") {
  VecX z(3 * 4);
  for (int i = 0; i < z.size(); ++i) z(i) = i;
  const VecX s = shift_solution(z, 4);
  CHECK(s.head(4) == z.segment(4, 4));
  CHECK(s.segment(4, 4) == z.tail(4));
  CHECK(s.tail(4) == z.tail(4));

  MatX B = MatX::Identity(12, 12) * 2.0;
  B(5, 9) = B(9, 5) = 0.5;
  const MatX Bs = shift_hessian(B, 4);
  CHECK(Bs(1, 5) == 0.5);
  Eigen::LLT<MatX> llt(Bs);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("projection keeps setpoints inside the box and budget") {
  const EconomicSettings econ;
  const Vec3 p = project_feasible(Vec3(5.0, 5.0, 0.0), econ);
  CHECK(p.sum() == doctest::Approx(7.5));
  CHECK(p(2) == 1.0);
  CHECK(p(0) == doctest::Approx(p(1)));
  const Vec3 q = project_feasible(Vec3(2.0, 2.0, 2.0), econ);
  CHECK(q == Vec3(2.0, 2.0, 2.0));
}
