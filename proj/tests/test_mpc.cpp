#include <gtest/gtest.h>

#include <random>

#include <Eigen/Dense>

#include "retmpc/harness.hpp"
#include "retmpc/mpc.hpp"
#include "support/alloc_counter.hpp"

using namespace retmpc;

namespace {

const ReducedModel & rom_250()
{
  static const ReducedModel m = build_reduced_model(PhysicalConfig{}, RomSettings{}, 0.004);
  return m;
}

SolverSettings tight()
{
  SolverSettings s;
  s.eps_abs  = 1e-10;
  s.eps_rel  = 1e-10;
  s.max_iter = 200000;
  return s;
}

Eigen::VectorXd steady_state(const ReducedModel & m, double u, double alpha)
{
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m.order(), m.order());
  return (eye - m.a_d).partialPivLu().solve(m.b(alpha) * u);
}

// State after heating from rest with constant input for k steps.
Eigen::VectorXd heated(const ReducedModel & m, double u, double alpha, int k)
{
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m.order());
  for (int i = 0; i < k; ++i) { x = m.step(x, u, alpha); }
  return x;
}

// Equilibrium whose peak equals y.
Eigen::VectorXd steady_at(const ReducedModel & m, double y, double alpha)
{
  const Eigen::VectorXd x = steady_state(m, 1.0, alpha);
  return x * (y / m.y_peak(x));
}

/**
 * Condensed OCP over u in R^{N-1}: y_k = c a^k x0 + sum_j c a^{k-1-j} b u_j.
 * Solved exactly by enumerating active sets of 0 <= u_j <= u_max and y_k <= y_max (k >= 1).
 */
Eigen::VectorXd condensed_oracle(
  const ReducedModel & m, const OcpSpec & spec, const CostConfig & cost, double alpha, const Eigen::VectorXd & x0,
  double u_prev, std::int64_t n)
{
  const int nn = spec.horizon, nu = nn - 1;
  const Eigen::VectorXd b = m.b(alpha);
  const double u_ref      = reference_control(m, alpha, spec.y_ref);
  // y = f + G u for k = 0..N-1
  Eigen::VectorXd f(nn);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(nn, nu);
  Eigen::VectorXd xk = x0;
  std::vector<Eigen::VectorXd> powb;  // a^i b
  Eigen::VectorXd pb = b;
  for (int i = 0; i < nn; ++i) {
    powb.push_back(pb);
    pb = m.a_d * pb;
  }
  for (int k = 0; k < nn; ++k) {
    f[k] = m.c_peak_r.dot(xk);
    xk   = m.a_d * xk;
    for (int j = 0; j < k; ++j) { g(k, j) = m.c_peak_r.dot(powb[static_cast<std::size_t>(k - 1 - j)]); }
  }
  // J = sum w_k (f_k + G_k u - y_ref)^2 + r1 |u - u_ref|^2 + r2 |D u - e u_prev|^2
  Eigen::VectorXd w(nn);
  for (int k = 0; k < nn; ++k) { w[k] = cost.r0_at(n + k); }
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(nu, nu);
  for (int j = 1; j < nu; ++j) { d(j, j - 1) = -1; }
  Eigen::VectorXd e = Eigen::VectorXd::Zero(nu);
  e[0]              = u_prev;
  const Eigen::MatrixXd h = 2 * (g.transpose() * w.asDiagonal() * g + cost.r1 * Eigen::MatrixXd::Identity(nu, nu) +
                                 cost.r2 * d.transpose() * d);
  const Eigen::VectorXd lin = 2 * (g.transpose() * w.asDiagonal() * (f - Eigen::VectorXd::Constant(nn, spec.y_ref)) -
                                   cost.r1 * Eigen::VectorXd::Constant(nu, u_ref) - cost.r2 * d.transpose() * e);
  // constraints C u <= c_ub: u_j <= u_max, -u_j <= 0, G_k u <= y_max - f_k
  const int mc = 2 * nu + (nn - 1);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(mc, nu);
  Eigen::VectorXd c_ub(mc);
  for (int j = 0; j < nu; ++j) {
    c(j, j)       = 1;
    c_ub[j]       = spec.u_max;
    c(nu + j, j)  = -1;
    c_ub[nu + j]  = 0;
  }
  for (int k = 1; k < nn; ++k) {
    c.row(2 * nu + k - 1) = g.row(k);
    c_ub[2 * nu + k - 1]  = spec.y_max - f[k];
  }
  Eigen::VectorXd best;
  double best_obj = qp_inf;
  for (long mask = 0; mask < (1L << mc); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < mc; ++i) {
      if (mask & (1L << i)) { act.push_back(i); }
    }
    if (static_cast<int>(act.size()) > nu) { continue; }
    const int k = static_cast<int>(act.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nu + k, nu + k);
    Eigen::VectorXd rhs(nu + k);
    kkt.topLeftCorner(nu, nu) = h;
    rhs.head(nu)              = -lin;
    for (int a = 0; a < k; ++a) {
      kkt.block(nu + a, 0, 1, nu) = c.row(act[static_cast<std::size_t>(a)]);
      kkt.block(0, nu + a, nu, 1) = c.row(act[static_cast<std::size_t>(a)]).transpose();
      rhs[nu + a]                 = c_ub[act[static_cast<std::size_t>(a)]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) { continue; }
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd u   = sol.head(nu);
    if (((c * u - c_ub).array() > 1e-12).any()) { continue; }
    if ((sol.tail(k).array() < -1e-10).any()) { continue; }
    const double obj = 0.5 * u.dot(h * u) + lin.dot(u);
    if (obj < best_obj) {
      best_obj = obj;
      best     = u;
    }
  }
  return best;
}

Eigen::VectorXd controls_of(const QpSolution & s, const OcpLayout & lay)
{
  return s.x_opt.segment(lay.u(0), lay.n_controls());
}

struct LoopResult
{
  double max_peak = 0;
  double end_peak = 0;
};

// Controller acting on the exact reduced state with the true alpha.
LoopResult exact_loop(const CostConfig & cost, const OcpSpec & spec, double alpha, int steps)
{
  const ReducedModel & m = rom_250();
  MpcController mpc(m, spec, cost, alpha);
  ReducedPlant plant(m, alpha);
  LoopResult r;
  for (int k = 0; k < steps; ++k) {
    const double u = mpc.step(plant.state(), alpha).u_applied;
    plant.step(u);
    r.end_peak = m.y_peak(plant.state());
    r.max_peak = std::max(r.max_peak, r.end_peak);
  }
  return r;
}

}  // namespace

TEST(OcpLayout, CountsVariablesAndRows)
{
  const OcpLayout two(6, 2, false);
  EXPECT_EQ(two.n_var(), 13);
  EXPECT_EQ(two.n_con(), 12 + 1 + 2);
  const OcpLayout five(6, 5, true);
  EXPECT_EQ(five.n_var(), 30 + 4 + 5);
  EXPECT_EQ(five.n_con(), 30 + 4 + 5 + 5);
  const QpProblem qp = build_ocp(rom_250(), OcpSpec{2}, CostConfig::preset("a"), 0.7363,
                                 Eigen::VectorXd::Zero(6), 0.0, 0);
  EXPECT_EQ(qp.p_mat.rows(), 13);
  EXPECT_EQ(qp.a_con.rows(), 15);
}

TEST(CostConfig, PresetsAndSchedule)
{
  const CostConfig b = CostConfig::preset("b");
  EXPECT_EQ(b.r1, 50.0);
  EXPECT_EQ(b.r0_at(0), 1.0);
  for (int n = 1; n <= 3; ++n) { EXPECT_EQ(b.r0_at(n), 0.0); }
  EXPECT_EQ(b.r0_at(4), 1.0);
  EXPECT_EQ(CostConfig::preset("c").r2, 5e4);
  EXPECT_EQ(CostConfig::preset("kHz").r1, 0.0);
  EXPECT_THROW(CostConfig::preset("e"), ConfigError);
  CostConfig bad;
  bad.r1 = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW((OcpSpec{1}).validate(), ConfigError);
  EXPECT_THROW((OcpSpec{5, 0.1, 33.0, 32.0}).validate(), ConfigError);
}

TEST(ReferenceControl, SteadyStateReachesTarget)
{
  const ReducedModel & m = rom_250();
  for (double alpha : {0.3, 0.5, 0.7363, 1.1, 1.5}) {
    const double u = reference_control(m, alpha, 30.0);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(m.order());
    for (int k = 0; k < 5000; ++k) { x = m.step(x, u, alpha); }
    EXPECT_NEAR(m.y_peak(x), 30.0, 0.03) << alpha;
  }
  EXPECT_EQ(reference_control(m, 0.7363, 0.0), 0.0);
}

TEST(ReferenceControl, DecreasesWithAbsorption)
{
  const ReducedModel & m = rom_250();
  double prev = qp_inf;
  for (double alpha = 0.3; alpha <= 1.5 + 1e-12; alpha += 0.05) {
    const double u = reference_control(m, alpha, 30.0);
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, prev) << alpha;
    prev = u;
  }
}

TEST(BuildOcp, ObjectivePlusConstantEqualsDirectCost)
{
  const ReducedModel & m = rom_250();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  for (const char * name : {"a", "b", "c", "d", "kHz"}) {
    const CostConfig cost = CostConfig::preset(name);
    const OcpSpec spec{5};
    for (std::int64_t n : {0, 2, 7}) {
      const double alpha = 0.9, u_prev = 0.04;
      const QpProblem qp = build_ocp(m, spec, cost, alpha, Eigen::VectorXd::Zero(6), u_prev, n);
      const OcpLayout lay(6, 5, false);
      Eigen::VectorXd z = Eigen::VectorXd::NullaryExpr(lay.n_var(), [&]() { return 10 * val(rng); });
      z.segment(lay.u(0), 4) = Eigen::VectorXd::NullaryExpr(4, [&]() { return 0.05 + 0.05 * val(rng); });
      std::vector<Eigen::VectorXd> xs;
      std::vector<double> us;
      for (int k = 0; k < 5; ++k) { xs.push_back(z.segment(lay.x(k), 6)); }
      for (int k = 0; k < 4; ++k) { us.push_back(z[lay.u(k)]); }
      const Eigen::MatrixXd p = Eigen::MatrixXd(qp.p_mat).selfadjointView<Eigen::Upper>();
      const double u_ref      = reference_control(m, alpha, spec.y_ref);
      const double qp_obj     = 0.5 * z.dot(p * z) + qp.q_vec.dot(z) + ocp_cost_constant(spec, cost, u_ref, u_prev, n);
      const double direct     = ocp_cost(m, spec, cost, u_ref, u_prev, n, xs, us);
      EXPECT_NEAR(qp_obj, direct, 1e-8 * std::max(1.0, std::abs(direct))) << name << " n=" << n;
    }
  }
}

TEST(BuildOcp, DynamicsRowsHoldOnSimulatedTrajectory)
{
  const ReducedModel & m = rom_250();
  const OcpSpec spec{6};
  const double alpha = 1.2;
  const Eigen::VectorXd x0 = heated(m, 0.05, alpha, 20);
  const QpProblem qp = build_ocp(m, spec, CostConfig::preset("a"), alpha, x0, 0.0, 0);
  const OcpLayout lay(6, 6, false);
  Eigen::VectorXd z(lay.n_var());
  Eigen::VectorXd x = x0;
  for (int k = 0; k < 6; ++k) {
    z.segment(lay.x(k), 6) = x;
    if (k < 5) {
      z[lay.u(k)] = 0.01 * (k + 1);
      x           = m.step(x, z[lay.u(k)], alpha);
    }
  }
  const Eigen::VectorXd az = qp.a_con * z;
  for (Eigen::Index i = 0; i < lay.row_input(0); ++i) {
    EXPECT_NEAR(az[i], qp.lb[i], 1e-10);
    EXPECT_EQ(qp.lb[i], qp.ub[i]);
  }
  for (int k = 0; k < 6; ++k) { EXPECT_NEAR(az[lay.row_peak(k)], m.y_peak(z.segment(lay.x(k), 6)), 1e-12); }
}

TEST(BuildOcp, MatchesCondensedOracle)
{
  const ReducedModel & m = rom_250();
  const OcpSpec spec{5};
  const CostConfig cost = CostConfig::preset("a");
  struct Case
  {
    Eigen::VectorXd x0;
    double u_prev;
    std::int64_t n;
  };
  const double alpha = 0.7363;
  const double u_ref = reference_control(m, alpha, spec.y_ref);
  const std::vector<Case> cases = {
    {Eigen::VectorXd::Zero(6), 0.0, 0},
    {heated(m, u_ref, alpha, 3), u_ref, 3},
    {heated(m, 1.06 * u_ref, alpha, 40), 1.06 * u_ref, 40},
    {steady_at(m, 31.9, alpha), 0.08, 50},
    {steady_state(m, u_ref, alpha), u_ref, 100},
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto & c = cases[i];
    ASSERT_LT(m.y_peak(c.x0), spec.y_max) << i;
    const Eigen::VectorXd ref = condensed_oracle(m, spec, cost, alpha, c.x0, c.u_prev, c.n);
    ASSERT_EQ(ref.size(), 4) << i;
    QpSolver s;
    s.setup(build_ocp(m, spec, cost, alpha, c.x0, c.u_prev, c.n), tight());
    const QpSolution & sol = s.solve();
    ASSERT_EQ(sol.status, QpStatus::solved) << i;
    EXPECT_LT((controls_of(sol, OcpLayout(6, 5, false)) - ref).cwiseAbs().maxCoeff(), 1e-6) << "case " << i;
  }
}

TEST(BuildOcp, MatchesCondensedOracleAcrossPresets)
{
  const ReducedModel & m = rom_250();
  const OcpSpec spec{4};
  const double alpha = 1.1;
  const Eigen::VectorXd x0 = heated(m, 1.06 * reference_control(m, alpha, spec.y_ref), alpha, 25);
  ASSERT_LT(m.y_peak(x0), spec.y_max);
  for (const char * name : {"b", "c", "d"}) {
    const CostConfig cost = CostConfig::preset(name);
    for (std::int64_t n : {0, 2}) {
      const Eigen::VectorXd ref = condensed_oracle(m, spec, cost, alpha, x0, 0.03, n);
      ASSERT_EQ(ref.size(), 3);
      QpSolver s;
      s.setup(build_ocp(m, spec, cost, alpha, x0, 0.03, n), tight());
      const QpSolution & sol = s.solve();
      ASSERT_EQ(sol.status, QpStatus::solved);
      EXPECT_LT((controls_of(sol, OcpLayout(6, 4, false)) - ref).cwiseAbs().maxCoeff(), 1e-6) << name << " n=" << n;
    }
  }
}

TEST(BuildOcp, ZeroTrackingWeightGivesReferenceControl)
{
  // chi3 switches tracking off for n = 1, 2, 3; with N = 2 and R2 = 0 only R1 remains
  const ReducedModel & m = rom_250();
  const OcpSpec spec{2};
  const CostConfig cost{R0Schedule::chi3, 50.0, 0.0};
  const double alpha = 0.8;
  QpSolver s;
  s.setup(build_ocp(m, spec, cost, alpha, Eigen::VectorXd::Zero(6), 0.0, 1), tight());
  EXPECT_NEAR(s.solve().x_opt[OcpLayout(6, 2, false).u(0)], reference_control(m, alpha, 30.0), 1e-8);
}

TEST(MpcController, StationaryPointHoldsReferenceControl)
{
  const ReducedModel & m = rom_250();
  const double alpha = 0.7363;
  MpcController mpc(m, OcpSpec{5}, CostConfig::preset("a"), alpha);
  const double u_ref = reference_control(m, alpha, 30.0);
  ASSERT_LT(u_ref, 0.1);
  const MpcDiagnostics & d = mpc.step(steady_state(m, u_ref, alpha), alpha);
  EXPECT_EQ(d.fallback, Fallback::none);
  EXPECT_NEAR(d.u_applied, u_ref, 1e-4 * u_ref);
  EXPECT_EQ(d.u_ref, u_ref);
}

TEST(MpcController, SaturatesWhenTargetIsOutOfReach)
{
  const ReducedModel & m = rom_250();
  OcpSpec spec{5};
  spec.u_max = 0.01;
  spec.y_max = 1000.0;
  MpcController mpc(m, spec, CostConfig::preset("kHz"), 0.7363);
  const MpcDiagnostics & d = mpc.step(Eigen::VectorXd::Zero(6), 0.7363);
  EXPECT_NEAR(d.u_applied, 0.01, 1e-6);
  EXPECT_TRUE(d.input_active);
}

TEST(MpcController, AppliedControlAlwaysWithinBounds)
{
  const ReducedModel & m = rom_250();
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> scale(-50.0, 50.0), alpha_dist(0.3, 1.8);
  MpcController mpc(m, OcpSpec{5}, CostConfig::preset("c"), 0.7363);
  const Eigen::VectorXd hot = heated(m, 0.1, 1.0, 200);
  for (int k = 0; k < 200; ++k) {
    const Eigen::VectorXd x = hot * (scale(rng) / 30.0);
    const double u          = mpc.step(x, alpha_dist(rng)).u_applied;
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 0.1);
  }
}

TEST(MpcController, InfeasiblePeakFallsBackToSoftProblem)
{
  // peak already far above the limit: no admissible input keeps y_1 below y_max
  const ReducedModel & m = rom_250();
  MpcController mpc(m, OcpSpec{5}, CostConfig::preset("a"), 0.7363);
  const Eigen::VectorXd x = steady_state(m, 0.1, 1.5) * 3.0;
  ASSERT_GT(m.y_peak(m.a_d * x), 40.0);
  const MpcDiagnostics & d = mpc.step(x, 0.7363);
  EXPECT_EQ(d.status, QpStatus::primal_infeasible);
  EXPECT_EQ(d.fallback, Fallback::soft);
  EXPECT_NEAR(d.u_applied, 0.0, 1e-6);
  // recovers to the hard problem once the state is admissible again
  const MpcDiagnostics & next = mpc.step(Eigen::VectorXd::Zero(6), 0.7363);
  EXPECT_EQ(next.fallback, Fallback::none);
}

TEST(MpcController, StepIsAllocationFree)
{
  const ReducedModel & m = rom_250();
  MpcController mpc(m, OcpSpec{5}, CostConfig::preset("b"), 0.7363);
  ReducedPlant plant(m, 1.1);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(6);
  for (int k = 0; k < 10; ++k) {
    plant.step(mpc.step(plant.state(), 0.9).u_applied);
  }
  long worst = 0;
  for (int k = 0; k < 50; ++k) {
    x.noalias() = plant.state();
    const long before = test_support::allocations.load();
    const double u    = mpc.step(x, 0.9 + 0.001 * k).u_applied;
    worst             = std::max(worst, test_support::allocations.load() - before);
    plant.step(u);
  }
  EXPECT_EQ(worst, 0);
}

class ExactLoop : public ::testing::TestWithParam<const char *>
{};

TEST_P(ExactLoop, TracksTargetWithoutViolatingLimit)
{
  for (double alpha : {0.5, 1.1}) {
    const LoopResult r = exact_loop(CostConfig::preset(GetParam()), OcpSpec{5}, alpha, 100);
    EXPECT_LE(r.max_peak, 32.0 + 1e-3) << alpha;
    EXPECT_NEAR(r.end_peak, 30.0, 0.3) << alpha;
  }
}

INSTANTIATE_TEST_SUITE_P(Presets, ExactLoop, ::testing::Values("a", "b", "c", "d"));

TEST(MpcController, LongerHorizonChangesLittle)
{
  const LoopResult n5  = exact_loop(CostConfig::preset("a"), OcpSpec{5}, 0.8, 100);
  const LoopResult n10 = exact_loop(CostConfig::preset("a"), OcpSpec{10}, 0.8, 100);
  EXPECT_NEAR(n5.end_peak, n10.end_peak, 0.1);
  EXPECT_NEAR(n5.max_peak, n10.max_peak, 0.3);
}
