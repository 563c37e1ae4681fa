#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <Eigen/Dense>

#include "retmpc/qp_solver.hpp"
#include "support/alloc_counter.hpp"
#include "support/qp_oracle.hpp"

using namespace retmpc;
using namespace retmpc::test_support;
using SpMat = Eigen::SparseMatrix<double>;

namespace {

QpSolver setup_solver(const QpProblem & qp, const SolverSettings & s = {})
{
  QpSolver solver;
  solver.setup(qp, s);
  return solver;
}

}  // namespace

TEST(QpSolver, ScalarQuadratic)
{
  Eigen::MatrixXd p(1, 1), a(1, 1);
  p << 1;
  a << 1;
  QpSolver s = setup_solver(make_qp(p, Eigen::VectorXd::Zero(1), a, Eigen::VectorXd::Constant(1, -qp_inf),
                                    Eigen::VectorXd::Constant(1, qp_inf)));
  const QpSolution & sol = s.solve();
  EXPECT_EQ(sol.status, QpStatus::solved);
  EXPECT_NEAR(sol.x_opt[0], 0.0, 1e-8);
  EXPECT_EQ(s.n_var(), 1);
  EXPECT_EQ(s.n_con(), 1);
}

TEST(QpSolver, ClippedUnconstrainedOptimum)
{
  Eigen::MatrixXd p(1, 1), a(1, 1);
  p << 1;
  a << 1;
  QpSolver s = setup_solver(make_qp(p, Eigen::VectorXd::Constant(1, -3.0), a, Eigen::VectorXd::Zero(1),
                                    Eigen::VectorXd::Constant(1, 2.0)));
  const QpSolution & sol = s.solve();
  EXPECT_EQ(sol.status, QpStatus::solved);
  EXPECT_NEAR(sol.x_opt[0], 2.0, 1e-5);
  EXPECT_NEAR(sol.y_opt[0], 1.0, 1e-4);
}

TEST(QpSolver, SymmetricEquality)
{
  Eigen::MatrixXd p = Eigen::MatrixXd::Identity(2, 2), a(1, 2);
  a << 1, 1;
  QpSolver s = setup_solver(make_qp(p, Eigen::VectorXd::Zero(2), a, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)));
  const QpSolution & sol = s.solve();
  EXPECT_EQ(sol.status, QpStatus::solved);
  EXPECT_NEAR(sol.x_opt[0], 0.5, 1e-6);
  EXPECT_NEAR(sol.x_opt[1], 0.5, 1e-6);
}

TEST(QpSolver, InvalidBoundsRejectedAtSetup)
{
  Eigen::MatrixXd p(1, 1), a(1, 1);
  p << 1;
  a << 1;
  QpSolver s;
  EXPECT_THROW(s.setup(make_qp(p, Eigen::VectorXd::Zero(1), a, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1))),
               ConfigError);
}

TEST(QpSolver, NonConvexCostRejectedAtSetup)
{
  Eigen::MatrixXd p(2, 2), a = Eigen::MatrixXd::Identity(2, 2);
  p << 1, 0, 0, -1;
  QpSolver s;
  EXPECT_THROW(s.setup(make_qp(p, Eigen::VectorXd::Zero(2), a, -Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2))),
               ConfigError);
}

TEST(QpSolver, InfeasibleBoxDetected)
{
  Eigen::MatrixXd p(1, 1), a(2, 1);
  p << 1;
  a << 1, 1;
  Eigen::VectorXd lb(2), ub(2);
  lb << 1, -qp_inf;
  ub << qp_inf, 0;
  QpSolver s = setup_solver(make_qp(p, Eigen::VectorXd::Zero(1), a, lb, ub));
  EXPECT_EQ(s.solve().status, QpStatus::primal_infeasible);
}

TEST(QpSolver, BoundUpdateMakesProblemInfeasible)
{
  Eigen::MatrixXd p(1, 1), a(2, 1);
  p << 1;
  a << 1, 1;
  Eigen::VectorXd lb(2), ub(2);
  lb << -1, -qp_inf;
  ub << qp_inf, 0;
  QpSolver s = setup_solver(make_qp(p, Eigen::VectorXd::Zero(1), a, lb, ub));
  EXPECT_EQ(s.solve().status, QpStatus::solved);
  lb[0] = 1;
  s.update_vectors(std::nullopt, lb, std::nullopt);
  EXPECT_EQ(s.solve().status, QpStatus::primal_infeasible);
}

TEST(QpSolver, UnboundedDetected)
{
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(1, 1), a(1, 1);
  a << 1;
  QpSolver s = setup_solver(make_qp(p, -Eigen::VectorXd::Ones(1), a, Eigen::VectorXd::Zero(1),
                                    Eigen::VectorXd::Constant(1, qp_inf)));
  EXPECT_EQ(s.solve().status, QpStatus::dual_infeasible);
}

TEST(QpSolver, MatchesActiveSetOracleOn50RandomProblems)
{
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> n_dist(1, 10), m_dist(1, 16);
  int solved = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n     = n_dist(rng);
    const int m     = m_dist(rng);
    const DenseQp d = random_qp(rng, n, m);
    Oracle oracle(d);
    const Eigen::VectorXd ref = oracle.solve();
    ASSERT_EQ(ref.size(), n) << "oracle found no KKT point, trial " << trial;

    QpSolver s = setup_solver(make_qp(d.p, d.q, d.a, d.lb, d.ub));
    const QpSolution & sol = s.solve();
    ASSERT_EQ(sol.status, QpStatus::solved) << trial;
    EXPECT_LT((sol.x_opt - ref).cwiseAbs().maxCoeff(), 1e-4) << "trial " << trial << " n " << n << " m " << m;
    ++solved;

    // residual contract on the returned point (unscaled, with slack for the scaling)
    const Eigen::VectorXd ax   = d.a * sol.x_opt;
    const Eigen::VectorXd proj = ax.cwiseMax(d.lb).cwiseMin(d.ub);
    EXPECT_LE((ax - proj).cwiseAbs().maxCoeff(), 10 * (1e-6 + 1e-6 * ax.cwiseAbs().maxCoeff())) << trial;
  }
  EXPECT_EQ(solved, 50);
}

TEST(QpSolver, VectorUpdateEqualsFreshSetup)
{
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    DenseQp d  = random_qp(rng, 6, 9);
    QpSolver s = setup_solver(make_qp(d.p, d.q, d.a, d.lb, d.ub));
    s.solve();
    DenseQp e  = d;
    e.q       += 0.3 * Eigen::VectorXd::Ones(6);
    for (int i = 0; i < 9; ++i) {
      if (std::isfinite(e.ub[i]) && e.lb[i] != e.ub[i]) { e.ub[i] += 0.1; }
    }
    s.update_vectors(e.q, e.lb, e.ub);
    const Eigen::VectorXd updated = s.solve().x_opt;
    QpSolver fresh                = setup_solver(make_qp(e.p, e.q, e.a, e.lb, e.ub));
    EXPECT_LT((updated - fresh.solve().x_opt).cwiseAbs().maxCoeff(), 1e-5) << trial;
  }
}

TEST(QpSolver, NoOpUpdateGivesIdenticalSolution)
{
  std::mt19937_64 rng(8);
  const DenseQp d = random_qp(rng, 5, 8);
  QpSolver s      = setup_solver(make_qp(d.p, d.q, d.a, d.lb, d.ub));
  const Eigen::VectorXd before = s.solve().x_opt;
  s.update_vectors(d.q, d.lb, d.ub);
  EXPECT_EQ(s.solve().x_opt, before);
}

TEST(QpSolver, WrongShapeUpdatesRejected)
{
  std::mt19937_64 rng(8);
  const DenseQp d = random_qp(rng, 5, 8);
  QpSolver s      = setup_solver(make_qp(d.p, d.q, d.a, d.lb, d.ub));
  EXPECT_THROW(s.update_vectors(Eigen::VectorXd::Zero(4), std::nullopt, std::nullopt), UpdateError);
  EXPECT_THROW(s.update_bounds(Eigen::VectorXd::Zero(7), Eigen::VectorXd::Zero(7)), UpdateError);
  EXPECT_THROW(s.solve(Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(3)), UpdateError);
}

TEST(QpSolver, MatrixValueUpdateEqualsFreshSetup)
{
  std::mt19937_64 rng(9);
  const DenseQp d = random_qp(rng, 6, 10);
  QpProblem qp    = make_qp(d.p, d.q, d.a, d.lb, d.ub);
  QpSolver s      = setup_solver(qp);
  s.solve();
  const int factorizations = s.factorizations();

  QpProblem changed = qp;
  for (int k = 0; k < changed.a_con.nonZeros(); ++k) { changed.a_con.valuePtr()[k] *= 1.3; }
  for (int k = 0; k < changed.p_mat.nonZeros(); ++k) { changed.p_mat.valuePtr()[k] *= 0.8; }
  s.update_matrix_values(&changed.p_mat, &changed.a_con);
  EXPECT_GT(s.factorizations(), factorizations);
  const Eigen::VectorXd updated = s.solve().x_opt;
  QpSolver fresh                = setup_solver(changed);
  EXPECT_LT((updated - fresh.solve().x_opt).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(QpSolver, IdenticalValuesGiveIdenticalSolution)
{
  std::mt19937_64 rng(10);
  const DenseQp d    = random_qp(rng, 6, 10);
  const QpProblem qp = make_qp(d.p, d.q, d.a, d.lb, d.ub);
  // rho adapts across solves, so compare against a twin that skips the update
  QpSolver s = setup_solver(qp), twin = setup_solver(qp);
  s.solve();
  twin.solve();
  s.update_matrix_values(&qp.p_mat, &qp.a_con);
  EXPECT_EQ(s.solve().x_opt, twin.solve().x_opt);
}

TEST(QpSolver, PatternChangeRejected)
{
  std::mt19937_64 rng(11);
  const DenseQp d    = random_qp(rng, 4, 6);
  const QpProblem qp = make_qp(d.p, d.q, d.a, d.lb, d.ub);
  QpSolver s         = setup_solver(qp);
  SpMat a2           = qp.a_con;
  // add an entry outside the setup pattern
  Eigen::Index row = -1, col = -1;
  for (Eigen::Index j = 0; j < a2.cols() && row < 0; ++j) {
    for (Eigen::Index i = 0; i < a2.rows(); ++i) {
      if (a2.coeff(i, j) == 0.0) {
        row = i;
        col = j;
        break;
      }
    }
  }
  ASSERT_GE(row, 0);
  a2.coeffRef(row, col) = 1.0;
  a2.makeCompressed();
  EXPECT_THROW(s.update_matrix_values(nullptr, &a2), UpdateError);
  SpMat p2 = SpMat(Eigen::MatrixXd::Identity(4, 4).sparseView());
  if (p2.nonZeros() != SpMat(qp.p_mat.triangularView<Eigen::Upper>()).nonZeros()) {
    EXPECT_THROW(s.update_matrix_values(&p2, nullptr), UpdateError);
  }
}

TEST(QpSolver, DeterministicIterates)
{
  std::mt19937_64 rng(12);
  const DenseQp d    = random_qp(rng, 8, 12);
  const QpProblem qp = make_qp(d.p, d.q, d.a, d.lb, d.ub);
  QpSolver a = setup_solver(qp), b = setup_solver(qp);
  const QpSolution sa = a.solve();
  const QpSolution sb = b.solve();
  EXPECT_EQ(sa.iters, sb.iters);
  EXPECT_EQ(sa.x_opt, sb.x_opt);
  EXPECT_EQ(sa.y_opt, sb.y_opt);
}

TEST(QpSolver, WarmStartAdvantageOnPerturbedLinearCost)
{
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  int not_worse = 0;
  std::vector<int> warm_iters, cold_iters;
  for (int trial = 0; trial < 100; ++trial) {
    const DenseQp d = random_qp(rng, 8, 14);
    QpSolver s      = setup_solver(make_qp(d.p, d.q, d.a, d.lb, d.ub));
    const QpSolution base = s.solve();
    ASSERT_EQ(base.status, QpStatus::solved);
    const Eigen::VectorXd q2 =
      d.q + 0.01 * d.q.cwiseAbs().cwiseMax(0.1).cwiseProduct(Eigen::VectorXd::NullaryExpr(8, [&]() { return gauss(rng); }));
    s.update_vectors(q2, std::nullopt, std::nullopt);
    const int warm = s.solve(base.x_opt, base.y_opt).iters;
    const int cold = s.solve().iters;
    warm_iters.push_back(warm);
    cold_iters.push_back(cold);
    if (warm <= cold) { ++not_worse; }
  }
  EXPECT_GE(not_worse, 80);
  std::nth_element(warm_iters.begin(), warm_iters.begin() + 50, warm_iters.end());
  std::nth_element(cold_iters.begin(), cold_iters.begin() + 50, cold_iters.end());
  EXPECT_LT(warm_iters[50], cold_iters[50]);
}

TEST(QpSolver, HotPathIsAllocationFree)
{
  std::mt19937_64 rng(14);
  const DenseQp d    = random_qp(rng, 8, 12);
  QpProblem qp       = make_qp(d.p, d.q, d.a, d.lb, d.ub);
  QpSolver s         = setup_solver(qp);
  s.solve();
  const Eigen::VectorXd q2 = d.q * 1.01;
  Eigen::VectorXd lb2 = d.lb, ub2 = d.ub;
  const SpMat p_upper = qp.p_mat.triangularView<Eigen::Upper>();
  const long before   = test_support::allocations.load();
  for (int k = 0; k < 20; ++k) {
    s.update_q(q2);
    s.update_bounds(lb2, ub2);
    s.set_a_values(qp.a_con);
    s.set_p_values(p_upper);
    s.commit_matrix_values();
    s.solve_warm();
    s.solve();
  }
  EXPECT_EQ(test_support::allocations.load() - before, 0);
}
