#ifndef RETMPC__QP_SOLVER_HPP_
#define RETMPC__QP_SOLVER_HPP_

/**
 * @file
 * @brief Operator-splitting (ADMM) solver for convex quadratic programs
 *
 *   min 0.5 x'Px + q'x  s.t.  lb <= A x <= ub
 *
 * with a quasi-definite KKT system factorized once (sparse LDL^T, fixed pattern),
 * warm starts, vector updates without refactorization and values-only matrix updates.
 */

#include <Eigen/Sparse>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "sparse_ldl.hpp"

namespace retmpc {

inline constexpr double qp_inf = std::numeric_limits<double>::infinity();

struct QpProblem
{
  /// symmetric PSD cost matrix (both triangles or upper triangle; only the upper triangle is read)
  Eigen::SparseMatrix<double> p_mat;
  Eigen::VectorXd q_vec;
  Eigen::SparseMatrix<double> a_con;
  Eigen::VectorXd lb, ub;

  Eigen::Index n_var() const { return q_vec.size(); }
  Eigen::Index n_con() const { return lb.size(); }

  void validate() const
  {
    const Eigen::Index n = n_var(), m = n_con();
    if (p_mat.rows() != n || p_mat.cols() != n) { throw ConfigError("p_mat must be n_var x n_var"); }
    if (a_con.rows() != m || a_con.cols() != n || ub.size() != m) {
      throw ConfigError("a_con, lb, ub shapes do not match");
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::isnan(lb[i]) || std::isnan(ub[i]) || lb[i] > ub[i]) {
        throw ConfigError("constraint bounds require lb <= ub (row " + std::to_string(i) + ")");
      }
    }
    if (!q_vec.allFinite()) { throw ConfigError("q_vec must be finite"); }
  }

  double objective(const Eigen::VectorXd & x) const
  {
    return 0.5 * x.dot(p_mat.selfadjointView<Eigen::Upper>() * x) + q_vec.dot(x);
  }
};

enum class QpStatus { solved, max_iter, primal_infeasible, dual_infeasible };

inline const char * to_string(QpStatus s)
{
  switch (s) {
    case QpStatus::solved: return "solved";
    case QpStatus::max_iter: return "max_iter";
    case QpStatus::primal_infeasible: return "primal_infeasible";
    case QpStatus::dual_infeasible: return "dual_infeasible";
  }
  return "unknown";
}

struct QpSolution
{
  Eigen::VectorXd x_opt;
  Eigen::VectorXd y_opt;
  QpStatus status = QpStatus::max_iter;
  int iters = 0;
  std::int64_t solve_time_ns = 0;
  double prim_res = qp_inf;
  double dual_res = qp_inf;
};

struct SolverSettings
{
  /// first ADMM step size
  double rho = 0.1;
  /// second ADMM step size (primal regularization)
  double sigma = 1e-6;
  /// over-relaxation in (0, 2)
  double relax = 1.6;
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  /// infeasibility certificate thresholds
  double eps_pinf = 1e-5;
  double eps_dinf = 1e-5;
  int max_iter = 4000;
  /// iterations between residual checks
  int check_interval = 10;
  /// Ruiz equilibration passes at setup (0 disables scaling)
  int scaling_iters = 10;
  /// rebalance rho from the residual ratio every this many iterations (0 disables)
  int adaptive_rho_interval = 50;
  /// rho is only changed when the estimate differs by more than this factor
  double adaptive_rho_tolerance = 5.0;

  void validate() const
  {
    if (!(rho > 0) || !(sigma > 0)) { throw ConfigError("rho and sigma must be > 0"); }
    if (!(relax > 0 && relax < 2)) { throw ConfigError("relax must lie in (0, 2)"); }
    if (!(eps_abs >= 0) || !(eps_rel >= 0) || max_iter < 1 || check_interval < 1) {
      throw ConfigError("invalid tolerances or iteration limits");
    }
    if (adaptive_rho_interval < 0 || adaptive_rho_interval % check_interval != 0 || !(adaptive_rho_tolerance > 1)) {
      throw ConfigError("adaptive_rho_interval must be a multiple of check_interval, tolerance > 1");
    }
  }
};

/**
 * @brief Reusable solver handle.
 *
 * Solve is allocation-free after setup; all work vectors are sized in setup().
 */
class QpSolver
{
  using SpMat = Eigen::SparseMatrix<double>;

public:
  QpSolver() = default;

  QpSolver(const QpProblem & problem, const SolverSettings & settings = {}) { setup(problem, settings); }

  void setup(const QpProblem & problem, const SolverSettings & settings = {})
  {
    settings.validate();
    problem.validate();
    prm_     = settings;
    rho_bar_ = settings.rho;
    n_       = problem.n_var();
    m_   = problem.n_con();

    p_ = problem.p_mat.triangularView<Eigen::Upper>();
    p_.makeCompressed();
    a_ = problem.a_con;
    a_.makeCompressed();
    q_  = problem.q_vec;
    lb_ = problem.lb;
    ub_ = problem.ub;

    compute_scaling();
    ps_ = p_;
    as_ = a_;
    apply_scaling();
    compute_rho();
    build_kkt();

    x_.setZero(n_);
    z_.setZero(m_);
    y_.setZero(m_);
    xt_.resize(n_);
    zt_.resize(m_);
    xprev_.resize(n_);
    yprev_.resize(m_);
    rhs_.resize(n_ + m_);
    sol_kkt_.resize(n_ + m_);
    wn_.resize(n_);
    wn2_.resize(n_);
    wm_.resize(m_);
    wm2_.resize(m_);
    sol_.x_opt.setZero(n_);
    sol_.y_opt.setZero(m_);
    ready_ = true;
  }

  bool ready() const { return ready_; }
  Eigen::Index n_var() const { return n_; }
  Eigen::Index n_con() const { return m_; }
  const SolverSettings & settings() const { return prm_; }
  /// current (possibly adapted) base step size
  double rho() const { return rho_bar_; }
  const QpSolution & solution() const { return sol_; }
  /// number of numeric KKT factorizations since setup (including setup's)
  int factorizations() const { return factorizations_; }

  /**
   * @brief Replace q, lb and/or ub without refactorizing.
   *
   * A refactorization only happens when a row switches between equality and
   * inequality, since its ADMM step size changes.
   */
  void update_vectors(
    const std::optional<Eigen::VectorXd> & q, const std::optional<Eigen::VectorXd> & lb,
    const std::optional<Eigen::VectorXd> & ub)
  {
    require_ready();
    if (q && q->size() != n_) { throw UpdateError("q has wrong size"); }
    if (lb && lb->size() != m_) { throw UpdateError("lb has wrong size"); }
    if (ub && ub->size() != m_) { throw UpdateError("ub has wrong size"); }
    const Eigen::VectorXd & nl = lb ? *lb : lb_;
    const Eigen::VectorXd & nu = ub ? *ub : ub_;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (std::isnan(nl[i]) || std::isnan(nu[i]) || nl[i] > nu[i]) { throw UpdateError("bounds require lb <= ub"); }
    }
    if (q) {
      if (!q->allFinite()) { throw UpdateError("q must be finite"); }
      q_  = *q;
      qs_ = c_ * d_.cwiseProduct(q_);
    }
    if (lb) { lb_ = *lb; }
    if (ub) { ub_ = *ub; }
    if (lb || ub) {
      ls_ = e_.cwiseProduct(lb_);
      us_ = e_.cwiseProduct(ub_);
      if (compute_rho()) { refactor(); }
    }
  }

  /// vector update of q only (no optionals, used in the MPC hot path)
  void update_q(const Eigen::VectorXd & q)
  {
    if (q.size() != n_) { throw UpdateError("q has wrong size"); }
    q_  = q;
    qs_ = c_ * d_.cwiseProduct(q_);
  }

  /// bounds update in the MPC hot path; same contract as update_vectors
  void update_bounds(const Eigen::VectorXd & lb, const Eigen::VectorXd & ub)
  {
    if (lb.size() != m_ || ub.size() != m_) { throw UpdateError("bounds have wrong size"); }
    lb_ = lb;
    ub_ = ub;
    ls_ = e_.cwiseProduct(lb_);
    us_ = e_.cwiseProduct(ub_);
    if (compute_rho()) { refactor(); }
  }

  /**
   * @brief Replace the nonzero values of P and/or A; the sparsity pattern must be unchanged.
   *
   * The equilibration computed at setup is kept; the KKT matrix is refactorized numerically.
   */
  void update_matrix_values(const SpMat * p_mat, const SpMat * a_con)
  {
    require_ready();
    if (p_mat) {
      const SpMat pu = p_mat->triangularView<Eigen::Upper>();
      if (!same_pattern(pu, p_)) { throw UpdateError("p_mat sparsity pattern changed"); }
      std::copy(pu.valuePtr(), pu.valuePtr() + pu.nonZeros(), p_.valuePtr());
    }
    if (a_con) { set_a_values(*a_con); }
    if (p_mat || a_con) {
      apply_scaling();
      refactor();
    }
  }

  /// A-only values update for compressed matrices with the setup pattern, no temporaries
  void set_a_values(const SpMat & a_con)
  {
    if (!same_pattern(a_con, a_)) { throw UpdateError("a_con sparsity pattern changed"); }
    std::copy(a_con.valuePtr(), a_con.valuePtr() + a_con.nonZeros(), a_.valuePtr());
  }

  /// P-only values update (upper triangle, setup pattern)
  void set_p_values(const SpMat & p_upper)
  {
    if (!same_pattern(p_upper, p_)) { throw UpdateError("p_mat sparsity pattern changed"); }
    std::copy(p_upper.valuePtr(), p_upper.valuePtr() + p_upper.nonZeros(), p_.valuePtr());
  }

  /// rescale and refactorize after set_a_values / set_p_values
  void commit_matrix_values()
  {
    apply_scaling();
    refactor();
  }

  /// Cold start from zero.
  const QpSolution & solve()
  {
    require_ready();
    x_.setZero();
    z_.setZero();
    y_.setZero();
    return iterate();
  }

  /// Warm start from an unscaled primal/dual pair.
  const QpSolution & solve(const Eigen::VectorXd & x0, const Eigen::VectorXd & y0)
  {
    require_ready();
    if (x0.size() != n_ || y0.size() != m_) { throw UpdateError("warm start has wrong size"); }
    x_ = x0.cwiseQuotient(d_);
    y_ = c_ * y0.cwiseQuotient(e_);
    z_.noalias() = as_ * x_;
    z_ = z_.cwiseMax(ls_).cwiseMin(us_);
    return iterate();
  }

  /// Warm start from the internal iterates of the previous solve.
  const QpSolution & solve_warm()
  {
    require_ready();
    return iterate();
  }

private:
  void require_ready() const
  {
    if (!ready_) { throw ConfigError("solver handle is not set up"); }
  }

  static bool same_pattern(const SpMat & a, const SpMat & b)
  {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.nonZeros() != b.nonZeros()) { return false; }
    if (!a.isCompressed()) { return false; }
    return std::equal(a.outerIndexPtr(), a.outerIndexPtr() + a.outerSize() + 1, b.outerIndexPtr())
        && std::equal(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros(), b.innerIndexPtr());
  }

  /// Ruiz equilibration of [P A'; A 0] followed by cost scaling.
  void compute_scaling()
  {
    d_.setOnes(n_);
    e_.setOnes(m_);
    c_ = 1.0;
    if (prm_.scaling_iters <= 0) { return; }

    SpMat ps = p_, as = a_;
    Eigen::VectorXd qs = q_;
    Eigen::VectorXd dn(n_), en(m_);
    auto clip = [](double v) { return v < 1e-4 ? 1.0 : std::min(v, 1e4); };
    for (int it = 0; it < prm_.scaling_iters; ++it) {
      dn.setZero();
      en.setZero();
      for (Eigen::Index k = 0; k < ps.outerSize(); ++k) {
        for (SpMat::InnerIterator iv(ps, k); iv; ++iv) {
          const double v = std::abs(iv.value());
          dn[iv.row()]   = std::max(dn[iv.row()], v);
          dn[iv.col()]   = std::max(dn[iv.col()], v);
        }
      }
      for (Eigen::Index k = 0; k < as.outerSize(); ++k) {
        for (SpMat::InnerIterator iv(as, k); iv; ++iv) {
          const double v = std::abs(iv.value());
          dn[iv.col()]   = std::max(dn[iv.col()], v);
          en[iv.row()]   = std::max(en[iv.row()], v);
        }
      }
      for (Eigen::Index j = 0; j < n_; ++j) { dn[j] = 1.0 / std::sqrt(clip(dn[j])); }
      for (Eigen::Index i = 0; i < m_; ++i) { en[i] = 1.0 / std::sqrt(clip(en[i])); }
      ps = dn.asDiagonal() * ps * dn.asDiagonal();
      as = en.asDiagonal() * as * dn.asDiagonal();
      qs = qs.cwiseProduct(dn);
      d_ = d_.cwiseProduct(dn);
      e_ = e_.cwiseProduct(en);
    }
    // cost scaling
    Eigen::VectorXd colmax = Eigen::VectorXd::Zero(n_);
    for (Eigen::Index k = 0; k < ps.outerSize(); ++k) {
      for (SpMat::InnerIterator iv(ps, k); iv; ++iv) {
        colmax[iv.row()] = std::max(colmax[iv.row()], std::abs(iv.value()));
        colmax[iv.col()] = std::max(colmax[iv.col()], std::abs(iv.value()));
      }
    }
    const double pmean = n_ > 0 ? colmax.mean() : 0.0;
    const double qmax  = n_ > 0 ? qs.cwiseAbs().maxCoeff() : 0.0;
    c_                 = 1.0 / clip(std::max(pmean, qmax));
  }

  /// Scaled copies share the pattern of the unscaled data; values are rewritten in place.
  void apply_scaling()
  {
    if (ps_.nonZeros() != p_.nonZeros() || ps_.rows() != p_.rows()) { ps_ = p_; }
    if (as_.nonZeros() != a_.nonZeros() || as_.rows() != a_.rows()) { as_ = a_; }
    for (Eigen::Index k = 0; k < p_.outerSize(); ++k) {
      SpMat::InnerIterator is(ps_, k);
      for (SpMat::InnerIterator it(p_, k); it; ++it, ++is) {
        is.valueRef() = c_ * d_[it.row()] * d_[it.col()] * it.value();
      }
    }
    for (Eigen::Index k = 0; k < a_.outerSize(); ++k) {
      SpMat::InnerIterator is(as_, k);
      for (SpMat::InnerIterator it(a_, k); it; ++it, ++is) { is.valueRef() = e_[it.row()] * d_[it.col()] * it.value(); }
    }
    qs_ = c_ * d_.cwiseProduct(q_);
    ls_ = e_.cwiseProduct(lb_);
    us_ = e_.cwiseProduct(ub_);
  }

  /// Returns true when the step-size vector changed.
  bool compute_rho()
  {
    if (rho_.size() != m_) { rho_.setZero(m_); }
    bool changed = false;
    for (Eigen::Index i = 0; i < m_; ++i) {
      double r;
      if (lb_[i] == -qp_inf && ub_[i] == qp_inf) {
        r = 1e-6;
      } else if (ub_[i] - lb_[i] < 1e-12 * std::max(1.0, std::abs(ub_[i]))) {
        r = 1e3 * rho_bar_;
      } else {
        r = rho_bar_;
      }
      if (r != rho_[i]) {
        rho_[i] = r;
        changed = true;
      }
    }
    rho_inv_ = rho_.cwiseInverse();
    return changed;
  }

  static Eigen::Index position(const SpMat & k, Eigen::Index row, Eigen::Index col)
  {
    const int * begin = k.innerIndexPtr() + k.outerIndexPtr()[col];
    const int * end   = k.innerIndexPtr() + k.outerIndexPtr()[col + 1];
    const int * it    = std::lower_bound(begin, end, static_cast<int>(row));
    return static_cast<Eigen::Index>(it - k.innerIndexPtr());
  }

  /// Upper-triangular KKT [P + sigma I, A'; A, -diag(1/rho)] with a static pattern.
  void build_kkt()
  {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(ps_.nonZeros() + as_.nonZeros() + n_ + m_));
    for (Eigen::Index j = 0; j < n_; ++j) { trip.emplace_back(j, j, 1.0); }
    for (Eigen::Index k = 0; k < ps_.outerSize(); ++k) {
      for (SpMat::InnerIterator it(ps_, k); it; ++it) { trip.emplace_back(it.row(), it.col(), 1.0); }
    }
    for (Eigen::Index k = 0; k < as_.outerSize(); ++k) {
      for (SpMat::InnerIterator it(as_, k); it; ++it) { trip.emplace_back(it.col(), n_ + it.row(), 1.0); }
    }
    for (Eigen::Index i = 0; i < m_; ++i) { trip.emplace_back(n_ + i, n_ + i, 1.0); }
    kkt_.resize(n_ + m_, n_ + m_);
    kkt_.setFromTriplets(trip.begin(), trip.end());
    kkt_.makeCompressed();

    diag_pos_.resize(static_cast<std::size_t>(n_ + m_));
    for (Eigen::Index j = 0; j < n_ + m_; ++j) { diag_pos_[static_cast<std::size_t>(j)] = position(kkt_, j, j); }
    p_pos_.clear();
    for (Eigen::Index k = 0; k < ps_.outerSize(); ++k) {
      for (SpMat::InnerIterator it(ps_, k); it; ++it) { p_pos_.push_back(position(kkt_, it.row(), it.col())); }
    }
    a_pos_.clear();
    for (Eigen::Index k = 0; k < as_.outerSize(); ++k) {
      for (SpMat::InnerIterator it(as_, k); it; ++it) { a_pos_.push_back(position(kkt_, it.col(), n_ + it.row())); }
    }
    ldl_.analyze(kkt_);
    refactor();
  }

  void fill_kkt_values()
  {
    double * v = kkt_.valuePtr();
    std::fill(v, v + kkt_.nonZeros(), 0.0);
    for (Eigen::Index j = 0; j < n_; ++j) { v[diag_pos_[static_cast<std::size_t>(j)]] = prm_.sigma; }
    const double * pv = ps_.valuePtr();
    for (std::size_t k = 0; k < p_pos_.size(); ++k) { v[p_pos_[k]] += pv[k]; }
    const double * av = as_.valuePtr();
    for (std::size_t k = 0; k < a_pos_.size(); ++k) { v[a_pos_[k]] = av[k]; }
    for (Eigen::Index i = 0; i < m_; ++i) { v[diag_pos_[static_cast<std::size_t>(n_ + i)]] = -rho_inv_[i]; }
  }

  void refactor()
  {
    fill_kkt_values();
    const bool ok = ldl_.factor(kkt_);
    ++factorizations_;
    // quasi-definite: exactly n positive and m negative pivots iff P + sigma I > 0
    if (!ok || ldl_.positive_pivots() != n_) {
      throw ConfigError("KKT matrix is not quasi-definite: p_mat is not PSD");
    }
  }

  const QpSolution & iterate()
  {
    const auto t0      = std::chrono::steady_clock::now();
    const double alpha = prm_.relax;
    QpStatus status    = QpStatus::max_iter;
    int it             = 0;
    double prim = qp_inf, dual = qp_inf;

    for (it = 1; it <= prm_.max_iter; ++it) {
      xprev_ = x_;
      yprev_ = y_;

      rhs_.head(n_) = prm_.sigma * x_ - qs_;
      rhs_.tail(m_) = z_ - rho_inv_.cwiseProduct(y_);
      sol_kkt_      = rhs_;
      ldl_.solve_in_place(sol_kkt_);

      xt_ = sol_kkt_.head(n_);
      zt_ = z_ + rho_inv_.cwiseProduct(sol_kkt_.tail(m_) - y_);

      x_  = alpha * xt_ + (1.0 - alpha) * xprev_;
      wm_ = alpha * zt_ + (1.0 - alpha) * z_;
      z_  = (wm_ + rho_inv_.cwiseProduct(y_)).cwiseMax(ls_).cwiseMin(us_);
      y_ += rho_.cwiseProduct(wm_ - z_);

      if (it % prm_.check_interval == 0 || it == prm_.max_iter) {
        residuals(prim, dual);
        if (converged(prim, dual)) {
          status = QpStatus::solved;
          break;
        }
        if (primal_infeasible()) {
          status = QpStatus::primal_infeasible;
          break;
        }
        if (dual_infeasible()) {
          status = QpStatus::dual_infeasible;
          break;
        }
        if (prm_.adaptive_rho_interval > 0 && it % prm_.adaptive_rho_interval == 0) { adapt_rho(prim, dual); }
      }
    }

    sol_.status   = status;
    sol_.iters    = std::min(it, prm_.max_iter);
    sol_.prim_res = prim;
    sol_.dual_res = dual;
    sol_.x_opt    = d_.cwiseProduct(x_);
    sol_.y_opt    = e_.cwiseProduct(y_) / c_;
    sol_.solve_time_ns =
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
    return sol_;
  }

  /// Unscaled primal and dual residuals; also caches the norms for the relative tolerances.
  void residuals(double & prim, double & dual)
  {
    // A x (unscaled) = E^{-1} As x
    wm2_.noalias() = as_ * x_;
    wm_            = wm2_.cwiseQuotient(e_);
    norm_ax_       = wm_.lpNorm<Eigen::Infinity>();
    wm2_           = z_.cwiseQuotient(e_);
    norm_z_        = wm2_.lpNorm<Eigen::Infinity>();
    prim           = (wm_ - wm2_).lpNorm<Eigen::Infinity>();

    wn_.noalias()  = ps_.selfadjointView<Eigen::Upper>() * x_;
    wn2_.noalias() = as_.transpose() * y_;
    const double ic = 1.0 / c_;
    norm_px_  = ic * wn_.cwiseQuotient(d_).lpNorm<Eigen::Infinity>();
    norm_aty_ = ic * wn2_.cwiseQuotient(d_).lpNorm<Eigen::Infinity>();
    norm_q_   = ic * qs_.cwiseQuotient(d_).lpNorm<Eigen::Infinity>();
    wn_ += wn2_;
    wn_ += qs_;
    dual = ic * wn_.cwiseQuotient(d_).lpNorm<Eigen::Infinity>();
  }

  /// Balance primal and dual residuals (relative to their scales) by rescaling rho.
  void adapt_rho(double prim, double dual)
  {
    const double pn = prim / (std::max(norm_ax_, norm_z_) + 1e-10);
    const double dn = dual / (std::max({norm_px_, norm_aty_, norm_q_}) + 1e-10);
    const double est = std::clamp(rho_bar_ * std::sqrt(pn / (dn + 1e-10)), 1e-6, 1e6);
    if (est > prm_.adaptive_rho_tolerance * rho_bar_ || est * prm_.adaptive_rho_tolerance < rho_bar_) {
      rho_bar_ = est;
      compute_rho();
      refactor();
    }
  }

  bool converged(double prim, double dual) const
  {
    const double ep = prm_.eps_abs + prm_.eps_rel * std::max(norm_ax_, norm_z_);
    const double ed = prm_.eps_abs + prm_.eps_rel * std::max({norm_px_, norm_aty_, norm_q_});
    return prim <= ep && dual <= ed;
  }

  bool primal_infeasible()
  {
    // unscaled dy = E (y - yprev), up to the positive factor 1/c; a side with an
    // infinite bound cannot carry a certificate, so that sign is projected away
    wm_ = e_.cwiseProduct(y_ - yprev_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (ub_[i] == qp_inf) { wm_[i] = std::min(wm_[i], 0.0); }
      if (lb_[i] == -qp_inf) { wm_[i] = std::max(wm_[i], 0.0); }
    }
    const double nd = wm_.lpNorm<Eigen::Infinity>();
    if (!(nd > 1e-12)) { return false; }
    const double tol = prm_.eps_pinf * nd;
    double support   = 0;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (wm_[i] > 0) { support += ub_[i] * wm_[i]; }
      if (wm_[i] < 0) { support += lb_[i] * wm_[i]; }
    }
    if (!(support < -tol)) { return false; }
    // A' dy = D^{-1} As' E^{-1} dy
    wm2_          = wm_.cwiseQuotient(e_);
    wn_.noalias() = as_.transpose() * wm2_;
    return wn_.cwiseQuotient(d_).lpNorm<Eigen::Infinity>() <= tol;
  }

  bool dual_infeasible()
  {
    wn_             = d_.cwiseProduct(x_ - xprev_);
    const double nd = wn_.lpNorm<Eigen::Infinity>();
    if (!(nd > 1e-12)) { return false; }
    const double tol = prm_.eps_dinf * nd;
    wn2_             = x_ - xprev_;
    if (!(qs_.dot(wn2_) / c_ < -tol)) { return false; }
    wn_.noalias() = ps_.selfadjointView<Eigen::Upper>() * wn2_;
    if (wn_.cwiseQuotient(d_).lpNorm<Eigen::Infinity>() / c_ > tol) { return false; }
    wm_.noalias() = as_ * wn2_;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const double v = wm_[i] / e_[i];
      if (ub_[i] != qp_inf && v > tol) { return false; }
      if (lb_[i] != -qp_inf && v < -tol) { return false; }
    }
    return true;
  }

  SolverSettings prm_;
  double rho_bar_ = 0.1;
  Eigen::Index n_ = 0, m_ = 0;
  bool ready_ = false;
  int factorizations_ = 0;

  // unscaled data (P upper triangle)
  SpMat p_, a_;
  Eigen::VectorXd q_, lb_, ub_;

  // scaling: x = D xs, constraint rows scaled by E, cost by c
  Eigen::VectorXd d_, e_;
  double c_ = 1.0;
  SpMat ps_, as_;
  Eigen::VectorXd qs_, ls_, us_;
  Eigen::VectorXd rho_, rho_inv_;

  SpMat kkt_;
  std::vector<Eigen::Index> diag_pos_, p_pos_, a_pos_;
  SparseLdl ldl_;

  // iterates (scaled) and work memory
  Eigen::VectorXd x_, z_, y_, xt_, zt_, xprev_, yprev_, rhs_, sol_kkt_, wn_, wn2_, wm_, wm2_;
  double norm_ax_ = 0, norm_z_ = 0, norm_px_ = 0, norm_aty_ = 0, norm_q_ = 0;

  QpSolution sol_;
};

}  // namespace retmpc

#endif  // RETMPC__QP_SOLVER_HPP_
