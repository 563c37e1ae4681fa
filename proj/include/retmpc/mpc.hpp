#ifndef RETMPC__MPC_HPP_
#define RETMPC__MPC_HPP_

/**
 * @file
 * @brief Sparse OCP(n) construction, steady-state reference control and the
 * receding-horizon controller with in-place per-step updates.
 *
 * Decision vector z = [x_0; ...; x_{N-1}; u_0; ...; u_{N-2}] (plus N slacks in
 * the softened variant). Constraint rows, in order: x_0 = x^n, dynamics
 * x_{k+1} - a_d x_k - b(alpha) u_k = 0, 0 <= u_k <= u_max,
 * c_peak x_k <= y_max (minus s_k when softened), s_k >= 0.
 */

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "mor.hpp"
#include "qp_solver.hpp"

namespace retmpc {

struct OcpSpec
{
  /// horizon N (number of state blocks), N >= 2
  int horizon = 5;
  double u_max = 0.1;
  double y_ref = 30.0;
  double y_max = 32.0;

  void validate() const
  {
    if (horizon < 2) { throw ConfigError("horizon must be >= 2"); }
    if (!(u_max > 0)) { throw ConfigError("u_max must be > 0"); }
    if (!(y_ref >= 0) || !(y_ref < y_max)) { throw ConfigError("require 0 <= y_ref < y_max"); }
  }
};

/// Time schedule of the state-tracking weight R0(n).
enum class R0Schedule { constant_one, chi3 };

struct CostConfig
{
  R0Schedule r0 = R0Schedule::constant_one;
  double r1 = 5e4;
  double r2 = 0.0;

  /// zero on steps 1, 2 and 3, one otherwise
  static double chi3(std::int64_t n) { return (n >= 1 && n <= 3) ? 0.0 : 1.0; }

  double r0_at(std::int64_t n) const { return r0 == R0Schedule::chi3 ? chi3(n) : 1.0; }

  void validate() const
  {
    if (!(r1 >= 0) || !(r2 >= 0) || !std::isfinite(r1) || !std::isfinite(r2)) {
      throw ConfigError("R1 and R2 must be finite and >= 0");
    }
  }

  /// Named presets: a, b, c, d (250 Hz study), kHz (no input penalty), exp (retuned variation weight).
  static CostConfig preset(const std::string & name)
  {
    if (name == "a") { return {R0Schedule::constant_one, 5e4, 0.0}; }
    if (name == "b") { return {R0Schedule::chi3, 50.0, 0.0}; }
    if (name == "c") { return {R0Schedule::constant_one, 0.0, 5e4}; }
    if (name == "d") { return {R0Schedule::chi3, 0.0, 50.0}; }
    if (name == "kHz" || name == "khz") { return {R0Schedule::constant_one, 0.0, 0.0}; }
    if (name == "exp") { return {R0Schedule::constant_one, 0.0, 8e5}; }
    throw ConfigError("unknown cost preset '" + name + "'");
  }
};

struct MpcState
{
  double u_prev = 0;
  double u_ref = 0;
  std::int64_t n = 0;
};

/// Index bookkeeping of the sparse OCP.
struct OcpLayout
{
  Eigen::Index r = 0;
  Eigen::Index horizon = 0;
  bool soft = false;

  OcpLayout() = default;
  OcpLayout(Eigen::Index order, Eigen::Index n_steps, bool softened) : r(order), horizon(n_steps), soft(softened) {}

  Eigen::Index n_controls() const { return horizon - 1; }
  Eigen::Index x(Eigen::Index k) const { return k * r; }
  Eigen::Index u(Eigen::Index k) const { return horizon * r + k; }
  Eigen::Index s(Eigen::Index k) const { return horizon * r + n_controls() + k; }
  Eigen::Index n_var() const { return horizon * r + n_controls() + (soft ? horizon : 0); }

  Eigen::Index row_init() const { return 0; }
  Eigen::Index row_dyn(Eigen::Index k) const { return r + k * r; }
  Eigen::Index row_input(Eigen::Index k) const { return horizon * r + k; }
  Eigen::Index row_peak(Eigen::Index k) const { return horizon * r + n_controls() + k; }
  Eigen::Index row_slack(Eigen::Index k) const { return horizon * r + n_controls() + horizon + k; }
  Eigen::Index n_con() const { return horizon * r + n_controls() + horizon + (soft ? horizon : 0); }
};

/// L1 penalty on the peak-constraint slack (per K).
inline constexpr double soft_penalty = 1e6;

/**
 * @brief Discrete steady-state inversion u_ref = y_ref / (c_peak (I - a_d)^{-1} b(alpha)).
 */
inline double reference_control(const ReducedModel & model, double alpha, double y_ref)
{
  const double gain = model.peak_gain(alpha);
  if (!(gain > 0) || !std::isfinite(gain)) { throw ModelError("steady-state peak gain is not positive"); }
  return y_ref / gain;
}

/// Write the (upper-triangular) cost values for step index n into a P with the OCP pattern.
inline void fill_cost_matrix(
  Eigen::SparseMatrix<double> & p_upper, const OcpLayout & lay, const Eigen::RowVectorXd & c_peak,
  const CostConfig & cost, std::int64_t n)
{
  const Eigen::Index nx = lay.horizon * lay.r, nu = lay.n_controls();
  for (Eigen::Index col = 0; col < p_upper.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(p_upper, col); it; ++it) {
      const Eigen::Index i = it.row(), j = it.col();
      double v             = 0;
      if (j < nx) {
        const Eigen::Index k = j / lay.r;
        v = 2.0 * cost.r0_at(n + k) * c_peak[i - k * lay.r] * c_peak[j - k * lay.r];
      } else if (j < nx + nu) {
        const Eigen::Index k = j - nx;
        if (i == j) {
          // u_k enters (u_k - u_{k-1})^2 and, unless last, (u_{k+1} - u_k)^2
          const int uses = 1 + (k + 1 <= nu - 1 ? 1 : 0);
          v              = 2.0 * cost.r1 + 2.0 * cost.r2 * uses;
        } else {
          v = -2.0 * cost.r2;
        }
      }
      it.valueRef() = v;
    }
  }
}

/// Linear cost term for given references and previous control.
template<typename Vec>
void fill_cost_vector(
  Vec & q, const OcpLayout & lay, const Eigen::RowVectorXd & c_peak, const CostConfig & cost, const OcpSpec & spec,
  double u_ref, double u_prev, std::int64_t n)
{
  q.setZero();
  for (Eigen::Index k = 0; k < lay.horizon; ++k) {
    q.segment(lay.x(k), lay.r) = (-2.0 * cost.r0_at(n + k) * spec.y_ref) * c_peak.transpose();
  }
  for (Eigen::Index k = 0; k < lay.n_controls(); ++k) { q[lay.u(k)] = -2.0 * cost.r1 * u_ref; }
  q[lay.u(0)] += -2.0 * cost.r2 * u_prev;
  if (lay.soft) {
    for (Eigen::Index k = 0; k < lay.horizon; ++k) { q[lay.s(k)] = soft_penalty; }
  }
}

/// Overwrite the b(alpha) entries of the dynamics rows in A.
template<typename Vec>
void fill_input_columns(Eigen::SparseMatrix<double> & a_con, const OcpLayout & lay, const Vec & b)
{
  for (Eigen::Index k = 0; k < lay.n_controls(); ++k) {
    const Eigen::Index row0 = lay.row_dyn(k);
    for (Eigen::SparseMatrix<double>::InnerIterator it(a_con, lay.u(k)); it; ++it) {
      if (it.row() >= row0 && it.row() < row0 + lay.r) { it.valueRef() = -b[it.row() - row0]; }
    }
  }
}

/// Initial-state rows of lb/ub.
template<typename Vec>
void fill_initial_state(Vec & lb, Vec & ub, const OcpLayout & lay, const Eigen::VectorXd & x0)
{
  lb.segment(lay.row_init(), lay.r) = x0;
  ub.segment(lay.row_init(), lay.r) = x0;
}

/**
 * @brief Assemble OCP(n) as a sparse QP.
 *
 * The sparsity pattern depends only on (r, N, soft), never on alpha, n or the
 * weights, so values-only updates stay valid for the lifetime of a solver handle.
 */
inline QpProblem build_ocp(
  const ReducedModel & model, const OcpSpec & spec, const CostConfig & cost, double alpha, const Eigen::VectorXd & x0,
  double u_prev, std::int64_t n, bool soft = false)
{
  spec.validate();
  cost.validate();
  const Eigen::Index r = model.order();
  if (x0.size() != r) { throw DomainError("initial state has wrong dimension"); }
  const OcpLayout lay(r, spec.horizon, soft);
  const Eigen::Index nv = lay.n_var(), nc = lay.n_con(), nu = lay.n_controls();
  const double u_ref    = reference_control(model, alpha, spec.y_ref);

  QpProblem qp;
  using T = Eigen::Triplet<double>;

  // cost pattern: dense c'c block per state, tridiagonal in u
  std::vector<T> pt;
  for (Eigen::Index k = 0; k < lay.horizon; ++k) {
    for (Eigen::Index j = 0; j < r; ++j) {
      for (Eigen::Index i = 0; i <= j; ++i) { pt.emplace_back(lay.x(k) + i, lay.x(k) + j, 0.0); }
    }
  }
  for (Eigen::Index k = 0; k < nu; ++k) {
    if (k > 0) { pt.emplace_back(lay.u(k - 1), lay.u(k), 0.0); }
    pt.emplace_back(lay.u(k), lay.u(k), 0.0);
  }
  qp.p_mat.resize(nv, nv);
  qp.p_mat.setFromTriplets(pt.begin(), pt.end());
  qp.p_mat.makeCompressed();
  fill_cost_matrix(qp.p_mat, lay, model.c_peak_r, cost, n);

  qp.q_vec.setZero(nv);
  fill_cost_vector(qp.q_vec, lay, model.c_peak_r, cost, spec, u_ref, u_prev, n);

  std::vector<T> at;
  for (Eigen::Index i = 0; i < r; ++i) { at.emplace_back(lay.row_init() + i, lay.x(0) + i, 1.0); }
  for (Eigen::Index k = 0; k < nu; ++k) {
    const Eigen::Index row = lay.row_dyn(k);
    for (Eigen::Index i = 0; i < r; ++i) {
      at.emplace_back(row + i, lay.x(k + 1) + i, 1.0);
      for (Eigen::Index j = 0; j < r; ++j) { at.emplace_back(row + i, lay.x(k) + j, -model.a_d(i, j)); }
      at.emplace_back(row + i, lay.u(k), 0.0);
    }
  }
  for (Eigen::Index k = 0; k < nu; ++k) { at.emplace_back(lay.row_input(k), lay.u(k), 1.0); }
  for (Eigen::Index k = 0; k < lay.horizon; ++k) {
    for (Eigen::Index j = 0; j < r; ++j) { at.emplace_back(lay.row_peak(k), lay.x(k) + j, model.c_peak_r[j]); }
    if (soft) {
      at.emplace_back(lay.row_peak(k), lay.s(k), -1.0);
      at.emplace_back(lay.row_slack(k), lay.s(k), 1.0);
    }
  }
  qp.a_con.resize(nc, nv);
  qp.a_con.setFromTriplets(at.begin(), at.end());
  qp.a_con.makeCompressed();
  fill_input_columns(qp.a_con, lay, model.b(alpha));

  qp.lb.setZero(nc);
  qp.ub.setZero(nc);
  fill_initial_state(qp.lb, qp.ub, lay, x0);
  for (Eigen::Index k = 0; k < nu; ++k) {
    qp.lb[lay.row_input(k)] = 0.0;
    qp.ub[lay.row_input(k)] = spec.u_max;
  }
  for (Eigen::Index k = 0; k < lay.horizon; ++k) {
    qp.lb[lay.row_peak(k)] = -qp_inf;
    qp.ub[lay.row_peak(k)] = spec.y_max;
    if (soft) {
      qp.lb[lay.row_slack(k)] = 0.0;
      qp.ub[lay.row_slack(k)] = qp_inf;
    }
  }
  return qp;
}

/// Direct evaluation of the tracking cost on a trajectory (states x_0..x_{N-1}, controls u_0..u_{N-2}).
inline double ocp_cost(
  const ReducedModel & model, const OcpSpec & spec, const CostConfig & cost, double u_ref, double u_prev,
  std::int64_t n, const std::vector<Eigen::VectorXd> & xs, const std::vector<double> & us)
{
  double j = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double e = model.c_peak_r.dot(xs[k]) - spec.y_ref;
    j += cost.r0_at(n + static_cast<std::int64_t>(k)) * e * e;
  }
  for (double u : us) { j += cost.r1 * (u - u_ref) * (u - u_ref); }
  for (std::size_t k = 1; k < us.size(); ++k) { j += cost.r2 * (us[k] - us[k - 1]) * (us[k] - us[k - 1]); }
  if (!us.empty()) { j += cost.r2 * (us[0] - u_prev) * (us[0] - u_prev); }
  return j;
}

/// Constant dropped from the QP objective, so that objective + constant equals ocp_cost.
inline double ocp_cost_constant(
  const OcpSpec & spec, const CostConfig & cost, double u_ref, double u_prev, std::int64_t n)
{
  double c = 0;
  for (int k = 0; k < spec.horizon; ++k) { c += cost.r0_at(n + k) * spec.y_ref * spec.y_ref; }
  c += cost.r1 * (spec.horizon - 1) * u_ref * u_ref;
  c += cost.r2 * u_prev * u_prev;
  return c;
}

enum class Fallback { none, soft, laser_off };

struct MpcDiagnostics
{
  double u_applied = 0;
  double u_ref = 0;
  QpStatus status = QpStatus::solved;
  Fallback fallback = Fallback::none;
  int iters = 0;
  std::int64_t solve_time_ns = 0;
  bool input_active = false;
  bool state_active = false;
  /// first control was outside [0, u_max] before clipping
  bool clipped = false;
};

/**
 * @brief Receding-horizon controller owning two solver handles (hard and softened peak constraint).
 *
 * step() writes x^n, b(alpha), u_ref, u_prev and the R0 weights into
 * preallocated QP data, refactorizes once and warm-starts from the previous
 * iterates. The first solve, and the first solve after a fallback, is cold.
 */
class MpcController
{
public:
  MpcController(
    const ReducedModel & model, const OcpSpec & spec, const CostConfig & cost, double alpha0,
    const SolverSettings & settings = {})
  : model_(model), spec_(spec), cost_(cost), lay_(model.order(), spec.horizon, false),
    slay_(model.order(), spec.horizon, true)
  {
    spec.validate();
    cost.validate();
    state_.u_ref  = reference_control(model_, alpha0, spec_.y_ref);
    state_.u_prev = std::clamp(state_.u_ref, 0.0, spec_.u_max);
    state_.n      = 0;
    const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(model_.order());
    hard_ = build_ocp(model_, spec_, cost_, alpha0, x0, state_.u_prev, 0, false);
    soft_ = build_ocp(model_, spec_, cost_, alpha0, x0, state_.u_prev, 0, true);
    solver_.setup(hard_, settings);
    soft_solver_.setup(soft_, settings);
    bbuf_.setZero(model_.order());
    weights_.resize(static_cast<std::size_t>(spec_.horizon));
    record_weights(weights_, 0);
  }

  const MpcState & state() const { return state_; }
  const MpcDiagnostics & diagnostics() const { return diag_; }
  const OcpSpec & spec() const { return spec_; }
  const CostConfig & cost() const { return cost_; }
  const OcpLayout & layout() const { return lay_; }
  /// current hard-constrained QP data (as last sent to the solver)
  const QpProblem & problem() const { return hard_; }
  const QpSolver & solver() const { return solver_; }

  /// Predicted peak trajectory of the last accepted solution.
  double predicted_peak(Eigen::Index k) const
  {
    const QpSolution & s = last_ == Fallback::soft ? soft_solver_.solution() : solver_.solution();
    return model_.c_peak_r.dot(s.x_opt.segment(lay_.x(k), lay_.r));
  }

  /// One MPC step for the current estimate; returns the control to apply.
  const MpcDiagnostics & step(const Eigen::VectorXd & x_hat, double alpha_hat)
  {
    if (x_hat.size() != model_.order() || !x_hat.allFinite() || !std::isfinite(alpha_hat)) {
      throw DomainError("controller input must be finite with the model dimension");
    }
    state_.u_ref = reference_control(model_, alpha_hat, spec_.y_ref);
    model_.b_into(alpha_hat, bbuf_);

    load(hard_, lay_, x_hat);
    solver_.set_a_values(hard_.a_con);
    if (weights_changed()) { solver_.set_p_values(hard_.p_mat); }
    solver_.commit_matrix_values();
    solver_.update_q(hard_.q_vec);
    solver_.update_bounds(hard_.lb, hard_.ub);

    const QpSolution & sol = cold_next_ ? solver_.solve() : solver_.solve_warm();
    cold_next_             = false;

    diag_               = MpcDiagnostics{};
    diag_.u_ref         = state_.u_ref;
    diag_.status        = sol.status;
    diag_.iters         = sol.iters;
    diag_.solve_time_ns = sol.solve_time_ns;

    double u0 = 0;
    if (sol.status == QpStatus::solved || sol.status == QpStatus::max_iter) {
      u0    = sol.x_opt[lay_.u(0)];
      last_ = Fallback::none;
    } else {
      cold_next_ = true;
      load(soft_, slay_, x_hat);
      soft_solver_.set_a_values(soft_.a_con);
      soft_solver_.set_p_values(soft_.p_mat);
      soft_solver_.commit_matrix_values();
      soft_solver_.update_q(soft_.q_vec);
      soft_solver_.update_bounds(soft_.lb, soft_.ub);
      const QpSolution & ss = soft_solver_.solve();
      diag_.iters += ss.iters;
      diag_.solve_time_ns += ss.solve_time_ns;
      if (ss.status == QpStatus::solved || ss.status == QpStatus::max_iter) {
        u0              = ss.x_opt[slay_.u(0)];
        diag_.fallback  = Fallback::soft;
        last_           = Fallback::soft;
      } else {
        u0             = 0.0;
        diag_.fallback = Fallback::laser_off;
        last_          = Fallback::laser_off;
      }
    }

    const double clipped = std::clamp(u0, 0.0, spec_.u_max);
    diag_.clipped        = std::abs(clipped - u0) > 1e-9 * spec_.u_max;
    diag_.u_applied      = clipped;
    diag_.input_active   = clipped >= spec_.u_max * (1.0 - 1e-3);
    if (last_ != Fallback::laser_off) {
      for (Eigen::Index k = 1; k < lay_.horizon; ++k) {
        if (predicted_peak(k) >= spec_.y_max - 1e-3) { diag_.state_active = true; }
      }
    }

    state_.u_prev = clipped;
    ++state_.n;
    return diag_;
  }

private:
  void record_weights(std::vector<double> & w, std::int64_t n) const
  {
    for (std::size_t k = 0; k < w.size(); ++k) { w[k] = cost_.r0_at(n + static_cast<std::int64_t>(k)); }
  }

  bool weights_changed()
  {
    bool changed = false;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      const double w = cost_.r0_at(state_.n + static_cast<std::int64_t>(k));
      if (w != weights_[k]) {
        weights_[k] = w;
        changed     = true;
      }
    }
    return changed;
  }

  void load(QpProblem & qp, const OcpLayout & lay, const Eigen::VectorXd & x_hat)
  {
    fill_input_columns(qp.a_con, lay, bbuf_);
    fill_cost_matrix(qp.p_mat, lay, model_.c_peak_r, cost_, state_.n);
    fill_cost_vector(qp.q_vec, lay, model_.c_peak_r, cost_, spec_, state_.u_ref, state_.u_prev, state_.n);
    fill_initial_state(qp.lb, qp.ub, lay, x_hat);
  }

  ReducedModel model_;
  OcpSpec spec_;
  CostConfig cost_;
  OcpLayout lay_, slay_;
  MpcState state_;
  MpcDiagnostics diag_;
  QpProblem hard_, soft_;
  QpSolver solver_, soft_solver_;
  Eigen::VectorXd bbuf_;
  std::vector<double> weights_;
  bool cold_next_ = true;
  Fallback last_ = Fallback::none;
};

}  // namespace retmpc

#endif  // RETMPC__MPC_HPP_
