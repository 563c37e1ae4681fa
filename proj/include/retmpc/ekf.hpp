#ifndef RETMPC__EKF_HPP_
#define RETMPC__EKF_HPP_

/**
 * @file
 * @brief Extended Kalman filter on the state extended by the absorption factor,
 * (x, alpha) with constant-parameter dynamics.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "mor.hpp"

namespace retmpc {

struct EkfConfig
{
  /// process noise variances: state channels, then alpha
  double q_state = 1e-6;
  double q_alpha = 1e-4;
  /// measurement noise variance (K^2)
  double r_meas = 0.288 * 0.288;
  /// initial covariance: state channels, then alpha
  double p0_state = 1e-2;
  double p0_alpha = 0.25;
  double alpha0 = 0.7363;
  double alpha_min = 0.2, alpha_max = 2.0;

  void validate() const
  {
    if (!(q_state >= 0) || !(q_alpha >= 0)) { throw ConfigError("EKF process noise must be >= 0"); }
    if (!(r_meas > 0)) { throw ConfigError("EKF measurement variance must be > 0"); }
    if (!(p0_state > 0) || !(p0_alpha > 0)) { throw ConfigError("EKF initial covariance must be > 0"); }
    if (!(alpha_min > 0) || !(alpha_min < alpha_max) || alpha0 < alpha_min || alpha0 > alpha_max) {
      throw ConfigError("EKF clamp interval must satisfy 0 < alpha_min <= alpha0 <= alpha_max");
    }
  }
};

struct EkfState
{
  Eigen::VectorXd x_hat;
  double alpha_hat = 0;
  Eigen::MatrixXd p_cov;
  double innovation = 0;
  /// alpha_hat hit the clamp interval at the last update
  bool clamped = false;

  static EkfState initial(Eigen::Index r, const EkfConfig & cfg)
  {
    cfg.validate();
    EkfState s;
    s.x_hat     = Eigen::VectorXd::Zero(r);
    s.alpha_hat = cfg.alpha0;
    s.p_cov     = Eigen::MatrixXd::Zero(r + 1, r + 1);
    s.p_cov.topLeftCorner(r, r).diagonal().setConstant(cfg.p0_state);
    s.p_cov(r, r) = cfg.p0_alpha;
    return s;
  }
};

/// x+ = a_d x + b(alpha) u, alpha+ = alpha; covariance through F = [[a_d, db/dalpha u], [0, 1]].
inline EkfState ekf_predict(const EkfState & s, double u, const ReducedModel & model, const EkfConfig & cfg)
{
  if (!std::isfinite(u)) { throw DomainError("EKF input must be finite"); }
  const auto r = model.order();
  EkfState out = s;
  out.x_hat    = model.step(s.x_hat, u, s.alpha_hat);

  Eigen::MatrixXd f          = Eigen::MatrixXd::Identity(r + 1, r + 1);
  f.topLeftCorner(r, r)      = model.a_d;
  f.topRightCorner(r, 1)     = model.db_dalpha(s.alpha_hat) * u;
  out.p_cov                  = f * s.p_cov * f.transpose();
  out.p_cov.diagonal().head(r).array() += cfg.q_state;
  out.p_cov(r, r) += cfg.q_alpha;
  out.p_cov = (0.5 * (out.p_cov + out.p_cov.transpose())).eval();
  return out;
}

/// Measurement update with H = [c_vol(alpha), dc_vol/dalpha x], Joseph form, alpha clamped afterwards.
inline EkfState ekf_update(const EkfState & s, double y_meas, const ReducedModel & model, const EkfConfig & cfg)
{
  if (!std::isfinite(y_meas)) { throw DomainError("EKF measurement must be finite"); }
  const auto r = model.order();
  EkfState out = s;

  Eigen::RowVectorXd h(r + 1);
  const Eigen::RowVectorXd c = model.c_vol(s.alpha_hat);
  h.head(r)                  = c;
  h[r]                       = model.dcvol_dalpha(s.alpha_hat).dot(s.x_hat);

  out.innovation         = y_meas - c.dot(s.x_hat);
  const Eigen::VectorXd ph = s.p_cov * h.transpose();
  const double sv        = h.dot(ph) + cfg.r_meas;
  if (!(sv > 0)) { throw NumericalError("innovation covariance is not positive"); }
  const Eigen::VectorXd k = ph / sv;

  Eigen::VectorXd xa(r + 1);
  xa.head(r) = s.x_hat;
  xa[r]      = s.alpha_hat;
  xa += k * out.innovation;

  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(r + 1, r + 1) - k * h;
  out.p_cov = ikh * s.p_cov * ikh.transpose() + cfg.r_meas * (k * k.transpose());
  out.p_cov = (0.5 * (out.p_cov + out.p_cov.transpose())).eval();

  out.x_hat     = xa.head(r);
  out.alpha_hat = std::clamp(xa[r], cfg.alpha_min, cfg.alpha_max);
  out.clamped   = out.alpha_hat != xa[r];
  return out;
}

}  // namespace retmpc

#endif  // RETMPC__EKF_HPP_
