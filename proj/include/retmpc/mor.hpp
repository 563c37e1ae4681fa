#ifndef RETMPC__MOR_HPP_
#define RETMPC__MOR_HPP_

/**
 * @file
 * @brief Parametric reduced-order model: global POD basis, DEIM for the
 * alpha-dependent input and volume-output vectors, implicit Euler in time.
 */

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "physical_model.hpp"

namespace retmpc {

/// Input signal used to excite the full model when collecting snapshots.
struct Excitation
{
  /// step amplitude held over the first half of the window (W)
  double u_step = 0.1;
  /// pulse amplitudes are drawn uniformly from [0, u_pulse_max] (W)
  double u_pulse_max = 0.1;
  std::size_t pulses = 10;
  /// simulated window per alpha (s)
  double duration = 0.4;
  /// state samples per alpha, uniformly spaced over the window
  std::size_t samples = 50;
  std::uint64_t seed = 7;

  static Excitation zero()
  {
    Excitation e;
    e.u_step      = 0;
    e.u_pulse_max = 0;
    return e;
  }

  /// Step on [0, T/2), then `pulses` rectangular pulses of random height on [T/2, T).
  std::vector<double> signal(std::size_t steps) const
  {
    std::vector<double> u(steps, 0.0);
    const std::size_t half = steps / 2;
    std::fill(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(half), u_step);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(0.0, 1.0);
    const std::size_t tail = steps - half;
    if (pulses > 0 && tail > 0) {
      const std::size_t period = std::max<std::size_t>(1, tail / pulses);
      const std::size_t width  = std::max<std::size_t>(1, period / 2);
      for (std::size_t p = 0; p < pulses; ++p) {
        const double a = u_pulse_max * amp(rng);
        for (std::size_t k = 0; k < width; ++k) {
          const std::size_t at = half + p * period + k;
          if (at < steps) { u[at] = a; }
        }
      }
    }
    return u;
  }
};

struct SnapshotSet
{
  std::vector<double> alphas;
  /// n x (alphas * samples) temperature snapshots (K)
  Eigen::MatrixXd states;
  /// b_full(alpha_i) columns
  Eigen::MatrixXd inputs;
  /// c_vol(alpha_i) columns
  Eigen::MatrixXd outputs;
  std::size_t samples_per_alpha = 0;
};

using FullModelFactory = std::function<FullOrderModel(double alpha)>;

inline SnapshotSet collect_snapshots(
  const FullModelFactory & factory, const std::vector<double> & alphas, const Excitation & excitation, double dt)
{
  if (alphas.empty()) { throw ConfigError("snapshot collection needs at least one alpha"); }
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    if (!(alphas[i] > alphas[i - 1])) { throw ConfigError("snapshot alphas must be strictly increasing"); }
  }
  if (excitation.samples == 0) { throw ConfigError("excitation needs at least one sample"); }
  const auto steps = static_cast<std::size_t>(std::llround(excitation.duration / dt));
  if (steps < excitation.samples) { throw ConfigError("excitation window shorter than the sample count"); }
  const std::vector<double> u = excitation.signal(steps);

  SnapshotSet set;
  set.alphas            = alphas;
  set.samples_per_alpha = excitation.samples;
  std::size_t col       = 0;
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    FullOrderModel model = factory(alphas[a]);
    const auto n         = static_cast<Eigen::Index>(model.size());
    if (a == 0) {
      set.states.resize(n, static_cast<Eigen::Index>(alphas.size() * excitation.samples));
      set.inputs.resize(n, static_cast<Eigen::Index>(alphas.size()));
      set.outputs.resize(n, static_cast<Eigen::Index>(alphas.size()));
    }
    set.inputs.col(static_cast<Eigen::Index>(a))  = model.b_full;
    set.outputs.col(static_cast<Eigen::Index>(a)) = model.c_vol;

    FullStepper stepper(model, dt);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::size_t next  = 0;
    for (std::size_t k = 0; k < steps && next < excitation.samples; ++k) {
      x = stepper.step(x, u[k]);
      if (!x.allFinite()) { throw NumericalError("non-finite state while collecting snapshots"); }
      // sample instants (next+1)*steps/samples, 1-based step count
      if ((k + 1) * excitation.samples >= (next + 1) * steps) { set.states.col(static_cast<Eigen::Index>(col++)) = x; ++next; }
    }
  }
  return set;
}

struct PodBasis
{
  Eigen::MatrixXd v;
  Eigen::VectorXd singular_values;
  /// sum_{i<=r} s_i^2 / sum s_i^2
  double energy_ratio = 0;

  Eigen::Index rank() const { return v.cols(); }
};

/// Numerical rank with a relative singular-value threshold.
inline Eigen::Index numerical_rank(const Eigen::VectorXd & sv, Eigen::Index rows, Eigen::Index cols)
{
  if (sv.size() == 0 || sv[0] <= 0) { return 0; }
  const double tol = sv[0] * static_cast<double>(std::max(rows, cols)) * 1e-13;
  return static_cast<Eigen::Index>((sv.array() > tol).count());
}

inline PodBasis pod(const Eigen::MatrixXd & snapshots, Eigen::Index rank)
{
  if (rank < 1 || rank > std::min(snapshots.rows(), snapshots.cols())) {
    throw RankError("POD rank must lie in [1, min(n, #snapshots)]");
  }
  if (!snapshots.allFinite()) { throw NumericalError("non-finite snapshots"); }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(snapshots, Eigen::ComputeThinU);
  const Eigen::VectorXd & sv = svd.singularValues();
  if (numerical_rank(sv, snapshots.rows(), snapshots.cols()) < rank) {
    throw RankError("requested POD rank exceeds the numerical rank of the snapshots");
  }
  PodBasis basis;
  basis.v               = svd.matrixU().leftCols(rank);
  basis.singular_values = sv;
  const double total    = sv.squaredNorm();
  basis.energy_ratio    = sv.head(rank).squaredNorm() / total;
  return basis;
}

/**
 * @brief Discrete empirical interpolation of a vector family.
 *
 * f ~= interp * f[idx], interp = u (P^T u)^{-1}.
 */
struct DeimOperator
{
  Eigen::MatrixXd u;
  std::vector<Eigen::Index> idx;
  Eigen::MatrixXd interp;

  Eigen::Index order() const { return static_cast<Eigen::Index>(idx.size()); }

  Eigen::VectorXd sample(const Eigen::VectorXd & f) const
  {
    Eigen::VectorXd s(order());
    for (Eigen::Index l = 0; l < order(); ++l) { s[l] = f[idx[static_cast<std::size_t>(l)]]; }
    return s;
  }

  Eigen::VectorXd reconstruct(const Eigen::VectorXd & f) const { return interp * sample(f); }
};

/// Greedy DEIM point selection on the leading p left singular vectors of `snapshots`.
inline DeimOperator deim(const Eigen::MatrixXd & snapshots, Eigen::Index p)
{
  if (p < 1) { throw RankError("DEIM order must be >= 1"); }
  const PodBasis basis = pod(snapshots, p);
  const Eigen::MatrixXd & u = basis.v;

  DeimOperator op;
  op.u = u;
  Eigen::Index first;
  u.col(0).cwiseAbs().maxCoeff(&first);
  op.idx.push_back(first);

  for (Eigen::Index l = 1; l < p; ++l) {
    Eigen::MatrixXd pu(l, l);
    Eigen::VectorXd pr(l);
    for (Eigen::Index a = 0; a < l; ++a) {
      pu.row(a) = u.row(op.idx[static_cast<std::size_t>(a)]).head(l);
      pr[a]     = u(op.idx[static_cast<std::size_t>(a)], l);
    }
    const Eigen::VectorXd c   = pu.partialPivLu().solve(pr);
    const Eigen::VectorXd res = u.col(l) - u.leftCols(l) * c;
    Eigen::Index next;
    res.cwiseAbs().maxCoeff(&next);
    if (std::find(op.idx.begin(), op.idx.end(), next) != op.idx.end()) {
      throw NumericalError("DEIM selected a duplicate index");
    }
    op.idx.push_back(next);
  }

  Eigen::MatrixXd pu(p, p);
  for (Eigen::Index a = 0; a < p; ++a) { pu.row(a) = u.row(op.idx[static_cast<std::size_t>(a)]); }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(pu);
  if (!lu.isInvertible()) { throw NumericalError("sampled DEIM basis is singular"); }
  op.interp = u * lu.inverse();
  return op;
}

/**
 * @brief DEIM block of the reduced model: r x p projected interpolation matrix
 * and the closed-form stencils of the p sampled full-order entries.
 */
struct SampledVector
{
  std::vector<Eigen::Index> idx;
  std::vector<EntryStencil> stencils;
  /// v^T u (P^T u)^{-1}
  Eigen::MatrixXd proj;

  Eigen::Index order() const { return static_cast<Eigen::Index>(idx.size()); }
};

/// Evaluate alpha clamped into the estimator's interval.
struct ClampedAlpha
{
  double value;
  bool clamped;
};

/**
 * @brief Discrete-time parametric surrogate
 *   x_{k+1} = a_d x_k + b(alpha) u_k,  y_vol = c_vol(alpha) x_k,  y_peak = c_peak x_k.
 *
 * b(alpha) = a_d * dt * (v^T b_full)(alpha) under DEIM.
 */
struct ReducedModel
{
  double dt = 0;
  Eigen::MatrixXd a_r;
  Eigen::MatrixXd a_d;
  Eigen::RowVectorXd c_peak_r;
  SampledVector input;
  SampledVector output;

  AttenuationLaw law;
  double vol_sign = 1.0;
  double z_b = 0, z_e = 0;

  double alpha_min = 0.2, alpha_max = 2.0;
  std::vector<double> training_alphas;
  double pod_energy = 0;

  /// derived at finalize(): dt a_d proj_b (r x p_b) and c_peak (I - a_d)^{-1} dt a_d proj_b (1 x p_b)
  Eigen::MatrixXd b_map;
  Eigen::RowVectorXd gain_row;

  /// fixed-capacity sample vector; keeps the per-step evaluations off the heap
  using Samples = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 32, 1>;
  static constexpr Eigen::Index max_samples = 32;

  Eigen::Index order() const { return a_d.rows(); }

  ClampedAlpha clamp_alpha(double alpha) const
  {
    const double c = std::clamp(alpha, alpha_min, alpha_max);
    return {c, c != alpha};
  }

  /// Recompute b_map and gain_row from a_d, dt, proj and c_peak_r.
  void finalize()
  {
    const auto r = order();
    if (input.order() > max_samples || output.order() > max_samples) {
      throw ConfigError("DEIM order exceeds the supported maximum of 32");
    }
    if (a_d.cols() != r || input.proj.rows() != r || output.proj.rows() != r || c_peak_r.size() != r) {
      throw ModelError("reduced model blocks have inconsistent shapes");
    }
    b_map = dt * (a_d * input.proj);
    const Eigen::MatrixXd ima = Eigen::MatrixXd::Identity(r, r) - a_d;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(ima);
    if (!lu.isInvertible()) { throw NumericalError("I - a_d is singular (no steady state)"); }
    gain_row = c_peak_r * lu.solve(b_map);
  }

  void input_samples(double alpha, Samples & s) const
  {
    const double a = clamp_alpha(alpha).value;
    s.resize(input.order());
    for (Eigen::Index l = 0; l < input.order(); ++l) {
      s[l] = eval_input_entry(input.stencils[static_cast<std::size_t>(l)], law, a);
    }
  }

  void input_samples_dalpha(double alpha, Samples & s) const
  {
    const double a = clamp_alpha(alpha).value;
    s.resize(input.order());
    for (Eigen::Index l = 0; l < input.order(); ++l) {
      s[l] = eval_input_entry_dalpha(input.stencils[static_cast<std::size_t>(l)], law, a);
    }
  }

  /// continuous-time reduced input v^T b_full(alpha) under DEIM
  Eigen::VectorXd b_continuous(double alpha) const
  {
    Samples s;
    input_samples(alpha, s);
    return input.proj * s;
  }

  /// b(alpha) written into `out` (size r) without allocating
  void b_into(double alpha, Eigen::Ref<Eigen::VectorXd> out) const
  {
    Samples s;
    input_samples(alpha, s);
    out.noalias() = b_map * s;
  }

  Eigen::VectorXd b(double alpha) const
  {
    Eigen::VectorXd out(order());
    b_into(alpha, out);
    return out;
  }

  Eigen::VectorXd db_dalpha(double alpha) const
  {
    Samples s;
    input_samples_dalpha(alpha, s);
    return b_map * s;
  }

  Eigen::RowVectorXd c_vol(double alpha) const
  {
    const double a = clamp_alpha(alpha).value;
    Samples s(output.order());
    for (Eigen::Index l = 0; l < output.order(); ++l) {
      s[l] = eval_vol_entry(output.stencils[static_cast<std::size_t>(l)], law, a, vol_sign, z_b, z_e);
    }
    return (output.proj * s).transpose();
  }

  Eigen::RowVectorXd dcvol_dalpha(double alpha) const
  {
    const double a = clamp_alpha(alpha).value;
    Samples s(output.order());
    for (Eigen::Index l = 0; l < output.order(); ++l) {
      s[l] = eval_vol_entry_dalpha(output.stencils[static_cast<std::size_t>(l)], law, a, vol_sign, z_b, z_e);
    }
    return (output.proj * s).transpose();
  }

  Eigen::VectorXd step(const Eigen::VectorXd & x, double u, double alpha) const { return a_d * x + b(alpha) * u; }

  double y_vol(const Eigen::VectorXd & x, double alpha) const { return c_vol(alpha).dot(x); }
  double y_peak(const Eigen::VectorXd & x) const { return c_peak_r.dot(x); }

  /// steady-state peak per unit input, c_peak (I - a_d)^{-1} b(alpha)
  double peak_gain(double alpha) const
  {
    Samples s;
    input_samples(alpha, s);
    return gain_row.dot(s);
  }
};

inline SampledVector make_sampled_vector(
  const DeimOperator & op, const PodBasis & basis, const std::function<EntryStencil(std::size_t)> & stencil)
{
  SampledVector sv;
  sv.idx  = op.idx;
  sv.proj = basis.v.transpose() * op.interp;
  for (auto i : op.idx) { sv.stencils.push_back(stencil(static_cast<std::size_t>(i))); }
  return sv;
}

inline ReducedModel reduce_and_discretize(
  const FullOrderModel & full, const PodBasis & basis, const DeimOperator & deim_b, const DeimOperator & deim_c,
  double dt)
{
  if (!(dt > 0)) { throw DomainError("time step must be > 0"); }
  const auto & cfg = full.config;
  const auto r     = basis.rank();

  ReducedModel rom;
  rom.dt       = dt;
  rom.a_r      = basis.v.transpose() * (full.a_full * basis.v);
  const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(r, r) - dt * rom.a_r;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible()) { throw NumericalError("I - dt*A_r is not invertible"); }
  rom.a_d      = lu.inverse();
  rom.c_peak_r = full.c_peak.transpose() * basis.v;
  rom.input    = make_sampled_vector(deim_b, basis, [&](std::size_t i) {
    return input_stencil(full.grid, cfg.geometry, cfg.material, i);
  });
  rom.output   = make_sampled_vector(deim_c, basis, [&](std::size_t i) {
    return vol_stencil(full.grid, cfg.geometry, i, cfg.region);
  });
  rom.law        = AttenuationLaw(cfg.geometry, full.absorption);
  rom.vol_sign   = sign_value(cfg.sign);
  rom.z_b        = cfg.geometry.z_b;
  rom.z_e        = cfg.geometry.z_e;
  rom.pod_energy = basis.energy_ratio;
  rom.finalize();
  return rom;
}

/// Spectral radius of a small dense matrix.
inline double spectral_radius(const Eigen::MatrixXd & m)
{
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

/// Offline settings for the whole snapshot -> POD -> DEIM -> discretize pipeline.
struct RomSettings
{
  Eigen::Index rank    = 6;
  Eigen::Index deim_b  = 4;
  Eigen::Index deim_c  = 4;
  std::vector<double> training_alphas = {0.3, 0.5, 0.7363, 0.9, 1.1, 1.5};
  Excitation excitation;
  double alpha_min = 0.2, alpha_max = 2.0;
};

/**
 * @brief Build a reduced model for one time step.
 *
 * The DEIM orders are capped at the numerical rank of the vector snapshots; the
 * alpha families of b_full and c_vol span only as many directions as there are
 * distinct exponentials of alpha over the cells touching the RPE.
 */
inline ReducedModel build_reduced_model(const PhysicalConfig & cfg, const RomSettings & settings, double dt)
{
  const FullOrderModel reference = FullOrderModel::assemble(cfg, settings.training_alphas.front());
  const SnapshotSet snaps        = collect_snapshots(
    [&](double a) { return reference.with_alpha(a); }, settings.training_alphas, settings.excitation, dt);

  const PodBasis basis = pod(snaps.states, settings.rank);

  auto capped = [](const Eigen::MatrixXd & m, Eigen::Index p) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    return std::min(p, numerical_rank(svd.singularValues(), m.rows(), m.cols()));
  };
  const DeimOperator db = deim(snaps.inputs, capped(snaps.inputs, settings.deim_b));
  const DeimOperator dc = deim(snaps.outputs, capped(snaps.outputs, settings.deim_c));

  ReducedModel rom    = reduce_and_discretize(reference, basis, db, dc, dt);
  rom.alpha_min       = settings.alpha_min;
  rom.alpha_max       = settings.alpha_max;
  rom.training_alphas = settings.training_alphas;
  if (!(spectral_radius(rom.a_d) < 1.0)) { throw NumericalError("reduced model is not discrete-time stable"); }
  return rom;
}

}  // namespace retmpc

#endif  // RETMPC__MOR_HPP_
