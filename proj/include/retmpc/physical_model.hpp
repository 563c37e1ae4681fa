#ifndef RETMPC__PHYSICAL_MODEL_HPP_
#define RETMPC__PHYSICAL_MODEL_HPP_

/**
 * @file
 * @brief Full-order axisymmetric heat-diffusion model of the irradiated fundus.
 *
 * The temperature increase x(t, r, z) obeys rho*cp*x_t - k*Lap(x) = source with
 * homogeneous Dirichlet data on the outer cylinder wall and on both depth faces.
 * The laser source is a Lambert-Beer profile confined to the inner cylinder of
 * radius r_inner. Spatial discretization is a conservative 5-point scheme on a
 * uniform (r, z) grid; the axis r = 0 is a state node.
 */

#include <Eigen/Core>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"

namespace retmpc {

struct MaterialConstants
{
  /// density (kg/m^3)
  double rho = 993.0;
  /// heat capacity (J/(kg K))
  double cp = 4176.0;
  /// thermal conductivity (W/(m K))
  double k = 0.627;

  double diffusivity() const { return k / (rho * cp); }

  void validate() const
  {
    if (!(rho > 0) || !(cp > 0) || !(k > 0)) {
      throw ConfigError("material constants must be strictly positive");
    }
  }
};

/**
 * @brief Cylindrical computational domain with depth-layered tissue.
 *
 * Depth is measured from the first Dirichlet face (z = 0) along the beam.
 * layer_bounds delimits the layers; rpe_layer and choroid_layer index into them.
 */
struct Geometry
{
  double r_outer = 1e-3;
  double r_inner = 1e-4;
  /// pre-layer | neural retina | RPE | choroid | post-layer
  std::vector<double> layer_bounds = {0.0, 1e-4, 3e-4, 3.1e-4, 5.6e-4, 1e-3};
  std::size_t rpe_layer     = 2;
  std::size_t choroid_layer = 3;
  double z_center = 3.05e-4;
  double z_b      = 3e-4;
  double z_e      = 5.6e-4;

  double depth() const { return layer_bounds.back(); }
  std::size_t layer_count() const { return layer_bounds.size() - 1; }
  double rpe_lo() const { return layer_bounds[rpe_layer]; }
  double rpe_hi() const { return layer_bounds[rpe_layer + 1]; }
  double choroid_lo() const { return layer_bounds[choroid_layer]; }
  double choroid_hi() const { return layer_bounds[choroid_layer + 1]; }

  void validate() const
  {
    if (!(r_inner > 0) || !(r_inner < r_outer)) {
      throw ConfigError("geometry requires 0 < r_inner < r_outer");
    }
    if (layer_bounds.size() < 2) { throw ConfigError("geometry needs at least one layer"); }
    if (layer_bounds.front() != 0.0) { throw ConfigError("layer_bounds must start at depth 0"); }
    for (std::size_t i = 1; i < layer_bounds.size(); ++i) {
      if (!(layer_bounds[i] > layer_bounds[i - 1])) {
        throw ConfigError("layer_bounds must be strictly increasing");
      }
    }
    if (rpe_layer >= layer_count() || choroid_layer >= layer_count() || rpe_layer == choroid_layer) {
      throw ConfigError("rpe_layer / choroid_layer must name two distinct layers");
    }
    if (!(z_center >= rpe_lo() && z_center <= rpe_hi())) {
      throw ConfigError("z_center must lie inside the RPE layer");
    }
    const double abs_lo = std::min(rpe_lo(), choroid_lo());
    const double abs_hi = std::max(rpe_hi(), choroid_hi());
    if (!(z_b < z_e) || z_b > abs_lo || z_e < abs_hi || z_e > depth()) {
      throw ConfigError("[z_b, z_e] must be ordered, inside the domain and cover RPE and choroid");
    }
  }
};

/// Sign of the optical-depth exponent in the volume-temperature weight.
enum class VolWeightSign { plus, minus };

/// Radial region averaged by the volume-temperature output.
enum class VolMeanRegion { full_radius, inner_cylinder };

inline double sign_value(VolWeightSign s) { return s == VolWeightSign::plus ? 1.0 : -1.0; }

struct AbsorptionProfile
{
  /// RPE scaling factor
  double alpha = 1.0;
  /// reference RPE absorption (1/m)
  double mu_rpe_ref = 120400.0;
  /// choroid absorption (1/m)
  double mu_choroid = 2662.2;

  double mu_rpe() const { return alpha * mu_rpe_ref; }
};

inline void require_positive_alpha(double alpha)
{
  if (!(alpha > 0) || !std::isfinite(alpha)) {
    throw DomainError("absorption scaling alpha must be finite and > 0, got " + std::to_string(alpha));
  }
}

/**
 * @brief Piecewise-constant depth absorption and its optical depth.
 *
 * mu(z) = alpha*mu_rpe_ref on the RPE, mu_choroid on the choroid, 0 elsewhere.
 * The optical depth tau(z) = int_0^z mu is continuous and piecewise linear, so
 * cell integrals of mu*exp(+-tau) have closed forms.
 */
struct AttenuationLaw
{
  double rpe_lo = 0, rpe_hi = 0;
  double choroid_lo = 0, choroid_hi = 0;
  double mu_rpe_ref = 0;
  double mu_choroid = 0;

  AttenuationLaw() = default;
  AttenuationLaw(const Geometry & g, const AbsorptionProfile & a)
      : rpe_lo(g.rpe_lo()), rpe_hi(g.rpe_hi()), choroid_lo(g.choroid_lo()), choroid_hi(g.choroid_hi()),
        mu_rpe_ref(a.mu_rpe_ref), mu_choroid(a.mu_choroid)
  {}

  static double overlap(double z, double lo, double hi) { return std::clamp(z - lo, 0.0, hi - lo); }

  double mu(double z, double alpha) const
  {
    if (z >= rpe_lo && z < rpe_hi) { return alpha * mu_rpe_ref; }
    if (z >= choroid_lo && z < choroid_hi) { return mu_choroid; }
    return 0.0;
  }

  double optical_depth(double z, double alpha) const
  {
    return alpha * mu_rpe_ref * overlap(z, rpe_lo, rpe_hi) + mu_choroid * overlap(z, choroid_lo, choroid_hi);
  }

  /// d tau / d alpha
  double optical_depth_dalpha(double z) const { return mu_rpe_ref * overlap(z, rpe_lo, rpe_hi); }

  /// int_lo^hi mu exp(-tau) dz, the fraction of incident power absorbed in [lo, hi]
  double absorbed(double lo, double hi, double alpha) const
  {
    return std::exp(-optical_depth(lo, alpha)) - std::exp(-optical_depth(hi, alpha));
  }

  double absorbed_dalpha(double lo, double hi, double alpha) const
  {
    return -optical_depth_dalpha(lo) * std::exp(-optical_depth(lo, alpha))
         + optical_depth_dalpha(hi) * std::exp(-optical_depth(hi, alpha));
  }

  /// int_lo^hi mu exp(s*tau) dz for s = +-1
  double weight(double lo, double hi, double alpha, double s) const
  {
    if (!(hi > lo)) { return 0.0; }
    return s * (std::exp(s * optical_depth(hi, alpha)) - std::exp(s * optical_depth(lo, alpha)));
  }

  double weight_dalpha(double lo, double hi, double alpha, double s) const
  {
    if (!(hi > lo)) { return 0.0; }
    return optical_depth_dalpha(hi) * std::exp(s * optical_depth(hi, alpha))
         - optical_depth_dalpha(lo) * std::exp(s * optical_depth(lo, alpha));
  }
};

/**
 * @brief Uniform axisymmetric grid over the state (interior) nodes.
 *
 * Radial nodes r_i = i*dr, i = 0..n_r-1, with the Dirichlet wall at r = n_r*dr = R.
 * Depth nodes z_j = (j+1)*dz, j = 0..n_z-1, with Dirichlet faces at z = 0 and
 * z = (n_z+1)*dz = depth. Flat index = j*n_r + i.
 */
struct Grid
{
  std::size_t n_r = 0, n_z = 0;
  double dr = 0, dz = 0;
  std::vector<double> r, z;

  std::size_t size() const { return n_r * n_z; }
  std::size_t index(std::size_t i, std::size_t j) const { return j * n_r + i; }
  std::size_t radial_of(std::size_t idx) const { return idx % n_r; }
  std::size_t depth_of(std::size_t idx) const { return idx / n_r; }

  double r_lo(std::size_t i) const { return i == 0 ? 0.0 : r[i] - 0.5 * dr; }
  double r_hi(std::size_t i) const { return r[i] + 0.5 * dr; }
  double z_lo(std::size_t j) const { return z[j] - 0.5 * dz; }
  double z_hi(std::size_t j) const { return z[j] + 0.5 * dz; }

  /// area of the annular control cell of radial node i
  double annulus_area(std::size_t i) const
  {
    const double lo = r_lo(i), hi = r_hi(i);
    return std::numbers::pi * (hi * hi - lo * lo);
  }

  double max_cell_size() const { return std::max(dr, dz); }

  /// uniform grid with n_r radial and n_z depth unknowns, no precondition checks
  static Grid uniform(double r_outer, double depth, std::size_t n_r, std::size_t n_z)
  {
    Grid g;
    g.n_r = n_r;
    g.n_z = n_z;
    g.dr  = r_outer / static_cast<double>(n_r);
    g.dz  = depth / static_cast<double>(n_z + 1);
    g.r.resize(n_r);
    g.z.resize(n_z);
    for (std::size_t i = 0; i < n_r; ++i) { g.r[i] = static_cast<double>(i) * g.dr; }
    for (std::size_t j = 0; j < n_z; ++j) { g.z[j] = static_cast<double>(j + 1) * g.dz; }
    return g;
  }
};

inline Grid build_grid(const Geometry & geometry, std::size_t n_r, std::size_t n_z)
{
  geometry.validate();
  if (n_r < 4) { throw ConfigError("n_r must be >= 4"); }
  if (n_z < geometry.layer_count() + 2) { throw ConfigError("n_z must be >= number of layers + 2"); }
  Grid g = Grid::uniform(geometry.r_outer, geometry.depth(), n_r, n_z);
  if (geometry.r_inner > geometry.r_outer - 0.5 * g.dr) {
    throw ConfigError("irradiated cylinder reaches into the Dirichlet boundary cell");
  }
  if (geometry.z_b < 0.5 * g.dz || geometry.z_e > geometry.depth() - 0.5 * g.dz) {
    throw ConfigError("[z_b, z_e] reaches into a Dirichlet boundary cell; refine n_z");
  }
  return g;
}

/**
 * @brief Discrete (k/(rho cp)) * Laplacian with homogeneous Dirichlet boundary.
 *
 * Off-axis: x_rr + x_r/r by the conservative three-point stencil
 * ((1 + dr/2r) x_{i+1} - 2 x_i + (1 - dr/2r) x_{i-1}) / dr^2.
 * On the axis the symmetry condition gives 2 x_rr = 4 (x_1 - x_0) / dr^2.
 */
inline Eigen::SparseMatrix<double> assemble_system_matrix(const Grid & grid, const MaterialConstants & material)
{
  material.validate();
  const double kappa = material.diffusivity();
  const double idr2 = 1.0 / (grid.dr * grid.dr), idz2 = 1.0 / (grid.dz * grid.dz);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(5 * grid.size());
  for (std::size_t j = 0; j < grid.n_z; ++j) {
    for (std::size_t i = 0; i < grid.n_r; ++i) {
      const auto row = static_cast<int>(grid.index(i, j));
      double diag    = 0;
      if (i == 0) {
        diag -= 4.0 * idr2;
        if (grid.n_r > 1) { trip.emplace_back(row, static_cast<int>(grid.index(1, j)), kappa * 4.0 * idr2); }
      } else {
        const double h = 0.5 * grid.dr / grid.r[i];
        diag -= 2.0 * idr2;
        trip.emplace_back(row, static_cast<int>(grid.index(i - 1, j)), kappa * (1.0 - h) * idr2);
        if (i + 1 < grid.n_r) { trip.emplace_back(row, static_cast<int>(grid.index(i + 1, j)), kappa * (1.0 + h) * idr2); }
      }
      diag -= 2.0 * idz2;
      if (j > 0) { trip.emplace_back(row, static_cast<int>(grid.index(i, j - 1)), kappa * idz2); }
      if (j + 1 < grid.n_z) { trip.emplace_back(row, static_cast<int>(grid.index(i, j + 1)), kappa * idz2); }
      trip.emplace_back(row, row, kappa * diag);
    }
  }
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  return a;
}

/// Fraction of the radial control cell of node i that lies inside the irradiated disk.
inline double irradiated_fraction(const Grid & grid, const Geometry & geometry, std::size_t i)
{
  const double lo = grid.r_lo(i), hi = std::min(grid.r_hi(i), geometry.r_inner);
  if (hi <= lo) { return 0.0; }
  return (hi * hi - lo * lo) / (grid.r_hi(i) * grid.r_hi(i) - lo * lo);
}

/**
 * @brief Location of one entry of b_full or c_vol in closed form.
 *
 * b_full[idx](alpha) = scale * law.absorbed(z_lo, z_hi, alpha)
 * c_vol[idx](alpha)  = scale * law.weight(z_lo, z_hi, alpha, s) / law.weight(z_b, z_e, alpha, s)
 *
 * Evaluating a handful of these is what makes the interpolated reduced model cheap.
 */
struct EntryStencil
{
  double scale = 0;
  double z_lo = 0, z_hi = 0;
};

/// Source entries are control-cell averages so the absorbed power is exact at any resolution.
inline EntryStencil input_stencil(
  const Grid & grid, const Geometry & geometry, const MaterialConstants & material, std::size_t idx)
{
  const std::size_t i = grid.radial_of(idx), j = grid.depth_of(idx);
  const double area   = std::numbers::pi * geometry.r_inner * geometry.r_inner;
  return {
    irradiated_fraction(grid, geometry, i) / (area * material.rho * material.cp * grid.dz),
    grid.z_lo(j),
    grid.z_hi(j),
  };
}

/// Radial averaging weight of node i (area of its control cell inside the averaged region).
inline double radial_mean_area(
  const Grid & grid, const Geometry & geometry, VolMeanRegion region, std::size_t i)
{
  const double a = grid.annulus_area(i);
  return region == VolMeanRegion::full_radius ? a : a * irradiated_fraction(grid, geometry, i);
}

/// Volume-output entries: radial area-weighted mean times the depth weight of the cell clipped to [z_b, z_e].
inline EntryStencil vol_stencil(
  const Grid & grid, const Geometry & geometry, std::size_t idx, VolMeanRegion region = VolMeanRegion::full_radius)
{
  const std::size_t i = grid.radial_of(idx), j = grid.depth_of(idx);
  double total_area   = 0;
  for (std::size_t ii = 0; ii < grid.n_r; ++ii) { total_area += radial_mean_area(grid, geometry, region, ii); }
  return {
    radial_mean_area(grid, geometry, region, i) / total_area,
    std::max(grid.z_lo(j), geometry.z_b),
    std::min(grid.z_hi(j), geometry.z_e),
  };
}

inline double eval_input_entry(const EntryStencil & e, const AttenuationLaw & law, double alpha)
{
  return e.scale * law.absorbed(e.z_lo, e.z_hi, alpha);
}

inline double eval_input_entry_dalpha(const EntryStencil & e, const AttenuationLaw & law, double alpha)
{
  return e.scale * law.absorbed_dalpha(e.z_lo, e.z_hi, alpha);
}

inline double eval_vol_entry(
  const EntryStencil & e, const AttenuationLaw & law, double alpha, double s, double z_b, double z_e)
{
  return e.scale * law.weight(e.z_lo, e.z_hi, alpha, s) / law.weight(z_b, z_e, alpha, s);
}

inline double eval_vol_entry_dalpha(
  const EntryStencil & e, const AttenuationLaw & law, double alpha, double s, double z_b, double z_e)
{
  const double g  = law.weight(e.z_lo, e.z_hi, alpha, s);
  const double dg = law.weight_dalpha(e.z_lo, e.z_hi, alpha, s);
  const double w  = law.weight(z_b, z_e, alpha, s);
  const double dw = law.weight_dalpha(z_b, z_e, alpha, s);
  return e.scale * (dg * w - g * dw) / (w * w);
}

/**
 * @brief Input map b_full(alpha) in K/(s W).
 *
 * Node (i, j) receives chi_i * (1/dz) int_cell mu e^{-tau} / (pi R_I^2 rho cp), where chi_i is the
 * irradiated share of the radial cell. Zero outside the inner cylinder and non-absorbing depths.
 */
inline Eigen::VectorXd assemble_input_vector(
  const Grid & grid, const AbsorptionProfile & absorption, const Geometry & geometry,
  const MaterialConstants & material = {})
{
  require_positive_alpha(absorption.alpha);
  const AttenuationLaw law(geometry, absorption);
  Eigen::VectorXd b(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    b[static_cast<Eigen::Index>(idx)] =
      eval_input_entry(input_stencil(grid, geometry, material, idx), law, absorption.alpha);
  }
  return b;
}

/**
 * @brief Volume-temperature functional c_vol(alpha), stored as a column vector.
 *
 * Radial area-weighted mean at each depth, integrated against mu e^{s tau} over [z_b, z_e]
 * and normalized so that a uniform temperature maps to itself.
 */
inline Eigen::VectorXd assemble_vol_output(
  const Grid & grid, const AbsorptionProfile & absorption, const Geometry & geometry,
  VolWeightSign sign = VolWeightSign::plus, VolMeanRegion region = VolMeanRegion::full_radius)
{
  require_positive_alpha(absorption.alpha);
  const AttenuationLaw law(geometry, absorption);
  const double s = sign_value(sign);
  Eigen::VectorXd c(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    c[static_cast<Eigen::Index>(idx)] =
      eval_vol_entry(vol_stencil(grid, geometry, idx, region), law, absorption.alpha, s, geometry.z_b, geometry.z_e);
  }
  return c;
}

/// Point evaluation at (r = 0, z_center), linear interpolation in depth.
inline Eigen::VectorXd assemble_peak_output(const Grid & grid, const Geometry & geometry)
{
  const double zc = geometry.z_center;
  if (grid.n_z == 0 || zc < grid.z.front() || zc > grid.z.back()) {
    throw ConfigError("z_center lies outside the interior depth nodes");
  }
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
  const double pos  = zc / grid.dz - 1.0;
  auto j0           = static_cast<std::size_t>(std::floor(pos));
  j0                = std::min(j0, grid.n_z - 1);
  const double frac = pos - static_cast<double>(j0);
  if (frac <= 1e-12 || j0 + 1 >= grid.n_z) {
    c[static_cast<Eigen::Index>(grid.index(0, j0))] = 1.0;
  } else if (frac >= 1.0 - 1e-12) {
    c[static_cast<Eigen::Index>(grid.index(0, j0 + 1))] = 1.0;
  } else {
    c[static_cast<Eigen::Index>(grid.index(0, j0))]     = 1.0 - frac;
    c[static_cast<Eigen::Index>(grid.index(0, j0 + 1))] = frac;
  }
  return c;
}

/// Everything needed to assemble a full-order model at some alpha.
struct PhysicalConfig
{
  Geometry geometry;
  MaterialConstants material;
  double mu_rpe_ref     = 120400.0;
  double mu_choroid     = 2662.2;
  VolWeightSign sign    = VolWeightSign::plus;
  VolMeanRegion region  = VolMeanRegion::inner_cylinder;
  std::size_t n_r       = 30;
  std::size_t n_z       = 80;

  AbsorptionProfile absorption(double alpha) const { return {alpha, mu_rpe_ref, mu_choroid}; }
};

/**
 * @brief Continuous-time full-order model x' = A x + b(alpha) u, y = c^T x.
 */
struct FullOrderModel
{
  PhysicalConfig config;
  Grid grid;
  AbsorptionProfile absorption;
  Eigen::SparseMatrix<double> a_full;
  Eigen::VectorXd b_full;
  Eigen::VectorXd c_vol;
  Eigen::VectorXd c_peak;

  std::size_t size() const { return grid.size(); }
  double alpha() const { return absorption.alpha; }

  double y_vol(const Eigen::VectorXd & x) const { return c_vol.dot(x); }
  double y_peak(const Eigen::VectorXd & x) const { return c_peak.dot(x); }

  static FullOrderModel assemble(const PhysicalConfig & cfg, double alpha)
  {
    FullOrderModel m;
    m.config     = cfg;
    m.grid       = build_grid(cfg.geometry, cfg.n_r, cfg.n_z);
    m.absorption = cfg.absorption(alpha);
    m.a_full     = assemble_system_matrix(m.grid, cfg.material);
    m.b_full     = assemble_input_vector(m.grid, m.absorption, cfg.geometry, cfg.material);
    m.c_vol      = assemble_vol_output(m.grid, m.absorption, cfg.geometry, cfg.sign, cfg.region);
    m.c_peak     = assemble_peak_output(m.grid, cfg.geometry);
    return m;
  }

  /// same grid and operator, different absorption
  FullOrderModel with_alpha(double alpha) const
  {
    FullOrderModel m = *this;
    m.absorption     = config.absorption(alpha);
    m.b_full         = assemble_input_vector(grid, m.absorption, config.geometry, config.material);
    m.c_vol          = assemble_vol_output(grid, m.absorption, config.geometry, config.sign, config.region);
    return m;
  }
};

/**
 * @brief Implicit Euler stepper x+ = (I - dt A)^{-1} (x + dt b u).
 *
 * The sparse LU factorization is computed once at construction.
 */
class FullStepper
{
public:
  FullStepper(const FullOrderModel & model, double dt) : dt_(dt), b_(model.b_full)
  {
    if (!(dt > 0)) { throw DomainError("time step must be > 0"); }
    const auto n = static_cast<Eigen::Index>(model.size());
    Eigen::SparseMatrix<double> id(n, n);
    id.setIdentity();
    Eigen::SparseMatrix<double> m = id - dt * model.a_full;
    m.makeCompressed();
    lu_.analyzePattern(m);
    lu_.factorize(m);
    if (lu_.info() != Eigen::Success) { throw NumericalError("implicit Euler factorization failed"); }
    rhs_.resize(n);
  }

  double dt() const { return dt_; }

  Eigen::VectorXd step(const Eigen::VectorXd & x, double u)
  {
    rhs_.noalias() = x + (dt_ * u) * b_;
    return lu_.solve(rhs_);
  }

  /// apply the implicit Euler map without input, (I - dt A)^{-1} v
  Eigen::VectorXd propagate(const Eigen::VectorXd & v) { return lu_.solve(v); }

private:
  double dt_;
  Eigen::VectorXd b_;
  Eigen::VectorXd rhs_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

/// Free-function form; factorizes on every call, use FullStepper in loops.
inline Eigen::VectorXd step_full(const FullOrderModel & model, const Eigen::VectorXd & x, double u, double dt)
{
  if (!x.allFinite()) { throw DomainError("state must be finite"); }
  FullStepper s(model, dt);
  return s.step(x, u);
}

/// Steady state -A^{-1} b u.
inline Eigen::VectorXd steady_state(const FullOrderModel & model, double u)
{
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(model.a_full);
  if (lu.info() != Eigen::Success) { throw NumericalError("system matrix is singular"); }
  Eigen::VectorXd rhs = -u * model.b_full;
  return lu.solve(rhs);
}

/// Spectral radius of (I - dt A)^{-1} by power iteration.
inline double implicit_euler_spectral_radius(const FullOrderModel & model, double dt, int iterations = 300)
{
  FullStepper s(model, dt);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(model.size()));
  v.normalize();
  double lambda = 0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd w = s.propagate(v);
    lambda            = w.norm();
    v                 = w / lambda;
  }
  return lambda;
}

}  // namespace retmpc

#endif  // RETMPC__PHYSICAL_MODEL_HPP_
