#ifndef RETMPC__HARNESS_HPP_
#define RETMPC__HARNESS_HPP_

/**
 * @file
 * @brief Closed-loop scenario simulation, latency profiling, grid refinement
 * study and trace persistence.
 *
 * Estimator and controller see the plant only through Plant::measure(); the
 * true outputs are read through Plant::truth() for the trace and nothing else.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "ekf.hpp"
#include "errors.hpp"
#include "mor.hpp"
#include "mpc.hpp"
#include "physical_model.hpp"
#include "rom_io.hpp"

namespace retmpc {

struct PlantOutputs
{
  double y_vol = 0;
  double y_peak = 0;
};

/// Simulated process; stepping and the noise-free measurable output are all the loop may use.
class Plant
{
public:
  virtual ~Plant() = default;
  virtual void step(double u) = 0;
  /// noise-free volume temperature (K); the harness adds sensor noise
  virtual double measure() const = 0;
  /// true outputs, for logging only
  virtual PlantOutputs truth() const = 0;
};

class FullPlant final : public Plant
{
public:
  FullPlant(FullOrderModel model, double dt)
  : model_(std::move(model)), stepper_(model_, dt), x_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model_.size())))
  {}

  void step(double u) override { x_ = stepper_.step(x_, u); }
  double measure() const override { return model_.y_vol(x_); }
  PlantOutputs truth() const override { return {model_.y_vol(x_), model_.y_peak(x_)}; }

  const Eigen::VectorXd & state() const { return x_; }
  const FullOrderModel & model() const { return model_; }

private:
  FullOrderModel model_;
  FullStepper stepper_;
  Eigen::VectorXd x_;
};

class ReducedPlant final : public Plant
{
public:
  ReducedPlant(ReducedModel model, double alpha)
  : model_(std::move(model)), alpha_(alpha), x_(Eigen::VectorXd::Zero(model_.order())), b_(model_.b(alpha))
  {}

  void step(double u) override { x_ = model_.a_d * x_ + b_ * u; }
  double measure() const override { return model_.y_vol(x_, alpha_); }
  PlantOutputs truth() const override { return {model_.y_vol(x_, alpha_), model_.y_peak(x_)}; }

  const Eigen::VectorXd & state() const { return x_; }
  double alpha() const { return alpha_; }

private:
  ReducedModel model_;
  double alpha_;
  Eigen::VectorXd x_;
  Eigen::VectorXd b_;
};

namespace flag {
inline constexpr unsigned input_active = 1u << 0;
inline constexpr unsigned state_active = 1u << 1;
inline constexpr unsigned fallback_soft = 1u << 2;
inline constexpr unsigned fallback_off = 1u << 3;
inline constexpr unsigned max_iter = 1u << 4;
inline constexpr unsigned alpha_clamped = 1u << 5;
inline constexpr unsigned probe = 1u << 6;
inline constexpr unsigned deadline_miss = 1u << 7;
}  // namespace flag

/// Trace spelling of the flag bits, '|'-joined; "-" when none is set.
inline std::string flags_to_string(unsigned f)
{
  static const std::pair<unsigned, const char *> names[] = {
    {flag::input_active, "u_max"},   {flag::state_active, "y_max"}, {flag::fallback_soft, "soft"},
    {flag::fallback_off, "laser_off"}, {flag::max_iter, "max_iter"}, {flag::alpha_clamped, "alpha_clamp"},
    {flag::probe, "probe"},          {flag::deadline_miss, "deadline"}};
  std::string s;
  for (const auto & [bit, name] : names) {
    if (f & bit) {
      if (!s.empty()) { s += '|'; }
      s += name;
    }
  }
  return s.empty() ? "-" : s;
}

inline unsigned flags_from_string(const std::string & s)
{
  static const std::map<std::string, unsigned> names = {
    {"u_max", flag::input_active},   {"y_max", flag::state_active}, {"soft", flag::fallback_soft},
    {"laser_off", flag::fallback_off}, {"max_iter", flag::max_iter}, {"alpha_clamp", flag::alpha_clamped},
    {"probe", flag::probe},          {"deadline", flag::deadline_miss}};
  if (s == "-") { return 0; }
  unsigned f = 0;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '|')) {
    const auto it = names.find(tok);
    if (it == names.end()) { throw IoError("unknown trace flag '" + tok + "'"); }
    f |= it->second;
  }
  return f;
}

struct TraceRow
{
  std::int64_t step = 0;
  double t_s = 0;
  double u_w = 0;
  double yvol_meas = 0;
  double yvol_true = 0;
  double ypeak_true = 0;
  double ypeak_est = 0;
  double alpha_hat = 0;
  double u_ref = 0;
  std::int64_t qp_iters = 0;
  std::int64_t qp_time_ns = 0;
  std::int64_t loop_time_ns = 0;
  unsigned flags = 0;

  bool operator==(const TraceRow &) const = default;
};

struct ClosedLoopTrace
{
  std::vector<TraceRow> rows;

  double max_peak() const
  {
    double m = -qp_inf;
    for (const auto & r : rows) { m = std::max(m, r.ypeak_true); }
    return m;
  }

  bool any_flag(unsigned f) const
  {
    return std::any_of(rows.begin(), rows.end(), [f](const TraceRow & r) { return (r.flags & f) != 0; });
  }
};

inline constexpr const char * trace_header =
  "step,t_s,u_W,yvol_meas_K,yvol_true_K,ypeak_true_K,ypeak_est_K,alpha_hat,u_ref_W,qp_iters,qp_time_ns,loop_time_ns,"
  "flags";

inline std::string format_trace(const ClosedLoopTrace & trace)
{
  std::string out = trace_header;
  out += '\n';
  for (const auto & r : trace.rows) {
    out += std::to_string(r.step);
    for (double v : {r.t_s, r.u_w, r.yvol_meas, r.yvol_true, r.ypeak_true, r.ypeak_est, r.alpha_hat, r.u_ref}) {
      out += ',';
      out += format_double(v);
    }
    for (std::int64_t v : {r.qp_iters, r.qp_time_ns, r.loop_time_ns}) {
      out += ',';
      out += std::to_string(v);
    }
    out += ',';
    out += flags_to_string(r.flags);
    out += '\n';
  }
  return out;
}

inline void export_trace(const ClosedLoopTrace & trace, const std::string & path)
{
  std::ofstream f(path, std::ios::binary);
  if (!f) { throw IoError("cannot open trace file '" + path + "' for writing"); }
  f << format_trace(trace);
  f.flush();
  if (!f) { throw IoError("writing trace file '" + path + "' failed"); }
}

inline ClosedLoopTrace parse_trace(std::istream & is)
{
  std::string line;
  if (!std::getline(is, line) || line != trace_header) { throw IoError("trace header mismatch"); }
  ClosedLoopTrace t;
  while (std::getline(is, line)) {
    if (line.empty()) { continue; }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) { f.push_back(cell); }
    if (f.size() != 13) { throw IoError("trace row has " + std::to_string(f.size()) + " fields"); }
    auto real = [](const std::string & s) {
      double v      = 0;
      const auto rs = std::from_chars(s.data(), s.data() + s.size(), v);
      if (rs.ec != std::errc{} || rs.ptr != s.data() + s.size()) { throw IoError("bad number '" + s + "'"); }
      return v;
    };
    auto integer = [](const std::string & s) {
      std::int64_t v = 0;
      const auto rs  = std::from_chars(s.data(), s.data() + s.size(), v);
      if (rs.ec != std::errc{} || rs.ptr != s.data() + s.size()) { throw IoError("bad integer '" + s + "'"); }
      return v;
    };
    TraceRow r;
    r.step         = integer(f[0]);
    r.t_s          = real(f[1]);
    r.u_w          = real(f[2]);
    r.yvol_meas    = real(f[3]);
    r.yvol_true    = real(f[4]);
    r.ypeak_true   = real(f[5]);
    r.ypeak_est    = real(f[6]);
    r.alpha_hat    = real(f[7]);
    r.u_ref        = real(f[8]);
    r.qp_iters     = integer(f[9]);
    r.qp_time_ns   = integer(f[10]);
    r.loop_time_ns = integer(f[11]);
    r.flags        = flags_from_string(f[12]);
    t.rows.push_back(r);
  }
  return t;
}

inline ClosedLoopTrace load_trace(const std::string & path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) { throw IoError("cannot open trace file '" + path + "'"); }
  return parse_trace(f);
}

/// Options that do not change the simulated physics.
struct RunOptions
{
  /// record qp/loop times; off gives traces that are byte-reproducible
  bool timing = true;
};

/**
 * @brief Runs scenarios, caching reduced models and full-order factorizations
 * across runs with the same physical configuration.
 */
class ScenarioRunner
{
public:
  /// Reduced model for the scenario (built, or loaded from cfg.rom_artifact).
  const ReducedModel & reduced_model(const ScenarioConfig & cfg)
  {
    if (!cfg.rom_artifact.empty()) {
      auto it = loaded_.find(cfg.rom_artifact);
      if (it == loaded_.end()) { it = loaded_.emplace(cfg.rom_artifact, load_rom(cfg.rom_artifact)).first; }
      check_rate(it->second, cfg);
      return it->second;
    }
    const std::string key = physics_key(cfg) + rom_key(cfg);
    auto it               = roms_.find(key);
    if (it == roms_.end()) { it = roms_.emplace(key, build_reduced_model(cfg.physical, cfg.rom, cfg.dt())).first; }
    return it->second;
  }

  std::unique_ptr<Plant> make_plant(const ScenarioConfig & cfg)
  {
    if (cfg.plant == PlantKind::reduced) {
      return std::make_unique<ReducedPlant>(reduced_model(cfg), cfg.alpha_true);
    }
    const std::string pkey = physics_key(cfg);
    auto it                = full_.find(pkey);
    if (it == full_.end()) { it = full_.emplace(pkey, FullOrderModel::assemble(cfg.physical, cfg.alpha_true)).first; }
    return std::make_unique<FullPlant>(it->second.with_alpha(cfg.alpha_true), cfg.dt());
  }

  ClosedLoopTrace run(const ScenarioConfig & cfg, const RunOptions & opt = {})
  {
    cfg.validate();
    const ReducedModel & rom = reduced_model(cfg);
    auto plant               = make_plant(cfg);
    return run_with_plant(cfg, rom, *plant, opt);
  }

  /// Algorithm loop on a caller-supplied plant.
  static ClosedLoopTrace run_with_plant(
    const ScenarioConfig & cfg, const ReducedModel & rom, Plant & plant, const RunOptions & opt = {})
  {
    cfg.validate();
    check_rate(rom, cfg);
    using clock = std::chrono::steady_clock;
    const double dt         = cfg.dt();
    const std::int64_t n    = cfg.steps();
    const auto deadline_ns  = static_cast<std::int64_t>(std::llround(1e9 * dt));

    EkfConfig ekf_cfg = cfg.ekf;
    EkfState est      = EkfState::initial(rom.order(), ekf_cfg);
    MpcController mpc(rom, cfg.ocp, cfg.cost, ekf_cfg.alpha0, cfg.solver);

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    ClosedLoopTrace trace;
    trace.rows.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
      TraceRow row;
      row.step        = k;
      row.t_s         = static_cast<double>(k + 1) * dt;
      const auto t0   = clock::now();
      double u        = 0;
      unsigned flags  = 0;
      if (k < cfg.probe.steps) {
        u     = cfg.probe.power;
        flags = flag::probe;
        row.u_ref = mpc.state().u_ref;
      } else {
        const MpcDiagnostics & d = mpc.step(est.x_hat, est.alpha_hat);
        u                        = d.u_applied;
        row.u_ref                = d.u_ref;
        row.qp_iters             = d.iters;
        row.qp_time_ns           = d.solve_time_ns;
        if (d.input_active) { flags |= flag::input_active; }
        if (d.state_active) { flags |= flag::state_active; }
        if (d.fallback == Fallback::soft) { flags |= flag::fallback_soft; }
        if (d.fallback == Fallback::laser_off) { flags |= flag::fallback_off; }
        if (d.status == QpStatus::max_iter) { flags |= flag::max_iter; }
      }
      const auto t1 = clock::now();

      plant.step(u);
      const double y_meas = plant.measure() + (cfg.noise_std > 0 ? cfg.noise_std * noise(rng) : 0.0);

      const auto t2 = clock::now();
      est           = ekf_predict(est, u, rom, ekf_cfg);
      est           = ekf_update(est, y_meas, rom, ekf_cfg);
      const auto t3 = clock::now();

      const PlantOutputs truth = plant.truth();
      if (!std::isfinite(truth.y_peak) || !std::isfinite(truth.y_vol) || !est.x_hat.allFinite()) {
        throw RuntimeAbort("non-finite plant or estimator values at step " + std::to_string(k));
      }
      if (est.clamped) { flags |= flag::alpha_clamped; }

      row.u_w        = u;
      row.yvol_meas  = y_meas;
      row.yvol_true  = truth.y_vol;
      row.ypeak_true = truth.y_peak;
      row.ypeak_est  = rom.y_peak(est.x_hat);
      row.alpha_hat  = est.alpha_hat;
      if (opt.timing) {
        row.loop_time_ns = std::chrono::duration_cast<std::chrono::nanoseconds>((t1 - t0) + (t3 - t2)).count();
        if (row.loop_time_ns > deadline_ns) { flags |= flag::deadline_miss; }
      } else {
        row.qp_time_ns = 0;
      }
      row.flags = flags;
      trace.rows.push_back(row);
    }
    return trace;
  }

  static void check_rate(const ReducedModel & rom, const ScenarioConfig & cfg)
  {
    if (std::abs(rom.dt - cfg.dt()) > 1e-12 * cfg.dt()) {
      throw ConfigError(
        "reduced model time step " + format_double(rom.dt) + " s does not match the loop rate " +
        format_double(cfg.rate_hz) + " Hz");
    }
  }

private:
  static std::string physics_key(const ScenarioConfig & cfg)
  {
    ScenarioConfig k;
    k.physical = cfg.physical;
    k.rate_hz  = cfg.rate_hz;
    const std::string all = write_config(k);
    return all.substr(all.find("[geometry]"), all.find("[rom]") - all.find("[geometry]")) + format_double(cfg.rate_hz);
  }

  static std::string rom_key(const ScenarioConfig & cfg)
  {
    ScenarioConfig k;
    k.rom                 = cfg.rom;
    const std::string all = write_config(k);
    return all.substr(all.find("[rom]"), all.find("[solver]") - all.find("[rom]"));
  }

  std::map<std::string, ReducedModel> roms_;
  std::map<std::string, ReducedModel> loaded_;
  std::map<std::string, FullOrderModel> full_;
};

/// One-shot convenience wrapper.
inline ClosedLoopTrace run_closed_loop(const ScenarioConfig & cfg, const RunOptions & opt = {})
{
  ScenarioRunner runner;
  return runner.run(cfg, opt);
}

struct LatencyRow
{
  int horizon = 0;
  double qp_avg_ms = 0;
  double qp_max_ms = 0;
  /// step with the largest per-step median solve time (0 = first, cold-started solve)
  std::int64_t qp_argmax_step = 0;
  double loop_avg_ms = 0;
  double loop_max_ms = 0;
  std::int64_t deadline_misses = 0;
  double iters_avg = 0;
};

struct LatencyReport
{
  double rate_hz = 0;
  int repetitions = 0;
  std::vector<LatencyRow> rows;

  bool averages_monotone() const
  {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (!(rows[i].qp_avg_ms > rows[i - 1].qp_avg_ms)) { return false; }
    }
    return true;
  }
};

/**
 * @brief Per-horizon solve and loop timings over repeated closed-loop runs.
 *
 * The per-step profile is the median over repetitions, so a single scheduler
 * hiccup does not move the maximum or its step.
 */
inline LatencyReport profile_latency(
  ScenarioRunner & runner, ScenarioConfig cfg, int repetitions, const std::vector<int> & horizons = {2, 5, 10, 15, 20})
{
  if (repetitions < 1) { throw ConfigError("profiling needs at least one repetition"); }
  LatencyReport rep;
  rep.rate_hz     = cfg.rate_hz;
  rep.repetitions = repetitions;
  for (int h : horizons) {
    cfg.ocp.horizon = h;
    const std::int64_t n = cfg.steps();
    std::vector<double> qp_sum(static_cast<std::size_t>(n), 0.0), loop_sum(static_cast<std::size_t>(n), 0.0);
    std::vector<std::vector<double>> qp_runs(static_cast<std::size_t>(n)), loop_runs(static_cast<std::size_t>(n));
    LatencyRow row;
    row.horizon = h;
    double iters = 0;
    std::int64_t counted = 0;
    runner.run(cfg);  // warm caches and code paths
    for (int r = 0; r < repetitions; ++r) {
      const ClosedLoopTrace t = runner.run(cfg);
      for (const auto & tr : t.rows) {
        if (tr.flags & flag::probe) { continue; }
        const auto k = static_cast<std::size_t>(tr.step);
        qp_sum[k] += static_cast<double>(tr.qp_time_ns);
        loop_sum[k] += static_cast<double>(tr.loop_time_ns);
        qp_runs[k].push_back(static_cast<double>(tr.qp_time_ns));
        loop_runs[k].push_back(static_cast<double>(tr.loop_time_ns));
        iters += static_cast<double>(tr.qp_iters);
        ++counted;
        if (tr.flags & flag::deadline_miss) { ++row.deadline_misses; }
      }
    }
    double qp_total = 0, loop_total = 0, qp_best = -1, loop_best = 0;
    auto median = [](std::vector<double> & v) {
      if (v.empty()) { return 0.0; }
      const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
      std::nth_element(v.begin(), mid, v.end());
      if (v.size() % 2 == 1) { return *mid; }
      return 0.5 * (*mid + *std::max_element(v.begin(), mid));
    };
    for (std::int64_t k = 0; k < n; ++k) {
      const double q = median(qp_runs[static_cast<std::size_t>(k)]);
      const double l = median(loop_runs[static_cast<std::size_t>(k)]);
      qp_total += qp_sum[static_cast<std::size_t>(k)];
      loop_total += loop_sum[static_cast<std::size_t>(k)];
      if (q > qp_best) {
        qp_best            = q;
        row.qp_argmax_step = k;
      }
      loop_best = std::max(loop_best, l);
    }
    const double cnt = static_cast<double>(std::max<std::int64_t>(counted, 1));
    row.qp_avg_ms    = qp_total / cnt * 1e-6;
    row.qp_max_ms    = qp_best * 1e-6;
    row.loop_avg_ms  = loop_total / cnt * 1e-6;
    row.loop_max_ms  = loop_best * 1e-6;
    row.iters_avg    = iters / cnt;
    rep.rows.push_back(row);
  }
  return rep;
}

struct RefinementRow
{
  std::size_t n_r = 0, n_z = 0;
  std::size_t n_state = 0;
  double max_cell = 0;
  /// sup-norm difference of the step responses to the previous (coarser) resolution
  double dvol_prev = 0, dpeak_prev = 0;
  /// sup-norm difference to the finest resolution
  double dvol_finest = 0, dpeak_finest = 0;
  double peak_final = 0, vol_final = 0;
};

/**
 * @brief Step responses (constant input u for `duration` seconds) on a sequence
 * of resolutions, compared sample by sample.
 */
inline std::vector<RefinementRow> refinement_study(
  const PhysicalConfig & base, const std::vector<std::pair<std::size_t, std::size_t>> & resolutions, double alpha,
  double dt = 0.004, double duration = 0.2, double u = 0.05)
{
  if (resolutions.size() < 2) { throw ConfigError("refinement study needs at least two resolutions"); }
  const auto steps = static_cast<std::size_t>(std::llround(duration / dt));
  std::vector<std::vector<double>> vol, peak;
  std::vector<RefinementRow> rows;
  for (const auto & [nr, nz] : resolutions) {
    PhysicalConfig cfg = base;
    cfg.n_r            = nr;
    cfg.n_z            = nz;
    const FullOrderModel m = FullOrderModel::assemble(cfg, alpha);
    FullStepper st(m, dt);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.size()));
    std::vector<double> yv, yp;
    for (std::size_t k = 0; k < steps; ++k) {
      x = st.step(x, u);
      yv.push_back(m.y_vol(x));
      yp.push_back(m.y_peak(x));
    }
    RefinementRow row;
    row.n_r        = nr;
    row.n_z        = nz;
    row.n_state    = m.size();
    row.max_cell   = m.grid.max_cell_size();
    row.vol_final  = yv.back();
    row.peak_final = yp.back();
    rows.push_back(row);
    vol.push_back(std::move(yv));
    peak.push_back(std::move(yp));
  }
  auto sup = [](const std::vector<double> & a, const std::vector<double> & b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) { m = std::max(m, std::abs(a[i] - b[i])); }
    return m;
  };
  const std::size_t last = rows.size() - 1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) {
      rows[i].dvol_prev  = sup(vol[i], vol[i - 1]);
      rows[i].dpeak_prev = sup(peak[i], peak[i - 1]);
    }
    rows[i].dvol_finest  = sup(vol[i], vol[last]);
    rows[i].dpeak_finest = sup(peak[i], peak[last]);
  }
  return rows;
}

}  // namespace retmpc

#endif  // RETMPC__HARNESS_HPP_
