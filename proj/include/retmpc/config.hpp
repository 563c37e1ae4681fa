#ifndef RETMPC__CONFIG_HPP_
#define RETMPC__CONFIG_HPP_

/**
 * @file
 * @brief Scenario configuration and its flat INI-style file format.
 *
 * Files consist of `[section]` headers and `key = value` lines; `#` and `;`
 * start comments. Unknown sections or keys are configuration errors. Lists
 * are comma separated. The schema is listed in the README.
 */

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "ekf.hpp"
#include "errors.hpp"
#include "mor.hpp"
#include "mpc.hpp"
#include "physical_model.hpp"
#include "qp_solver.hpp"

namespace retmpc {

enum class PlantKind { full, reduced };

/// Optional open-loop excitation applied before the controller takes over.
struct ProbeConfig
{
  double power = 0.0;
  int steps = 0;
};

struct ScenarioConfig
{
  double rate_hz = 250.0;
  PlantKind plant = PlantKind::full;
  double alpha_true = 1.1;
  double duration_s = 0.4;
  double noise_std = 0.288;
  std::uint64_t seed = 1;
  ProbeConfig probe;

  /// preset name (a, b, c, d, kHz, exp) or "custom"
  std::string cost_name = "a";
  CostConfig cost = CostConfig::preset("a");
  OcpSpec ocp;
  EkfConfig ekf;
  PhysicalConfig physical;
  RomSettings rom;
  SolverSettings solver;
  /// load the reduced model from this artifact instead of building it
  std::string rom_artifact;

  double dt() const { return 1.0 / rate_hz; }
  std::int64_t steps() const { return static_cast<std::int64_t>(std::llround(duration_s * rate_hz)); }

  void validate() const
  {
    if (rate_hz != 250.0 && rate_hz != 1000.0) { throw ConfigError("rate_hz must be 250 or 1000"); }
    if (!(duration_s > 0) || static_cast<double>(steps()) > 1e7) {
      throw ConfigError("duration must be > 0 with at most 1e7 steps");
    }
    if (!(alpha_true > 0)) { throw ConfigError("alpha_true must be > 0"); }
    if (!(noise_std >= 0)) { throw ConfigError("noise_std_K must be >= 0"); }
    if (probe.steps < 0 || !(probe.power >= 0) || probe.power > ocp.u_max) {
      throw ConfigError("probe needs steps >= 0 and 0 <= power <= u_max");
    }
    ocp.validate();
    cost.validate();
    ekf.validate();
    solver.validate();
    physical.geometry.validate();
  }
};

/// Scenario defaults for a loop rate: kHz runs use the no-penalty cost and N = 2.
inline ScenarioConfig default_scenario(double rate_hz = 250.0)
{
  ScenarioConfig s;
  s.rate_hz = rate_hz;
  if (rate_hz == 1000.0) {
    s.cost_name   = "kHz";
    s.cost        = CostConfig::preset("kHz");
    s.ocp.horizon = 2;
  }
  return s;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(const std::string & s)
{
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) { return {}; }
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string & key, const std::string & v)
{
  double out     = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

inline long long to_int(const std::string & key, const std::string & v)
{
  long long out  = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

inline std::size_t to_count(const std::string & key, const std::string & v)
{
  const long long n = to_int(key, v);
  if (n < 0) { throw ConfigError("'" + key + "' must be >= 0"); }
  return static_cast<std::size_t>(n);
}

inline std::vector<double> to_list(const std::string & key, const std::string & v)
{
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) { out.push_back(to_double(key, trim(item))); }
  if (out.empty()) { throw ConfigError("'" + key + "': empty list"); }
  return out;
}

inline std::string join(const std::vector<double> & v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) { s += ", "; }
    s += format_double(v[i]);
  }
  return s;
}

}  // namespace detail

/// Parsed INI contents: section -> ordered (key, value) pairs.
using IniData = std::map<std::string, std::vector<std::pair<std::string, std::string>>>;

inline IniData parse_ini(std::istream & is, const std::string & origin = "<config>")
{
  IniData data;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) { line.erase(hash); }
    line = detail::trim(line);
    if (line.empty()) { continue; }
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') { throw ConfigError(where + ": malformed section header"); }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) { throw ConfigError(where + ": empty section name"); }
      data[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) { throw ConfigError(where + ": expected key = value"); }
    if (section.empty()) { throw ConfigError(where + ": key outside of a section"); }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty()) { throw ConfigError(where + ": empty key"); }
    data[section].emplace_back(key, val);
  }
  return data;
}

/// Apply INI contents on top of `base`; later keys win.
inline ScenarioConfig apply_ini(const IniData & ini, ScenarioConfig cfg)
{
  using namespace detail;
  bool cost_custom = false;
  std::string r0_name;
  double r1 = cfg.cost.r1, r2 = cfg.cost.r2;
  bool r1_set = false, r2_set = false;

  for (const auto & [section, entries] : ini) {
    for (const auto & [key, v] : entries) {
      const std::string k = section + "." + key;
      if (section == "scenario") {
        if (key == "rate_hz") { cfg.rate_hz = to_double(k, v); }
        else if (key == "plant") {
          if (v == "full") { cfg.plant = PlantKind::full; }
          else if (v == "reduced") { cfg.plant = PlantKind::reduced; }
          else { throw ConfigError(k + ": expected full or reduced"); }
        }
        else if (key == "alpha_true") { cfg.alpha_true = to_double(k, v); }
        else if (key == "alpha_init") { cfg.ekf.alpha0 = to_double(k, v); }
        else if (key == "duration_s") { cfg.duration_s = to_double(k, v); }
        else if (key == "noise_std_K") { cfg.noise_std = to_double(k, v); }
        else if (key == "seed") { cfg.seed = static_cast<std::uint64_t>(to_count(k, v)); }
        else if (key == "probe_power_W") { cfg.probe.power = to_double(k, v); }
        else if (key == "probe_steps") { cfg.probe.steps = static_cast<int>(to_int(k, v)); }
        else if (key == "rom_artifact") { cfg.rom_artifact = v; }
        else { throw ConfigError("unknown key " + k); }
      } else if (section == "ocp") {
        if (key == "horizon") { cfg.ocp.horizon = static_cast<int>(to_int(k, v)); }
        else if (key == "u_max_W") { cfg.ocp.u_max = to_double(k, v); }
        else if (key == "y_peak_ref_K") { cfg.ocp.y_ref = to_double(k, v); }
        else if (key == "y_peak_max_K") { cfg.ocp.y_max = to_double(k, v); }
        else { throw ConfigError("unknown key " + k); }
      } else if (section == "cost") {
        if (key == "preset") {
          if (v == "custom") {
            cost_custom   = true;
            cfg.cost_name = "custom";
          } else {
            cfg.cost      = CostConfig::preset(v);
            cfg.cost_name = v;
            cost_custom   = false;
          }
        }
        else if (key == "r0") { r0_name = v; }
        else if (key == "r1") { r1 = to_double(k, v); r1_set = true; }
        else if (key == "r2") { r2 = to_double(k, v); r2_set = true; }
        else { throw ConfigError("unknown key " + k); }
      } else if (section == "ekf") {
        if (key == "q_state") { cfg.ekf.q_state = to_double(k, v); }
        else if (key == "q_alpha") { cfg.ekf.q_alpha = to_double(k, v); }
        else if (key == "r_meas") { cfg.ekf.r_meas = to_double(k, v); }
        else if (key == "p0_state") { cfg.ekf.p0_state = to_double(k, v); }
        else if (key == "p0_alpha") { cfg.ekf.p0_alpha = to_double(k, v); }
        else if (key == "alpha_min") { cfg.ekf.alpha_min = to_double(k, v); }
        else if (key == "alpha_max") { cfg.ekf.alpha_max = to_double(k, v); }
        else { throw ConfigError("unknown key " + k); }
      } else if (section == "geometry") {
        auto & g = cfg.physical.geometry;
        if (key == "r_outer") { g.r_outer = to_double(k, v); }
        else if (key == "r_inner") { g.r_inner = to_double(k, v); }
        else if (key == "layer_bounds") { g.layer_bounds = to_list(k, v); }
        else if (key == "rpe_layer") { g.rpe_layer = to_count(k, v); }
        else if (key == "choroid_layer") { g.choroid_layer = to_count(k, v); }
        else if (key == "z_center") { g.z_center = to_double(k, v); }
        else if (key == "z_b") { g.z_b = to_double(k, v); }
        else if (key == "z_e") { g.z_e = to_double(k, v); }
        else { throw ConfigError("unknown key " + k); }
      } else if (section == "material") {
        auto & m = cfg.physical.material;
        if (key == "rho") { m.rho = to_double(k, v); }
        else if (key == "cp") { m.cp = to_double(k, v); }
        else if (key == "k") { m.k = to_double(k, v); }
        else { throw ConfigError("unknown key " + k); }
      } else if (section == "model") {
        auto & p = cfg.physical;
        if (key == "n_r") { p.n_r = to_count(k, v); }
        else if (key == "n_z") { p.n_z = to_count(k, v); }
        else if (key == "mu_rpe_ref") { p.mu_rpe_ref = to_double(k, v); }
        else if (key == "mu_choroid") { p.mu_choroid = to_double(k, v); }
        else if (key == "vol_weight_sign") {
          if (v == "+" || v == "plus") { p.sign = VolWeightSign::plus; }
          else if (v == "-" || v == "minus") { p.sign = VolWeightSign::minus; }
          else { throw ConfigError(k + ": expected + or -"); }
        }
        else if (key == "vol_mean_region") {
          if (v == "inner") { p.region = VolMeanRegion::inner_cylinder; }
          else if (v == "full") { p.region = VolMeanRegion::full_radius; }
          else { throw ConfigError(k + ": expected inner or full"); }
        }
        else { throw ConfigError("unknown key " + k); }
      } else if (section == "rom") {
        auto & r = cfg.rom;
        if (key == "rank") { r.rank = static_cast<Eigen::Index>(to_count(k, v)); }
        else if (key == "deim_b") { r.deim_b = static_cast<Eigen::Index>(to_count(k, v)); }
        else if (key == "deim_c") { r.deim_c = static_cast<Eigen::Index>(to_count(k, v)); }
        else if (key == "training_alphas") { r.training_alphas = to_list(k, v); }
        else if (key == "alpha_min") { r.alpha_min = to_double(k, v); }
        else if (key == "alpha_max") { r.alpha_max = to_double(k, v); }
        else if (key == "excitation_step_W") { r.excitation.u_step = to_double(k, v); }
        else if (key == "excitation_pulse_max_W") { r.excitation.u_pulse_max = to_double(k, v); }
        else if (key == "excitation_pulses") { r.excitation.pulses = to_count(k, v); }
        else if (key == "excitation_duration_s") { r.excitation.duration = to_double(k, v); }
        else if (key == "excitation_samples") { r.excitation.samples = to_count(k, v); }
        else if (key == "excitation_seed") { r.excitation.seed = static_cast<std::uint64_t>(to_count(k, v)); }
        else { throw ConfigError("unknown key " + k); }
      } else if (section == "solver") {
        auto & s = cfg.solver;
        if (key == "rho") { s.rho = to_double(k, v); }
        else if (key == "sigma") { s.sigma = to_double(k, v); }
        else if (key == "relax") { s.relax = to_double(k, v); }
        else if (key == "eps_abs") { s.eps_abs = to_double(k, v); }
        else if (key == "eps_rel") { s.eps_rel = to_double(k, v); }
        else if (key == "eps_pinf") { s.eps_pinf = to_double(k, v); }
        else if (key == "eps_dinf") { s.eps_dinf = to_double(k, v); }
        else if (key == "max_iter") { s.max_iter = static_cast<int>(to_int(k, v)); }
        else if (key == "check_interval") { s.check_interval = static_cast<int>(to_int(k, v)); }
        else if (key == "scaling_iters") { s.scaling_iters = static_cast<int>(to_int(k, v)); }
        else if (key == "adaptive_rho_interval") { s.adaptive_rho_interval = static_cast<int>(to_int(k, v)); }
        else if (key == "adaptive_rho_tolerance") { s.adaptive_rho_tolerance = to_double(k, v); }
        else { throw ConfigError("unknown key " + k); }
      } else {
        throw ConfigError("unknown section [" + section + "]");
      }
    }
  }

  if (!r0_name.empty() || r1_set || r2_set) {
    if (!cost_custom) { throw ConfigError("cost.r0/r1/r2 require preset = custom"); }
  }
  if (cost_custom) {
    if (r0_name == "chi3") { cfg.cost.r0 = R0Schedule::chi3; }
    else if (r0_name.empty() || r0_name == "1" || r0_name == "one") { cfg.cost.r0 = R0Schedule::constant_one; }
    else { throw ConfigError("cost.r0: expected 1 or chi3"); }
    cfg.cost.r1 = r1;
    cfg.cost.r2 = r2;
  }
  return cfg;
}

inline ScenarioConfig load_config(const std::string & path, const ScenarioConfig & base = {})
{
  std::ifstream f(path);
  if (!f) { throw ConfigError("cannot open config file '" + path + "'"); }
  return apply_ini(parse_ini(f, path), base);
}

/// Full configuration as INI text; apply_ini(parse_ini(write_config(c))) reproduces c.
inline std::string write_config(const ScenarioConfig & c)
{
  using detail::join;
  auto f = [](double v) { return format_double(v); };
  std::ostringstream os;
  os << "[scenario]\n"
     << "rate_hz = " << f(c.rate_hz) << '\n'
     << "plant = " << (c.plant == PlantKind::full ? "full" : "reduced") << '\n'
     << "alpha_true = " << f(c.alpha_true) << '\n'
     << "alpha_init = " << f(c.ekf.alpha0) << '\n'
     << "duration_s = " << f(c.duration_s) << '\n'
     << "noise_std_K = " << f(c.noise_std) << '\n'
     << "seed = " << c.seed << '\n'
     << "probe_power_W = " << f(c.probe.power) << '\n'
     << "probe_steps = " << c.probe.steps << '\n';
  if (!c.rom_artifact.empty()) { os << "rom_artifact = " << c.rom_artifact << '\n'; }
  os << "\n[ocp]\n"
     << "horizon = " << c.ocp.horizon << '\n'
     << "u_max_W = " << f(c.ocp.u_max) << '\n'
     << "y_peak_ref_K = " << f(c.ocp.y_ref) << '\n'
     << "y_peak_max_K = " << f(c.ocp.y_max) << '\n';
  if (c.cost_name == "custom") {
    os << "\n[cost]\npreset = custom\n"
       << "r0 = " << (c.cost.r0 == R0Schedule::chi3 ? "chi3" : "1") << '\n'
       << "r1 = " << f(c.cost.r1) << '\n'
       << "r2 = " << f(c.cost.r2) << '\n';
  } else {
    os << "\n[cost]\npreset = " << c.cost_name << '\n';
  }
  os << "\n[ekf]\n"
     << "q_state = " << f(c.ekf.q_state) << '\n'
     << "q_alpha = " << f(c.ekf.q_alpha) << '\n'
     << "r_meas = " << f(c.ekf.r_meas) << '\n'
     << "p0_state = " << f(c.ekf.p0_state) << '\n'
     << "p0_alpha = " << f(c.ekf.p0_alpha) << '\n'
     << "alpha_min = " << f(c.ekf.alpha_min) << '\n'
     << "alpha_max = " << f(c.ekf.alpha_max) << '\n';
  const auto & g = c.physical.geometry;
  os << "\n[geometry]\n"
     << "r_outer = " << f(g.r_outer) << '\n'
     << "r_inner = " << f(g.r_inner) << '\n'
     << "layer_bounds = " << join(g.layer_bounds) << '\n'
     << "rpe_layer = " << g.rpe_layer << '\n'
     << "choroid_layer = " << g.choroid_layer << '\n'
     << "z_center = " << f(g.z_center) << '\n'
     << "z_b = " << f(g.z_b) << '\n'
     << "z_e = " << f(g.z_e) << '\n';
  const auto & m = c.physical.material;
  os << "\n[material]\nrho = " << f(m.rho) << "\ncp = " << f(m.cp) << "\nk = " << f(m.k) << '\n';
  const auto & p = c.physical;
  os << "\n[model]\n"
     << "n_r = " << p.n_r << '\n'
     << "n_z = " << p.n_z << '\n'
     << "mu_rpe_ref = " << f(p.mu_rpe_ref) << '\n'
     << "mu_choroid = " << f(p.mu_choroid) << '\n'
     << "vol_weight_sign = " << (p.sign == VolWeightSign::plus ? "+" : "-") << '\n'
     << "vol_mean_region = " << (p.region == VolMeanRegion::inner_cylinder ? "inner" : "full") << '\n';
  const auto & r = c.rom;
  os << "\n[rom]\n"
     << "rank = " << r.rank << '\n'
     << "deim_b = " << r.deim_b << '\n'
     << "deim_c = " << r.deim_c << '\n'
     << "training_alphas = " << join(r.training_alphas) << '\n'
     << "alpha_min = " << f(r.alpha_min) << '\n'
     << "alpha_max = " << f(r.alpha_max) << '\n'
     << "excitation_step_W = " << f(r.excitation.u_step) << '\n'
     << "excitation_pulse_max_W = " << f(r.excitation.u_pulse_max) << '\n'
     << "excitation_pulses = " << r.excitation.pulses << '\n'
     << "excitation_duration_s = " << f(r.excitation.duration) << '\n'
     << "excitation_samples = " << r.excitation.samples << '\n'
     << "excitation_seed = " << r.excitation.seed << '\n';
  const auto & s = c.solver;
  os << "\n[solver]\n"
     << "rho = " << f(s.rho) << '\n'
     << "sigma = " << f(s.sigma) << '\n'
     << "relax = " << f(s.relax) << '\n'
     << "eps_abs = " << f(s.eps_abs) << '\n'
     << "eps_rel = " << f(s.eps_rel) << '\n'
     << "eps_pinf = " << f(s.eps_pinf) << '\n'
     << "eps_dinf = " << f(s.eps_dinf) << '\n'
     << "max_iter = " << s.max_iter << '\n'
     << "check_interval = " << s.check_interval << '\n'
     << "scaling_iters = " << s.scaling_iters << '\n'
     << "adaptive_rho_interval = " << s.adaptive_rho_interval << '\n'
     << "adaptive_rho_tolerance = " << f(s.adaptive_rho_tolerance) << '\n';
  return os.str();
}

}  // namespace retmpc

#endif  // RETMPC__CONFIG_HPP_
