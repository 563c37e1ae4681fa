// Command-line front end: build-rom, run, profile, refine.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime abort.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "retmpc/retmpc.hpp"

namespace {

constexpr int exit_ok      = 0;
constexpr int exit_config  = 2;
constexpr int exit_runtime = 3;

struct CommonFlags
{
  std::string config;
  std::optional<double> rate;
  std::optional<double> alpha_true;
  std::optional<std::string> cost;
  std::optional<int> horizon;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App * app, CommonFlags & f, bool scenario_flags)
{
  app->add_option("--config", f.config, "INI scenario file")->check(CLI::ExistingFile);
  app->add_option("--rate", f.rate, "loop rate in Hz (250 or 1000)");
  app->add_option("--out", f.out, "output file");
  if (scenario_flags) {
    app->add_option("--alpha-true", f.alpha_true, "absorption factor of the simulated plant");
    app->add_option("--cost", f.cost, "cost preset")
      ->check(CLI::IsMember({"a", "b", "c", "d", "kHz", "exp", "custom"}));
    app->add_option("--horizon", f.horizon, "OCP horizon N");
    app->add_option("--seed", f.seed, "noise seed");
  }
}

// defaults for the rate, then the config file, then explicit flags
retmpc::ScenarioConfig resolve(const CommonFlags & f)
{
  using namespace retmpc;
  ScenarioConfig cfg = default_scenario(f.rate.value_or(250.0));
  if (!f.config.empty()) { cfg = load_config(f.config, cfg); }
  if (f.rate) { cfg.rate_hz = *f.rate; }
  if (f.alpha_true) { cfg.alpha_true = *f.alpha_true; }
  if (f.cost) {
    if (*f.cost == "custom") {
      if (cfg.cost_name != "custom") { throw ConfigError("--cost custom needs [cost] preset = custom in the config file"); }
    } else {
      cfg.cost      = CostConfig::preset(*f.cost);
      cfg.cost_name = *f.cost;
    }
  }
  if (f.horizon) { cfg.ocp.horizon = *f.horizon; }
  if (f.seed) { cfg.seed = *f.seed; }
  cfg.validate();
  return cfg;
}

void write_text(const std::string & path, const std::string & text)
{
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  os << text;
  os.flush();
  if (!os) { throw retmpc::RuntimeAbort("cannot write '" + path + "'"); }
}

int cmd_build_rom(const CommonFlags & f)
{
  using namespace retmpc;
  if (f.out.empty()) { throw ConfigError("build-rom needs --out"); }
  ScenarioConfig cfg = resolve(f);
  const ReducedModel rom = build_reduced_model(cfg.physical, cfg.rom, cfg.dt());
  std::ostringstream os;
  write_rom(os, rom);
  write_text(f.out, os.str());
  std::cerr << "rom: order " << rom.order() << ", dt " << format_double(rom.dt) << " s, pod energy "
            << format_double(rom.pod_energy) << ", deim orders " << rom.input.order() << '/' << rom.output.order()
            << ", spectral radius " << format_double(spectral_radius(rom.a_d)) << '\n';
  return exit_ok;
}

int cmd_run(const CommonFlags & f, const std::string & plant, const std::string & rom_path, bool no_timing,
            const std::string & config_out)
{
  using namespace retmpc;
  ScenarioConfig cfg = resolve(f);
  if (!plant.empty()) { cfg.plant = plant == "reduced" ? PlantKind::reduced : PlantKind::full; }
  if (!rom_path.empty()) { cfg.rom_artifact = rom_path; }
  ScenarioRunner runner;
  // artifact problems are configuration errors, not runtime aborts
  try {
    (void)runner.reduced_model(cfg);
  } catch (const IoError & e) {
    throw ConfigError(e.what());
  }
  const ClosedLoopTrace trace = runner.run(cfg, RunOptions{!no_timing});
  write_text(f.out, format_trace(trace));
  if (!config_out.empty()) { write_text(config_out, write_config(cfg)); }
  const auto & last = trace.rows.back();
  std::cerr << "run: " << trace.rows.size() << " steps, max peak " << format_double(trace.max_peak())
            << " K, final peak " << format_double(last.ypeak_true) << " K, final alpha_hat "
            << format_double(last.alpha_hat) << (trace.max_peak() > cfg.ocp.y_max ? ", BOUND VIOLATED" : "")
            << '\n';
  return exit_ok;
}

int cmd_profile(const CommonFlags & f, int reps, const std::vector<int> & horizons)
{
  using namespace retmpc;
  ScenarioConfig cfg = resolve(f);
  ScenarioRunner runner;
  const LatencyReport rep = profile_latency(runner, cfg, reps, horizons);
  std::ostringstream os;
  os << "horizon,qp_avg_ms,qp_max_ms,qp_argmax_step,loop_avg_ms,loop_max_ms,deadline_misses,iters_avg\n";
  for (const auto & r : rep.rows) {
    os << r.horizon << ',' << format_double(r.qp_avg_ms) << ',' << format_double(r.qp_max_ms) << ','
       << r.qp_argmax_step << ',' << format_double(r.loop_avg_ms) << ',' << format_double(r.loop_max_ms) << ','
       << r.deadline_misses << ',' << format_double(r.iters_avg) << '\n';
  }
  write_text(f.out, os.str());
  std::cerr << "profile: averages " << (rep.averages_monotone() ? "monotone" : "NOT monotone") << " in N\n";
  return exit_ok;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_resolutions(const std::vector<std::string> & specs)
{
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto & s : specs) {
    const auto x = s.find('x');
    if (x == std::string::npos) { throw retmpc::ConfigError("resolution '" + s + "' must look like 30x80"); }
    try {
      out.emplace_back(std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1)));
    } catch (const std::exception &) {
      throw retmpc::ConfigError("resolution '" + s + "' must look like 30x80");
    }
  }
  return out;
}

int cmd_refine(const CommonFlags & f, const std::vector<std::string> & res)
{
  using namespace retmpc;
  ScenarioConfig cfg = resolve(f);
  const auto rows    = refinement_study(cfg.physical, parse_resolutions(res), cfg.alpha_true, cfg.dt());
  std::ostringstream os;
  os << "n_r,n_z,n_state,max_cell_m,dvol_prev_K,dpeak_prev_K,dvol_finest_K,dpeak_finest_K,vol_final_K,peak_final_K\n";
  for (const auto & r : rows) {
    os << r.n_r << ',' << r.n_z << ',' << r.n_state << ',' << format_double(r.max_cell) << ','
       << format_double(r.dvol_prev) << ',' << format_double(r.dpeak_prev) << ',' << format_double(r.dvol_finest)
       << ',' << format_double(r.dpeak_finest) << ',' << format_double(r.vol_final) << ','
       << format_double(r.peak_final) << '\n';
  }
  write_text(f.out, os.str());
  return exit_ok;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Closed-loop MPC simulator for retinal laser heating"};
  app.require_subcommand(1);

  CommonFlags rom_f, run_f, prof_f, ref_f;
  auto * build = app.add_subcommand("build-rom", "build the reduced model and write the artifact");
  add_common(build, rom_f, false);

  auto * run = app.add_subcommand("run", "closed-loop simulation, writes the trace CSV");
  add_common(run, run_f, true);
  std::string plant, rom_path, config_out;
  bool no_timing = false;
  run->add_option("--plant", plant, "plant model")->check(CLI::IsMember({"full", "reduced"}));
  run->add_option("--rom", rom_path, "reduced-model artifact to load instead of building");
  run->add_flag("--no-timing", no_timing, "zero the timing columns (byte-reproducible traces)");
  run->add_option("--write-config", config_out, "write the resolved configuration to this file");

  auto * prof = app.add_subcommand("profile", "QP and loop latency per horizon");
  add_common(prof, prof_f, true);
  int reps = 5;
  std::vector<int> horizons = {2, 5, 10, 15, 20};
  prof->add_option("--reps", reps, "repetitions per horizon");
  prof->add_option("--horizons", horizons, "horizons to profile");

  auto * ref = app.add_subcommand("refine", "grid refinement study of the full model");
  add_common(ref, ref_f, true);
  std::vector<std::string> res = {"15x40", "30x80", "60x160"};
  ref->add_option("--resolutions", res, "n_rxn_z list, coarse to fine");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (*build) { return cmd_build_rom(rom_f); }
    if (*run) { return cmd_run(run_f, plant, rom_path, no_timing, config_out); }
    if (*prof) { return cmd_profile(prof_f, reps, horizons); }
    if (*ref) { return cmd_refine(ref_f, res); }
  } catch (const retmpc::ConfigError & e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception & e) {
    std::cerr << "runtime abort: " << e.what() << '\n';
    return exit_runtime;
  }
  return exit_config;
}
