// casimir: command-line front end for the vibrating-cavity simulator.
//
//   casimir simulate --gamma 2 --epsilon 1e-3 --periods 16 --modes 16
//   casimir sweep --gamma 2,3,4,5 --workers 4 --out runs/peaks
//   casimir validate
//
// Flags override --config values, which override built-in defaults.
// Exit codes: 0 success, 1 numerical or internal failure, 2 invalid input.
// Set CASIMIR_NO_PROGRESS to silence progress lines on stderr.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "casimir/experiment.hpp"

namespace {

using namespace casimir;

struct Flags {
  std::vector<double> gamma, epsilon;
  std::vector<int> periods, modes;
  double duration = 0.0, L0 = 1.0, rtol = 0.0, atol = 0.0, defect_scale = 0.0, peak_tie = 0.0,
         unitarity_threshold = 0.0;
  int steps_per_period = 0, order = 0, trajectory = 0, deviation_samples = 0, workers = 0;
  long max_steps = 0;
  std::uint64_t seed = 0;
  std::string scheme, matching, config, out, format;
  bool flip_sign = false, quiet = false;
};

/// Options shared by every subcommand, keyed by run spec field so the caller
/// can tell which were given.
std::vector<std::pair<std::string, CLI::Option*>> add_options(CLI::App* app, Flags& f) {
  std::vector<std::pair<std::string, CLI::Option*>> o;
  auto add = [&](const std::string& key, CLI::Option* opt) { o.emplace_back(key, opt); };
  add("gamma", app->add_option("--gamma", f.gamma, "drive ratio Omega/omega_1 (list for sweep)")->delimiter(','));
  add("epsilon", app->add_option("--epsilon", f.epsilon, "wall amplitude (list for sweep/compare)")->delimiter(','));
  add("periods", app->add_option("--periods,-M", f.periods, "stop after M drive periods")->delimiter(','));
  add("modes", app->add_option("--modes,-K", f.modes, "mode truncation K (0: default)")->delimiter(','));
  add("duration", app->add_option("--duration", f.duration, "raw stop time T (must be a whole number of drive periods)"));
  add("L0", app->add_option("--L0", f.L0, "rest length of the cavity"));
  add("scheme", app->add_option("--scheme", f.scheme, "rk4 or adaptive")->check(CLI::IsMember({"rk4", "adaptive"})));
  add("steps_per_period", app->add_option("--step-per-period", f.steps_per_period, "rk4 steps per drive period"));
  add("rtol", app->add_option("--rtol", f.rtol, "adaptive relative tolerance"));
  add("atol", app->add_option("--atol", f.atol, "adaptive absolute tolerance"));
  add("max_steps", app->add_option("--max-steps", f.max_steps, "abort after this many steps"));
  add("matching", app->add_option("--matching", f.matching, "canonical or kinematic start")
                      ->check(CLI::IsMember({"canonical", "kinematic"})));
  add("order", app->add_option("--order", f.order, "perturbative order for perturb (0-2)"));
  add("trajectory", app->add_option("--trajectory", f.trajectory, "write a trajectory with this many intervals"));
  add("deviation_samples", app->add_option("--deviation-samples", f.deviation_samples, "samples for trajectory deviation"));
  add("config", app->add_option("--config", f.config, "JSON run spec")->check(CLI::ExistingFile));
  add("out", app->add_option("--out", f.out, "output directory"));
  add("workers", app->add_option("--workers", f.workers, "sweep worker threads"));
  add("format", app->add_option("--format", f.format, "csv, records or both")
                    ->check(CLI::IsMember({"csv", "records", "both"})));
  add("seed", app->add_option("--seed", f.seed, "seed for randomized checks"));
  add("defect_scale", app->add_option("--defect-scale", f.defect_scale, "C in the first-order defect tolerance"));
  add("peak_tie", app->add_option("--peak-tie", f.peak_tie, "relative tie tolerance for peak modes"));
  add("unitarity_threshold", app->add_option("--unitarity-threshold", f.unitarity_threshold,
                                             "override the unitarity threshold in validate"));
  add("flip_sign", app->add_flag("--inject-coupling-sign-flip", f.flip_sign, "fault injection for validate"));
  add("quiet", app->add_flag("--quiet,-q", f.quiet, "no summary on stdout"));
  return o;
}

RunSpec resolve(Command cmd, const Flags& f,
                const std::vector<std::pair<std::string, CLI::Option*>>& opts) {
  auto given = [&](const std::string& key) {
    for (const auto& [k, o] : opts)
      if (k == key) return o->count() > 0;
    return false;
  };
  RunSpec s;
  if (given("config")) {
    std::ifstream in(f.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidInput("cannot parse " + f.config + ": " + e.what());
    }
    apply_json(s, j);
  }
  s.command = cmd;
  if (given("gamma")) s.gamma = f.gamma;
  if (given("epsilon")) s.epsilon = f.epsilon;
  if (given("periods")) s.periods = f.periods;
  if (given("modes")) s.modes = f.modes;
  if (given("duration")) s.duration = f.duration;
  if (given("L0")) s.L0 = f.L0;
  if (given("scheme")) s.integrator.scheme = scheme_from_string(f.scheme);
  if (given("steps_per_period")) s.integrator.steps_per_period = f.steps_per_period;
  if (given("rtol")) s.integrator.rtol = f.rtol;
  if (given("atol")) s.integrator.atol = f.atol;
  if (given("max_steps")) s.integrator.max_steps = f.max_steps;
  if (given("matching")) s.matching = matching_from_string(f.matching);
  if (given("order")) s.order = f.order;
  if (given("trajectory")) s.trajectory_samples = f.trajectory;
  if (given("deviation_samples")) s.deviation_samples = f.deviation_samples;
  if (given("out")) s.out_dir = f.out;
  if (given("workers")) s.workers = f.workers;
  if (given("format")) s.format = format_from_string(f.format);
  if (given("seed")) s.seed = f.seed;
  if (given("defect_scale")) s.defect_scale = f.defect_scale;
  if (given("peak_tie")) s.peak_tie = f.peak_tie;
  if (given("unitarity_threshold")) s.unitarity_threshold = f.unitarity_threshold;
  if (given("flip_sign")) s.flip_coupling_sign = f.flip_sign;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photon creation in a one-dimensional cavity with a vibrating wall"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Flags flags;
  struct Sub {
    Command cmd;
    CLI::App* app;
    std::vector<std::pair<std::string, CLI::Option*>> opts;
  };
  std::vector<Sub> subs;
  const std::pair<Command, const char*> commands[] = {
      {Command::simulate, "integrate the full system and report photon spectra"},
      {Command::perturb, "evaluate the closed-form perturbation series"},
      {Command::compare, "numeric and analytic spectra side by side, with error scaling"},
      {Command::sweep, "Cartesian product of parameter lists"},
      {Command::validate, "run the property suite"}};
  for (const auto& [cmd, help] : commands) {
    CLI::App* sub = app.add_subcommand(to_string(cmd), help);
    subs.push_back({cmd, sub, add_options(sub, flags)});
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const bool show_progress = std::getenv("CASIMIR_NO_PROGRESS") == nullptr;
  const ProgressFn progress = [&](const std::string& line) {
    if (show_progress) std::cerr << line << std::endl;
  };

  try {
    for (const auto& s : subs) {
      if (!s.app->parsed()) continue;
      const RunSpec spec = resolve(s.cmd, flags, s.opts);
      const RunRecord record = run(spec, progress);
      write_outputs(record);
      if (!flags.quiet) print_summary(std::cout, record);
      for (const auto& p : record.points)
        if (!p.ok()) std::cerr << "error: " << point_tag(p) << ": " << p.error << "\n";
      for (const auto& p : record.properties)
        if (!p.passed) std::cerr << "error: property " << p.name << " failed\n";
      return record.exit_code;
    }
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
