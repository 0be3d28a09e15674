#pragma once

// Experiment orchestration behind the command-line tool: run specifications,
// run records with JSON and CSV serialization, and the five commands.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "casimir/bogoliubov.hpp"
#include "casimir/cavity.hpp"
#include "casimir/evolution.hpp"
#include "casimir/perturbation.hpp"
#include "json.hpp"

namespace casimir {

inline constexpr const char* kVersion = "0.1.0";

enum class Command { simulate, perturb, compare, sweep, validate };

inline std::string to_string(Command c) {
  switch (c) {
    case Command::simulate: return "simulate";
    case Command::perturb: return "perturb";
    case Command::compare: return "compare";
    case Command::sweep: return "sweep";
    case Command::validate: return "validate";
  }
  return "unknown";
}

inline Command command_from_string(const std::string& s) {
  for (auto c : {Command::simulate, Command::perturb, Command::compare, Command::sweep,
                 Command::validate})
    if (to_string(c) == s) return c;
  throw InvalidInput("unknown command '" + s + "'");
}

enum class OutputFormat { csv, records, both };

inline std::string to_string(OutputFormat f) {
  return f == OutputFormat::csv ? "csv" : f == OutputFormat::records ? "records" : "both";
}

inline OutputFormat format_from_string(const std::string& s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "records") return OutputFormat::records;
  if (s == "both") return OutputFormat::both;
  throw InvalidInput("unknown output format '" + s + "' (expected csv, records or both)");
}

inline StartMatching matching_from_string(const std::string& s) {
  if (s == "kinematic") return StartMatching::kinematic;
  if (s == "canonical") return StartMatching::canonical;
  throw InvalidInput("unknown start matching '" + s + "' (expected canonical or kinematic)");
}

/// Tight adaptive stepping. Fixed-step RK4 at 200 steps per period breaks
/// the 1e-6 unitarity bound once K >= 16.
inline IntegratorConfig default_integrator() {
  IntegratorConfig c;
  c.scheme = Scheme::adaptive;
  return c;
}

/// Everything one invocation needs. Single-point commands use one value per
/// axis; compare accepts two epsilons for a scaling exponent.
struct RunSpec {
  Command command = Command::simulate;
  double L0 = 1.0;
  std::vector<double> gamma{2.0};
  std::vector<double> epsilon{1e-3};
  std::vector<int> periods{16};
  std::vector<int> modes{0};  // 0 selects default_modes(γ)
  /// Raw stop time instead of a period count; must land on a whole period.
  std::optional<double> duration;
  IntegratorConfig integrator = default_integrator();
  StartMatching matching = StartMatching::canonical;
  int order = 1;
  int trajectory_samples = 0;
  int deviation_samples = 200;
  std::string out_dir;
  OutputFormat format = OutputFormat::both;
  int workers = 1;
  std::uint64_t seed = 0;
  double defect_scale = kFirstOrderDefectScale;
  double peak_tie = 0.05;
  bool flip_coupling_sign = false;
  std::optional<double> unitarity_threshold;
};

/// Parameters of one grid point.
inline CavityParams point_params(const RunSpec& s, double gamma, double eps, int M, int K) {
  if (s.duration) {
    const CavityParams p(s.L0, eps, gamma, *s.duration, K > 0 ? K : default_modes(gamma));
    check_stop_time(p.T(), p);
    return p;
  }
  return CavityParams::from_periods(s.L0, eps, gamma, M, K);
}

/// Grid points in canonical (sorted) axis order.
inline std::vector<std::tuple<double, double, int, int>> grid(const RunSpec& s) {
  auto g = s.gamma;
  auto e = s.epsilon;
  auto m = s.periods;
  auto k = s.modes;
  std::sort(g.begin(), g.end());
  std::sort(e.begin(), e.end());
  std::sort(m.begin(), m.end());
  std::sort(k.begin(), k.end());
  std::vector<std::tuple<double, double, int, int>> out;
  for (double gi : g)
    for (double ei : e)
      for (int mi : m)
        for (int ki : k) out.emplace_back(gi, ei, mi, ki);
  return out;
}

/// Rejects a bad spec before any work is done.
inline void validate_spec(const RunSpec& s) {
  auto nonempty = [](std::size_t n, const char* axis) {
    if (n == 0) throw InvalidInput(std::string("axis '") + axis + "' is empty");
  };
  nonempty(s.gamma.size(), "gamma");
  nonempty(s.epsilon.size(), "epsilon");
  nonempty(s.periods.size(), "periods");
  nonempty(s.modes.size(), "modes");
  if (s.command != Command::sweep) {
    const std::size_t max_eps = s.command == Command::compare ? 2 : 1;
    if (s.gamma.size() > 1 || s.periods.size() > 1 || s.modes.size() > 1 ||
        s.epsilon.size() > max_eps)
      throw InvalidInput(to_string(s.command) + " takes a single point; use sweep for lists");
  }
  for (int k : s.modes)
    if (k < 0) throw InvalidInput("mode truncation K must be >= 1 (0 selects the default)");
  if (s.workers < 1) throw InvalidInput("workers must be >= 1");
  if (s.order < 0 || s.order > 2) throw InvalidInput("perturbative order must be 0, 1 or 2");
  if (s.trajectory_samples < 0) throw InvalidInput("trajectory samples must be >= 0");
  if (s.deviation_samples < 2) throw InvalidInput("deviation samples must be >= 2");
  if (s.trajectory_samples > 0 && s.out_dir.empty())
    throw InvalidInput("a trajectory dump needs an output directory");
  if (!(s.defect_scale > 0.0)) throw InvalidInput("defect scale must be positive");
  if (!(s.peak_tie >= 0.0 && s.peak_tie < 1.0)) throw InvalidInput("peak tie must be in [0, 1)");
  if (s.unitarity_threshold && !(*s.unitarity_threshold >= 0.0))
    throw InvalidInput("unitarity threshold must be >= 0");
  s.integrator.validate();
  for (const auto& [g, e, m, k] : grid(s)) point_params(s, g, e, m, k);
}

// ---------------------------------------------------------------------------
// Records.

/// A named scalar; `reference` is the second source when the value compares two.
struct Metric {
  std::string name;
  double value = 0.0;
  Provenance provenance = Provenance::numeric_full;
  std::optional<Provenance> reference;
};

struct PointResult {
  double gamma = 0.0;
  double epsilon = 0.0;
  int periods = 0;
  int modes = 0;
  double T = 0.0;
  double drive_strength = 0.0;
  std::vector<PhotonSpectrum> spectra;
  std::vector<Metric> metrics;
  std::vector<int> peak_modes;
  Provenance peak_provenance = Provenance::numeric_full;
  std::vector<std::string> warnings;
  int exit_code = 0;
  std::string error;
  double seconds = 0.0;

  bool ok() const { return exit_code == 0; }

  const PhotonSpectrum* spectrum(Provenance p) const {
    for (const auto& s : spectra)
      if (s.provenance == p) return &s;
    return nullptr;
  }
  const Metric* metric(const std::string& name) const {
    for (const auto& m : metrics)
      if (m.name == name) return &m;
    return nullptr;
  }
};

/// One check of the validation suite: passes when lower <= measured <= upper.
struct PropertyResult {
  std::string name;
  double measured = 0.0;
  std::optional<double> lower;
  std::optional<double> upper;
  Provenance provenance = Provenance::numeric_full;
  bool passed = false;
  std::string detail;
};

inline PropertyResult make_property(std::string name, double measured, std::optional<double> lower,
                                    std::optional<double> upper, Provenance prov,
                                    std::string detail = {}) {
  const bool ok = std::isfinite(measured) && (!lower || measured >= *lower) &&
                  (!upper || measured <= *upper);
  return {std::move(name), measured, lower, upper, prov, ok, std::move(detail)};
}

struct RunRecord {
  std::string version = kVersion;
  RunSpec spec;
  std::vector<PointResult> points;
  std::vector<Metric> metrics;
  std::vector<PropertyResult> properties;
  std::vector<std::string> warnings;
  int exit_code = 0;
  double seconds = 0.0;

  bool ok() const { return exit_code == 0; }
};

// ---------------------------------------------------------------------------
// JSON.

using json = nlohmann::json;

namespace detail {

template <class T>
json optional_to_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<T>();
}

/// Scalars are accepted where a list is expected.
template <class T>
std::vector<T> axis_from_json(const json& j) {
  if (j.is_array()) return j.get<std::vector<T>>();
  return {j.get<T>()};
}

}  // namespace detail

inline json to_json(const IntegratorConfig& c) {
  return {{"scheme", to_string(c.scheme)}, {"steps_per_period", c.steps_per_period},
          {"rtol", c.rtol},               {"atol", c.atol},
          {"max_steps", c.max_steps}};
}

inline void apply_json(IntegratorConfig& c, const json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "scheme") c.scheme = scheme_from_string(v.get<std::string>());
    else if (key == "steps_per_period") c.steps_per_period = v.get<int>();
    else if (key == "rtol") c.rtol = v.get<double>();
    else if (key == "atol") c.atol = v.get<double>();
    else if (key == "max_steps") c.max_steps = v.get<long>();
    else throw InvalidInput("unknown integrator key '" + key + "'");
  }
}

inline json to_json(const RunSpec& s) {
  return {{"command", to_string(s.command)},
          {"L0", s.L0},
          {"gamma", s.gamma},
          {"epsilon", s.epsilon},
          {"periods", s.periods},
          {"modes", s.modes},
          {"duration", detail::optional_to_json(s.duration)},
          {"integrator", to_json(s.integrator)},
          {"matching", to_string(s.matching)},
          {"order", s.order},
          {"trajectory_samples", s.trajectory_samples},
          {"deviation_samples", s.deviation_samples},
          {"out_dir", s.out_dir},
          {"format", to_string(s.format)},
          {"workers", s.workers},
          {"seed", s.seed},
          {"defect_scale", s.defect_scale},
          {"peak_tie", s.peak_tie},
          {"flip_coupling_sign", s.flip_coupling_sign},
          {"unitarity_threshold", detail::optional_to_json(s.unitarity_threshold)}};
}

/// Overrides the fields present in `j`; unknown keys are rejected.
inline void apply_json(RunSpec& s, const json& j) {
  if (!j.is_object()) throw InvalidInput("run spec must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "command") s.command = command_from_string(v.get<std::string>());
      else if (key == "L0") s.L0 = v.get<double>();
      else if (key == "gamma") s.gamma = detail::axis_from_json<double>(v);
      else if (key == "epsilon") s.epsilon = detail::axis_from_json<double>(v);
      else if (key == "periods") s.periods = detail::axis_from_json<int>(v);
      else if (key == "modes") s.modes = detail::axis_from_json<int>(v);
      else if (key == "duration") s.duration = detail::optional_from_json<double>(v);
      else if (key == "integrator") apply_json(s.integrator, v);
      else if (key == "matching") s.matching = matching_from_string(v.get<std::string>());
      else if (key == "order") s.order = v.get<int>();
      else if (key == "trajectory_samples") s.trajectory_samples = v.get<int>();
      else if (key == "deviation_samples") s.deviation_samples = v.get<int>();
      else if (key == "out_dir") s.out_dir = v.get<std::string>();
      else if (key == "format") s.format = format_from_string(v.get<std::string>());
      else if (key == "workers") s.workers = v.get<int>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "defect_scale") s.defect_scale = v.get<double>();
      else if (key == "peak_tie") s.peak_tie = v.get<double>();
      else if (key == "flip_coupling_sign") s.flip_coupling_sign = v.get<bool>();
      else if (key == "unitarity_threshold")
        s.unitarity_threshold = detail::optional_from_json<double>(v);
      else throw InvalidInput("unknown run spec key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed run spec: ") + e.what());
  }
}

inline RunSpec run_spec_from_json(const json& j) {
  RunSpec s;
  apply_json(s, j);
  return s;
}

inline json to_json(const PhotonSpectrum& s) {
  return {{"provenance", to_string(s.provenance)}, {"N", s.N}};
}

inline json to_json(const Metric& m) {
  json j{{"name", m.name}, {"value", m.value}, {"provenance", to_string(m.provenance)}};
  if (m.reference) j["reference"] = to_string(*m.reference);
  return j;
}

inline Metric metric_from_json(const json& j) {
  Metric m{j.at("name").get<std::string>(), j.at("value").get<double>(),
           provenance_from_string(j.at("provenance").get<std::string>()), std::nullopt};
  if (j.contains("reference")) m.reference = provenance_from_string(j["reference"].get<std::string>());
  return m;
}

inline json to_json(const PointResult& r) {
  json spectra = json::array();
  for (const auto& s : r.spectra) spectra.push_back(to_json(s));
  json metrics = json::array();
  for (const auto& m : r.metrics) metrics.push_back(to_json(m));
  return {{"gamma", r.gamma},
          {"epsilon", r.epsilon},
          {"periods", r.periods},
          {"modes", r.modes},
          {"T", r.T},
          {"drive_strength", r.drive_strength},
          {"spectra", spectra},
          {"metrics", metrics},
          {"peak_modes", {{"modes", r.peak_modes}, {"provenance", to_string(r.peak_provenance)}}},
          {"warnings", r.warnings},
          {"exit_code", r.exit_code},
          {"error", r.error},
          {"seconds", r.seconds}};
}

inline PointResult point_from_json(const json& j) {
  PointResult r;
  r.gamma = j.at("gamma").get<double>();
  r.epsilon = j.at("epsilon").get<double>();
  r.periods = j.at("periods").get<int>();
  r.modes = j.at("modes").get<int>();
  r.T = j.at("T").get<double>();
  r.drive_strength = j.at("drive_strength").get<double>();
  for (const auto& s : j.at("spectra"))
    r.spectra.push_back({s.at("N").get<std::vector<double>>(),
                         provenance_from_string(s.at("provenance").get<std::string>())});
  for (const auto& m : j.at("metrics")) r.metrics.push_back(metric_from_json(m));
  r.peak_modes = j.at("peak_modes").at("modes").get<std::vector<int>>();
  r.peak_provenance = provenance_from_string(j.at("peak_modes").at("provenance").get<std::string>());
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.exit_code = j.at("exit_code").get<int>();
  r.error = j.at("error").get<std::string>();
  r.seconds = j.at("seconds").get<double>();
  return r;
}

inline json to_json(const PropertyResult& p) {
  return {{"name", p.name},
          {"measured", p.measured},
          {"lower", detail::optional_to_json(p.lower)},
          {"upper", detail::optional_to_json(p.upper)},
          {"provenance", to_string(p.provenance)},
          {"passed", p.passed},
          {"detail", p.detail}};
}

inline PropertyResult property_from_json(const json& j) {
  return {j.at("name").get<std::string>(),
          j.at("measured").get<double>(),
          detail::optional_from_json<double>(j.at("lower")),
          detail::optional_from_json<double>(j.at("upper")),
          provenance_from_string(j.at("provenance").get<std::string>()),
          j.at("passed").get<bool>(),
          j.at("detail").get<std::string>()};
}

inline json to_json(const RunRecord& r) {
  json points = json::array();
  for (const auto& p : r.points) points.push_back(to_json(p));
  json metrics = json::array();
  for (const auto& m : r.metrics) metrics.push_back(to_json(m));
  json props = json::array();
  for (const auto& p : r.properties) props.push_back(to_json(p));
  return {{"version", r.version}, {"spec", to_json(r.spec)}, {"points", points},
          {"metrics", metrics},   {"properties", props},     {"warnings", r.warnings},
          {"exit_code", r.exit_code}, {"seconds", r.seconds}};
}

inline RunRecord run_record_from_json(const json& j) {
  try {
    RunRecord r;
    r.version = j.at("version").get<std::string>();
    r.spec = run_spec_from_json(j.at("spec"));
    for (const auto& p : j.at("points")) r.points.push_back(point_from_json(p));
    for (const auto& m : j.at("metrics")) r.metrics.push_back(metric_from_json(m));
    for (const auto& p : j.at("properties")) r.properties.push_back(property_from_json(p));
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.exit_code = j.at("exit_code").get<int>();
    r.seconds = j.at("seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed run record: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Text output.

inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One row per (point, k, non-analytic-resonant spectrum); N_analytic is the
/// analytic-resonant value when present. Failed points get a single row.
inline void write_summary_csv(std::ostream& out, const RunRecord& r) {
  out << "gamma,epsilon,M,K,k,N_numeric,N_analytic,rel_err,provenance\n";
  for (const auto& p : r.points) {
    const std::string head = format_g17(p.gamma) + "," + format_g17(p.epsilon) + "," +
                             std::to_string(p.periods) + "," + std::to_string(p.modes) + ",";
    if (!p.ok()) {
      out << head << ",,,,failed\n";
      continue;
    }
    const PhotonSpectrum* analytic = p.spectrum(Provenance::analytic_resonant);
    for (const auto& s : p.spectra) {
      if (s.provenance == Provenance::analytic_resonant) continue;
      for (int k = 1; k <= s.modes(); ++k) {
        const double n = s.N[static_cast<std::size_t>(k - 1)];
        out << head << k << "," << format_g17(n) << ",";
        if (analytic) {
          const double a = analytic->N[static_cast<std::size_t>(k - 1)];
          out << format_g17(a) << ",";
          if (a > 0.0) out << format_g17(std::abs(n - a) / a);
        } else {
          out << ",";
        }
        out << "," << to_string(s.provenance) << "\n";
      }
    }
  }
}

/// Columnar trajectory: a `#` header naming each column, then one line per
/// sample with t followed by real and imaginary parts of each matrix entry,
/// row-major.
inline void write_trajectory(const std::filesystem::path& path, const std::string& provenance,
                             const std::vector<std::string>& blocks,
                             const std::vector<std::pair<double, std::vector<const CMatrix*>>>& rows) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << "# provenance " << provenance << "\n# t";
  if (!rows.empty())
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const CMatrix& m = *rows.front().second[b];
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          out << " " << blocks[b] << "(" << i + 1 << "," << j + 1 << ").re " << blocks[b] << "("
              << i + 1 << "," << j + 1 << ").im";
    }
  out << "\n";
  for (const auto& [t, mats] : rows) {
    out << format_g17(t);
    for (const CMatrix* m : mats)
      for (Eigen::Index i = 0; i < m->rows(); ++i)
        for (Eigen::Index j = 0; j < m->cols(); ++j)
          out << " " << format_g17((*m)(i, j).real()) << " " << format_g17((*m)(i, j).imag());
    out << "\n";
  }
}

inline std::string point_tag(const PointResult& r) {
  return "g" + format_g17(r.gamma) + "_e" + format_g17(r.epsilon) + "_M" +
         std::to_string(r.periods) + "_K" + std::to_string(r.modes);
}

/// Writes summary.csv and/or record.json under spec.out_dir.
inline void write_outputs(const RunRecord& r) {
  if (r.spec.out_dir.empty()) return;
  const std::filesystem::path dir(r.spec.out_dir);
  if (r.spec.format != OutputFormat::records) {
    std::ofstream csv(dir / "summary.csv");
    if (!csv) throw InvalidInput("cannot write " + (dir / "summary.csv").string());
    write_summary_csv(csv, r);
  }
  if (r.spec.format != OutputFormat::csv) {
    std::ofstream rec(dir / "record.json");
    if (!rec) throw InvalidInput("cannot write " + (dir / "record.json").string());
    rec << to_json(r).dump(2) << "\n";
  }
}

inline void prepare_output_dir(const RunSpec& s) {
  if (s.out_dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(s.out_dir, ec);
  const auto probe = std::filesystem::path(s.out_dir) / ".write-test";
  std::ofstream f(probe);
  if (ec || !f) throw InvalidInput("output directory '" + s.out_dir + "' is not writable");
  f.close();
  std::filesystem::remove(probe, ec);
}

/// Human-readable summary for the terminal.
inline void print_summary(std::ostream& out, const RunRecord& r) {
  for (const auto& p : r.points) {
    out << "gamma=" << p.gamma << " epsilon=" << p.epsilon << " M=" << p.periods
        << " K=" << p.modes << " eps*w1*T=" << p.drive_strength;
    if (!p.ok()) {
      out << "  FAILED: " << p.error << "\n";
      continue;
    }
    out << "\n  k";
    for (const auto& s : p.spectra) out << "  " << to_string(s.provenance);
    out << "\n";
    const int shown = std::min(p.modes, static_cast<int>(std::ceil(p.gamma)) + 2);
    for (int k = 1; k <= shown; ++k) {
      out << "  " << k;
      for (const auto& s : p.spectra) out << "  " << format_g17(s.N[static_cast<std::size_t>(k - 1)]);
      out << "\n";
    }
    if (!p.spectra.empty()) {
      out << "  peak modes (" << to_string(p.peak_provenance) << "):";
      for (int k : p.peak_modes) out << " " << k;
      out << "\n";
    }
    for (const auto& m : p.metrics)
      out << "  " << m.name << " = " << m.value << " [" << to_string(m.provenance)
          << (m.reference ? " vs " + to_string(*m.reference) : "") << "]\n";
    for (const auto& w : p.warnings) out << "  warning: " << w << "\n";
  }
  for (const auto& m : r.metrics)
    out << m.name << " = " << m.value << " [" << to_string(m.provenance)
        << (m.reference ? " vs " + to_string(*m.reference) : "") << "]\n";
  for (const auto& p : r.properties) {
    out << (p.passed ? "PASS " : "FAIL ") << p.name << "  measured=" << p.measured;
    if (p.lower) out << "  lower=" << *p.lower;
    if (p.upper) out << "  upper=" << *p.upper;
    out << "  [" << to_string(p.provenance) << "]";
    if (!p.detail.empty()) out << "  " << p.detail;
    out << "\n";
  }
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// Commands.

using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline int exit_code_for(const std::exception& e) {
  return dynamic_cast<const InvalidInput*>(&e) ? 2 : 1;
}

inline PointResult describe(const CavityParams& p) {
  PointResult r;
  r.gamma = p.gamma();
  r.epsilon = p.epsilon();
  r.periods = static_cast<int>(std::lround(p.T() / p.drive_period()));
  r.modes = p.modes();
  r.T = p.T();
  r.drive_strength = p.drive_strength();
  if (p.perturbative_warning())
    r.warnings.push_back("eps*w1*T = " + format_g17(p.drive_strength()) + " exceeds " +
                         format_g17(kPerturbativeLimit) + "; first-order results are unreliable");
  return r;
}

inline void add_defect(PointResult& r, const std::string& name, const BogoliubovPair& b,
                       const CavityParams& p, double scale) {
  const double d = unitarity_defect(b, std::max(1, p.modes() / 2));
  r.metrics.push_back({name, d, b.provenance, std::nullopt});
  const double tol = normalization_tolerance(b.provenance, p, scale);
  if (d > tol)
    r.warnings.push_back(name + " " + format_g17(d) + " exceeds tolerance " + format_g17(tol) +
                         " for " + to_string(b.provenance));
}

inline void set_peaks(PointResult& r, const PhotonSpectrum& s, double tie) {
  const auto peaks = peak_mode(s, tie);
  r.peak_modes.assign(peaks.begin(), peaks.end());
  r.peak_provenance = s.provenance;
}

inline std::vector<double> sample_times(const CavityParams& p, int samples) {
  if (samples > 0) return uniform_times(p.T(), samples);
  return {p.T()};
}

}  // namespace detail

/// Full integration, Bogoliubov projection and analytic comparison at one point.
inline PointResult simulate_point(const RunSpec& spec, const CavityParams& p) {
  const auto t0 = std::chrono::steady_clock::now();
  PointResult r = detail::describe(p);
  if (spec.matching == StartMatching::kinematic)
    r.warnings.push_back("kinematic start: the Bogoliubov identity holds only to O(epsilon)");
  const auto times = detail::sample_times(p, spec.trajectory_samples);
  const auto states = integrate_full(p, spec.integrator, times, spec.matching);
  const auto pair = project_bogoliubov(states.back(), p);
  r.spectra.push_back(photon_number(pair));
  detail::add_defect(r, "unitarity_defect", pair, p, spec.defect_scale);
  if (p.integer_gamma()) r.spectra.push_back(analytic_spectrum(p));
  detail::set_peaks(r, r.spectra.front(), spec.peak_tie);
  if (spec.trajectory_samples > 0) {
    std::vector<std::pair<double, std::vector<const CMatrix*>>> rows;
    for (const auto& s : states) rows.push_back({s.t, {&s.Q, &s.P}});
    write_trajectory(std::filesystem::path(spec.out_dir) / ("trajectory_" + point_tag(r) + ".dat"),
                     to_string(Provenance::numeric_full), {"Q", "P"}, rows);
  }
  r.seconds = detail::seconds_since(t0);
  return r;
}

/// Closed-form series at one point.
inline PointResult perturb_point(const RunSpec& spec, const CavityParams& p) {
  const auto t0 = std::chrono::steady_clock::now();
  PointResult r = detail::describe(p);
  const PerturbativeSolution series(p, spec.order);
  const auto first = analytic_first_order_pair(p);
  r.spectra.push_back(photon_number(first));
  detail::add_defect(r, "unitarity_defect_first_order", first, p, spec.defect_scale);
  if (p.integer_gamma()) {
    const auto resonant = analytic_resonant_pair(p);
    r.spectra.push_back(photon_number(resonant));
    detail::add_defect(r, "unitarity_defect_resonant", resonant, p, spec.defect_scale);
  } else {
    r.warnings.push_back("non-integer gamma: resonant closed forms skipped");
  }
  detail::set_peaks(r, r.spectra.back(), spec.peak_tie);
  if (spec.trajectory_samples > 0) {
    std::vector<XState> states;
    for (double t : uniform_times(p.T(), spec.trajectory_samples)) states.push_back(series.state(t));
    std::vector<std::pair<double, std::vector<const CMatrix*>>> rows;
    for (const auto& s : states) rows.push_back({s.t, {&s.X}});
    write_trajectory(std::filesystem::path(spec.out_dir) / ("trajectory_" + point_tag(r) + ".dat"),
                     to_string(Provenance::analytic_first_order) + " order " +
                         std::to_string(spec.order),
                     {"X"}, rows);
  }
  r.seconds = detail::seconds_since(t0);
  return r;
}

/// max over sampled t ∈ [0, T] of |X_lin − (X⁽⁰⁾ + εX⁽¹⁾)|.
inline double first_order_deviation(const CavityParams& p, const IntegratorConfig& cfg, int samples) {
  const auto times = uniform_times(p.T(), samples);
  const auto lin = integrate_linearized(p, cfg, times);
  const PerturbativeSolution series(p, 1);
  double worst = 0.0;
  for (const auto& s : lin) worst = std::max(worst, (s.X - series.state(s.t).X).cwiseAbs().maxCoeff());
  return worst;
}

/// Numeric-full, numeric-linearized and analytic spectra side by side.
inline PointResult compare_point(const RunSpec& spec, const CavityParams& p) {
  const auto t0 = std::chrono::steady_clock::now();
  p.require_integer_gamma();
  PointResult r = detail::describe(p);
  const auto full = project_bogoliubov(evolve_full(p, spec.integrator, spec.matching), p);
  const auto lin = project_bogoliubov(evolve_linearized(p, spec.integrator), p);
  const auto first = analytic_first_order_pair(p);
  r.spectra = {photon_number(full), photon_number(lin), photon_number(first), analytic_spectrum(p)};
  detail::add_defect(r, "unitarity_defect_full", full, p, spec.defect_scale);
  detail::add_defect(r, "unitarity_defect_linearized", lin, p, spec.defect_scale);
  detail::add_defect(r, "unitarity_defect_first_order", first, p, spec.defect_scale);
  r.metrics.push_back({"max_trajectory_deviation",
                       first_order_deviation(p, spec.integrator, spec.deviation_samples),
                       Provenance::numeric_linearized, Provenance::analytic_first_order});
  const auto& nf = r.spectra.front().N;
  const auto& na = r.spectra.back().N;
  double worst = 0.0;
  for (std::size_t k = 0; k < na.size(); ++k)
    if (na[k] > 0.0) worst = std::max(worst, std::abs(nf[k] - na[k]) / na[k]);
  r.metrics.push_back({"max_resonant_rel_err", worst, Provenance::numeric_full,
                       Provenance::analytic_resonant});
  detail::set_peaks(r, r.spectra.front(), spec.peak_tie);
  r.seconds = detail::seconds_since(t0);
  return r;
}

namespace detail {

/// Runs f(i) for i in [0, n) on at most `workers` threads.
template <class F>
void parallel_for(std::size_t n, int workers, F&& f) {
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) f(i);
  };
  const std::size_t extra = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < extra; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

inline RunRecord single_point(const RunSpec& spec,
                              PointResult (*fn)(const RunSpec&, const CavityParams&)) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_spec(spec);
  prepare_output_dir(spec);
  RunRecord r;
  r.spec = spec;
  const auto [g, e, m, k] = grid(spec).front();
  r.points.push_back(fn(spec, point_params(spec, g, e, m, k)));
  r.seconds = seconds_since(t0);
  return r;
}

}  // namespace detail

inline RunRecord cmd_simulate(const RunSpec& spec) {
  return detail::single_point(spec, simulate_point);
}

inline RunRecord cmd_perturb(const RunSpec& spec) {
  return detail::single_point(spec, perturb_point);
}

/// With two epsilons also reports the ε-scaling exponent of the first-order
/// trajectory deviation.
inline RunRecord cmd_compare(const RunSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_spec(spec);
  for (double g : spec.gamma) CavityParams(spec.L0, 0.0, g, 0.0, 1).require_integer_gamma();
  prepare_output_dir(spec);
  RunRecord r;
  r.spec = spec;
  for (const auto& [g, e, m, k] : grid(spec)) r.points.push_back(compare_point(spec, point_params(spec, g, e, m, k)));
  if (r.points.size() == 2) {
    const auto& a = r.points[0];
    const auto& b = r.points[1];
    const double da = a.metric("max_trajectory_deviation")->value;
    const double db = b.metric("max_trajectory_deviation")->value;
    r.metrics.push_back({"deviation_scaling_exponent",
                         std::log(da / db) / std::log(a.epsilon / b.epsilon),
                         Provenance::numeric_linearized, Provenance::analytic_first_order});
  }
  r.seconds = detail::seconds_since(t0);
  return r;
}

/// Cartesian product of the axes on a bounded worker pool. Failures are
/// recorded per point; the record's exit code is 1 if any point failed
/// numerically, else 2 if any input was rejected.
inline RunRecord cmd_sweep(const RunSpec& spec, const ProgressFn& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_spec(spec);
  prepare_output_dir(spec);
  const auto points = grid(spec);
  RunRecord r;
  r.spec = spec;
  r.points.resize(points.size());
  std::mutex mu;
  std::size_t done = 0;
  detail::parallel_for(points.size(), spec.workers, [&](std::size_t i) {
    const auto [g, e, m, k] = points[i];
    PointResult& out = r.points[i];
    try {
      out = simulate_point(spec, point_params(spec, g, e, m, k));
    } catch (const std::exception& ex) {
      out = detail::describe(point_params(spec, g, e, m, k));
      out.exit_code = detail::exit_code_for(ex);
      out.error = ex.what();
    }
    if (progress) {
      std::lock_guard lock(mu);
      progress("[" + std::to_string(++done) + "/" + std::to_string(points.size()) + "] " +
               point_tag(out) + (out.ok() ? "" : " failed"));
    }
  });
  for (const auto& p : r.points)
    if (!p.ok()) r.exit_code = (r.exit_code == 1 || p.exit_code == 1) ? 1 : 2;
  r.seconds = detail::seconds_since(t0);
  return r;
}

inline constexpr double kDetunedGamma = 2.5;
inline constexpr int kDetunedPeriods[2] = {50, 200};

/// Property suite at the spec's point (first value of each axis).
inline RunRecord cmd_validate(const RunSpec& spec, const ProgressFn& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_spec(spec);
  prepare_output_dir(spec);
  RunRecord r;
  r.spec = spec;
  const auto [g, eps, M, Kspec] = grid(spec).front();
  const CavityParams p = point_params(spec, g, eps, M, Kspec);
  const int K = p.modes();
  const auto tight = IntegratorConfig::tight();
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };

  note("coupling antisymmetry");
  RMatrix G = CouplingMatrix(K).matrix();
  if (spec.flip_coupling_sign)
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < k; ++j) G(k, j) = -G(k, j);
  r.properties.push_back(make_property("coupling_antisymmetry", (G + G.transpose()).cwiseAbs().maxCoeff(),
                                       std::nullopt, 1e-15, Provenance::analytic_first_order,
                                       "max |g_kj + g_jk|"));

  note("variable map round trip");
  {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> d(0.0, 1.0);
    QPState s{0.3, CMatrix(K, K), CMatrix(K, K)};
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) {
        s.Q(i, j) = {d(rng), d(rng)};
        s.P(i, j) = {d(rng), d(rng)};
      }
    const auto back = qp_from_x(x_from_qp(s, p), p);
    const double scale = std::max(s.Q.cwiseAbs().maxCoeff(), s.P.cwiseAbs().maxCoeff());
    const double err =
        std::max((back.Q - s.Q).cwiseAbs().maxCoeff(), (back.P - s.P).cwiseAbs().maxCoeff()) / scale;
    r.properties.push_back(make_property("variable_map_round_trip", err, std::nullopt, 1e-13,
                                         Provenance::numeric_linearized,
                                         "relative error of QP -> X -> QP"));
  }

  note("free evolution");
  {
    const auto p0 = p.with_epsilon(0.0);
    const auto s = evolve_full(p0, IntegratorConfig::tight(1e-13, 1e-15));
    double err = 0.0;
    for (int n = 1; n <= K; ++n)
      for (int k = 1; k <= K; ++k) {
        const double w = p0.omega(k);
        const cplx exact = n == k ? std::polar(1.0, -w * p0.T()) : cplx{};
        err = std::max(err, std::abs(s.Q(n - 1, k - 1) * std::sqrt(2.0 * w) - exact));
      }
    r.properties.push_back(make_property("free_evolution_exactness", err, std::nullopt, 1e-10,
                                         Provenance::numeric_full,
                                         "max |Q_nk(T) sqrt(2 w_k) - delta_nk exp(-i w_k T)| at eps = 0"));
  }

  note("perturbation error scaling");
  {
    const double d1 = first_order_deviation(p, tight, spec.deviation_samples);
    const double d2 = first_order_deviation(p.with_epsilon(0.5 * eps), tight, spec.deviation_samples);
    r.properties.push_back(make_property("first_order_error_eps_squared", d1 / d2, 3.0, 5.0,
                                         Provenance::numeric_linearized,
                                         "max_t |X_lin - (X0 + eps X1)| at eps over eps/2"));
  }

  note("unitarity");
  {
    const auto pair = project_bogoliubov(evolve_full(p, tight, StartMatching::canonical), p);
    const double limit = spec.unitarity_threshold.value_or(kNumericFullDefectTolerance);
    r.properties.push_back(make_property("unitarity", unitarity_defect(pair, std::max(1, K / 2)),
                                         std::nullopt, limit, Provenance::numeric_full,
                                         "max_{n,m <= K/2} |sum_k(a_nk a*_mk - b_nk b*_mk) - delta_nm|"));
  }

  note("detuning suppression");
  {
    const auto pd = CavityParams::from_periods(p.L0(), eps, kDetunedGamma, kDetunedPeriods[1], K);
    const std::vector<double> times{kDetunedPeriods[0] * pd.drive_period(), pd.T()};
    const auto states = integrate_full(pd, tight, times, StartMatching::canonical);
    double peak[2], relative = 0.0;
    for (int i = 0; i < 2; ++i) {
      const auto pi_ = pd.with_duration(times[static_cast<std::size_t>(i)]);
      const auto N = photon_number(project_bogoliubov(states[static_cast<std::size_t>(i)], pi_)).N;
      peak[i] = *std::max_element(N.begin(), N.end());
      const double x = pi_.drive_strength();
      relative = std::max(relative, peak[i] / (0.25 * x * x));
    }
    r.properties.push_back(make_property(
        "detuning_no_secular_growth", std::max(peak[0], peak[1]) / std::min(peak[0], peak[1]),
        std::nullopt, 3.0, Provenance::numeric_full,
        "gamma 2.5: max_k N_k at M = 50 and M = 200, larger over smaller"));
    r.properties.push_back(make_property(
        "detuning_suppression", relative, std::nullopt, 0.01, Provenance::numeric_full,
        "gamma 2.5: max_k N_k over the resonant (eps w1 T)^2 / 4 at the same eps w1 T"));
  }

  for (const auto& prop : r.properties)
    if (!prop.passed) r.exit_code = 1;
  r.seconds = detail::seconds_since(t0);
  return r;
}

/// Dispatches on spec.command.
inline RunRecord run(const RunSpec& spec, const ProgressFn& progress = {}) {
  switch (spec.command) {
    case Command::simulate: return cmd_simulate(spec);
    case Command::perturb: return cmd_perturb(spec);
    case Command::compare: return cmd_compare(spec);
    case Command::sweep: return cmd_sweep(spec, progress);
    case Command::validate: return cmd_validate(spec, progress);
  }
  throw InvalidInput("unknown command");
}

}  // namespace casimir
