// uwbsim: command-line front end for the experiment harness.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uwbcs/harness.hpp"
#include "uwbcs/io.hpp"
#include "uwbcs/selftest.hpp"

namespace {

using namespace uwbcs;

enum Command : unsigned { kRecon = 1, kLocate2d = 2, kLocate3d = 4, kSelftest = 8 };
constexpr unsigned kExperiments = kRecon | kLocate2d | kLocate3d;
constexpr unsigned kLocate = kLocate2d | kLocate3d;

// One tunable: a flag on the commands it applies to, a key in the config
// file section, and an environment variable UWBSIM_<KEY>.
struct Setting {
  const char* section;
  const char* key;
  unsigned commands;
  bool is_flag;
  const char* help;
};

const Setting kSettings[] = {
    {"cli", "threads", kExperiments, false, "Worker threads, 0 = all cores (results do not depend on it)"},
    {"cli", "out", kExperiments, false, "Output CSV path (default: <command>.csv)"},
    {"cli", "gnuplot", kExperiments, false, "Also write a gnuplot data file"},
    {"cli", "quiet", kExperiments | kSelftest, true, "No progress or summary output"},
    {"experiment-harness", "seed", kExperiments | kSelftest, false, "Master seed"},
    {"experiment-harness", "trials", kExperiments, false, "Trials per R_r (recon), per cell (locate2d) or per tag (locate3d)"},
    {"experiment-harness", "snr", kExperiments, false, "SNR in dB for both signal and measurement noise"},
    {"experiment-harness", "rr", kExperiments, false, "Reduction ratio(s) M/N; recon takes a comma list"},
    {"experiment-harness", "algs", kRecon, false, "Comma list of cs_uwb, bp, omp, bcs, direct"},
    {"experiment-harness", "mode", kLocate, false, "Comma list of acquisition modes (cs_uwb, sequential, omp, bp, bcs, direct)"},
    {"experiment-harness", "anchors", kLocate, false, "Inline \"x,y[,z];...\" in mm, or a file with one anchor per line"},
    {"experiment-harness", "room", kLocate, false, "Tag region \"lo;hi\" in mm, e.g. \"0,0,0;5000,5000,4000\""},
    {"experiment-harness", "resolution", kLocate2d, false, "Grid cells per side"},
    {"experiment-harness", "tags", kLocate3d, false, "Random tag positions"},
    {"signal-model", "n", kExperiments, false, "Samples per frame"},
    {"signal-model", "dt_ps", kExperiments, false, "Sample spacing (ps)"},
    {"signal-model", "sigma_ps", kExperiments, false, "Gaussian pulse sigma (ps)"},
    {"signal-model", "min_paths", kExperiments, false, "Fewest multipath components"},
    {"signal-model", "max_paths", kExperiments, false, "Most multipath components"},
    {"signal-model", "decay_ns", kExperiments, false, "Echo amplitude decay constant (ns)"},
    {"signal-model", "delay_spread_ns", kExperiments, false, "Largest excess delay (ns)"},
    {"signal-model", "fading", kExperiments, false, "Relative amplitude spread in [0, 1]"},
    {"signal-model", "jitter", kLocate, false, "Per-station echo amplitude jitter"},
    {"signal-model", "echo_ceiling", kExperiments, false, "Echo envelope cap relative to the first path"},
    {"cs-acquisition", "projection", kExperiments, false, "gaussian or bernoulli"},
    {"cs-acquisition", "projection_seed", kExperiments, false, "Seed of the projection matrices"},
    {"cs-acquisition", "gate_lead", kExperiments, false, "Samples between gate opening and the first arrival"},
    {"sparse-recovery", "coupling", kExperiments, false, "Shared hyperparameter rule: summed, averaged or joint"},
    {"sequential-sampler", "drift_ppm", kLocate, false, "Extension-scale error in ppm (30000 = 3% of K)"},
    {"positioning-pipeline", "interleave", kLocate, true, "Solve TDOA between cs_uwb reconstruction iterations"},
    {"selftest", "list", kSelftest, true, "Print the check names and exit"},
    {"selftest", "check", kSelftest, false, "Run only this check"},
    {"selftest", "inject_fault", kSelftest, false, "Corrupt the implementation side of this check"},
};

std::string flag_name(const Setting& s) {
  std::string f = s.key;
  for (char& c : f)
    if (c == '_') c = '-';
  return "--" + f;
}

std::string env_name(const Setting& s) {
  std::string e = "UWBSIM_";
  for (const char* p = s.key; *p; ++p) e += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
  return e;
}

/// A bad value or key; reported with exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Values {
  std::map<std::string, std::string> by_key;  // merged: flag > env > file

  bool has(const std::string& key) const { return by_key.count(key) != 0; }
  const std::string& raw(const std::string& key) const { return by_key.at(key); }

  [[noreturn]] static void bad(const std::string& key, const std::string& why) {
    throw ConfigError("invalid value for '" + key + "': " + why);
  }

  double number(const std::string& key) const {
    try {
      return parse_double(raw(key));
    } catch (const Error&) {
      bad(key, "'" + raw(key) + "' is not a number");
    }
  }

  long long integer(const std::string& key, long long lo) const {
    const std::string& s = raw(key);
    long long v = 0;
    std::size_t used = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
      bad(key, "'" + s + "' is not an integer");
    }
    if (used != s.size()) bad(key, "'" + s + "' is not an integer");
    if (v < lo) bad(key, "must be at least " + std::to_string(lo));
    return v;
  }

  bool boolean(const std::string& key) const {
    std::string s = raw(key);
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    bad(key, "'" + raw(key) + "' is not a boolean");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(raw(key));
    for (std::string item; std::getline(ss, item, ',');) {
      const auto a = item.find_first_not_of(" \t");
      const auto b = item.find_last_not_of(" \t");
      if (a == std::string::npos) bad(key, "empty list element");
      out.push_back(item.substr(a, b - a + 1));
    }
    if (out.empty()) bad(key, "empty list");
    return out;
  }
};

std::vector<Eigen::VectorXd> parse_points(const std::string& key, const std::string& text) {
  std::vector<Eigen::VectorXd> points;
  std::string normalized = text;
  for (char& c : normalized)
    if (c == '\n') c = ';';
  std::stringstream ss(normalized);
  for (std::string item; std::getline(ss, item, ';');) {
    if (const auto hash = item.find('#'); hash != std::string::npos) item.erase(hash);
    if (item.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> c;
    std::stringstream is(item);
    for (std::string f; std::getline(is, f, ',');) {
      const auto a = f.find_first_not_of(" \t\r");
      const auto b = f.find_last_not_of(" \t\r");
      try {
        c.push_back(parse_double(a == std::string::npos ? std::string() : f.substr(a, b - a + 1)));
      } catch (const Error&) {
        Values::bad(key, "bad coordinate in '" + item + "'");
      }
    }
    if (c.size() != 2 && c.size() != 3) Values::bad(key, "each point needs 2 or 3 coordinates: '" + item + "'");
    points.push_back(Eigen::Map<Eigen::VectorXd>(c.data(), static_cast<Index>(c.size())));
  }
  for (const auto& p : points)
    if (p.size() != points.front().size()) Values::bad(key, "points mix 2D and 3D coordinates");
  return points;
}

AnchorSet parse_anchors(const std::string& text, Index dim) {
  std::string source = text;
  std::error_code ec;
  if (text.find(',') == std::string::npos || std::filesystem::is_regular_file(text, ec)) {
    try {
      source = read_file(text);
    } catch (const Error& e) {
      Values::bad("anchors", e.what());
    }
  }
  const auto pts = parse_points("anchors", source);
  if (pts.empty()) Values::bad("anchors", "no anchors given");
  if (pts.front().size() != dim)
    Values::bad("anchors", "expected " + std::to_string(dim) + "D coordinates");
  if (static_cast<Index>(pts.size()) < dim + 1)
    Values::bad("anchors", std::to_string(dim) + "D positioning needs at least " + std::to_string(dim + 1) +
                               " anchors, got " + std::to_string(pts.size()));
  AnchorSet a;
  a.positions.resize(dim, static_cast<Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) a.positions.col(static_cast<Index>(i)) = pts[i];
  return a;
}

ExperimentSpec build_spec(ExperimentKind kind, const Values& v) {
  ExperimentSpec s = ExperimentSpec::defaults(kind);
  if (v.has("seed")) s.seed = static_cast<std::uint64_t>(v.integer("seed", 0));
  if (v.has("threads")) s.threads = static_cast<int>(v.integer("threads", 0));
  if (v.has("trials")) s.trials = static_cast<int>(v.integer("trials", 1));
  if (v.has("snr")) s.snr_db = v.number("snr");
  if (v.has("rr")) {
    s.reduction_ratios.clear();
    for (const auto& item : v.list("rr")) {
      double r = 0.0;
      try {
        r = parse_double(item);
      } catch (const Error&) {
        Values::bad("rr", "'" + item + "' is not a number");
      }
      if (!(r > 0.0 && r <= 1.0)) Values::bad("rr", "R_r must lie in (0, 1], got " + item);
      s.reduction_ratios.push_back(r);
    }
    if (kind != ExperimentKind::recon_1d && s.reduction_ratios.size() != 1)
      Values::bad("rr", "positioning runs take a single R_r");
  }
  const char* mode_key = kind == ExperimentKind::recon_1d ? "algs" : "mode";
  if (v.has(mode_key)) {
    s.algorithms.clear();
    for (const auto& item : v.list(mode_key)) {
      try {
        s.algorithms.push_back(parse_mode(item));
      } catch (const Error& e) {
        Values::bad(mode_key, e.what());
      }
    }
  }
  if (kind != ExperimentKind::recon_1d) {
    const Index dim = kind == ExperimentKind::grid_2d ? 2 : 3;
    if (v.has("anchors")) s.anchors = parse_anchors(v.raw("anchors"), dim);
    if (v.has("room")) {
      const auto pts = parse_points("room", v.raw("room"));
      if (pts.size() != 2 || pts[0].size() != dim)
        Values::bad("room", "expected two " + std::to_string(dim) + "D corners \"lo;hi\"");
      if (!(pts[1].array() > pts[0].array()).all()) Values::bad("room", "upper corner must exceed lower corner");
      s.room_lo = pts[0];
      s.room_hi = pts[1];
    }
    if (v.has("resolution")) s.resolution = static_cast<int>(v.integer("resolution", 1));
    if (v.has("tags")) s.tags = static_cast<int>(v.integer("tags", 1));
    if (v.has("drift_ppm")) s.drift = v.number("drift_ppm") * 1e-6;
    if (v.has("jitter")) s.station_jitter = v.number("jitter");
    if (v.has("interleave")) s.interleave = v.boolean("interleave");
  }
  if (v.has("n")) s.acquisition.n = static_cast<Index>(v.integer("n", 8));
  if (v.has("dt_ps")) s.acquisition.dt = v.number("dt_ps") * 1e-12;
  if (v.has("sigma_ps")) s.acquisition.pulse.sigma = v.number("sigma_ps") * 1e-12;
  if (v.has("gate_lead")) s.acquisition.gate_lead = static_cast<Index>(v.integer("gate_lead", 0));
  if (v.has("projection_seed")) s.acquisition.projection_seed = static_cast<std::uint64_t>(v.integer("projection_seed", 0));
  if (v.has("projection")) {
    const std::string& p = v.raw("projection");
    if (p == "gaussian") s.acquisition.projection = ProjectionKind::gaussian;
    else if (p == "bernoulli") s.acquisition.projection = ProjectionKind::bernoulli;
    else Values::bad("projection", "expected gaussian or bernoulli, got '" + p + "'");
  }
  if (v.has("coupling")) {
    s.acquisition.coupling = v.raw("coupling");
    try {
      make_coupling(s.acquisition.coupling);
    } catch (const Error& e) {
      Values::bad("coupling", e.what());
    }
  }
  if (v.has("min_paths")) s.channel.min_paths = static_cast<int>(v.integer("min_paths", 1));
  if (v.has("max_paths")) s.channel.max_paths = static_cast<int>(v.integer("max_paths", 1));
  if (v.has("decay_ns")) s.channel.decay = v.number("decay_ns") * 1e-9;
  if (v.has("delay_spread_ns")) s.channel.delay_spread = v.number("delay_spread_ns") * 1e-9;
  if (v.has("fading")) s.channel.fading = v.number("fading");
  if (v.has("echo_ceiling")) s.echo_ceiling = v.number("echo_ceiling");

  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return s;
}

void print_summary(const ExperimentSpec& spec, const ResultTable& table) {
  std::printf("%-11s %6s  %-22s %10s %10s %10s\n", "algorithm", "R_r", "metric", "median", "mean", "std");
  for (const auto& r : table.rows) {
    if (r.trial != "median") continue;
    if (spec.kind != ExperimentKind::recon_1d && !std::isnan(r.x)) continue;
    const auto find = [&](const char* label) {
      for (const auto* o : table.select(r.algorithm, r.metric, label))
        if (o->reduction_ratio == r.reduction_ratio && std::isnan(o->x)) return o->value;
      return std::numeric_limits<double>::quiet_NaN();
    };
    std::printf("%-11s %6.3f  %-22s %10.4g %10.4g %10.4g\n", r.algorithm.c_str(), r.reduction_ratio,
                r.metric.c_str(), r.value, find("mean"), find("std"));
  }
  if (spec.kind == ExperimentKind::grid_2d) {
    std::printf("\n%-11s %14s %14s %14s %16s\n", "mode", "median cell", "worst cell", "worst/median", "equal-dist point");
    for (Mode m : spec.algorithms) {
      const std::string alg = to_string(m);
      std::vector<double> cells;
      for (const auto* r : table.select(alg, "error_mm", "mean")) cells.push_back(r->value);
      const Summary s = summarize(cells);
      double worst = 0.0;
      for (double c : cells) worst = std::max(worst, c);
      const auto eq = table.select(alg, "equal_point_error_mm", "mean");
      std::printf("%-11s %14.4g %14.4g %14.4g %16.4g\n", alg.c_str(), s.median, worst, worst / s.median,
                  eq.empty() ? std::numeric_limits<double>::quiet_NaN() : eq.front()->value);
    }
  }
}

int run_experiment_command(ExperimentKind kind, const std::string& command, const Values& v) {
  const ExperimentSpec spec = build_spec(kind, v);
  const bool quiet = v.has("quiet") && v.boolean("quiet");
  const std::string out = v.has("out") ? v.raw("out") : command + ".csv";

  Progress progress;
  if (!quiet) {
    progress = [last = std::size_t{0}](std::size_t done, std::size_t total) mutable {
      const std::size_t pct = 100 * done / total;
      if (pct / 10 != last / 10 || done == total) {
        std::fprintf(stderr, "\r%s: %zu/%zu", "progress", done, total);
        if (done == total) std::fputc('\n', stderr);
        last = pct;
      }
    };
  }
  // The callback runs on worker threads; serialize it.
  std::mutex progress_mutex;
  Progress locked;
  if (progress) locked = [&](std::size_t d, std::size_t t) {
    std::lock_guard lock(progress_mutex);
    progress(d, t);
  };

  if (!quiet && kind != ExperimentKind::recon_1d) {
    std::printf("anchors:");
    for (Index i = 0; i < spec.anchors.count(); ++i) {
      std::printf(i ? "; " : " ");
      for (Index d = 0; d < spec.anchors.dim(); ++d)
        std::printf("%s%s", d ? "," : "", format_double(spec.anchors.positions(d, i)).c_str());
    }
    std::printf("\n");
    std::fflush(stdout);
  }

  const ResultTable table = run_experiment(spec, locked);
  export_csv(table, out);
  if (v.has("gnuplot")) export_gnuplot(table, v.raw("gnuplot"));
  if (!quiet) {
    print_summary(spec, table);
    std::printf("wrote %s (%zu rows)\n", out.c_str(), table.size());
  }
  return 0;
}

int run_selftest_command(const Values& v) {
  const auto names = selftest_names();
  if (v.has("list") && v.boolean("list")) {
    for (const auto& n : names) std::printf("%s\n", n.c_str());
    return 0;
  }
  const auto known = [&](const std::string& key) {
    const std::string& n = v.raw(key);
    if (std::find(names.begin(), names.end(), n) == names.end()) Values::bad(key, "unknown check '" + n + "'");
    return n;
  };
  const std::string only = v.has("check") ? known("check") : std::string();
  const std::string fault = v.has("inject_fault") ? known("inject_fault") : std::string();
  const bool quiet = v.has("quiet") && v.boolean("quiet");
  bool all = true;
  for (const auto& n : names) {
    if (!only.empty() && n != only) continue;
    CheckOptions opts;
    if (v.has("seed")) opts.seed = static_cast<std::uint64_t>(v.integer("seed", 0));
    opts.fault = n == fault;
    const CheckResult r = run_check(n, opts);
    all = all && r.passed;
    if (!quiet || !r.passed) std::printf("%s %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
  }
  return all ? 0 : 1;
}

void load_config_file(const std::string& path, unsigned command, std::map<std::string, std::string>& out) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigBase().from_config(in);  // "#" comments, so ";" can separate points
  } catch (const CLI::Error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    std::string section = item.parents.empty() ? std::string() : CLI::detail::join(item.parents, ".");
    std::string key = item.name;
    for (char& c : key)
      if (c == '-') c = '_';
    const Setting* match = nullptr;
    for (const auto& s : kSettings)
      if (section == s.section && key == s.key) match = &s;
    if (!match) throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    if (!(match->commands & command)) continue;  // shared file; key belongs to another command
    out[key] = CLI::detail::join(item.inputs, ",");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UWB TDOA positioning simulator: compressive vs sequential acquisition.", "uwbsim"};
  app.set_help_flag();
  app.set_help_all_flag("-h,--help", "Print this help (all commands and flags) and exit");
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(
      "Every flag can also be set in the --config INI file (section.key, e.g. [sequential-sampler] drift_ppm)\n"
      "or through the environment (UWBSIM_<KEY>, e.g. UWBSIM_THREADS). Flags win over the environment,\n"
      "which wins over the file. Exit codes: 0 success, 1 runtime failure, 2 configuration error.");

  std::string config_path;
  app.add_option("--config", config_path, "INI file with [section] key = value settings")->envname("UWBSIM_CONFIG");

  struct Sub {
    CLI::App* app;
    unsigned command;
  };
  std::vector<Sub> subs = {
      {app.add_subcommand("recon", "1D reconstruction sweep over algorithms and R_r"), kRecon},
      {app.add_subcommand("locate2d", "2D error map over a grid (three anchors)"), kLocate2d},
      {app.add_subcommand("locate3d", "3D room run over random tags (four anchors)"), kLocate3d},
      {app.add_subcommand("selftest", "Oracle and invariant checks"), kSelftest},
  };

  std::map<std::string, std::string> cli_values;
  std::map<std::string, CLI::Option*> options;  // per active command, filled after parse
  std::vector<std::map<std::string, CLI::Option*>> per_sub(subs.size());
  for (std::size_t i = 0; i < subs.size(); ++i) {
    for (const auto& s : kSettings) {
      if (!(s.commands & subs[i].command)) continue;
      const std::string help = std::string(s.help) + "  [" + s.section + "] " + s.key;
      CLI::Option* opt = s.is_flag ? subs[i].app->add_flag(flag_name(s), help)
                                   : subs[i].app->add_option(flag_name(s), help)->type_name("VALUE");
      per_sub[i][s.key] = opt;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::size_t active = 0;
  for (std::size_t i = 0; i < subs.size(); ++i)
    if (subs[i].app->parsed()) active = i;
  const unsigned command = subs[active].command;

  try {
    Values values;
    if (!config_path.empty()) load_config_file(config_path, command, values.by_key);
    for (const auto& s : kSettings) {
      if (!(s.commands & command)) continue;
      if (const char* env = std::getenv(env_name(s).c_str())) values.by_key[s.key] = env;
      CLI::Option* opt = per_sub[active].at(s.key);
      if (opt->count() > 0) values.by_key[s.key] = s.is_flag ? (opt->as<bool>() ? "true" : "false") : opt->as<std::string>();
    }

    switch (command) {
      case kRecon: return run_experiment_command(ExperimentKind::recon_1d, "recon", values);
      case kLocate2d: return run_experiment_command(ExperimentKind::grid_2d, "locate2d", values);
      case kLocate3d: return run_experiment_command(ExperimentKind::room_3d, "locate3d", values);
      default: return run_selftest_command(values);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "uwbsim: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "uwbsim: error: %s\n", e.what());
    return 1;
  }
}
