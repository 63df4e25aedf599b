#include "uwbcs/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <ranges>
#include <thread>

#include <Eigen/QR>

#include "uwbcs/arrival_detection.hpp"
#include "uwbcs/io.hpp"

namespace uwbcs {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* kind_names[] = {"recon_1d", "grid_2d", "room_3d"};

}  // namespace

std::string to_string(ExperimentKind kind) { return kind_names[static_cast<int>(kind)]; }

ExperimentKind parse_experiment_kind(const std::string& name) {
  for (int k = 0; k < 3; ++k)
    if (name == kind_names[k]) return static_cast<ExperimentKind>(k);
  throw InvalidArgument("unknown experiment '" + name + "' (expected recon_1d, grid_2d or room_3d)");
}

ExperimentSpec ExperimentSpec::defaults(ExperimentKind kind) {
  ExperimentSpec s;
  s.kind = kind;
  switch (kind) {
    case ExperimentKind::recon_1d:
      s.algorithms = {Mode::cs_uwb, Mode::bp, Mode::omp, Mode::bcs};
      s.reduction_ratios = {0.10, 0.15, 0.21, 0.25, 0.30};
      s.trials = 50;
      break;
    case ExperimentKind::grid_2d:
      s.algorithms = {Mode::cs_uwb, Mode::sequential};
      s.reduction_ratios = {0.25};
      s.trials = 10;
      s.anchors.positions.resize(2, 3);
      s.anchors.positions << 0, 4000, 2000,
                             0, 0, 4000;
      s.room_lo = Eigen::Vector2d(0, 0);
      s.room_hi = Eigen::Vector2d(4000, 4000);
      break;
    case ExperimentKind::room_3d:
      s.algorithms = {Mode::cs_uwb, Mode::sequential};
      s.reduction_ratios = {0.25};
      s.trials = 1;
      s.anchors.positions.resize(3, 4);
      s.anchors.positions << 0, 4000, 4410, 0,
                             0, 0, 4435, 4545,
                             170, 1855, 2860, 3260;
      s.room_lo = Eigen::Vector3d(0, 0, 0);
      s.room_hi = Eigen::Vector3d(5000, 5000, 4000);
      break;
  }
  return s;
}

void ExperimentSpec::validate() const {
  require(trials >= 1, "trials must be at least 1");
  require(!algorithms.empty(), "algorithms must not be empty");
  require(!reduction_ratios.empty(), "at least one R_r value is required");
  for (double r : reduction_ratios) require(r > 0.0 && r <= 1.0, "R_r values must lie in (0, 1]");
  require(!std::isnan(snr_db), "snr must not be NaN");
  require(threads >= 0, "threads must be non-negative");
  require(station_jitter >= 0.0, "station jitter must be non-negative");
  require(echo_ceiling > 0.0, "echo ceiling must be positive");
  require(drift > -1.0, "drift must exceed -100%");
  acquisition.validate();
  channel.validate();

  if (kind == ExperimentKind::recon_1d) {
    for (Mode m : algorithms)
      require(m != Mode::sequential, "recon_1d does not support the sequential mode");
    return;
  }
  anchors.validate();
  const Index dim = anchors.dim();
  require(room_lo.size() == dim && room_hi.size() == dim, "room bounds must match the anchor dimension");
  require((room_hi.array() > room_lo.array()).all(), "room bounds must have positive extent");
  if (kind == ExperimentKind::grid_2d) {
    require(dim == 2, "grid_2d needs planar anchors");
    require(anchors.count() >= 3, "grid_2d needs at least 3 anchors");
    require(resolution >= 1, "resolution must be positive");
  } else {
    require(dim == 3, "room_3d needs 3D anchors");
    require(anchors.count() >= 4, "room_3d needs at least 4 anchors");
    require(tags >= 1, "tags must be at least 1");
  }
}

// ------------------------------------------------------------ rows / CSV

bool same_row(const ResultRow& a, const ResultRow& b) {
  auto eq = [](double u, double v) { return (std::isnan(u) && std::isnan(v)) || u == v; };
  return a.experiment == b.experiment && a.algorithm == b.algorithm && eq(a.reduction_ratio, b.reduction_ratio) &&
         eq(a.snr_db, b.snr_db) && eq(a.x, b.x) && eq(a.y, b.y) && eq(a.z, b.z) && a.trial == b.trial &&
         a.metric == b.metric && eq(a.value, b.value);
}

bool same_table(const ResultTable& a, const ResultTable& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i)
    if (!same_row(a.rows[i], b.rows[i])) return false;
  return true;
}

std::vector<const ResultRow*> ResultTable::select(std::string_view algorithm, std::string_view metric,
                                                  std::string_view trial) const {
  std::vector<const ResultRow*> out;
  for (const auto& r : rows)
    if ((algorithm.empty() || r.algorithm == algorithm) && (metric.empty() || r.metric == metric) &&
        (trial.empty() || r.trial == trial))
      out.push_back(&r);
  return out;
}

namespace {

std::string field(double v) { return std::isnan(v) ? std::string() : format_double(v); }

double parse_field(std::string_view f) { return f.empty() ? kNaN : parse_double(f); }

void check_text(const std::string& s, const char* what) {
  require(s.find_first_of(",\n\r\"") == std::string::npos,
          std::string("CSV ") + what + " must not contain commas, quotes or newlines: '" + s + "'");
}

}  // namespace

std::string to_csv(const ResultTable& table) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : table.rows) {
    check_text(r.experiment, "experiment");
    check_text(r.algorithm, "algorithm");
    check_text(r.trial, "trial");
    check_text(r.metric, "metric");
    out += r.experiment + ',' + r.algorithm + ',' + field(r.reduction_ratio) + ',' + field(r.snr_db) + ',' +
           field(r.x) + ',' + field(r.y) + ',' + field(r.z) + ',' + r.trial + ',' + r.metric + ',' +
           field(r.value) + '\n';
  }
  return out;
}

ResultTable parse_csv(std::string_view text) {
  ResultTable table;
  std::size_t pos = 0;
  int line_no = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (header) {
      if (line != kCsvHeader) throw IoError("CSV header mismatch on line 1");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::size_t s = 0;
    while (true) {
      const std::size_t c = line.find(',', s);
      f.push_back(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
      if (c == std::string_view::npos) break;
      s = c + 1;
    }
    if (f.size() != 10) throw IoError("CSV line " + std::to_string(line_no) + ": expected 10 fields");
    try {
      ResultRow r;
      r.experiment = std::string(f[0]);
      r.algorithm = std::string(f[1]);
      r.reduction_ratio = parse_field(f[2]);
      r.snr_db = parse_field(f[3]);
      r.x = parse_field(f[4]);
      r.y = parse_field(f[5]);
      r.z = parse_field(f[6]);
      r.trial = std::string(f[7]);
      r.metric = std::string(f[8]);
      r.value = parse_field(f[9]);
      table.rows.push_back(std::move(r));
    } catch (const InvalidArgument& e) {
      throw IoError("CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (header) throw IoError("CSV is empty");
  return table;
}

void export_csv(const ResultTable& table, const std::filesystem::path& path) {
  if (table.empty()) throw InvalidArgument("refusing to export an empty result table");
  write_file_atomic(path, to_csv(table));
}

ResultTable import_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

std::string to_gnuplot(const ResultTable& table) {
  if (table.empty()) throw InvalidArgument("refusing to export an empty result table");
  std::string out;
  const bool grid = table.rows.front().experiment == "grid_2d";
  std::vector<std::string> algs;
  for (const auto& r : table.rows)
    if (r.metric == "error_mm" && r.trial == "mean" &&
        std::find(algs.begin(), algs.end(), r.algorithm) == algs.end())
      algs.push_back(r.algorithm);
  if (algs.empty()) throw InvalidArgument("table has no per-position mean errors to plot");

  for (std::size_t a = 0; a < algs.size(); ++a) {
    if (a) out += "\n\n";
    out += "# " + algs[a] + '\n';
    const auto rows = table.select(algs[a], "error_mm", "mean");
    if (grid) {
      // Cells are emitted row-major in y, then x; rebuild the square.
      std::vector<double> xs, ys;
      for (const auto* r : rows) {
        if (std::find(xs.begin(), xs.end(), r->x) == xs.end()) xs.push_back(r->x);
        if (std::find(ys.begin(), ys.end(), r->y) == ys.end()) ys.push_back(r->y);
      }
      std::sort(xs.begin(), xs.end());
      std::sort(ys.begin(), ys.end());
      std::map<std::pair<double, double>, double> cell;
      for (const auto* r : rows) cell[{r->x, r->y}] = r->value;
      for (double y : ys) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
          if (i) out += ' ';
          const auto it = cell.find({xs[i], y});
          out += it == cell.end() ? std::string("nan") : format_double(it->second);
        }
        out += '\n';
      }
    } else {
      for (const auto* r : rows)
        if (!std::isnan(r->x))
          out += field(r->x) + ' ' + field(r->y) + ' ' + field(r->z) + ' ' + format_double(r->value) + '\n';
    }
  }
  return out;
}

void export_gnuplot(const ResultTable& table, const std::filesystem::path& path) {
  write_file_atomic(path, to_gnuplot(table));
}

// ------------------------------------------------------------ execution

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) {
    s.median = s.mean = s.std = kNaN;
    return s;
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  return s;
}

Eigen::VectorXd equal_distance_point(const AnchorSet& anchors) {
  anchors.validate();
  const Index dim = anchors.dim();
  const Eigen::VectorXd a0 = anchors.positions.col(0);
  Eigen::MatrixXd m(anchors.count() - 1, dim);
  Eigen::VectorXd rhs(anchors.count() - 1);
  for (Index i = 1; i < anchors.count(); ++i) {
    const Eigen::VectorXd ai = anchors.positions.col(i);
    m.row(i - 1) = 2.0 * (ai - a0).transpose();
    rhs[i - 1] = ai.squaredNorm() - a0.squaredNorm();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  if (qr.rank() < dim) throw InvalidArgument("anchors have no unique equal-distance point");
  return qr.solve(rhs);
}

namespace {

ResultRow make_row(const ExperimentSpec& spec, const std::string& alg, double rr, double x, double y, double z,
                   std::string trial, std::string metric, double value) {
  return ResultRow{to_string(spec.kind), alg, rr, spec.snr_db, x, y, z, std::move(trial), std::move(metric), value};
}

void push_summary(std::vector<ResultRow>& out, const ResultRow& key, const std::vector<double>& values) {
  const Summary s = summarize(values);
  for (auto [label, v] : {std::pair{"median", s.median}, {"mean", s.mean}, {"std", s.std}}) {
    ResultRow r = key;
    r.trial = label;
    r.value = v;
    out.push_back(r);
  }
}

void tick(const Progress& progress, std::atomic<std::size_t>& done, std::size_t total) {
  const std::size_t d = ++done;
  if (progress) progress(d, total);
}

}  // namespace

// ------------------------------------------------------------ recon_1d

ResultTable run_recon_1d(const ExperimentSpec& spec, const Progress& progress) {
  spec.validate();
  require(spec.kind == ExperimentKind::recon_1d, "run_recon_1d needs kind recon_1d");
  const auto& acq = spec.acquisition;
  const Index n = acq.n;
  const std::size_t n_rr = spec.reduction_ratios.size();
  const std::size_t n_alg = spec.algorithms.size();
  const bool want_cs = std::find(spec.algorithms.begin(), spec.algorithms.end(), Mode::cs_uwb) != spec.algorithms.end();

  // Fixed projection hardware per R_r: prefixes of one matrix, so larger R_r
  // sees a superset of the measurements.
  const Index m_max = std::ranges::max(spec.reduction_ratios | std::views::transform([&](double r) {
                                         return measurements_for_ratio(r, n);
                                       }));
  const ProjectionMatrix full = make_projection(m_max, n, acq.projection, acq.projection_seed);
  std::vector<ProjectionMatrix> phis;
  std::vector<std::unique_ptr<CsUwbOperator>> ops;
  const TemplateDictionary dict = want_cs ? TemplateDictionary::make(n, acq.dt, acq.pulse)
                                          : TemplateDictionary{};
  for (double r : spec.reduction_ratios) {
    ProjectionMatrix p = full;
    p.entries = full.entries.topRows(measurements_for_ratio(r, n));
    if (want_cs) ops.push_back(std::make_unique<CsUwbOperator>(std::span(&p.entries, 1), dict));
    phis.push_back(std::move(p));
  }
  const auto coupling = std::shared_ptr<const HyperparameterCoupling>(make_coupling(acq.coupling));

  struct Cell {
    bool failed = false;
    double p_re = kNaN, arrival = kNaN;
    int iterations = 0;
  };
  // results[trial][rr][alg]
  std::vector<std::vector<std::vector<Cell>>> results(
      static_cast<std::size_t>(spec.trials), std::vector<std::vector<Cell>>(n_rr, std::vector<Cell>(n_alg)));

  std::atomic<std::size_t> done{0};
  parallel_for(static_cast<std::size_t>(spec.trials), spec.threads, [&](std::size_t t) {
    std::mt19937_64 rng(derive_seed(spec.seed, 1, t));
    ChannelProfile profile = spec.channel;
    profile.first_delay = acq.dt * (static_cast<double>(acq.gate_lead) + std::uniform_real_distribution<>(0, 1)(rng));
    const ChannelRealization ch =
        limit_echo_envelope(generate_channel(profile, derive_seed(spec.seed, 2, t)), acq.pulse, spec.echo_ceiling);
    const SignalFrame frame = synthesize_frame(ch, acq.pulse, n, acq.dt, 0.0, OutOfFrame::clip);
    const double true_arrival = detect_arrival(frame).time;
    const std::uint64_t noise_seed = derive_seed(spec.seed, 3, t);

    for (std::size_t ri = 0; ri < n_rr; ++ri) {
      const auto& phi = phis[ri];
      const MeasurementVector meas = measure(phi, frame, spec.snr_db, spec.snr_db, noise_seed);
      const double rms = meas.y.norm() / std::sqrt(static_cast<double>(meas.y.size()));
      const double beta = std::max(meas.beta, acq.beta_floor * rms);
      for (std::size_t ai = 0; ai < n_alg; ++ai) {
        Cell& cell = results[t][ri][ai];
        try {
          ReconResult r;
          switch (spec.algorithms[ai]) {
            case Mode::cs_uwb: {
              CsUwbOptions opts;
              opts.coupling = coupling;
              r = ops[ri]->solve(std::span(&meas.y, 1), std::span(&beta, 1), opts).stations.front();
              break;
            }
            case Mode::omp: {
              OmpStop stop;
              stop.residual_tol = beta * std::sqrt(static_cast<double>(meas.y.size()));
              r = omp(meas.y, phi.entries, stop);
              break;
            }
            case Mode::bp: {
              BpOptions opts;
              opts.lambda = noise_aware_bp_lambda(meas.y, phi.entries, beta);
              r = bp_denoise(meas.y, phi.entries, opts);
              break;
            }
            case Mode::bcs: r = bcs(meas.y, phi.entries, beta).result; break;
            case Mode::direct:
              r.s_hat = add_noise(frame, spec.snr_db, noise_seed).samples;
              break;
            case Mode::sequential: break;
          }
          cell.p_re = recon_percentage(frame.samples, r.s_hat);
          cell.iterations = r.iterations;
          cell.arrival = std::abs(detect_arrival(SignalFrame{r.s_hat, acq.dt, 0.0}).time - true_arrival) / acq.dt;
        } catch (const Error&) {
          cell.failed = true;
        }
      }
    }
    tick(progress, done, static_cast<std::size_t>(spec.trials));
  });

  ResultTable table;
  for (std::size_t ai = 0; ai < n_alg; ++ai) {
    const std::string alg = to_string(spec.algorithms[ai]);
    for (std::size_t ri = 0; ri < n_rr; ++ri) {
      const double rr = spec.reduction_ratios[ri];
      std::vector<double> pre, arr;
      for (int t = 0; t < spec.trials; ++t) {
        const Cell& c = results[static_cast<std::size_t>(t)][ri][ai];
        const std::string trial = std::to_string(t);
        if (c.failed && std::isnan(c.p_re)) {
          table.rows.push_back(make_row(spec, alg, rr, kNaN, kNaN, kNaN, trial, "failed", 1.0));
          continue;
        }
        pre.push_back(c.p_re);
        table.rows.push_back(make_row(spec, alg, rr, kNaN, kNaN, kNaN, trial, "p_re", c.p_re));
        table.rows.push_back(make_row(spec, alg, rr, kNaN, kNaN, kNaN, trial, "iterations", c.iterations));
        if (c.failed) {
          table.rows.push_back(make_row(spec, alg, rr, kNaN, kNaN, kNaN, trial, "failed", 1.0));
        } else {
          arr.push_back(c.arrival);
          table.rows.push_back(make_row(spec, alg, rr, kNaN, kNaN, kNaN, trial, "arrival_error_bins", c.arrival));
        }
      }
      push_summary(table.rows, make_row(spec, alg, rr, kNaN, kNaN, kNaN, "", "p_re", 0.0), pre);
      push_summary(table.rows, make_row(spec, alg, rr, kNaN, kNaN, kNaN, "", "arrival_error_bins", 0.0), arr);
    }
  }
  return table;
}

// ------------------------------------------------------------ positioning

namespace {

PipelineConfig pipeline_for(const ExperimentSpec& spec, Mode mode) {
  PipelineConfig cfg;
  cfg.mode = mode;
  cfg.acquisition = spec.acquisition;
  cfg.acquisition.reduction_ratio = spec.reduction_ratios.front();
  cfg.acquisition.n1_snr_db = spec.snr_db;
  cfg.acquisition.n2_snr_db = spec.snr_db;
  cfg.channel = spec.channel;
  cfg.station_jitter = spec.station_jitter;
  cfg.echo_ceiling = spec.echo_ceiling;
  cfg.interleave = spec.interleave && mode == Mode::cs_uwb;
  cfg.tdoa.region_lo = spec.room_lo;
  cfg.tdoa.region_hi = spec.room_hi;
  cfg.sequential = SequentialConfig::with_scale_error(cfg.sequential.pulse_rate, cfg.sequential.sample_rate,
                                                      spec.drift, spec.acquisition.n);
  cfg.seed = spec.seed;
  return cfg;
}

struct LocateCell {
  bool failed = false;
  double error = kNaN;
};

/// Runs every mode on `points` x `trials` with shared channel and noise
/// seeds per (point, trial). Returns cells[mode][point][trial].
std::vector<std::vector<std::vector<LocateCell>>> locate_points(const ExperimentSpec& spec,
                                                                const std::vector<Eigen::VectorXd>& points,
                                                                const Progress& progress) {
  std::vector<std::unique_ptr<PositioningSystem>> systems;
  for (Mode m : spec.algorithms)
    systems.push_back(std::make_unique<PositioningSystem>(spec.anchors, pipeline_for(spec, m)));
  const std::size_t n_alg = spec.algorithms.size();
  const std::size_t trials = static_cast<std::size_t>(spec.trials);
  std::vector<std::vector<std::vector<LocateCell>>> cells(
      n_alg, std::vector<std::vector<LocateCell>>(points.size(), std::vector<LocateCell>(trials)));

  const std::size_t total = points.size() * trials;
  std::atomic<std::size_t> done{0};
  parallel_for(total, spec.threads, [&](std::size_t item) {
    const std::size_t p = item / trials;
    const std::size_t t = item % trials;
    const auto channels = make_station_channels(spec.channel, spec.station_jitter, spec.anchors.count(),
                                                derive_seed(spec.seed, 10, p, t), spec.acquisition.pulse,
                                                spec.echo_ceiling);
    const std::uint64_t noise_seed = derive_seed(spec.seed, 11, p, t);
    for (std::size_t a = 0; a < n_alg; ++a) {
      LocateCell& c = cells[a][p][t];
      try {
        const LocateResult r = systems[a]->locate(points[p], channels, noise_seed);
        c.error = r.error_mm;
        c.failed = !r.estimate.converged;
      } catch (const Error&) {
        c.failed = true;
      }
    }
    tick(progress, done, total);
  });
  return cells;
}

double coord(const Eigen::VectorXd& p, Index i) { return i < p.size() ? p[i] : kNaN; }

void emit_point(ResultTable& table, const ExperimentSpec& spec, const std::string& alg, const Eigen::VectorXd& p,
                const std::vector<LocateCell>& cells, const std::string& metric) {
  const double rr = spec.reduction_ratios.front();
  std::vector<double> errs;
  for (std::size_t t = 0; t < cells.size(); ++t) {
    const std::string trial = std::to_string(t);
    if (std::isnan(cells[t].error)) {
      table.rows.push_back(make_row(spec, alg, rr, coord(p, 0), coord(p, 1), coord(p, 2), trial, "failed", 1.0));
      continue;
    }
    if (cells[t].failed)
      table.rows.push_back(make_row(spec, alg, rr, coord(p, 0), coord(p, 1), coord(p, 2), trial, "failed", 1.0));
    errs.push_back(cells[t].error);
    table.rows.push_back(make_row(spec, alg, rr, coord(p, 0), coord(p, 1), coord(p, 2), trial, metric, cells[t].error));
  }
  push_summary(table.rows, make_row(spec, alg, rr, coord(p, 0), coord(p, 1), coord(p, 2), "", metric, 0.0), errs);
}

}  // namespace

ResultTable run_grid_2d(const ExperimentSpec& spec, const Progress& progress) {
  spec.validate();
  require(spec.kind == ExperimentKind::grid_2d, "run_grid_2d needs kind grid_2d");
  const int res = spec.resolution;
  std::vector<Eigen::VectorXd> points;
  const Eigen::VectorXd step = (spec.room_hi - spec.room_lo) / static_cast<double>(res);
  for (int iy = 0; iy < res; ++iy)
    for (int ix = 0; ix < res; ++ix)
      points.push_back(spec.room_lo + Eigen::Vector2d((ix + 0.5) * step[0], (iy + 0.5) * step[1]));
  const Eigen::VectorXd centre = equal_distance_point(spec.anchors);
  points.push_back(centre);

  const auto cells = locate_points(spec, points, progress);
  ResultTable table;
  for (std::size_t a = 0; a < spec.algorithms.size(); ++a) {
    const std::string alg = to_string(spec.algorithms[a]);
    for (std::size_t p = 0; p + 1 < points.size(); ++p) emit_point(table, spec, alg, points[p], cells[a][p], "error_mm");
    emit_point(table, spec, alg, centre, cells[a].back(), "equal_point_error_mm");
  }
  return table;
}

ResultTable run_room_3d(const ExperimentSpec& spec, const Progress& progress) {
  spec.validate();
  require(spec.kind == ExperimentKind::room_3d, "run_room_3d needs kind room_3d");
  std::vector<Eigen::VectorXd> points;
  for (int k = 0; k < spec.tags; ++k) {
    std::mt19937_64 rng(derive_seed(spec.seed, 20, k));
    Eigen::VectorXd p(3);
    for (Index d = 0; d < 3; ++d) p[d] = std::uniform_real_distribution<>(spec.room_lo[d], spec.room_hi[d])(rng);
    points.push_back(std::move(p));
  }
  const auto cells = locate_points(spec, points, progress);
  ResultTable table;
  const double rr = spec.reduction_ratios.front();
  for (std::size_t p = 0; p < points.size(); ++p) {
    // Largest |range difference|: zero on the equal-distance locus.
    const Eigen::VectorXd d = simulate_tdoa(spec.anchors, points[p]) * kSpeedOfLightMmPerS;
    table.rows.push_back(make_row(spec, "geometry", rr, points[p][0], points[p][1], points[p][2], "0",
                                  "max_range_difference_mm", d.cwiseAbs().maxCoeff()));
  }
  for (std::size_t a = 0; a < spec.algorithms.size(); ++a) {
    const std::string alg = to_string(spec.algorithms[a]);
    std::vector<double> all;
    for (std::size_t p = 0; p < points.size(); ++p) {
      emit_point(table, spec, alg, points[p], cells[a][p], "error_mm");
      for (const auto& c : cells[a][p])
        if (!std::isnan(c.error)) all.push_back(c.error);
    }
    push_summary(table.rows, make_row(spec, alg, rr, kNaN, kNaN, kNaN, "", "error_mm", 0.0), all);
  }
  return table;
}

ResultTable run_experiment(const ExperimentSpec& spec, const Progress& progress) {
  switch (spec.kind) {
    case ExperimentKind::recon_1d: return run_recon_1d(spec, progress);
    case ExperimentKind::grid_2d: return run_grid_2d(spec, progress);
    case ExperimentKind::room_3d: return run_room_3d(spec, progress);
  }
  throw InvalidArgument("unknown experiment kind");
}

}  // namespace uwbcs
