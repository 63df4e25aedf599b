#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "uwbcs/pipeline.hpp"

namespace uwbcs {

enum class ExperimentKind { recon_1d, grid_2d, room_3d };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::recon_1d;
  std::vector<Mode> algorithms;
  std::vector<double> reduction_ratios;  // swept by recon_1d; positioning uses the first
  double snr_db = 10.0;                  // applied to both the signal and the measurement noise
  int trials = 50;                       // per R_r (recon_1d) or per grid cell (grid_2d)
  AnchorSet anchors;
  Eigen::VectorXd room_lo, room_hi;      // mm; tags and grid cells lie inside
  int resolution = 20;                   // grid_2d cells per side
  int tags = 100;                        // room_3d random tags
  double drift = 0.03;                   // sequential mode: relative error of the extension scale
  std::uint64_t seed = 1;
  int threads = 1;                       // 0 = all hardware threads
  AcquisitionSettings acquisition;
  ChannelProfile channel;
  double station_jitter = 0.1;
  double echo_ceiling = 0.7;
  bool interleave = false;               // cs_uwb: TDOA solves between reconstruction iterations

  void validate() const;

  /// Default setup for one experiment kind.
  static ExperimentSpec defaults(ExperimentKind kind);
};

/// One CSV line. Positions that do not apply are NaN and written empty.
/// `trial` is the trial index or a summary label (median, mean, std).
struct ResultRow {
  std::string experiment;
  std::string algorithm;
  double reduction_ratio = 0.0;
  double snr_db = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;
  std::string trial;
  std::string metric;
  double value = 0.0;
};

bool same_row(const ResultRow& a, const ResultRow& b);

struct ResultTable {
  std::vector<ResultRow> rows;

  bool empty() const { return rows.empty(); }
  std::size_t size() const { return rows.size(); }

  /// Rows matching every non-empty filter.
  std::vector<const ResultRow*> select(std::string_view algorithm, std::string_view metric,
                                       std::string_view trial = {}) const;
};

bool same_table(const ResultTable& a, const ResultTable& b);

inline constexpr std::string_view kCsvHeader = "experiment,algorithm,R_r,snr_db,x_mm,y_mm,z_mm,trial,metric,value";

std::string to_csv(const ResultTable& table);
ResultTable parse_csv(std::string_view text);
void export_csv(const ResultTable& table, const std::filesystem::path& path);
ResultTable import_csv(const std::filesystem::path& path);

/// grid_2d tables: one resolution x resolution matrix of per-cell mean error
/// per algorithm, blocks separated by two blank lines. Other tables: one
/// "x y z value" line per summarized position.
std::string to_gnuplot(const ResultTable& table);
void export_gnuplot(const ResultTable& table, const std::filesystem::path& path);

/// Runs `body(i)` for i in [0, count) on up to `threads` workers. Work items
/// are claimed dynamically; callers write results into slot i so the outcome
/// does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

/// Optional progress callback: (done, total).
using Progress = std::function<void(std::size_t, std::size_t)>;

ResultTable run_recon_1d(const ExperimentSpec& spec, const Progress& progress = {});
ResultTable run_grid_2d(const ExperimentSpec& spec, const Progress& progress = {});
ResultTable run_room_3d(const ExperimentSpec& spec, const Progress& progress = {});
ResultTable run_experiment(const ExperimentSpec& spec, const Progress& progress = {});

/// Point with equal distance to all anchors (circumcentre), when it exists.
Eigen::VectorXd equal_distance_point(const AnchorSet& anchors);

/// Median, mean and sample standard deviation; NaN for empty input.
struct Summary {
  double median = 0.0, mean = 0.0, std = 0.0;
  std::size_t count = 0;
};
Summary summarize(std::vector<double> values);

}  // namespace uwbcs
