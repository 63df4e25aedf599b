#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uwbcs/cs_acquisition.hpp"
#include "uwbcs/sequential_sampler.hpp"
#include "uwbcs/signal_model.hpp"
#include "uwbcs/sparse_recovery.hpp"
#include "uwbcs/tdoa_solver.hpp"

namespace uwbcs {

enum class Mode { cs_uwb, omp, bp, bcs, sequential, direct };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);
bool is_compressive(Mode mode);

/// How each station digitizes its frame.
struct AcquisitionSettings {
  Index n = 1024;
  double dt = 10e-12;
  PulseSpec pulse;
  double reduction_ratio = 0.25;
  ProjectionKind projection = ProjectionKind::gaussian;
  double n1_snr_db = kNoiseless;  // signal-domain noise
  double n2_snr_db = kNoiseless;  // measurement-domain noise
  Index gate_lead = 200;          // samples between gate opening and the line-of-sight arrival
  std::uint64_t projection_seed = 1;
  double beta_floor = 1e-3;       // relative to rms(y); keeps beta > 0 on noiseless inputs
  std::string coupling = "summed";

  void validate() const;
  Index measurements() const { return measurements_for_ratio(reduction_ratio, n); }
};

struct PipelineConfig {
  Mode mode = Mode::cs_uwb;
  double epsilon = 0.0;  // arrival convergence threshold (s); 0 selects dt / 30
  bool interleave = false;
  int interleave_window = 10;  // minimum number of settled updates before an interleaved run may stop
  TdoaOptions tdoa;
  AcquisitionSettings acquisition;
  SequentialConfig sequential;
  double c = kSpeedOfLightMmPerS;
  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> initial_guess;
  ChannelProfile channel;     // used when channels are generated (locate_track)
  double station_jitter = 0.1;
  double echo_ceiling = 0.7;  // generated channels: echo envelope relative to the first path

  void validate() const;
  double effective_epsilon() const { return epsilon > 0.0 ? epsilon : acquisition.dt / 30.0; }
};

struct StationDiagnostics {
  double true_arrival = 0.0;
  double estimated_arrival = 0.0;
  double gate_start = 0.0;
  std::vector<double> arrival_trace;
  int iterations = 0;
  double beta = 0.0;
};

struct LocateResult {
  PositionEstimate estimate;
  double error_mm = 0.0;
  std::vector<StationDiagnostics> stations;
  std::vector<PositionEstimate> interleaved_solves;
  int reconstruction_iterations = 0;
  bool stopped_early = false;  // interleaved run ended by the arrival convergence test
};

/// A station failed to produce an arrival or the TDOA solve broke down.
class LocateFailure : public Error {
 public:
  LocateFailure(const std::string& what, std::vector<StationDiagnostics> stations)
      : Error(what), stations_(std::move(stations)) {}
  const std::vector<StationDiagnostics>& stations() const { return stations_; }

 private:
  std::vector<StationDiagnostics> stations_;
};

/// Receivers at fixed anchors with fixed projection hardware. Expensive
/// per-station precomputation happens once at construction; locate() is
/// const and may be called concurrently.
class PositioningSystem {
 public:
  PositioningSystem(AnchorSet anchors, PipelineConfig cfg);

  const AnchorSet& anchors() const { return anchors_; }
  const PipelineConfig& config() const { return cfg_; }
  const std::vector<ProjectionMatrix>& projections() const { return phi_; }

  /// `channels` holds one excess-delay realization per anchor; `seed`
  /// drives all noise. `initial_guess` overrides the configured TDOA start.
  LocateResult locate(const Eigen::Ref<const Eigen::VectorXd>& true_tag,
                      const std::vector<ChannelRealization>& channels, std::uint64_t seed,
                      std::optional<Eigen::VectorXd> initial_guess = std::nullopt) const;

 private:
  AnchorSet anchors_;
  PipelineConfig cfg_;
  std::vector<ProjectionMatrix> phi_;
  std::unique_ptr<CsUwbOperator> cs_op_;
  std::shared_ptr<const HyperparameterCoupling> coupling_;
};

/// One base realization shared by all stations with per-station amplitude jitter.
/// Each station's copy is then passed through limit_echo_envelope.
std::vector<ChannelRealization> make_station_channels(const ChannelProfile& profile, double jitter,
                                                      Index stations, std::uint64_t seed, const PulseSpec& pulse,
                                                      double echo_ceiling);

LocateResult locate_once(const Eigen::Ref<const Eigen::VectorXd>& true_tag, const AnchorSet& anchors,
                         const std::vector<ChannelRealization>& channels, const PipelineConfig& cfg);

struct TrackPoint {
  std::optional<LocateResult> result;
  std::string error;
};

/// Solves the waypoints in order; each TDOA solve starts from the previous
/// solution. Failures are recorded and the track continues.
std::vector<TrackPoint> locate_track(const std::vector<Eigen::VectorXd>& waypoints, const AnchorSet& anchors,
                                     const PipelineConfig& cfg, bool warm_start = true);

}  // namespace uwbcs
