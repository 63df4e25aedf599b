#pragma once

#include <optional>

#include "uwbcs/signal_model.hpp"

namespace uwbcs {

/// No sample of the frame rose above the detection threshold.
class NoPulse : public Error {
 public:
  using Error::Error;
};

struct ArrivalEstimate {
  double time = 0.0;  // seconds
  Index peak_index = 0;
  double amplitude = 0.0;
  bool refined = false;
};

/// 4x the median absolute sample value.
double default_detection_threshold(const SignalFrame& frame);

/// Largest sample above `min_amplitude` (default: default_detection_threshold),
/// refined to sub-bin precision by a three-point fit. The fit is done on
/// log-amplitude when the three samples are positive (exact for a Gaussian
/// peak) and on the raw amplitude otherwise.
ArrivalEstimate detect_arrival(const SignalFrame& frame, std::optional<double> min_amplitude = std::nullopt);

/// Sub-bin vertex offset in [-0.5, 0.5] of the parabola through three samples.
double parabolic_offset(double left, double centre, double right);

/// tau_ji = t_j - t_i.
constexpr double time_difference(double t_j, double t_i) { return t_j - t_i; }

}  // namespace uwbcs
