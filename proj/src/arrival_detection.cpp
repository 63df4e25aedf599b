#include "uwbcs/arrival_detection.hpp"

#include <algorithm>
#include <vector>

namespace uwbcs {

double default_detection_threshold(const SignalFrame& frame) {
  const Index n = frame.size();
  if (n == 0) return 0.0;
  std::vector<double> mags(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) mags[static_cast<std::size_t>(i)] = std::abs(frame.samples[i]);
  auto mid = mags.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(mags.begin(), mid, mags.end());
  double median = *mid;
  if (n % 2 == 0) {
    const double lower = *std::max_element(mags.begin(), mid);
    median = 0.5 * (median + lower);
  }
  return 4.0 * median;
}

double parabolic_offset(double left, double centre, double right) {
  const double denom = left - 2.0 * centre + right;
  if (!(denom < 0.0)) return 0.0;  // not a strict local maximum
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

ArrivalEstimate detect_arrival(const SignalFrame& frame, std::optional<double> min_amplitude) {
  frame.validate();
  const double threshold = min_amplitude.value_or(default_detection_threshold(frame));

  Index peak = 0;
  const double peak_value = frame.samples.maxCoeff(&peak);
  if (!(peak_value > threshold))
    throw NoPulse("no sample above detection threshold " + std::to_string(threshold));

  ArrivalEstimate est;
  est.peak_index = peak;
  est.amplitude = peak_value;
  double offset = 0.0;
  if (peak > 0 && peak + 1 < frame.size()) {
    const double l = frame.samples[peak - 1];
    const double c = frame.samples[peak];
    const double r = frame.samples[peak + 1];
    if (l > 0.0 && r > 0.0)
      offset = parabolic_offset(std::log(l), std::log(c), std::log(r));
    else
      offset = parabolic_offset(l, c, r);
    est.refined = true;
  }
  est.time = frame.time_at(static_cast<double>(peak) + offset);
  return est;
}

}  // namespace uwbcs
