#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "uwbcs/common.hpp"

namespace uwbcs {

/// Transmitted Gaussian pulse p(t) = amplitude * exp(-t^2 / (2 sigma^2)).
struct PulseSpec {
  double sigma = 50e-12;  // seconds; the 300 ps duration spans about +-3 sigma
  double amplitude = 1.0;

  void validate() const;
};

template <std::floating_point Scalar>
Scalar gaussian_pulse(Scalar t, const PulseSpec& spec) {
  using std::exp;
  const Scalar s = static_cast<Scalar>(spec.sigma);
  return static_cast<Scalar>(spec.amplitude) * exp(-(t * t) / (Scalar(2) * s * s));
}

/// Array form, evaluated coefficient-wise on any Eigen array expression.
template <typename Derived>
auto gaussian_pulse(const Eigen::ArrayBase<Derived>& t, const PulseSpec& spec) {
  using Scalar = typename Derived::Scalar;
  const Scalar s = static_cast<Scalar>(spec.sigma);
  return (static_cast<Scalar>(spec.amplitude) * (-(t.square()) / (Scalar(2) * s * s)).exp()).eval();
}

struct PropagationPath {
  double delay = 0.0;      // seconds
  double amplitude = 0.0;  // unitless

  friend bool operator==(const PropagationPath&, const PropagationPath&) = default;
};

/// Multipath channel. Paths are kept sorted by delay.
struct ChannelRealization {
  std::vector<PropagationPath> paths;
  bool line_of_sight = true;

  Index size() const { return static_cast<Index>(paths.size()); }
  bool empty() const { return paths.empty(); }

  /// Sorts by delay and checks non-negative delays; in LOS mode also checks
  /// that the earliest path carries the largest magnitude.
  void normalize();

  /// Returns a copy with every delay shifted by `offset` seconds.
  ChannelRealization delayed(double offset) const;

  friend bool operator==(const ChannelRealization&, const ChannelRealization&) = default;
};

/// One pulse-repetition period sampled on a uniform grid.
struct SignalFrame {
  Eigen::VectorXd samples;
  double dt = 10e-12;
  double t0 = 0.0;

  Index size() const { return samples.size(); }
  double time_at(double index) const { return t0 + index * dt; }
  double end_time() const { return t0 + static_cast<double>(samples.size() - 1) * dt; }
  void validate() const;
};

enum class OutOfFrame { clip, error };

/// Samples the multipath sum of pulses on the grid t0 + n*dt, n = 0..n-1.
SignalFrame synthesize_frame(const ChannelRealization& channel, const PulseSpec& pulse, Index n,
                             double dt, double t0 = 0.0, OutOfFrame policy = OutOfFrame::error);

/// Mean of the squared samples.
double mean_power(const Eigen::Ref<const Eigen::VectorXd>& samples);

/// Noise standard deviation for a requested SNR over a given mean signal power.
double noise_sigma_for_snr(double signal_power, double snr_db);

/// Adds white Gaussian noise with variance mean_power / 10^(snr_db/10).
/// snr_db = +inf leaves the frame untouched.
SignalFrame add_noise(const SignalFrame& frame, double snr_db, std::uint64_t seed);

/// Parameters of the exponential-decay multipath generator.
struct ChannelProfile {
  bool line_of_sight = true;
  int min_paths = 30;
  int max_paths = 60;
  double first_delay = 0.0;         // delay of the first path (s)
  double decay = 3e-9;              // amplitude decay time constant (s)
  double delay_spread = 6e-9;       // maximum excess delay (s)
  double min_excess_delay = 0.6e-9; // earliest echo after the first path (s)
  double first_amplitude = 1.0;
  double fading = 1.0;              // relative Rayleigh-style amplitude spread in [0, 1]
  bool random_sign = true;

  void validate() const;
};

ChannelRealization generate_channel(const ChannelProfile& profile, std::uint64_t seed);

/// Copy of `channel` with every echo amplitude scaled by (1 + jitter * N(0,1)).
/// The first path is left untouched and LOS ordering is preserved.
ChannelRealization jitter_amplitudes(const ChannelRealization& channel, double jitter,
                                     std::uint64_t seed);

/// Scales every echo (all paths after the first) by a common factor so the
/// echo-only waveform never exceeds ceiling * |first amplitude|. Keeps the
/// first path the largest peak of the synthesized frame.
ChannelRealization limit_echo_envelope(const ChannelRealization& channel, const PulseSpec& pulse, double ceiling);

/// Parses "delay_seconds,amplitude" rows; '#' starts a comment.
ChannelRealization parse_channel_text(std::string_view text);
ChannelRealization load_channel_file(const std::filesystem::path& path);

}  // namespace uwbcs
