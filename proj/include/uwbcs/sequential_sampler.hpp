#pragma once

#include <cstdint>

#include "uwbcs/signal_model.hpp"

namespace uwbcs {

/// Equivalent-time acquisition settings. The receiver clock actually runs at
/// sample_rate + drift while the receiver believes it runs at sample_rate.
struct SequentialConfig {
  double pulse_rate = 1e6;             // f_p (Hz)
  double sample_rate = 1e6 / (1.0 + 1e-5);  // f_s (Hz); K = 1e5, ~10 ps equivalent step
  double drift = 0.0;                  // Δf (Hz, signed)
  Index n_samples = 1024;

  void validate() const;

  /// Nominal equivalent-time step |1/f_p - 1/f_s|.
  double nominal_step() const;
  /// Equivalent-time step with the drifted clock.
  double actual_step() const;

  /// Config whose drift stretches the record by (1 + relative_scale_error):
  /// K_r = K * (1 + relative_scale_error).
  static SequentialConfig with_scale_error(double pulse_rate, double sample_rate,
                                           double relative_scale_error, Index n_samples = 1024);
};

/// f_eq = |f_s f_p / (f_s - f_p)|.
double equivalent_rate(double pulse_rate, double sample_rate);

struct ExtensionScale {
  double nominal = 0.0;  // K
  double actual = 0.0;   // K_r
  double delta() const { return actual - nominal; }
};

ExtensionScale extension_scale(const SequentialConfig& cfg);

/// Simulates the extended-time record r(n) = s((n * T_r) mod T_p) read in
/// sweep order, where T_r is the drifted equivalent step. The record starts
/// at the sample whose nominal equivalent time is closest below
/// `gate_start` (seconds after pulse emission). The returned frame carries
/// wall-clock spacing 1 / (f_s + Δf).
SignalFrame acquire_sequential(const ChannelRealization& channel, const PulseSpec& pulse,
                               const SequentialConfig& cfg, double snr_db, std::uint64_t seed,
                               double gate_start = 0.0);

/// t_real = t_detected / assumed_scale, with t_detected the wall-clock peak
/// time on the record. Throws NoPulse when nothing is detected.
double estimate_arrival_sequential(const SignalFrame& record, double assumed_scale);
double estimate_arrival_sequential(const SignalFrame& record, double assumed_scale, double min_amplitude);

}  // namespace uwbcs
