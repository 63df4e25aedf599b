#include "uwbcs/sequential_sampler.hpp"

#include "uwbcs/arrival_detection.hpp"

namespace uwbcs {

void SequentialConfig::validate() const {
  require(pulse_rate > 0.0, "sequential: pulse rate must be positive");
  require(sample_rate > 0.0, "sequential: sample rate must be positive");
  require(sample_rate != pulse_rate, "sequential: sample rate equals pulse rate (infinite equivalent rate)");
  require(std::abs(drift) < std::abs(sample_rate - pulse_rate),
          "sequential: |drift| must stay below |f_s - f_p|");
  require(n_samples >= 1, "sequential: record length must be at least 1");
}

double SequentialConfig::nominal_step() const { return std::abs(1.0 / pulse_rate - 1.0 / sample_rate); }

double SequentialConfig::actual_step() const {
  return std::abs(1.0 / pulse_rate - 1.0 / (sample_rate + drift));
}

SequentialConfig SequentialConfig::with_scale_error(double pulse_rate, double sample_rate,
                                                    double relative_scale_error, Index n_samples) {
  require(relative_scale_error > -0.5, "sequential: relative scale error must exceed -0.5");
  SequentialConfig cfg;
  cfg.pulse_rate = pulse_rate;
  cfg.sample_rate = sample_rate;
  cfg.n_samples = n_samples;
  cfg.drift = (sample_rate - pulse_rate) * (1.0 / (1.0 + relative_scale_error) - 1.0);
  cfg.validate();
  return cfg;
}

double equivalent_rate(double pulse_rate, double sample_rate) {
  require(sample_rate != pulse_rate, "equivalent rate is infinite when f_s == f_p");
  return std::abs(sample_rate * pulse_rate / (sample_rate - pulse_rate));
}

ExtensionScale extension_scale(const SequentialConfig& cfg) {
  cfg.validate();
  ExtensionScale k;
  k.nominal = cfg.pulse_rate / std::abs(cfg.sample_rate - cfg.pulse_rate);
  const double denom = std::abs(cfg.sample_rate + cfg.drift - cfg.pulse_rate);
  require(denom > 0.0, "extension scale: drifted clock equals the pulse rate");
  k.actual = cfg.pulse_rate / denom;
  return k;
}

SignalFrame acquire_sequential(const ChannelRealization& channel, const PulseSpec& pulse,
                               const SequentialConfig& cfg, double snr_db, std::uint64_t seed,
                               double gate_start) {
  cfg.validate();
  pulse.validate();
  const double period = 1.0 / cfg.pulse_rate;
  const double clock = cfg.sample_rate + cfg.drift;
  const double step = cfg.actual_step();
  const auto first = static_cast<Index>(std::floor(gate_start / cfg.nominal_step()));

  SignalFrame record;
  record.dt = 1.0 / clock;
  record.t0 = static_cast<double>(first) / clock;
  record.samples = Eigen::VectorXd::Zero(cfg.n_samples);
  Eigen::ArrayXd equiv(cfg.n_samples);
  for (Index n = 0; n < cfg.n_samples; ++n)
    equiv[n] = std::fmod(static_cast<double>(first + n) * step, period);
  for (const auto& path : channel.paths)
    record.samples.array() += path.amplitude * gaussian_pulse((equiv - path.delay).eval(), pulse);

  return add_noise(record, snr_db, seed);
}

double estimate_arrival_sequential(const SignalFrame& record, double assumed_scale) {
  require(assumed_scale > 0.0, "assumed extension scale must be positive");
  return detect_arrival(record).time / assumed_scale;
}

double estimate_arrival_sequential(const SignalFrame& record, double assumed_scale, double min_amplitude) {
  require(assumed_scale > 0.0, "assumed extension scale must be positive");
  return detect_arrival(record, min_amplitude).time / assumed_scale;
}

}  // namespace uwbcs
