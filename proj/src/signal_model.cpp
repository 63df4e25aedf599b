#include "uwbcs/signal_model.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

#include "uwbcs/io.hpp"

namespace uwbcs {

void PulseSpec::validate() const {
  require(sigma > 0.0 && std::isfinite(sigma), "pulse sigma must be positive");
  require(std::isfinite(amplitude), "pulse amplitude must be finite");
}

void ChannelRealization::normalize() {
  std::stable_sort(paths.begin(), paths.end(),
                   [](const PropagationPath& a, const PropagationPath& b) { return a.delay < b.delay; });
  for (const auto& p : paths) {
    require(p.delay >= 0.0 && std::isfinite(p.delay), "channel path delay must be non-negative");
    require(std::isfinite(p.amplitude), "channel path amplitude must be finite");
  }
  if (line_of_sight && !paths.empty()) {
    const double first = std::abs(paths.front().amplitude);
    for (const auto& p : paths)
      require(std::abs(p.amplitude) <= first, "LOS channel: first path must have the largest amplitude");
  }
}

ChannelRealization ChannelRealization::delayed(double offset) const {
  ChannelRealization out = *this;
  for (auto& p : out.paths) p.delay += offset;
  return out;
}

void SignalFrame::validate() const {
  require(samples.size() >= 1, "frame must hold at least one sample");
  require(dt > 0.0, "frame spacing must be positive");
  require(samples.allFinite(), "frame samples must be finite");
}

SignalFrame synthesize_frame(const ChannelRealization& channel, const PulseSpec& pulse, Index n,
                             double dt, double t0, OutOfFrame policy) {
  pulse.validate();
  require(n >= 1, "frame length must be at least 1");
  require(dt > 0.0, "frame spacing must be positive");

  SignalFrame frame;
  frame.dt = dt;
  frame.t0 = t0;
  frame.samples = Eigen::VectorXd::Zero(n);
  const double end = t0 + static_cast<double>(n - 1) * dt;
  const Eigen::ArrayXd grid = t0 + Eigen::ArrayXd::LinSpaced(n, 0.0, static_cast<double>(n - 1)) * dt;

  for (const auto& path : channel.paths) {
    if (path.delay > end || path.delay < t0) {
      if (policy == OutOfFrame::error)
        throw InvalidArgument("channel path delay " + format_double(path.delay) + " s lies outside the frame");
      continue;
    }
    frame.samples.array() += path.amplitude * gaussian_pulse((grid - path.delay).eval(), pulse);
  }
  return frame;
}

double mean_power(const Eigen::Ref<const Eigen::VectorXd>& samples) {
  if (samples.size() == 0) return 0.0;
  return samples.squaredNorm() / static_cast<double>(samples.size());
}

double noise_sigma_for_snr(double signal_power, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  require(!std::isnan(snr_db), "SNR must not be NaN");
  require(signal_power > 0.0, "SNR is undefined for a zero signal");
  return std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));
}

SignalFrame add_noise(const SignalFrame& frame, double snr_db, std::uint64_t seed) {
  frame.validate();
  if (std::isinf(snr_db) && snr_db > 0) return frame;
  const double sigma = noise_sigma_for_snr(mean_power(frame.samples), snr_db);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  SignalFrame out = frame;
  for (Index i = 0; i < out.samples.size(); ++i) out.samples[i] += normal(rng);
  return out;
}

void ChannelProfile::validate() const {
  require(min_paths >= 0 && max_paths >= min_paths, "channel profile: need 0 <= min_paths <= max_paths");
  require(decay > 0.0, "channel profile: decay must be positive");
  require(delay_spread >= 0.0, "channel profile: delay spread must be non-negative");
  require(min_excess_delay >= 0.0 && min_excess_delay <= delay_spread,
          "channel profile: min_excess_delay must lie in [0, delay_spread]");
  require(first_delay >= 0.0, "channel profile: first delay must be non-negative");
  require(fading >= 0.0 && fading <= 1.0, "channel profile: fading must lie in [0, 1]");
  require(std::isfinite(first_amplitude) && first_amplitude != 0.0, "channel profile: first amplitude must be nonzero");
}

ChannelRealization generate_channel(const ChannelProfile& profile, std::uint64_t seed) {
  profile.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(profile.min_paths, profile.max_paths);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ChannelRealization ch;
  ch.line_of_sight = profile.line_of_sight;
  const int m = count(rng);
  if (m == 0) return ch;

  const double a0 = profile.first_amplitude;
  std::vector<double> excess(static_cast<std::size_t>(m - 1));
  for (auto& e : excess)
    e = profile.min_excess_delay + unit(rng) * (profile.delay_spread - profile.min_excess_delay);
  std::sort(excess.begin(), excess.end());

  ch.paths.push_back({profile.first_delay, a0});
  for (double e : excess) {
    // Rayleigh-ish magnitude spread around the exponential envelope.
    const double u = std::max(unit(rng), 1e-12);
    const double rayleigh = std::sqrt(-2.0 * std::log(u)) / std::sqrt(M_PI / 2.0);
    const double spread = 1.0 - profile.fading + profile.fading * rayleigh;
    double a = std::abs(a0) * std::exp(-e / profile.decay) * spread;
    if (profile.random_sign && unit(rng) < 0.5) a = -a;
    ch.paths.push_back({profile.first_delay + e, a});
  }

  if (profile.line_of_sight) {
    const double cap = 0.95 * std::abs(a0);
    for (std::size_t k = 1; k < ch.paths.size(); ++k)
      ch.paths[k].amplitude = std::clamp(ch.paths[k].amplitude, -cap, cap);
  } else {
    // NLOS: direct path attenuated below the strongest echo
    if (ch.paths.size() > 1) ch.paths.front().amplitude *= 0.3 + 0.4 * unit(rng);
  }
  ch.normalize();
  return ch;
}

ChannelRealization limit_echo_envelope(const ChannelRealization& channel, const PulseSpec& pulse, double ceiling) {
  require(ceiling > 0.0, "echo ceiling must be positive");
  pulse.validate();
  ChannelRealization out = channel;
  if (out.paths.size() < 2) return out;
  const double first = std::abs(out.paths.front().amplitude);
  const double lo = out.paths[1].delay - 4.0 * pulse.sigma;
  const double hi = out.paths.back().delay + 4.0 * pulse.sigma;
  const double step = pulse.sigma / 8.0;
  PulseSpec unit = pulse;
  unit.amplitude = 1.0;
  double peak = 0.0;
  for (double t = lo; t <= hi; t += step) {
    double v = 0.0;
    for (std::size_t k = 1; k < out.paths.size(); ++k)
      v += out.paths[k].amplitude * gaussian_pulse(t - out.paths[k].delay, unit);
    peak = std::max(peak, std::abs(v));
  }
  const double limit = ceiling * first;
  if (peak > limit) {
    const double scale = limit / peak;
    for (std::size_t k = 1; k < out.paths.size(); ++k) out.paths[k].amplitude *= scale;
  }
  return out;
}

ChannelRealization jitter_amplitudes(const ChannelRealization& channel, double jitter, std::uint64_t seed) {
  require(jitter >= 0.0, "amplitude jitter must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ChannelRealization out = channel;
  if (out.paths.empty()) return out;
  const double cap = 0.95 * std::abs(out.paths.front().amplitude);
  for (std::size_t k = 1; k < out.paths.size(); ++k) {
    double a = out.paths[k].amplitude * (1.0 + jitter * normal(rng));
    if (out.line_of_sight) a = std::clamp(a, -cap, cap);
    out.paths[k].amplitude = a;
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

double parse_number(std::string_view field, std::size_t line) {
  field = trim(field);
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (field.empty() || ec != std::errc{} || ptr != last)
    throw InvalidArgument("channel file line " + std::to_string(line) + ": malformed number '" +
                          std::string(field) + "'");
  return value;
}

}  // namespace

ChannelRealization parse_channel_text(std::string_view text) {
  ChannelRealization ch;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos)
      throw InvalidArgument("channel file line " + std::to_string(line_no) +
                            ": expected 'delay_seconds,amplitude'");
    const double delay = parse_number(line.substr(0, comma), line_no);
    const double amp = parse_number(line.substr(comma + 1), line_no);
    if (delay < 0.0 || !std::isfinite(delay))
      throw InvalidArgument("channel file line " + std::to_string(line_no) + ": negative delay");
    if (!std::isfinite(amp))
      throw InvalidArgument("channel file line " + std::to_string(line_no) + ": non-finite amplitude");
    ch.paths.push_back({delay, amp});
  }
  if (ch.paths.empty()) throw InvalidArgument("channel file holds no paths");
  // File realizations are taken as measured; only ordering is enforced.
  ch.line_of_sight = false;
  ch.normalize();
  const double first = std::abs(ch.paths.front().amplitude);
  ch.line_of_sight = std::all_of(ch.paths.begin(), ch.paths.end(),
                                 [first](const PropagationPath& p) { return std::abs(p.amplitude) <= first; });
  return ch;
}

ChannelRealization load_channel_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open channel file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_channel_text(buf.str());
}

}  // namespace uwbcs
