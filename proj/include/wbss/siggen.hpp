#pragma once

// Labeled multi-user wideband signal synthesis: modulation, RRC pulse
// shaping, interpolation into a subband, AWGN and multipath impairments.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wbss/error.hpp"
#include "wbss/fft.hpp"
#include "wbss/random.hpp"

namespace wbss {

enum class Modulation { bpsk, qpsk, psk8, oqpsk, psk16, pam4, pam8, qam16, qam32, qam64 };

inline constexpr Modulation kAllModulations[] = {
    Modulation::bpsk, Modulation::qpsk,  Modulation::psk8,  Modulation::oqpsk, Modulation::psk16,
    Modulation::pam4, Modulation::pam8,  Modulation::qam16, Modulation::qam32, Modulation::qam64};

inline std::string_view to_string(Modulation m) {
  switch (m) {
    case Modulation::bpsk: return "BPSK";
    case Modulation::qpsk: return "QPSK";
    case Modulation::psk8: return "8PSK";
    case Modulation::oqpsk: return "OQPSK";
    case Modulation::psk16: return "16PSK";
    case Modulation::pam4: return "4PAM";
    case Modulation::pam8: return "8PAM";
    case Modulation::qam16: return "16QAM";
    case Modulation::qam32: return "32QAM";
    case Modulation::qam64: return "64QAM";
  }
  return "?";
}

inline Modulation parse_modulation(std::string_view name) {
  for (auto m : kAllModulations) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown modulation identifier '" + std::string(name) + "'");
}

namespace detail {

constexpr std::uint32_t gray(std::uint32_t i) { return i ^ (i >> 1); }

inline std::vector<cdouble> psk_points(std::uint32_t order, double phase0) {
  std::vector<cdouble> pts(order);
  for (std::uint32_t i = 0; i < order; ++i) {
    const double phase = phase0 + 2.0 * std::numbers::pi * gray(i) / order;
    pts[i] = std::polar(1.0, phase);
  }
  return pts;
}

inline std::vector<double> pam_levels(std::uint32_t order) {
  std::vector<double> lv(order);
  for (std::uint32_t i = 0; i < order; ++i) {
    lv[i] = 2.0 * gray(i) - (order - 1.0);
  }
  return lv;
}

inline void unit_power(std::vector<cdouble>& pts) {
  double p = 0.0;
  for (const auto& c : pts) p += std::norm(c);
  const double s = 1.0 / std::sqrt(p / static_cast<double>(pts.size()));
  for (auto& c : pts) c *= s;
}

}  // namespace detail

/// Alphabet indexed by symbol value, scaled to unit average power.
/// PSK/PAM and square QAM use Gray labelling; 32QAM is the 6x6 cross in
/// row-major order.
inline std::vector<cdouble> constellation(Modulation m) {
  std::vector<cdouble> pts;
  switch (m) {
    case Modulation::bpsk:
      pts = {{1.0, 0.0}, {-1.0, 0.0}};
      break;
    case Modulation::qpsk:
    case Modulation::oqpsk:
      pts = detail::psk_points(4, std::numbers::pi / 4);
      break;
    case Modulation::psk8: pts = detail::psk_points(8, 0.0); break;
    case Modulation::psk16: pts = detail::psk_points(16, 0.0); break;
    case Modulation::pam4:
    case Modulation::pam8: {
      for (double lv : detail::pam_levels(m == Modulation::pam4 ? 4 : 8)) pts.emplace_back(lv, 0.0);
      break;
    }
    case Modulation::qam16:
    case Modulation::qam64: {
      const std::uint32_t side = m == Modulation::qam16 ? 4 : 8;
      const auto lv = detail::pam_levels(side);
      for (std::uint32_t q = 0; q < side; ++q) {
        for (std::uint32_t i = 0; i < side; ++i) pts.emplace_back(lv[i], lv[q]);
      }
      break;
    }
    case Modulation::qam32: {
      for (int q = 0; q < 6; ++q) {
        for (int i = 0; i < 6; ++i) {
          const bool corner = (i == 0 || i == 5) && (q == 0 || q == 5);
          if (!corner) pts.emplace_back(2.0 * i - 5.0, 2.0 * q - 5.0);
        }
      }
      break;
    }
  }
  detail::unit_power(pts);
  return pts;
}

inline std::vector<cdouble> map_symbols(Modulation m, std::span<const std::uint32_t> indices) {
  const auto pts = constellation(m);
  std::vector<cdouble> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= pts.size()) throw InvalidInputError("symbol index out of range for " + std::string(to_string(m)));
    out.push_back(pts[i]);
  }
  return out;
}

/// Symbol indices drawn uniformly from the alphabet by the generator seeded
/// with `seed`. modulate_symbols maps exactly these.
inline std::vector<std::uint32_t> draw_symbol_indices(Modulation m, std::size_t num_symbols, std::uint64_t seed) {
  const auto order = constellation(m).size();
  Rng rng(seed);
  std::vector<std::uint32_t> idx(num_symbols);
  for (auto& i : idx) i = static_cast<std::uint32_t>(rng.uniform_index(order));
  return idx;
}

/// Unit-average-power symbols. For OQPSK the quadrature offset is applied by
/// the pulse shaper, not here.
inline std::vector<cdouble> modulate_symbols(Modulation m, std::size_t num_symbols, std::uint64_t seed) {
  if (num_symbols < 1) throw InvalidInputError("modulate_symbols: num_symbols must be >= 1");
  const auto idx = draw_symbol_indices(m, num_symbols, seed);
  return map_symbols(m, idx);
}

/// Root-raised-cosine impulse response, span_symbols*sps + 1 taps, unit energy.
inline std::vector<double> rrc_taps(double rolloff, int sps, int span_symbols) {
  if (!(rolloff > 0.0 && rolloff < 1.0)) throw ConfigError("rrc_taps: rolloff must lie in (0, 1)");
  if (sps < 2) throw ConfigError("rrc_taps: sps must be >= 2");
  if (span_symbols < 6 || span_symbols % 2 != 0) throw ConfigError("rrc_taps: span must be even and >= 6");
  const double a = rolloff;
  const double pi = std::numbers::pi;
  const int half = span_symbols * sps / 2;
  std::vector<double> taps(static_cast<std::size_t>(2 * half + 1));
  for (int n = -half; n <= half; ++n) {
    const double t = static_cast<double>(n) / sps;
    double h;
    if (n == 0) {
      h = 1.0 - a + 4.0 * a / pi;
    } else if (std::abs(std::abs(t) - 1.0 / (4.0 * a)) < 1e-12) {
      h = a / std::numbers::sqrt2 *
          ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * a)) + (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * a)));
    } else {
      const double x = 4.0 * a * t;
      h = (std::sin(pi * t * (1.0 - a)) + 4.0 * a * t * std::cos(pi * t * (1.0 + a))) / (pi * t * (1.0 - x * x));
    }
    taps[static_cast<std::size_t>(n + half)] = h;
  }
  double e = 0.0;
  for (double h : taps) e += h * h;
  const double s = 1.0 / std::sqrt(e);
  for (double& h : taps) h *= s;
  return taps;
}

/// Kaiser-windowed sinc low-pass used as the x`factor` interpolator: 80 dB
/// stopband, transition 10% of the output subband width, cutoff at the
/// subband edge, passband gain `factor`.
inline std::vector<double> interpolation_filter(std::size_t factor) {
  constexpr double attenuation = 80.0;
  const double beta = 0.1102 * (attenuation - 8.7);
  const double transition = 0.1 / static_cast<double>(factor);
  auto len = static_cast<std::size_t>(std::ceil((attenuation - 7.95) / (14.36 * transition))) + 1;
  if (len % 2 == 0) ++len;
  const double cutoff = 0.5 / static_cast<double>(factor);
  const double centre = (static_cast<double>(len) - 1.0) / 2.0;
  const double norm = std::cyl_bessel_i(0.0, beta);
  std::vector<double> h(len);
  for (std::size_t n = 0; n < len; ++n) {
    const double x = static_cast<double>(n) - centre;
    const double r = x / centre;
    const double window = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    const double ideal = x == 0.0 ? 2.0 * cutoff : std::sin(2.0 * std::numbers::pi * cutoff * x) / (std::numbers::pi * x);
    h[n] = static_cast<double>(factor) * ideal * window;
  }
  return h;
}

enum class ChannelKind { awgn, rayleigh, rician };

inline std::string_view to_string(ChannelKind k) {
  switch (k) {
    case ChannelKind::awgn: return "awgn";
    case ChannelKind::rayleigh: return "rayleigh";
    case ChannelKind::rician: return "rician";
  }
  return "?";
}

inline ChannelKind parse_channel_kind(std::string_view s) {
  if (s == "awgn") return ChannelKind::awgn;
  if (s == "rayleigh") return ChannelKind::rayleigh;
  if (s == "rician") return ChannelKind::rician;
  throw ConfigError("unknown channel kind '" + std::string(s) + "'");
}

/// Tapped-delay-line channel. Delays are in (fractional) sample periods.
struct ChannelModel {
  ChannelKind kind = ChannelKind::awgn;
  std::vector<double> path_delays;
  std::vector<double> path_gains_db;
  double rician_k = 3.0;
  std::uint64_t channel_seed = 0;

  static ChannelModel awgn() { return {}; }
  static ChannelModel rayleigh() { return {ChannelKind::rayleigh, {0.0, 0.5, 1.2}, {0.0, -2.0, -10.0}, 3.0, 0}; }
  static ChannelModel rician() { return {ChannelKind::rician, {0.0, 0.5, 1.2}, {0.0, -5.0, -10.0}, 3.0, 0}; }

  void validate() const {
    if (kind == ChannelKind::awgn) return;
    if (path_delays.empty() || path_delays.size() != path_gains_db.size()) {
      throw ConfigError("channel: path_delays and path_gains_db must be non-empty and equal length");
    }
    if (path_delays.front() != 0.0) throw ConfigError("channel: first path delay must be 0");
    for (std::size_t p = 1; p < path_delays.size(); ++p) {
      if (!(path_delays[p] > path_delays[p - 1])) throw ConfigError("channel: path delays must strictly increase");
    }
    if (kind == ChannelKind::rician && !(rician_k >= 0.0)) throw ConfigError("channel: rician_k must be >= 0");
  }
};

/// Complex path coefficients with mean power equal to the configured gains.
inline std::vector<cdouble> draw_path_gains(const ChannelModel& ch, Rng& rng) {
  std::vector<cdouble> gains;
  for (double g_db : ch.path_gains_db) {
    const double power = std::pow(10.0, g_db / 10.0);
    const double re = rng.normal();
    const double im = rng.normal();
    const cdouble scatter = cdouble(re, im) / std::numbers::sqrt2;
    if (ch.kind == ChannelKind::rician) {
      const double phase = 2.0 * std::numbers::pi * rng.uniform01();
      // 1/sqrt(1 + 1/K) form keeps K = inf finite.
      const double los = 1.0 / std::sqrt(1.0 + 1.0 / ch.rician_k);
      const double nlos = std::sqrt(1.0 / (ch.rician_k + 1.0));
      gains.push_back(std::sqrt(power) * (los * std::polar(1.0, phase) + nlos * scatter));
    } else {
      gains.push_back(std::sqrt(power) * scatter);
    }
  }
  return gains;
}

/// x delayed by `delay` samples using 2-tap linear interpolation; zeros fill
/// the start.
inline std::vector<cdouble> fractional_delay(std::span<const cdouble> x, double delay) {
  const auto whole = static_cast<std::ptrdiff_t>(std::floor(delay));
  const double frac = delay - static_cast<double>(whole);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<cdouble> out(x.size());
  for (std::ptrdiff_t m = 0; m < n; ++m) {
    const std::ptrdiff_t a = m - whole;
    const std::ptrdiff_t b = a - 1;
    cdouble v{};
    if (a >= 0 && a < n) v += (1.0 - frac) * x[static_cast<std::size_t>(a)];
    if (frac != 0.0 && b >= 0 && b < n) v += frac * x[static_cast<std::size_t>(b)];
    out[static_cast<std::size_t>(m)] = v;
  }
  return out;
}

/// Sum of delayed, faded copies; renormalized to the input's average power.
inline std::vector<cdouble> apply_multipath(std::span<const cdouble> signal, const ChannelModel& ch) {
  if (ch.kind == ChannelKind::awgn) throw InvalidInputError("apply_multipath: channel kind must not be awgn");
  ch.validate();
  Rng rng(ch.channel_seed);
  const auto gains = draw_path_gains(ch, rng);
  std::vector<cdouble> out(signal.size());
  for (std::size_t p = 0; p < gains.size(); ++p) {
    const auto delayed = fractional_delay(signal, ch.path_delays[p]);
    for (std::size_t m = 0; m < out.size(); ++m) out[m] += gains[p] * delayed[m];
  }
  double p_in = 0.0, p_out = 0.0;
  for (std::size_t m = 0; m < out.size(); ++m) {
    p_in += std::norm(signal[m]);
    p_out += std::norm(out[m]);
  }
  if (p_out > 0.0) {
    const double s = std::sqrt(p_in / p_out);
    for (auto& v : out) v *= s;
  }
  return out;
}

/// Adds circular complex Gaussian noise of total variance noise_power.
inline std::vector<cdouble> apply_awgn(std::span<const cdouble> signal, double noise_power, std::uint64_t seed) {
  if (noise_power < 0.0) throw InvalidInputError("apply_awgn: noise_power must be >= 0");
  std::vector<cdouble> out(signal.begin(), signal.end());
  if (noise_power == 0.0) return out;
  Rng rng(seed);
  const double sigma = std::sqrt(noise_power / 2.0);
  for (auto& v : out) {
    const double re = rng.normal();
    const double im = rng.normal();
    v += cdouble(sigma * re, sigma * im);
  }
  return out;
}

enum class SnrMode { fixed_grid, per_user_random, mixed };

inline std::string_view to_string(SnrMode m) {
  switch (m) {
    case SnrMode::fixed_grid: return "fixed-grid";
    case SnrMode::per_user_random: return "per-user-random";
    case SnrMode::mixed: return "mixed";
  }
  return "?";
}

inline SnrMode parse_snr_mode(std::string_view s) {
  if (s == "fixed-grid") return SnrMode::fixed_grid;
  if (s == "per-user-random") return SnrMode::per_user_random;
  if (s == "mixed") return SnrMode::mixed;
  throw ConfigError("unknown snr_mode '" + std::string(s) + "'");
}

struct GenerationConfig {
  std::size_t signal_length = 32768;
  std::size_t num_subbands = 16;
  std::vector<Modulation> modulations{std::begin(kAllModulations), std::end(kAllModulations)};
  double rolloff = 0.2;
  std::vector<int> sps_choices{4, 6, 8};
  int span_symbols = 8;
  SnrMode snr_mode = SnrMode::mixed;
  double snr_low_db = -20.0;
  double snr_high_db = 20.0;
  double snr_step_db = 2.0;
  std::size_t samples_per_snr = 100;
  // Sample count of the per-user-random part; 0 means "same as the grid part".
  std::size_t random_samples = 0;
  double noise_power = 1.0;
  ChannelModel channel;
  std::uint64_t master_seed = 0;

  std::size_t subband_length() const { return signal_length / num_subbands; }

  std::size_t grid_levels() const {
    return static_cast<std::size_t>(std::floor((snr_high_db - snr_low_db) / snr_step_db + 1e-9)) + 1;
  }

  std::size_t grid_samples() const { return snr_mode == SnrMode::per_user_random ? 0 : grid_levels() * samples_per_snr; }

  std::size_t random_part_samples() const {
    if (snr_mode == SnrMode::fixed_grid) return 0;
    return random_samples != 0 ? random_samples : grid_levels() * samples_per_snr;
  }

  std::size_t num_samples() const { return grid_samples() + random_part_samples(); }

  void validate() const {
    if (signal_length == 0 || num_subbands == 0) throw ConfigError("signal_length and num_subbands must be positive");
    if (signal_length % num_subbands != 0) throw ConfigError("signal_length must be divisible by num_subbands");
    if (signal_length % 2 != 0) throw ConfigError("signal_length must be even");
    if (modulations.empty()) throw ConfigError("modulation set must be non-empty");
    if (sps_choices.empty()) throw ConfigError("sps_choices must be non-empty");
    for (int s : sps_choices) {
      if (s < 2) throw ConfigError("every sps choice must be >= 2");
      if ((1.0 + rolloff) / s > 1.0) throw ConfigError("occupied bandwidth (1+rolloff)/sps exceeds the subband");
    }
    if (!(rolloff > 0.0 && rolloff < 1.0)) throw ConfigError("rolloff must lie in (0, 1)");
    if (snr_low_db > snr_high_db) throw ConfigError("snr range low must be <= high");
    if (snr_mode != SnrMode::per_user_random && !(snr_step_db > 0.0)) throw ConfigError("snr_step_db must be > 0");
    if (samples_per_snr == 0 && random_samples == 0) throw ConfigError("samples_per_snr must be positive");
    if (noise_power < 0.0) throw ConfigError("noise_power must be >= 0");
    channel.validate();
  }
};

struct UserSpec {
  std::size_t subband_index = 0;
  Modulation modulation = Modulation::bpsk;
  int sps = 4;
  double snr_db = 0.0;
  std::uint64_t symbol_seed = 0;
};

struct WidebandSample {
  std::vector<cdouble> iq;
  std::vector<std::uint8_t> labels;
  std::vector<UserSpec> users;
  ChannelKind applied_channel = ChannelKind::awgn;
  std::uint64_t sample_seed = 0;
};

/// Center of subband i as a fraction of the sampling rate, in [-0.5, 0.5).
inline double subband_center(std::size_t index, std::size_t num_subbands) {
  return (static_cast<double>(index) + 0.5) / static_cast<double>(num_subbands) - 0.5;
}

/// One user's contribution: RRC-shaped baseband at the subband rate,
/// interpolated by N, shifted to its subband center and scaled to the power
/// implied by snr_db against the per-subband noise share.
inline std::vector<cdouble> synthesize_user(const UserSpec& user, const GenerationConfig& cfg) {
  const std::size_t n_sub = cfg.num_subbands;
  const std::size_t m_len = cfg.signal_length;
  if (user.subband_index >= n_sub) throw InvalidInputError("synthesize_user: subband index out of range");
  if (user.sps < 2) throw ConfigError("synthesize_user: sps must be >= 2");
  if ((1.0 + cfg.rolloff) / user.sps > 1.0) throw ConfigError("synthesize_user: signal would exceed its subband");

  const auto interp = interpolation_filter(n_sub);
  const std::size_t interp_delay = (interp.size() - 1) / 2;
  // Extra baseband samples on both sides so the cropped record has no
  // interpolator start-up transient.
  const std::size_t margin = interp_delay / n_sub + 2;
  const std::size_t base_len = cfg.subband_length() + 2 * margin;

  const auto sps = static_cast<std::size_t>(user.sps);
  const auto span = static_cast<std::size_t>(cfg.span_symbols);
  const std::size_t num_symbols = (base_len + sps - 1) / sps + span;
  const auto symbols = modulate_symbols(user.modulation, num_symbols, user.symbol_seed);
  const auto pulse = rrc_taps(cfg.rolloff, user.sps, cfg.span_symbols);

  // Shaped baseband, taken from the steady-state part of the full convolution.
  const std::size_t skip = span * sps;
  const std::size_t q_offset = user.modulation == Modulation::oqpsk ? sps / 2 : 0;
  std::vector<cdouble> base(base_len);
  for (std::size_t n = 0; n < base_len; ++n) {
    const std::size_t pos = n + skip;
    double re = 0.0, im = 0.0;
    for (std::size_t j = 0; j < pulse.size(); ++j) {
      if (j > pos) break;
      const std::size_t t = pos - j;
      if (t % sps == 0 && t / sps < num_symbols) re += pulse[j] * symbols[t / sps].real();
      if (t >= q_offset && (t - q_offset) % sps == 0 && (t - q_offset) / sps < num_symbols) {
        im += pulse[j] * symbols[(t - q_offset) / sps].imag();
      }
    }
    base[n] = {re, im};
  }

  // Polyphase interpolation by N; output sample m corresponds to base index
  // margin + m / N.
  std::vector<cdouble> out(m_len);
  const auto len = static_cast<std::ptrdiff_t>(interp.size());
  const auto factor = static_cast<std::ptrdiff_t>(n_sub);
  for (std::size_t m = 0; m < m_len; ++m) {
    const auto up = static_cast<std::ptrdiff_t>(m + margin * n_sub + interp_delay);
    std::ptrdiff_t q_hi = up / factor;
    std::ptrdiff_t q_lo = up - len + 1 <= 0 ? 0 : (up - len + 1 + factor - 1) / factor;
    q_hi = std::min<std::ptrdiff_t>(q_hi, static_cast<std::ptrdiff_t>(base_len) - 1);
    cdouble acc{};
    for (std::ptrdiff_t q = q_lo; q <= q_hi; ++q) {
      acc += base[static_cast<std::size_t>(q)] * interp[static_cast<std::size_t>(up - q * factor)];
    }
    out[m] = acc;
  }

  const double f0 = subband_center(user.subband_index, n_sub);
  double power = 0.0;
  for (std::size_t m = 0; m < m_len; ++m) {
    const double cycles = std::fmod(f0 * static_cast<double>(m), 1.0);
    out[m] *= std::polar(1.0, 2.0 * std::numbers::pi * cycles);
    power += std::norm(out[m]);
  }
  power /= static_cast<double>(m_len);
  const double target = std::pow(10.0, user.snr_db / 10.0) * cfg.noise_power / static_cast<double>(n_sub);
  const double scale = power > 0.0 ? std::sqrt(target / power) : 0.0;
  for (auto& v : out) v *= scale;
  return out;
}

namespace seed_tag {
inline constexpr std::uint64_t sample = 1;
inline constexpr std::uint64_t symbols = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t channel = 4;
inline constexpr std::uint64_t draw = 5;
}  // namespace seed_tag

/// Superposition of the users' signals, optional fading, then AWGN. Noise
/// and channel seeds are derived from sample_seed.
inline WidebandSample assemble_wideband(const std::vector<UserSpec>& users, const GenerationConfig& cfg,
                                        std::uint64_t sample_seed) {
  if (users.empty() || users.size() > cfg.num_subbands) {
    throw InvalidInputError("assemble_wideband: user count must lie in [1, N]");
  }
  WidebandSample sample;
  sample.labels.assign(cfg.num_subbands, 0);
  for (const auto& u : users) {
    if (u.subband_index >= cfg.num_subbands) throw InvalidInputError("assemble_wideband: subband index out of range");
    if (sample.labels[u.subband_index]) {
      throw InvalidInputError("assemble_wideband: duplicate subband index " + std::to_string(u.subband_index));
    }
    sample.labels[u.subband_index] = 1;
  }
  std::vector<cdouble> sum(cfg.signal_length);
  for (const auto& u : users) {
    const auto s = synthesize_user(u, cfg);
    for (std::size_t m = 0; m < sum.size(); ++m) sum[m] += s[m];
  }
  if (cfg.channel.kind != ChannelKind::awgn) {
    ChannelModel ch = cfg.channel;
    ch.channel_seed = derive_seed(sample_seed, cfg.channel.channel_seed, seed_tag::channel);
    sum = apply_multipath(sum, ch);
  }
  sample.iq = apply_awgn(sum, cfg.noise_power, derive_seed(sample_seed, 0, seed_tag::noise));
  sample.users = users;
  sample.applied_channel = cfg.channel.kind;
  sample.sample_seed = sample_seed;
  return sample;
}

/// hash(master_seed, sample_index).
inline std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed(master_seed, index, seed_tag::sample);
}

/// Draws the users of sample `index` (count, subbands, modulation, sps, SNR).
inline std::vector<UserSpec> draw_users(const GenerationConfig& cfg, std::size_t index) {
  const std::uint64_t seed = sample_seed(cfg.master_seed, index);
  Rng rng(derive_seed(seed, 0, seed_tag::draw));
  const std::size_t n_sub = cfg.num_subbands;
  const std::size_t count = 1 + rng.uniform_index(n_sub);
  std::vector<std::size_t> bands(n_sub);
  for (std::size_t i = 0; i < n_sub; ++i) bands[i] = i;
  rng.shuffle(bands.begin(), bands.end());
  bands.resize(count);
  std::sort(bands.begin(), bands.end());

  const bool on_grid = index < cfg.grid_samples();
  const double level = on_grid ? cfg.snr_low_db + cfg.snr_step_db * static_cast<double>(index / cfg.samples_per_snr) : 0.0;

  std::vector<UserSpec> users;
  for (std::size_t u = 0; u < count; ++u) {
    UserSpec spec;
    spec.subband_index = bands[u];
    spec.modulation = cfg.modulations[rng.uniform_index(cfg.modulations.size())];
    spec.sps = cfg.sps_choices[rng.uniform_index(cfg.sps_choices.size())];
    spec.snr_db = on_grid ? level : rng.uniform(cfg.snr_low_db, cfg.snr_high_db);
    spec.symbol_seed = derive_seed(seed, u, seed_tag::symbols);
    users.push_back(spec);
  }
  return users;
}

/// Sample `index` of the dataset described by cfg, reproducible in isolation.
inline WidebandSample make_sample(const GenerationConfig& cfg, std::size_t index) {
  return assemble_wideband(draw_users(cfg, index), cfg, sample_seed(cfg.master_seed, index));
}

}  // namespace wbss
