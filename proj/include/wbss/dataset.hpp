#pragma once

// On-disk formats: IQ datasets (manifest.json, iq.f32, labels.u8,
// meta.jsonl), PSD caches (psd_mtm.f32, psd_pg.f32, psd_meta.json) and the
// DPSS taper cache.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "wbss/binary_io.hpp"
#include "wbss/parallel.hpp"
#include "wbss/siggen.hpp"
#include "wbss/specest.hpp"

namespace wbss {

namespace fs = std::filesystem;
using nlohmann::json;

inline json to_json(const ChannelModel& ch) {
  return {{"kind", to_string(ch.kind)},
          {"path_delays", ch.path_delays},
          {"path_gains_db", ch.path_gains_db},
          {"rician_k", ch.rician_k},
          {"channel_seed", ch.channel_seed},
          {"delay_unit", "samples"}};
}

namespace config {

/// Rejects keys of object j not listed in allowed, naming the full path.
inline void reject_unknown(const json& j, const std::string& section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown field '" + section + "." + key + "'");
    }
  }
}

/// Value of j[key] converted to T, or fallback when absent. Type errors name
/// the field.
template <typename T>
T field(const json& j, const std::string& section, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  const std::string where = section + "." + key;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw ConfigError(where + ": expected a non-negative integer");
  } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(where + ": expected a number");
  }
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace config

inline ChannelModel channel_from_json(const json& j, const std::string& section = "generation.channel") {
  config::reject_unknown(j, section, {"kind", "path_delays", "path_gains_db", "rician_k", "channel_seed", "delay_unit"});
  if (j.contains("delay_unit") && j.at("delay_unit") != "samples") {
    throw ConfigError(section + ".delay_unit: only \"samples\" is supported");
  }
  const auto kind = parse_channel_kind(config::field<std::string>(j, section, "kind", "awgn"));
  ChannelModel ch = kind == ChannelKind::rayleigh ? ChannelModel::rayleigh()
                    : kind == ChannelKind::rician ? ChannelModel::rician()
                                                  : ChannelModel::awgn();
  ch.path_delays = config::field(j, section, "path_delays", ch.path_delays);
  ch.path_gains_db = config::field(j, section, "path_gains_db", ch.path_gains_db);
  ch.rician_k = config::field(j, section, "rician_k", ch.rician_k);
  ch.channel_seed = config::field(j, section, "channel_seed", ch.channel_seed);
  ch.validate();
  return ch;
}

/// Manifest contents for a dataset generated from cfg (format version 1).
inline json to_json(const GenerationConfig& cfg) {
  std::vector<std::string> mods;
  for (auto m : cfg.modulations) mods.emplace_back(to_string(m));
  return {{"version", 1},
          {"M", cfg.signal_length},
          {"N", cfg.num_subbands},
          {"modulations", mods},
          {"rolloff", cfg.rolloff},
          {"sps_choices", cfg.sps_choices},
          {"span_symbols", cfg.span_symbols},
          {"snr_mode", to_string(cfg.snr_mode)},
          {"snr_range_db", {cfg.snr_low_db, cfg.snr_high_db}},
          {"snr_step_db", cfg.snr_step_db},
          {"samples_per_snr", cfg.samples_per_snr},
          {"random_samples", cfg.random_part_samples()},
          {"noise_power", cfg.noise_power},
          {"channel", to_json(cfg.channel)},
          {"master_seed", cfg.master_seed},
          {"num_samples", cfg.num_samples()}};
}

/// Parses a generation section; absent keys take defaults. Accepts the
/// manifest written by to_json as well. Throws ConfigError naming the
/// offending field.
inline GenerationConfig generation_from_json(const json& j, const std::string& section = "generation") {
  config::reject_unknown(j, section,
                         {"version", "M", "N", "modulations", "rolloff", "sps_choices", "span_symbols", "snr_mode",
                          "snr_range_db", "snr_step_db", "samples_per_snr", "random_samples", "noise_power", "channel",
                          "master_seed", "num_samples"});
  GenerationConfig cfg;
  cfg.signal_length = config::field(j, section, "M", cfg.signal_length);
  cfg.num_subbands = config::field(j, section, "N", cfg.num_subbands);
  if (j.contains("modulations")) {
    cfg.modulations.clear();
    for (const auto& m : config::field<std::vector<std::string>>(j, section, "modulations", {})) {
      cfg.modulations.push_back(parse_modulation(m));
    }
  }
  cfg.rolloff = config::field(j, section, "rolloff", cfg.rolloff);
  cfg.sps_choices = config::field(j, section, "sps_choices", cfg.sps_choices);
  cfg.span_symbols = config::field(j, section, "span_symbols", cfg.span_symbols);
  if (j.contains("snr_mode")) cfg.snr_mode = parse_snr_mode(config::field<std::string>(j, section, "snr_mode", ""));
  if (j.contains("snr_range_db")) {
    const auto r = config::field<std::vector<double>>(j, section, "snr_range_db", {});
    if (r.size() != 2) throw ConfigError(section + ".snr_range_db: expected [low, high]");
    cfg.snr_low_db = r[0];
    cfg.snr_high_db = r[1];
  }
  cfg.snr_step_db = config::field(j, section, "snr_step_db", cfg.snr_step_db);
  cfg.samples_per_snr = config::field(j, section, "samples_per_snr", cfg.samples_per_snr);
  cfg.random_samples = config::field(j, section, "random_samples", cfg.random_samples);
  cfg.noise_power = config::field(j, section, "noise_power", cfg.noise_power);
  if (j.contains("channel")) cfg.channel = channel_from_json(j.at("channel"), section + ".channel");
  cfg.master_seed = config::field(j, section, "master_seed", cfg.master_seed);
  cfg.validate();
  if (j.contains("num_samples") && config::field<std::size_t>(j, section, "num_samples", 0) != cfg.num_samples()) {
    throw ConfigError(section + ".num_samples does not match the other generation fields");
  }
  return cfg;
}

inline json sample_meta(const WidebandSample& s) {
  json users = json::array();
  for (const auto& u : s.users) {
    users.push_back({{"subband_index", u.subband_index},
                     {"modulation", to_string(u.modulation)},
                     {"sps", u.sps},
                     {"snr_db", u.snr_db}});
  }
  return {{"sample_seed", s.sample_seed}, {"users", users}};
}

/// Writes the dataset described by cfg into dir. Samples are produced in
/// parallel blocks and written in index order.
inline void generate_dataset(const GenerationConfig& cfg, const fs::path& dir) {
  cfg.validate();
  io::OutputGuard guard(dir);
  io::write_text(guard.track("manifest.json"), to_json(cfg).dump(2) + "\n");
  auto iq_out = io::open_out(guard.track("iq.f32"));
  auto label_out = io::open_out(guard.track("labels.u8"));
  auto meta_out = io::open_out(guard.track("meta.jsonl"));

  const std::size_t total = cfg.num_samples();
  const std::size_t block = std::max<std::size_t>(1, 4 * num_threads());
  std::vector<WidebandSample> batch;
  std::vector<float> buffer(2 * cfg.signal_length);
  for (std::size_t start = 0; start < total; start += block) {
    const std::size_t count = std::min(block, total - start);
    batch.assign(count, {});
    parallel_for(count, [&](std::size_t k) { batch[k] = make_sample(cfg, start + k); });
    for (const auto& s : batch) {
      for (std::size_t m = 0; m < s.iq.size(); ++m) {
        buffer[2 * m] = static_cast<float>(s.iq[m].real());
        buffer[2 * m + 1] = static_cast<float>(s.iq[m].imag());
      }
      io::put_f32_array(iq_out, buffer);
      label_out.write(reinterpret_cast<const char*>(s.labels.data()), static_cast<std::streamsize>(s.labels.size()));
      meta_out << sample_meta(s).dump() << "\n";
    }
  }
  iq_out.close();
  label_out.close();
  meta_out.close();
  if (!iq_out || !label_out || !meta_out) throw IoError("failed writing dataset to " + dir.string());
  guard.commit();
}

/// Read access to a generated IQ dataset.
class IqDataset {
 public:
  explicit IqDataset(const fs::path& dir) : dir_(dir) {
    if (!fs::exists(dir / "manifest.json")) {
      throw PreconditionError("no dataset at " + dir.string() + " (run `generate` first)");
    }
    manifest_ = json::parse(io::read_text(dir / "manifest.json"));
    m_ = manifest_.at("M").get<std::size_t>();
    n_ = manifest_.at("N").get<std::size_t>();
    count_ = manifest_.at("num_samples").get<std::size_t>();
    auto is = io::open_in(dir / "labels.u8");
    labels_.resize(count_ * n_);
    if (!is.read(reinterpret_cast<char*>(labels_.data()), static_cast<std::streamsize>(labels_.size()))) {
      throw IoError("labels.u8 is truncated");
    }
  }

  std::size_t signal_length() const { return m_; }
  std::size_t num_subbands() const { return n_; }
  std::size_t size() const { return count_; }
  const json& manifest() const { return manifest_; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }

  std::vector<cdouble> iq(std::size_t index) const {
    auto is = io::open_in(dir_ / "iq.f32");
    is.seekg(static_cast<std::streamoff>(index * m_ * 2 * sizeof(float)));
    std::vector<float> raw(2 * m_);
    io::get_f32_array(is, raw);
    std::vector<cdouble> out(m_);
    for (std::size_t m = 0; m < m_; ++m) out[m] = {raw[2 * m], raw[2 * m + 1]};
    return out;
  }

 private:
  fs::path dir_;
  json manifest_;
  std::size_t m_ = 0, n_ = 0, count_ = 0;
  std::vector<std::uint8_t> labels_;
};

/// Dual PSDs (float32, centered, linear power) and labels for a set of samples.
struct PsdSet {
  std::size_t signal_length = 0;
  std::size_t num_subbands = 0;
  std::vector<float> mtm;
  std::vector<float> pg;
  std::vector<std::uint8_t> labels;
  json meta;

  std::size_t size() const { return signal_length == 0 ? 0 : pg.size() / signal_length; }

  std::span<const float> mtm_row(std::size_t i) const { return {mtm.data() + i * signal_length, signal_length}; }
  std::span<const float> pg_row(std::size_t i) const { return {pg.data() + i * signal_length, signal_length}; }
  std::span<const std::uint8_t> label_row(std::size_t i) const {
    return {labels.data() + i * num_subbands, num_subbands};
  }

  DualSpectrum<float> spectra(std::size_t i) const {
    DualSpectrum<float> d;
    d.mtm = {{mtm_row(i).begin(), mtm_row(i).end()}, true, Estimator::multitaper};
    d.pg = {{pg_row(i).begin(), pg_row(i).end()}, true, Estimator::periodogram};
    return d;
  }

  void append(const DualSpectrum<float>& d, std::span<const std::uint8_t> lab) {
    mtm.insert(mtm.end(), d.mtm.psd.begin(), d.mtm.psd.end());
    pg.insert(pg.end(), d.pg.psd.begin(), d.pg.psd.end());
    labels.insert(labels.end(), lab.begin(), lab.end());
  }
};

inline bool has_psd_cache(const fs::path& dir) {
  return fs::exists(dir / "psd_meta.json") && fs::exists(dir / "psd_mtm.f32") && fs::exists(dir / "psd_pg.f32");
}

inline PsdSet load_psd_set(const fs::path& dir) {
  if (!has_psd_cache(dir)) throw PreconditionError("no PSD cache at " + dir.string() + " (run `preprocess` first)");
  PsdSet set;
  set.meta = json::parse(io::read_text(dir / "psd_meta.json"));
  set.signal_length = set.meta.at("M").get<std::size_t>();
  set.num_subbands = set.meta.at("N").get<std::size_t>();
  const auto count = set.meta.at("num_samples").get<std::size_t>();
  set.mtm.resize(count * set.signal_length);
  set.pg.resize(count * set.signal_length);
  {
    auto is = io::open_in(dir / "psd_mtm.f32");
    io::get_f32_array(is, set.mtm);
  }
  {
    auto is = io::open_in(dir / "psd_pg.f32");
    io::get_f32_array(is, set.pg);
  }
  set.labels.resize(count * set.num_subbands);
  auto is = io::open_in(dir / "labels.u8");
  if (!is.read(reinterpret_cast<char*>(set.labels.data()), static_cast<std::streamsize>(set.labels.size()))) {
    throw IoError("labels.u8 is truncated in " + dir.string());
  }
  return set;
}

/// Writes psd_mtm.f32, psd_pg.f32, labels.u8 and psd_meta.json through guard.
inline void write_psd_set(const PsdSet& set, io::OutputGuard& guard) {
  auto meta = set.meta;
  meta["M"] = set.signal_length;
  meta["N"] = set.num_subbands;
  meta["num_samples"] = set.size();
  {
    auto os = io::open_out(guard.track("psd_mtm.f32"));
    io::put_f32_array(os, set.mtm);
    if (!os) throw IoError("failed writing psd_mtm.f32");
  }
  {
    auto os = io::open_out(guard.track("psd_pg.f32"));
    io::put_f32_array(os, set.pg);
    if (!os) throw IoError("failed writing psd_pg.f32");
  }
  {
    auto os = io::open_out(guard.track("labels.u8"));
    os.write(reinterpret_cast<const char*>(set.labels.data()), static_cast<std::streamsize>(set.labels.size()));
    if (!os) throw IoError("failed writing labels.u8");
  }
  io::write_text(guard.track("psd_meta.json"), meta.dump(2) + "\n");
}

/// Loads the taper bank for (M, W, L) from cache_dir, building and storing it
/// on a miss. An empty cache_dir disables caching.
inline TaperBank load_or_build_tapers(std::size_t m, double w, std::size_t l, const fs::path& cache_dir) {
  if (cache_dir.empty()) return dpss_tapers(m, w, l);
  std::ostringstream name;
  name << "dpss_" << m << "_" << std::hex << std::bit_cast<std::uint64_t>(w) << std::dec << "_" << l << ".bin";
  const auto path = cache_dir / name.str();
  if (fs::exists(path)) {
    auto is = io::open_in(path);
    char magic[4];
    is.read(magic, 4);
    if (std::string(magic, 4) == "DPSS" && io::get_le<std::uint64_t>(is) == m &&
        io::get_f64(is) == w && io::get_le<std::uint64_t>(is) == l) {
      TaperBank bank;
      bank.length = m;
      bank.half_bandwidth = w;
      bank.tapers.assign(l, std::vector<double>(m));
      for (auto& t : bank.tapers) {
        for (auto& x : t) x = io::get_f64(is);
      }
      for (std::size_t k = 0; k < l; ++k) bank.energies.push_back(io::get_f64(is));
      for (std::size_t k = 0; k < l; ++k) bank.weights.push_back(io::get_f64(is));
      for (std::size_t k = 0; k < l; ++k) bank.concentrations.push_back(io::get_f64(is));
      return bank;
    }
  }
  auto bank = dpss_tapers(m, w, l);
  fs::create_directories(cache_dir);
  const auto tmp = path.string() + ".tmp";
  {
    auto os = io::open_out(tmp);
    os.write("DPSS", 4);
    io::put_le<std::uint64_t>(os, m);
    io::put_f64(os, w);
    io::put_le<std::uint64_t>(os, l);
    for (const auto& t : bank.tapers) {
      for (double x : t) io::put_f64(os, x);
    }
    for (double v : bank.energies) io::put_f64(os, v);
    for (double v : bank.weights) io::put_f64(os, v);
    for (double v : bank.concentrations) io::put_f64(os, v);
  }
  fs::rename(tmp, path);
  return bank;
}

inline std::string dataset_name(const fs::path& dir) {
  auto p = fs::absolute(dir).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

/// Taper-bank version recorded in psd_meta.json; bump when estimator output changes.
inline constexpr int kEstimatorVersion = 1;

/// Computes the dual PSD cache of an IQ dataset into out_dir.
inline void preprocess_dataset(const fs::path& dataset_dir, const fs::path& out_dir, double w_times_m,
                               std::size_t num_tapers, const fs::path& taper_cache = {}) {
  const IqDataset data(dataset_dir);
  const std::size_t m = data.signal_length();
  const double w = w_times_m / static_cast<double>(m);
  const auto bank = load_or_build_tapers(m, w, num_tapers, taper_cache);

  io::OutputGuard guard(out_dir);
  PsdSet set;
  set.signal_length = m;
  set.num_subbands = data.num_subbands();
  set.labels = data.labels();
  set.mtm.resize(data.size() * m);
  set.pg.resize(data.size() * m);
  parallel_for(data.size(), [&](std::size_t i) {
    const auto iq = data.iq(i);
    const auto d = dual_representation(iq, bank);
    std::transform(d.mtm.psd.begin(), d.mtm.psd.end(), set.mtm.begin() + static_cast<std::ptrdiff_t>(i * m),
                   [](double v) { return static_cast<float>(v); });
    std::transform(d.pg.psd.begin(), d.pg.psd.end(), set.pg.begin() + static_cast<std::ptrdiff_t>(i * m),
                   [](double v) { return static_cast<float>(v); });
  });
  set.meta = {{"version", 1},
              {"W", w},
              {"W_times_M", w_times_m},
              {"L", num_tapers},
              {"weights", "energy"},
              {"estimator_versions", {{"periodogram", kEstimatorVersion}, {"multitaper", kEstimatorVersion}}},
              {"centered", true},
              {"source", dataset_name(dataset_dir)}};
  write_psd_set(set, guard);
  guard.commit();
}

}  // namespace wbss
