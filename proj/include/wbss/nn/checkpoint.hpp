#pragma once

// Checkpoint layout (little-endian):
//   "DSFF"  u32 version
//   u64 manifest bytes, manifest JSON (topology, hyperparameters, seeds)
//   u64 parameter count, f32 parameters in for_each_parameter order
//   u64 buffer count, f32 BN running mean/var in for_each_buffer order
//   u8 has_thresholds, then [u64 N, f64 target_pf, f64 lambda[N],
//   u64 id bytes, id, u8 mode]

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wbss/binary_io.hpp"
#include "wbss/nn/model.hpp"
#include "wbss/sensing.hpp"

namespace wbss::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DsffModel<float> model;
  json manifest;
  std::optional<ThresholdVector> thresholds;
};

namespace detail {

inline void put_string(std::ostream& os, const std::string& s) {
  io::put_le<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::uint64_t limit) {
  const auto n = io::get_le<std::uint64_t>(is);
  if (n > limit) throw IoError("checkpoint string field is implausibly long");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("checkpoint truncated");
  return s;
}

}  // namespace detail

/// `extra` is merged into the manifest (hyperparameters, seeds, dataset ids).
inline void save_checkpoint(const std::filesystem::path& path, DsffModel<float>& model, const json& extra = json::object(),
                            const std::optional<ThresholdVector>& thresholds = std::nullopt) {
  json manifest = extra;
  manifest["topology"] = to_json(model.topology());
  manifest["parameter_layout"] = "stream_mtm, stream_pg, fc1, fc2; conv: weight[out][in][k], bias, bn_gamma, bn_beta; "
                                 "linear: weight[out][in], bias; then bn running mean/var per conv";
  auto os = io::open_out(path);
  os.write("DSFF", 4);
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_string(os, manifest.dump());

  std::vector<float> params, buffers;
  model.for_each_parameter([&](std::span<float> v, std::span<float>) { params.insert(params.end(), v.begin(), v.end()); });
  model.for_each_buffer([&](std::span<float> v) { buffers.insert(buffers.end(), v.begin(), v.end()); });
  io::put_le<std::uint64_t>(os, params.size());
  io::put_f32_array(os, params);
  io::put_le<std::uint64_t>(os, buffers.size());
  io::put_f32_array(os, buffers);

  io::put_le<std::uint8_t>(os, thresholds ? 1 : 0);
  if (thresholds) {
    io::put_le<std::uint64_t>(os, thresholds->size());
    io::put_f64(os, thresholds->target_pf);
    for (double l : thresholds->lambda) io::put_f64(os, l);
    detail::put_string(os, thresholds->calibration_set_id);
    io::put_le<std::uint8_t>(os, thresholds->mode == ThresholdMode::global ? 1 : 0);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  char magic[4] = {};
  if (!is.read(magic, 4) || std::string(magic, 4) != "DSFF") throw IoError(path.string() + " is not a DSFF checkpoint");
  const auto version = io::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  ck.manifest = json::parse(detail::get_string(is, 1u << 26));
  ck.model = DsffModel<float>(topology_from_json(ck.manifest.at("topology")), 0);

  auto read_block = [&](auto&& visit, const char* what) {
    const auto stored = io::get_le<std::uint64_t>(is);
    std::size_t expected = 0;
    visit([&](std::span<float> v) { expected += v.size(); });
    if (stored != expected) {
      throw IoError(std::string("checkpoint ") + what + " count " + std::to_string(stored) + " does not match topology (" +
                    std::to_string(expected) + ")");
    }
    std::vector<float> flat(expected);
    io::get_f32_array(is, flat);
    std::size_t k = 0;
    visit([&](std::span<float> v) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), v.size(), v.begin());
      k += v.size();
    });
  };
  read_block([&](auto&& fn) { ck.model.for_each_parameter([&](std::span<float> v, std::span<float>) { fn(v); }); },
             "parameter");
  read_block([&](auto&& fn) { ck.model.for_each_buffer(fn); }, "buffer");

  if (io::get_le<std::uint8_t>(is)) {
    ThresholdVector t;
    const auto n = io::get_le<std::uint64_t>(is);
    if (n != ck.model.num_subbands()) throw IoError("checkpoint threshold vector length does not match N");
    t.target_pf = io::get_f64(is);
    t.lambda.resize(n);
    for (auto& l : t.lambda) l = io::get_f64(is);
    t.calibration_set_id = detail::get_string(is, 1u << 20);
    t.mode = io::get_le<std::uint8_t>(is) ? ThresholdMode::global : ThresholdMode::per_subband;
    ck.thresholds = t;
  }
  return ck;
}

}  // namespace wbss::nn
