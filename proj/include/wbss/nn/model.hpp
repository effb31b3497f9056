#pragma once

// Dual-stream feature-fusion network: two structurally identical conv
// streams (one per PSD representation), summed after the last conv block,
// adaptive average pooling, two fully connected layers and a per-subband
// sigmoid.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "wbss/error.hpp"
#include "wbss/nn/layers.hpp"
#include "wbss/random.hpp"

namespace wbss::nn {

using nlohmann::json;

using LayerSpec = std::variant<ConvSpec, PoolSpec>;

struct Topology {
  std::vector<LayerSpec> stream;
  std::size_t reference_length = 32768;
  std::size_t adaptive_out = 256;
  std::size_t hidden = 64;
  std::size_t num_subbands = 16;
  double leaky_slope = 0.01;
  BatchNormConstants bn;

  /// Conv1..Conv7 with the two average pools, as in the published table.
  static Topology reference(std::size_t num_subbands = 16) {
    Topology t;
    t.stream = {ConvSpec{4, 7, 1, 3}, ConvSpec{4, 5, 1, 2}, ConvSpec{8, 3, 1, 1}, ConvSpec{32, 5, 2, 0},
                PoolSpec{2, 2},       ConvSpec{64, 1, 1, 0}, ConvSpec{64, 5, 2, 0}, PoolSpec{2, 2},
                ConvSpec{32, 1, 1, 0}};
    t.num_subbands = num_subbands;
    return t;
  }

  /// Small network used for finite-difference gradient checks.
  static Topology miniature(std::size_t num_subbands = 4) {
    Topology t;
    t.stream = {ConvSpec{3, 3, 1, 1}, PoolSpec{2, 2}, ConvSpec{4, 3, 2, 0}};
    t.reference_length = 64;
    t.adaptive_out = 8;
    t.hidden = 6;
    t.num_subbands = num_subbands;
    return t;
  }

  std::size_t final_channels() const {
    std::size_t c = 1;
    for (const auto& l : stream) {
      if (const auto* conv = std::get_if<ConvSpec>(&l)) c = conv->out_channels;
    }
    return c;
  }

  std::size_t flatten_size() const { return final_channels() * adaptive_out; }

  /// Lengths after each stream layer for a given input length (0 marks an
  /// invalid shape).
  std::vector<std::size_t> stream_lengths(std::size_t input_length) const {
    std::vector<std::size_t> out;
    std::size_t len = input_length;
    for (const auto& l : stream) {
      if (const auto* conv = std::get_if<ConvSpec>(&l)) {
        len = conv_output_length(len, *conv);
      } else {
        len = pool_output_length(len, std::get<PoolSpec>(l));
      }
      out.push_back(len);
    }
    return out;
  }
};

inline json to_json(const Topology& t) {
  json layers = json::array();
  for (const auto& l : t.stream) {
    if (const auto* c = std::get_if<ConvSpec>(&l)) {
      layers.push_back({{"type", "conv"}, {"out_channels", c->out_channels}, {"kernel", c->kernel},
                        {"stride", c->stride}, {"padding", c->padding}});
    } else {
      const auto& p = std::get<PoolSpec>(l);
      layers.push_back({{"type", "avgpool"}, {"kernel", p.kernel}, {"stride", p.stride}});
    }
  }
  return {{"stream", layers},
          {"fusion", "sum"},
          {"M_reference", t.reference_length},
          {"adaptive_out", t.adaptive_out},
          {"hidden", t.hidden},
          {"N", t.num_subbands},
          {"leaky_slope", t.leaky_slope},
          {"bn_eps", t.bn.eps},
          {"bn_momentum", t.bn.momentum},
          {"input_norm", "db_zscore"}};
}

inline Topology topology_from_json(const json& j) {
  Topology t;
  t.stream.clear();
  for (const auto& l : j.at("stream")) {
    if (l.at("type") == "conv") {
      t.stream.push_back(ConvSpec{l.at("out_channels"), l.at("kernel"), l.at("stride"), l.at("padding")});
    } else {
      t.stream.push_back(PoolSpec{l.at("kernel"), l.at("stride")});
    }
  }
  t.reference_length = j.at("M_reference");
  t.adaptive_out = j.at("adaptive_out");
  t.hidden = j.at("hidden");
  t.num_subbands = j.at("N");
  t.leaky_slope = j.at("leaky_slope");
  t.bn.eps = j.at("bn_eps");
  t.bn.momentum = j.at("bn_momentum");
  return t;
}

inline constexpr double kPsdFloor = 1e-12;
inline constexpr double kVarianceFloor = 1e-12;

/// 10*log10(psd + 1e-12), then per-sample zero mean / unit variance. A
/// (near-)constant input, variance below the floor, maps to all zeros.
template <typename T = double, typename In>
std::vector<T> normalize_input(std::span<const In> psd) {
  const std::size_t n = psd.size();
  std::vector<double> db(n);
  double mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    db[k] = 10.0 * std::log10(static_cast<double>(psd[k]) + kPsdFloor);
    mean += db[k];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : db) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  std::vector<T> out(n, T(0));
  if (var < kVarianceFloor) return out;
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t k = 0; k < n; ++k) out[k] = static_cast<T>((db[k] - mean) * inv);
  return out;
}

inline constexpr double kGammaClip = 1e-7;

/// Logistic function in double, kept strictly inside (0, 1).
inline double sigmoid(double z) {
  const double g = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(g, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

/// Mean binary cross-entropy over C samples x N subbands, gamma clipped to
/// [1e-7, 1 - 1e-7].
inline double bce_loss(std::span<const double> gamma, std::span<const std::uint8_t> labels) {
  if (gamma.size() != labels.size() || gamma.empty()) throw ShapeError("bce_loss: gamma/label shape mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < gamma.size(); ++k) {
    const double g = std::clamp(gamma[k], kGammaClip, 1.0 - kGammaClip);
    acc += labels[k] ? std::log(g) : std::log(1.0 - g);
  }
  return -acc / static_cast<double>(gamma.size());
}

/// dLoss/dlogit for bce_loss(sigmoid(logit)). Zero where the clip is active.
inline std::vector<double> bce_logit_gradient(std::span<const double> gamma, std::span<const std::uint8_t> labels) {
  if (gamma.size() != labels.size()) throw ShapeError("bce_logit_gradient: shape mismatch");
  std::vector<double> g(gamma.size());
  const double inv = 1.0 / static_cast<double>(gamma.size());
  for (std::size_t k = 0; k < gamma.size(); ++k) {
    const bool clipped = gamma[k] < kGammaClip || gamma[k] > 1.0 - kGammaClip;
    g[k] = clipped ? 0.0 : (gamma[k] - static_cast<double>(labels[k])) * inv;
  }
  return g;
}

template <typename T>
using StreamLayer = std::variant<ConvBlock<T>, PoolSpec>;

template <typename T>
struct StreamCache {
  Tensor<T> input;
  std::vector<ConvCache<T>> conv;       // one per layer (unused for pools)
  std::vector<Tensor<T>> pooled;        // one per layer (unused for convs)
  const Tensor<T>* output = nullptr;
};

template <typename T>
struct ModelCache {
  std::size_t batch = 0;
  StreamCache<T> mtm, pg;
  Tensor<T> fused;
  Tensor<T> pooled;
  std::vector<T> hidden_pre;  // fc1 output before activation
  std::vector<T> hidden;      // after LeakyReLU
  std::vector<T> logits;
  std::vector<double> gamma;  // batch x N
  std::vector<std::size_t> lengths;  // input, every stream layer, flatten, fc1, fc2
};

template <typename T>
class DsffModel {
 public:
  DsffModel() = default;

  explicit DsffModel(Topology topo, std::uint64_t seed = 0) : topo_(std::move(topo)) {
    build(mtm_);
    build(pg_);
    fc1_ = Linear<T>(topo_.flatten_size(), topo_.hidden);
    fc2_ = Linear<T>(topo_.hidden, topo_.num_subbands);
    initialize(seed);
  }

  const Topology& topology() const { return topo_; }
  std::size_t num_subbands() const { return topo_.num_subbands; }

  std::vector<StreamLayer<T>>& stream_mtm() { return mtm_; }
  std::vector<StreamLayer<T>>& stream_pg() { return pg_; }
  const std::vector<StreamLayer<T>>& stream_mtm() const { return mtm_; }
  const std::vector<StreamLayer<T>>& stream_pg() const { return pg_; }
  Linear<T>& fc1() { return fc1_; }
  Linear<T>& fc2() { return fc2_; }

  /// Fan-in scaled uniform weights, zero biases and BN shifts, unit BN scales.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    auto fill = [&](std::vector<T>& w, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (auto* stream : {&mtm_, &pg_}) {
      for (auto& layer : *stream) {
        if (auto* conv = std::get_if<ConvBlock<T>>(&layer)) {
          fill(conv->weight, conv->fan_in());
          std::fill(conv->bias.begin(), conv->bias.end(), T(0));
          std::fill(conv->gamma.begin(), conv->gamma.end(), T(1));
          std::fill(conv->beta.begin(), conv->beta.end(), T(0));
          std::fill(conv->running_mean.begin(), conv->running_mean.end(), T(0));
          std::fill(conv->running_var.begin(), conv->running_var.end(), T(1));
        }
      }
    }
    fill(fc1_.weight, fc1_.in_features());
    std::fill(fc1_.bias.begin(), fc1_.bias.end(), T(0));
    fill(fc2_.weight, fc2_.in_features());
    std::fill(fc2_.bias.begin(), fc2_.bias.end(), T(0));
  }

  /// Forward pass over a batch. mtm_in/pg_in hold batch x M normalized
  /// inputs. In train mode BN uses batch statistics (running statistics are
  /// only touched by commit_batch_statistics).
  void forward(std::span<const T> mtm_in, std::span<const T> pg_in, std::size_t batch, Mode mode,
               ModelCache<T>& cache) const {
    if (batch == 0 || mtm_in.size() != pg_in.size() || mtm_in.size() % batch != 0) {
      throw ShapeError("forward: inputs must be batch x M for both representations");
    }
    const std::size_t m = mtm_in.size() / batch;
    cache.batch = batch;
    cache.lengths = {m};
    run_stream(mtm_, mtm_in, batch, m, mode, cache.mtm, "mtm");
    run_stream(pg_, pg_in, batch, m, mode, cache.pg, "pg");
    for (const auto& l : lengths_of(cache.mtm)) cache.lengths.push_back(l);

    const Tensor<T>& a = *cache.mtm.output;
    const Tensor<T>& b = *cache.pg.output;
    cache.fused = a;
    for (std::size_t k = 0; k < b.data.size(); ++k) cache.fused.data[k] += b.data[k];

    cache.pooled = adaptive_avg_pool_forward(cache.fused, topo_.adaptive_out);
    cache.lengths.push_back(cache.pooled.sample_size());
    cache.hidden_pre = fc1_.forward(cache.pooled.data, batch, "fc1");
    cache.hidden = cache.hidden_pre;
    const T slope = static_cast<T>(topo_.leaky_slope);
    for (auto& v : cache.hidden) v = v > T(0) ? v : slope * v;
    cache.lengths.push_back(topo_.hidden);
    cache.logits = fc2_.forward(cache.hidden, batch, "fc2");
    cache.lengths.push_back(topo_.num_subbands);
    cache.gamma.resize(cache.logits.size());
    for (std::size_t k = 0; k < cache.logits.size(); ++k) cache.gamma[k] = sigmoid(static_cast<double>(cache.logits[k]));
  }

  /// Reverse pass from dLoss/dlogits (batch x N); fills every parameter
  /// gradient.
  void backward(ModelCache<T>& cache, std::span<const double> dlogits) {
    const std::size_t batch = cache.batch;
    std::vector<T> g2(dlogits.size());
    for (std::size_t k = 0; k < g2.size(); ++k) g2[k] = static_cast<T>(dlogits[k]);
    auto gh = fc2_.backward(g2, cache.hidden, batch);
    const T slope = static_cast<T>(topo_.leaky_slope);
    for (std::size_t k = 0; k < gh.size(); ++k) {
      if (!(cache.hidden_pre[k] > T(0))) gh[k] *= slope;
    }
    auto gp = fc1_.backward(gh, cache.pooled.data, batch);
    Tensor<T> gpool(batch, cache.pooled.channels, cache.pooled.length);
    gpool.data = std::move(gp);
    const Tensor<T> gfused = adaptive_avg_pool_backward(gpool, cache.fused.length);
    back_stream(mtm_, cache.mtm, gfused);
    back_stream(pg_, cache.pg, gfused);
  }

  void commit_batch_statistics(const ModelCache<T>& cache) {
    commit(mtm_, cache.mtm);
    commit(pg_, cache.pg);
  }

  /// Inference on one sample from already-normalized inputs. Uses only local
  /// state, so concurrent calls on a shared model are safe.
  std::vector<double> predict(std::span<const T> mtm_in, std::span<const T> pg_in) const {
    ModelCache<T> cache;
    forward(mtm_in, pg_in, 1, Mode::eval, cache);
    return cache.gamma;
  }

  /// Visits trainable tensors in checkpoint order: stream_mtm convs (weight,
  /// bias, bn gamma, bn beta), stream_pg convs, fc1 (weight, bias), fc2.
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    for (auto* stream : {&mtm_, &pg_}) {
      for (auto& layer : *stream) {
        if (auto* conv = std::get_if<ConvBlock<T>>(&layer)) {
          fn(std::span<T>(conv->weight), std::span<T>(conv->grad_weight));
          fn(std::span<T>(conv->bias), std::span<T>(conv->grad_bias));
          fn(std::span<T>(conv->gamma), std::span<T>(conv->grad_gamma));
          fn(std::span<T>(conv->beta), std::span<T>(conv->grad_beta));
        }
      }
    }
    fn(std::span<T>(fc1_.weight), std::span<T>(fc1_.grad_weight));
    fn(std::span<T>(fc1_.bias), std::span<T>(fc1_.grad_bias));
    fn(std::span<T>(fc2_.weight), std::span<T>(fc2_.grad_weight));
    fn(std::span<T>(fc2_.bias), std::span<T>(fc2_.grad_bias));
  }

  /// BN running mean and variance per conv, stream_mtm first.
  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    for (auto* stream : {&mtm_, &pg_}) {
      for (auto& layer : *stream) {
        if (auto* conv = std::get_if<ConvBlock<T>>(&layer)) {
          fn(std::span<T>(conv->running_mean));
          fn(std::span<T>(conv->running_var));
        }
      }
    }
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each_parameter([&](std::span<T> v, std::span<T>) { n += v.size(); });
    return n;
  }

  /// Same parameters and buffers converted to another scalar type.
  template <typename U>
  DsffModel<U> cast() const {
    DsffModel<U> out(topo_, 0);
    auto src = const_cast<DsffModel*>(this);
    std::vector<std::vector<T>> values;
    src->for_each_parameter([&](std::span<T> v, std::span<T>) { values.emplace_back(v.begin(), v.end()); });
    src->for_each_buffer([&](std::span<T> v) { values.emplace_back(v.begin(), v.end()); });
    std::size_t k = 0;
    auto copy = [&](std::span<U> dst) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<U>(values[k][i]);
      ++k;
    };
    out.for_each_parameter([&](std::span<U> v, std::span<U>) { copy(v); });
    out.for_each_buffer([&](std::span<U> v) { copy(v); });
    return out;
  }

 private:
  void build(std::vector<StreamLayer<T>>& stream) {
    stream.clear();
    std::size_t channels = 1;
    for (const auto& spec : topo_.stream) {
      if (const auto* conv = std::get_if<ConvSpec>(&spec)) {
        stream.emplace_back(ConvBlock<T>(channels, *conv));
        channels = conv->out_channels;
      } else {
        stream.emplace_back(std::get<PoolSpec>(spec));
      }
    }
  }

  static std::vector<std::size_t> lengths_of(const StreamCache<T>& c) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < c.conv.size(); ++k) {
      out.push_back(c.pooled[k].length != 0 ? c.pooled[k].length : c.conv[k].out.length);
    }
    return out;
  }

  void run_stream(const std::vector<StreamLayer<T>>& stream, std::span<const T> in, std::size_t batch,
                  std::size_t m, Mode mode, StreamCache<T>& c, const std::string& tag) const {
    c.input.resize(batch, 1, m);
    std::copy(in.begin(), in.end(), c.input.data.begin());
    c.conv.assign(stream.size(), {});
    c.pooled.assign(stream.size(), {});
    const Tensor<T>* x = &c.input;
    std::size_t conv_no = 0, pool_no = 0;
    for (std::size_t k = 0; k < stream.size(); ++k) {
      if (const auto* conv = std::get_if<ConvBlock<T>>(&stream[k])) {
        ++conv_no;
        conv->forward(*x, mode, topo_.bn, topo_.leaky_slope, c.conv[k], tag + ".conv" + std::to_string(conv_no));
        x = &c.conv[k].out;
      } else {
        ++pool_no;
        c.pooled[k] = avg_pool_forward(*x, std::get<PoolSpec>(stream[k]), tag + ".avgpool" + std::to_string(pool_no));
        x = &c.pooled[k];
      }
    }
    c.output = x;
  }

  void back_stream(std::vector<StreamLayer<T>>& stream, StreamCache<T>& c, const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (std::size_t k = stream.size(); k-- > 0;) {
      const Tensor<T>& in = k == 0 ? c.input : (c.pooled[k - 1].length != 0 ? c.pooled[k - 1] : c.conv[k - 1].out);
      if (auto* conv = std::get_if<ConvBlock<T>>(&stream[k])) {
        g = conv->backward(g, c.conv[k], topo_.leaky_slope, k > 0);
      } else {
        g = avg_pool_backward(g, in.length, std::get<PoolSpec>(stream[k]));
      }
    }
  }

  static void commit_stream(std::vector<StreamLayer<T>>& stream, const StreamCache<T>& c, const BatchNormConstants& bn) {
    for (std::size_t k = 0; k < stream.size(); ++k) {
      if (auto* conv = std::get_if<ConvBlock<T>>(&stream[k])) conv->commit_statistics(c.conv[k], bn);
    }
  }

  void commit(std::vector<StreamLayer<T>>& stream, const StreamCache<T>& c) { commit_stream(stream, c, topo_.bn); }

  Topology topo_;
  std::vector<StreamLayer<T>> mtm_, pg_;
  Linear<T> fc1_, fc2_;
};

}  // namespace wbss::nn
