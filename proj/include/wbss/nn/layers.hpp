#pragma once

// Layer kernels with hand-written reverse passes. Every reduction runs in a
// fixed order, so gradients are bit-reproducible for any thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wbss/error.hpp"
#include "wbss/nn/tensor.hpp"
#include "wbss/parallel.hpp"

namespace wbss::nn {

enum class Mode { train, eval };

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct PoolSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};

inline std::size_t conv_output_length(std::size_t in_length, const ConvSpec& s) {
  const std::size_t padded = in_length + 2 * s.padding;
  if (padded < s.kernel) return 0;
  return (padded - s.kernel) / s.stride + 1;
}

inline std::size_t pool_output_length(std::size_t in_length, const PoolSpec& s) {
  if (in_length < s.kernel) return 0;
  return (in_length - s.kernel) / s.stride + 1;
}

struct BatchNormConstants {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Dot product with eight interleaved partial sums combined in a fixed
/// order: vectorizable without reassociation, identical on every run.
template <typename T>
T dot(const T* a, const T* b, std::ptrdiff_t n) {
  T acc[8] = {};
  std::ptrdiff_t t = 0;
  for (; t + 8 <= n; t += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[t + j] * b[t + j];
  }
  for (; t < n; ++t) acc[0] += a[t] * b[t];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
struct ConvCache {
  const Tensor<T>* input = nullptr;
  // Input split into stride phases: phases[b][i][r][u] = x[b][i][stride*u + r].
  std::vector<T> phases;
  std::size_t phase_length = 0;
  Tensor<T> xhat;
  Tensor<T> out;
  std::vector<double> mean, var, inv_std;
};

/// Conv1d -> BatchNorm -> LeakyReLU.
template <typename T>
class ConvBlock {
  ConvSpec spec_;
  std::size_t in_channels_ = 0;

 public:
  ConvBlock() = default;
  ConvBlock(std::size_t in_channels, ConvSpec spec)
      : spec_(spec),
        in_channels_(in_channels),
        weight(spec.out_channels * in_channels * spec.kernel),
        bias(spec.out_channels),
        gamma(spec.out_channels, T(1)),
        beta(spec.out_channels),
        running_mean(spec.out_channels),
        running_var(spec.out_channels, T(1)),
        grad_weight(weight.size()),
        grad_bias(bias.size()),
        grad_gamma(gamma.size()),
        grad_beta(beta.size()) {}

  const ConvSpec& spec() const { return spec_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return spec_.out_channels; }
  std::size_t fan_in() const { return in_channels_ * spec_.kernel; }

  std::vector<T> weight, bias, gamma, beta;
  std::vector<T> running_mean, running_var;
  std::vector<T> grad_weight, grad_bias, grad_gamma, grad_beta;

  void forward(const Tensor<T>& x, Mode mode, const BatchNormConstants& bn, double slope, ConvCache<T>& c,
               const std::string& name) const {
    if (x.channels != in_channels_) {
      throw ShapeError(name + ": expected " + std::to_string(in_channels_) + " input channels, got " +
                       std::to_string(x.channels));
    }
    const std::size_t lout = conv_output_length(x.length, spec_);
    if (lout == 0) throw ShapeError(name + ": input length " + std::to_string(x.length) + " shorter than kernel");
    const std::size_t nb = x.batch, cout = spec_.out_channels, k = spec_.kernel;

    c.input = &x;
    prepare_phases(x, c);
    c.xhat.resize(nb, cout, lout);
    c.out.resize(nb, cout, lout);

    // Raw convolution into xhat.
    parallel_for(nb, [&](std::size_t b) {
      for (std::size_t o = 0; o < cout; ++o) {
        T* r = c.xhat.row(b, o);
        std::fill(r, r + lout, bias[o]);
        for (std::size_t i = 0; i < in_channels_; ++i) {
          const T* w = &weight[(o * in_channels_ + i) * k];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const Tap tap = tap_range(kk, x.length, lout, c.phase_length);
            if (tap.lo >= tap.hi) continue;
            const T* src = phase_row(c, x, b, i, tap.phase);
            const T wv = w[kk];
            for (std::ptrdiff_t t = tap.lo; t < tap.hi; ++t) r[t] += wv * src[t + tap.offset];
          }
        }
      }
    });

    // Batch norm + activation, per channel.
    c.mean.assign(cout, 0.0);
    c.var.assign(cout, 0.0);
    c.inv_std.assign(cout, 0.0);
    const double count = static_cast<double>(nb * lout);
    parallel_for(cout, [&](std::size_t o) {
      double mu, var;
      if (mode == Mode::train) {
        double acc = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
          const T* r = c.xhat.row(b, o);
          for (std::size_t t = 0; t < lout; ++t) acc += r[t];
        }
        mu = acc / count;
        double sq = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
          const T* r = c.xhat.row(b, o);
          for (std::size_t t = 0; t < lout; ++t) {
            const double d = static_cast<double>(r[t]) - mu;
            sq += d * d;
          }
        }
        var = sq / count;
      } else {
        mu = running_mean[o];
        var = running_var[o];
      }
      const double inv = 1.0 / std::sqrt(var + bn.eps);
      c.mean[o] = mu;
      c.var[o] = var;
      c.inv_std[o] = inv;
      const T g = gamma[o], be = beta[o];
      const T mu_t = static_cast<T>(mu), inv_t = static_cast<T>(inv), sl = static_cast<T>(slope);
      for (std::size_t b = 0; b < nb; ++b) {
        T* xh = c.xhat.row(b, o);
        T* y = c.out.row(b, o);
        for (std::size_t t = 0; t < lout; ++t) {
          const T v = (xh[t] - mu_t) * inv_t;
          xh[t] = v;
          const T a = g * v + be;
          y[t] = a > T(0) ? a : sl * a;
        }
      }
    });
  }

  /// Updates running statistics from the batch statistics in c
  /// (unbiased variance, exponential moving average).
  void commit_statistics(const ConvCache<T>& c, const BatchNormConstants& bn) {
    const double n = static_cast<double>(c.out.batch * c.out.length);
    const double correction = n > 1 ? n / (n - 1) : 1.0;
    for (std::size_t o = 0; o < spec_.out_channels; ++o) {
      running_mean[o] = static_cast<T>((1 - bn.momentum) * running_mean[o] + bn.momentum * c.mean[o]);
      running_var[o] = static_cast<T>((1 - bn.momentum) * running_var[o] + bn.momentum * c.var[o] * correction);
    }
  }

  /// Reverse pass of a train-mode forward. Overwrites the parameter
  /// gradients; returns dL/dinput (skipped when need_input_grad is false).
  Tensor<T> backward(const Tensor<T>& grad_out, const ConvCache<T>& c, double slope, bool need_input_grad) {
    const Tensor<T>& x = *c.input;
    const std::size_t nb = x.batch, cout = spec_.out_channels, k = spec_.kernel, lout = c.out.length;
    const double count = static_cast<double>(nb * lout);

    // Through LeakyReLU and BN: gz = gamma*inv/n * (n*ga - sum(ga) - xhat*sum(ga*xhat)).
    Tensor<T> gz(nb, cout, lout);
    parallel_for(cout, [&](std::size_t o) {
      double sum_ga = 0.0, sum_ga_xhat = 0.0;
      const T sl = static_cast<T>(slope);
      for (std::size_t b = 0; b < nb; ++b) {
        const T* go = grad_out.row(b, o);
        const T* y = c.out.row(b, o);
        const T* xh = c.xhat.row(b, o);
        T* g = gz.row(b, o);
        for (std::size_t t = 0; t < lout; ++t) {
          const T ga = y[t] > T(0) ? go[t] : sl * go[t];
          g[t] = ga;
          sum_ga += ga;
          sum_ga_xhat += static_cast<double>(ga) * xh[t];
        }
      }
      grad_beta[o] = static_cast<T>(sum_ga);
      grad_gamma[o] = static_cast<T>(sum_ga_xhat);
      const double scale = gamma[o] * c.inv_std[o] / count;
      const double mean_term = sum_ga;
      double bias_acc = 0.0;
      for (std::size_t b = 0; b < nb; ++b) {
        const T* xh = c.xhat.row(b, o);
        T* g = gz.row(b, o);
        for (std::size_t t = 0; t < lout; ++t) {
          const double v = scale * (count * g[t] - mean_term - xh[t] * sum_ga_xhat);
          g[t] = static_cast<T>(v);
          bias_acc += g[t];
        }
      }
      grad_bias[o] = static_cast<T>(bias_acc);
    });

    // Weight gradient: correlation of gz with the input, per output channel.
    parallel_for(cout, [&](std::size_t o) {
      for (std::size_t i = 0; i < in_channels_; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const Tap tap = tap_range(kk, x.length, lout, c.phase_length);
          double acc = 0.0;
          if (tap.lo < tap.hi) {
            for (std::size_t b = 0; b < nb; ++b) {
              const T* src = phase_row(c, x, b, i, tap.phase);
              const T* g = gz.row(b, o);
              acc += dot(g + tap.lo, src + tap.lo + tap.offset, tap.hi - tap.lo);
            }
          }
          grad_weight[(o * in_channels_ + i) * k + kk] = static_cast<T>(acc);
        }
      }
    });

    Tensor<T> gx;
    if (!need_input_grad) return gx;
    gx.resize(nb, in_channels_, x.length);
    const std::size_t s = spec_.stride;
    parallel_for(nb, [&](std::size_t b) {
      std::vector<T> gph(s * c.phase_length);
      for (std::size_t i = 0; i < in_channels_; ++i) {
        std::fill(gph.begin(), gph.end(), T(0));
        for (std::size_t o = 0; o < cout; ++o) {
          const T* g = gz.row(b, o);
          const T* w = &weight[(o * in_channels_ + i) * k];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const Tap tap = tap_range(kk, x.length, lout, c.phase_length);
            if (tap.lo >= tap.hi) continue;
            T* dst = gph.data() + tap.phase * c.phase_length;
            const T wv = w[kk];
            for (std::ptrdiff_t t = tap.lo; t < tap.hi; ++t) dst[t + tap.offset] += wv * g[t];
          }
        }
        T* out = gx.row(b, i);
        for (std::size_t r = 0; r < s; ++r) {
          for (std::size_t u = 0; u < c.phase_length; ++u) {
            const std::size_t pos = s * u + r;
            if (pos < x.length) out[pos] = gph[r * c.phase_length + u];
          }
        }
      }
    });
    return gx;
  }

 private:
  struct Tap {
    std::size_t phase;
    std::ptrdiff_t offset;
    std::ptrdiff_t lo, hi;
  };

  // Output positions t whose receptive sample s*t + kk - padding is in range,
  // and where that sample lives in the phase decomposition.
  Tap tap_range(std::size_t kk, std::size_t lin, std::size_t lout, std::size_t phase_length) const {
    const auto s = static_cast<std::ptrdiff_t>(spec_.stride);
    const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(spec_.padding);
    const std::ptrdiff_t r = ((q % s) + s) % s;
    const std::ptrdiff_t off = (q - r) / s;
    std::ptrdiff_t lo = q >= 0 ? 0 : (-q + s - 1) / s;
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(lin) - 1 - q;
    std::ptrdiff_t hi = last < 0 ? 0 : last / s + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(lout));
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(phase_length) - off);
    lo = std::max<std::ptrdiff_t>(lo, 0);
    return {static_cast<std::size_t>(r), off, lo, hi};
  }

  void prepare_phases(const Tensor<T>& x, ConvCache<T>& c) const {
    const std::size_t s = spec_.stride;
    c.phase_length = (x.length + s - 1) / s;
    if (s == 1) {
      c.phases.clear();
      return;
    }
    c.phases.assign(x.batch * x.channels * s * c.phase_length, T(0));
    for (std::size_t b = 0; b < x.batch; ++b) {
      for (std::size_t i = 0; i < x.channels; ++i) {
        const T* src = x.row(b, i);
        T* dst = c.phases.data() + (b * x.channels + i) * s * c.phase_length;
        for (std::size_t pos = 0; pos < x.length; ++pos) dst[(pos % s) * c.phase_length + pos / s] = src[pos];
      }
    }
  }

  const T* phase_row(const ConvCache<T>& c, const Tensor<T>& x, std::size_t b, std::size_t i, std::size_t r) const {
    if (spec_.stride == 1) return x.row(b, i);
    return c.phases.data() + ((b * x.channels + i) * spec_.stride + r) * c.phase_length;
  }
};

template <typename T>
Tensor<T> avg_pool_forward(const Tensor<T>& x, const PoolSpec& s, const std::string& name = "avg_pool") {
  const std::size_t lout = pool_output_length(x.length, s);
  if (lout == 0) {
    throw ShapeError(name + ": kernel " + std::to_string(s.kernel) + " exceeds length " + std::to_string(x.length));
  }
  Tensor<T> y(x.batch, x.channels, lout);
  const T inv = T(1) / static_cast<T>(s.kernel);
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t c = 0; c < x.channels; ++c) {
      const T* src = x.row(b, c);
      T* dst = y.row(b, c);
      for (std::size_t t = 0; t < lout; ++t) {
        T acc = 0;
        for (std::size_t j = 0; j < s.kernel; ++j) acc += src[t * s.stride + j];
        dst[t] = acc * inv;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& grad_out, std::size_t in_length, const PoolSpec& s) {
  Tensor<T> gx(grad_out.batch, grad_out.channels, in_length);
  const T inv = T(1) / static_cast<T>(s.kernel);
  for (std::size_t b = 0; b < grad_out.batch; ++b) {
    for (std::size_t c = 0; c < grad_out.channels; ++c) {
      const T* g = grad_out.row(b, c);
      T* dst = gx.row(b, c);
      for (std::size_t t = 0; t < grad_out.length; ++t) {
        for (std::size_t j = 0; j < s.kernel; ++j) dst[t * s.stride + j] += g[t] * inv;
      }
    }
  }
  return gx;
}

/// Bin i covers input [floor(i*L/out), ceil((i+1)*L/out)). When out > L the
/// bins overlap and inputs are repeated.
inline std::pair<std::size_t, std::size_t> adaptive_bin(std::size_t i, std::size_t in_length, std::size_t out_length) {
  const std::size_t start = (i * in_length) / out_length;
  const std::size_t end = ((i + 1) * in_length + out_length - 1) / out_length;
  return {start, end};
}

template <typename T>
Tensor<T> adaptive_avg_pool_forward(const Tensor<T>& x, std::size_t out_length) {
  if (x.length == 0 || out_length == 0) throw ShapeError("adaptive_avg_pool: empty input or output");
  Tensor<T> y(x.batch, x.channels, out_length);
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t c = 0; c < x.channels; ++c) {
      const T* src = x.row(b, c);
      T* dst = y.row(b, c);
      for (std::size_t i = 0; i < out_length; ++i) {
        const auto [lo, hi] = adaptive_bin(i, x.length, out_length);
        T acc = 0;
        for (std::size_t j = lo; j < hi; ++j) acc += src[j];
        dst[i] = acc / static_cast<T>(hi - lo);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> adaptive_avg_pool_backward(const Tensor<T>& grad_out, std::size_t in_length) {
  Tensor<T> gx(grad_out.batch, grad_out.channels, in_length);
  for (std::size_t b = 0; b < grad_out.batch; ++b) {
    for (std::size_t c = 0; c < grad_out.channels; ++c) {
      const T* g = grad_out.row(b, c);
      T* dst = gx.row(b, c);
      for (std::size_t i = 0; i < grad_out.length; ++i) {
        const auto [lo, hi] = adaptive_bin(i, in_length, grad_out.length);
        const T share = g[i] / static_cast<T>(hi - lo);
        for (std::size_t j = lo; j < hi; ++j) dst[j] += share;
      }
    }
  }
  return gx;
}

/// Fully connected layer, weight stored [out][in].
template <typename T>
class Linear {
  std::size_t in_ = 0, out_ = 0;

 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out)
      : in_(in), out_(out), weight(in * out), bias(out), grad_weight(in * out), grad_bias(out) {}

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  std::vector<T> weight, bias;
  std::vector<T> grad_weight, grad_bias;

  /// x: batch rows of in_features; returns batch rows of out_features.
  std::vector<T> forward(const std::vector<T>& x, std::size_t batch, const std::string& name) const {
    if (x.size() != batch * in_) {
      throw ShapeError(name + ": expected " + std::to_string(in_) + " input features per sample");
    }
    std::vector<T> y(batch * out_);
    parallel_for(batch, [&](std::size_t b) {
      const T* xb = x.data() + b * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T* w = weight.data() + o * in_;
        T acc = 0;
        for (std::size_t j = 0; j < in_; ++j) acc += w[j] * xb[j];
        y[b * out_ + o] = acc + bias[o];
      }
    });
    return y;
  }

  std::vector<T> backward(const std::vector<T>& grad_out, const std::vector<T>& x, std::size_t batch) {
    parallel_for(out_, [&](std::size_t o) {
      T* gw = grad_weight.data() + o * in_;
      std::fill(gw, gw + in_, T(0));
      double gb = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T g = grad_out[b * out_ + o];
        gb += g;
        const T* xb = x.data() + b * in_;
        for (std::size_t j = 0; j < in_; ++j) gw[j] += g * xb[j];
      }
      grad_bias[o] = static_cast<T>(gb);
    });
    std::vector<T> gx(batch * in_, T(0));
    parallel_for(batch, [&](std::size_t b) {
      T* dst = gx.data() + b * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T g = grad_out[b * out_ + o];
        const T* w = weight.data() + o * in_;
        for (std::size_t j = 0; j < in_; ++j) dst[j] += g * w[j];
      }
    });
    return gx;
  }
};

}  // namespace wbss::nn
