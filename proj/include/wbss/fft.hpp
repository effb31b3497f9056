#pragma once

#include <bit>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

namespace wbss {

using cdouble = std::complex<double>;

/// Radix-2 decimation-in-time FFT for one power-of-two length. Twiddles are
/// evaluated directly (no recurrence) so error stays at a few ulps.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), twiddles_(n / 2), bitrev_(n) {
    const int bits = std::countr_zero(n);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddles_[k] = {std::cos(angle), std::sin(angle)};
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      bitrev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  /// In-place unnormalized forward transform.
  void forward(std::span<cdouble> data) const {
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const cdouble w = twiddles_[j * step];
          const cdouble u = data[start + j];
          const cdouble v = data[start + j + half] * w;
          data[start + j] = u + v;
          data[start + j + half] = u - v;
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<cdouble> twiddles_;
  std::vector<std::size_t> bitrev_;
};

/// Shared, immutable plan for length n (power of two).
inline std::shared_ptr<const FftPlan> fft_plan(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const FftPlan>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_shared<const FftPlan>(n);
  return slot;
}

/// Direct O(M^2) summation. Twiddles come from a length-M table indexed by
/// (k*m mod M), so this is also the reference the FFT is tested against.
inline std::vector<cdouble> direct_dft(std::span<const cdouble> signal) {
  const std::size_t n = signal.size();
  std::vector<cdouble> roots(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    roots[k] = {std::cos(angle), std::sin(angle)};
  }
  std::vector<cdouble> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cdouble acc{};
    std::size_t idx = 0;
    for (std::size_t m = 0; m < n; ++m) {
      acc += signal[m] * roots[idx];
      idx += k;
      if (idx >= n) idx -= n;
    }
    out[k] = acc;
  }
  return out;
}

/// Unnormalized DFT, Y[k] = sum_m y[m] exp(-j 2 pi k m / M).
inline std::vector<cdouble> dft(std::span<const cdouble> signal) {
  const std::size_t n = signal.size();
  if (n == 0 || !std::has_single_bit(n)) return direct_dft(signal);
  std::vector<cdouble> out(signal.begin(), signal.end());
  fft_plan(n)->forward(out);
  return out;
}

}  // namespace wbss
