#pragma once

// Power-spectrum estimators: the raw periodogram and the Slepian multitaper
// estimate, plus the DPSS taper construction they depend on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "wbss/error.hpp"
#include "wbss/fft.hpp"

namespace wbss {

enum class Estimator { periodogram, multitaper };

inline const char* to_string(Estimator e) {
  return e == Estimator::periodogram ? "periodogram" : "multitaper";
}

/// One PSD in linear power units. Zero frequency sits at index size()/2 when
/// `centered` is set.
template <typename T = double>
struct Spectrum {
  std::vector<T> psd;
  bool centered = true;
  Estimator estimator = Estimator::periodogram;

  std::size_t size() const { return psd.size(); }
};

template <typename T = double>
struct DualSpectrum {
  Spectrum<T> mtm;
  Spectrum<T> pg;

  std::size_t size() const { return pg.size(); }
};

/// Rotates an uncentered spectrum so bin 0 lands at index M/2.
template <typename T>
std::vector<T> center_shift(std::span<const T> raw) {
  const std::size_t n = raw.size();
  std::vector<T> out(n);
  for (std::size_t k = 0; k < n; ++k) out[(k + n / 2) % n] = raw[k];
  return out;
}

inline Spectrum<> periodogram(std::span<const cdouble> signal) {
  if (signal.size() < 2 || signal.size() % 2 != 0) {
    throw InvalidInputError("periodogram: signal length must be even and >= 2, got " +
                            std::to_string(signal.size()));
  }
  const auto spectrum = dft(signal);
  std::vector<double> power(spectrum.size());
  std::transform(spectrum.begin(), spectrum.end(), power.begin(),
                 [](const cdouble& y) { return std::norm(y); });
  return {center_shift<double>(power), true, Estimator::periodogram};
}

/// L discrete prolate spheroidal sequences of length M and half-bandwidth W.
struct TaperBank {
  std::size_t length = 0;
  double half_bandwidth = 0.0;
  std::vector<std::vector<double>> tapers;
  std::vector<double> energies;
  std::vector<double> weights;
  std::vector<double> concentrations;

  std::size_t num_tapers() const { return tapers.size(); }
};

/// floor(2MW): the largest admissible taper count.
inline std::size_t max_tapers(std::size_t length, double half_bandwidth) {
  // The small slack keeps e.g. W = 4/M from flooring 7.999999 down to 7.
  return static_cast<std::size_t>(std::floor(2.0 * static_cast<double>(length) * half_bandwidth + 1e-9));
}

namespace detail {

// Symmetric tridiagonal matrix whose eigenvectors are the DPSS.
struct Tridiagonal {
  std::vector<double> diag;
  std::vector<double> off;  // off[m] couples rows m-1 and m; off[0] unused
};

inline Tridiagonal dpss_matrix(std::size_t m_len, double w) {
  Tridiagonal t;
  t.diag.resize(m_len);
  t.off.assign(m_len, 0.0);
  const double c = std::cos(2.0 * std::numbers::pi * w);
  const double mid = (static_cast<double>(m_len) - 1.0) / 2.0;
  for (std::size_t m = 0; m < m_len; ++m) {
    const double d = mid - static_cast<double>(m);
    t.diag[m] = d * d * c;
    if (m > 0) t.off[m] = static_cast<double>(m) * static_cast<double>(m_len - m) / 2.0;
  }
  return t;
}

// Number of eigenvalues strictly below x (Sturm sequence count).
inline std::size_t sturm_count(const Tridiagonal& t, double x) {
  std::size_t count = 0;
  double q = t.diag[0] - x;
  if (q < 0) ++count;
  for (std::size_t m = 1; m < t.diag.size(); ++m) {
    if (q == 0.0) q = std::numeric_limits<double>::epsilon() * (std::abs(t.off[m]) + 1.0);
    q = t.diag[m] - x - t.off[m] * t.off[m] / q;
    if (q < 0) ++count;
  }
  return count;
}

// k-th smallest eigenvalue (0-based) by bisection.
inline double bisect_eigenvalue(const Tridiagonal& t, std::size_t k) {
  const std::size_t n = t.diag.size();
  double lo = std::numeric_limits<double>::max();
  double hi = std::numeric_limits<double>::lowest();
  for (std::size_t m = 0; m < n; ++m) {
    const double r = (m > 0 ? std::abs(t.off[m]) : 0.0) + (m + 1 < n ? std::abs(t.off[m + 1]) : 0.0);
    lo = std::min(lo, t.diag[m] - r);
    hi = std::max(hi, t.diag[m] + r);
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (sturm_count(t, mid) > k) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Solves (T - shift I) x = rhs with partial pivoting (LAPACK dgtsv style).
inline std::vector<double> solve_shifted(const Tridiagonal& t, double shift, std::vector<double> rhs) {
  const std::size_t n = t.diag.size();
  std::vector<double> d(n), du(n, 0.0), dl(n, 0.0), du2(n, 0.0);
  for (std::size_t m = 0; m < n; ++m) d[m] = t.diag[m] - shift;
  for (std::size_t m = 0; m + 1 < n; ++m) {
    du[m] = t.off[m + 1];
    dl[m] = t.off[m + 1];
  }
  const double tiny = std::numeric_limits<double>::epsilon() *
                      std::max(1.0, std::abs(t.diag[n / 2]) + std::abs(t.off[n / 2]));
  for (std::size_t m = 0; m + 1 < n; ++m) {
    if (std::abs(d[m]) >= std::abs(dl[m])) {
      if (d[m] == 0.0) d[m] = tiny;
      const double f = dl[m] / d[m];
      d[m + 1] -= f * du[m];
      rhs[m + 1] -= f * rhs[m];
      dl[m] = 0.0;
    } else {
      const double f = d[m] / dl[m];
      d[m] = dl[m];
      const double tmp = d[m + 1];
      d[m + 1] = du[m] - f * tmp;
      if (m + 2 < n) {
        du2[m] = du[m + 1];
        du[m + 1] = -f * du2[m];
      }
      du[m] = tmp;
      std::swap(rhs[m], rhs[m + 1]);
      rhs[m + 1] -= f * rhs[m];
    }
  }
  if (d[n - 1] == 0.0) d[n - 1] = tiny;
  rhs[n - 1] /= d[n - 1];
  if (n > 1) rhs[n - 2] = (rhs[n - 2] - du[n - 2] * rhs[n - 1]) / d[n - 2];
  for (std::size_t i = n - 2; i-- > 0;) {
    rhs[i] = (rhs[i] - du[i] * rhs[i + 1] - du2[i] * rhs[i + 2]) / d[i];
  }
  return rhs;
}

inline void normalize(std::vector<double>& v) {
  double e = 0.0;
  for (double x : v) e += x * x;
  const double s = 1.0 / std::sqrt(e);
  for (double& x : v) x *= s;
}

// Fraction of the taper's energy inside |f| <= W, from its autocorrelation:
// sum_k r[k] sin(2 pi W k) / (pi k).
inline double concentration(std::span<const double> taper, double w) {
  const std::size_t n = taper.size();
  const std::size_t padded = std::bit_ceil(2 * n);
  std::vector<cdouble> buf(padded);
  for (std::size_t m = 0; m < n; ++m) buf[m] = taper[m];
  const auto plan = fft_plan(padded);
  plan->forward(buf);
  for (auto& y : buf) y = std::norm(y);
  // inverse via conj-forward-conj
  for (auto& y : buf) y = std::conj(y);
  plan->forward(buf);
  double acc = 2.0 * w * buf[0].real() / static_cast<double>(padded);
  for (std::size_t k = 1; k < n; ++k) {
    const double r = buf[k].real() / static_cast<double>(padded);
    const double kk = static_cast<double>(k);
    acc += 2.0 * r * std::sin(2.0 * std::numbers::pi * w * kk) / (std::numbers::pi * kk);
  }
  return acc;
}

}  // namespace detail

/// Builds the first `num_tapers` Slepian sequences for (length, W).
///
/// Tapers come from the commuting tridiagonal matrix (bisection for the top
/// eigenvalues, then inverse iteration), are unit-energy, and follow the usual
/// polarity convention: even tapers have positive mean, odd tapers start
/// positive (sum of ((M-1)/2 - m) v[m] > 0).
inline TaperBank dpss_tapers(std::size_t length, double half_bandwidth, std::size_t num_tapers) {
  if (!(half_bandwidth > 0.0 && half_bandwidth < 0.5)) {
    throw ConfigError("dpss_tapers: half-bandwidth W must lie in (0, 0.5)");
  }
  if (length < 2) throw ConfigError("dpss_tapers: taper length must be >= 2");
  const std::size_t limit = max_tapers(length, half_bandwidth);
  if (num_tapers < 1 || num_tapers > limit) {
    throw ConfigError("dpss_tapers: L = " + std::to_string(num_tapers) +
                      " violates 1 <= L <= floor(2MW) = " + std::to_string(limit));
  }

  const auto tri = detail::dpss_matrix(length, half_bandwidth);
  TaperBank bank;
  bank.length = length;
  bank.half_bandwidth = half_bandwidth;
  const double mid = (static_cast<double>(length) - 1.0) / 2.0;

  for (std::size_t l = 0; l < num_tapers; ++l) {
    const double eig = detail::bisect_eigenvalue(tri, length - 1 - l);
    std::vector<double> v(length);
    for (std::size_t m = 0; m < length; ++m) {
      // Deterministic start vector with components along every eigenvector.
      v[m] = 1.0 + 0.1 * std::sin(0.37 * static_cast<double>(m) + static_cast<double>(l));
    }
    for (int it = 0; it < 4; ++it) {
      v = detail::solve_shifted(tri, eig, std::move(v));
      for (const auto& prev : bank.tapers) {
        double dot = 0.0;
        for (std::size_t m = 0; m < length; ++m) dot += prev[m] * v[m];
        for (std::size_t m = 0; m < length; ++m) v[m] -= dot * prev[m];
      }
      detail::normalize(v);
    }

    double sign_probe = 0.0;
    if (l % 2 == 0) {
      for (double x : v) sign_probe += x;
    } else {
      for (std::size_t m = 0; m < length; ++m) sign_probe += (mid - static_cast<double>(m)) * v[m];
    }
    if (sign_probe < 0) {
      for (double& x : v) x = -x;
    }
    bank.tapers.push_back(std::move(v));
  }

  for (const auto& taper : bank.tapers) {
    double e = 0.0;
    for (double x : taper) e += x * x;
    bank.energies.push_back(e);
    bank.concentrations.push_back(detail::concentration(taper, half_bandwidth));
  }
  double total = 0.0;
  for (double e : bank.energies) total += e;
  for (double e : bank.energies) bank.weights.push_back(e / total);
  return bank;
}

/// Weighted average of the tapered eigenspectra, centered.
inline Spectrum<> mtm_psd(std::span<const cdouble> signal, const TaperBank& bank) {
  if (signal.size() != bank.length) {
    throw InvalidInputError("mtm_psd: signal length " + std::to_string(signal.size()) +
                            " does not match taper length " + std::to_string(bank.length));
  }
  const std::size_t n = signal.size();
  std::vector<double> acc(n, 0.0);
  std::vector<cdouble> tapered(n);
  double weight_sum = 0.0;
  for (std::size_t l = 0; l < bank.num_tapers(); ++l) {
    const auto& taper = bank.tapers[l];
    for (std::size_t m = 0; m < n; ++m) tapered[m] = signal[m] * taper[m];
    const auto y = dft(tapered);
    const double w = bank.weights[l];
    for (std::size_t k = 0; k < n; ++k) acc[k] += w * std::norm(y[k]);
    weight_sum += w;
  }
  for (double& p : acc) p /= weight_sum;
  return {center_shift<double>(acc), true, Estimator::multitaper};
}

inline DualSpectrum<> dual_representation(std::span<const cdouble> signal, const TaperBank& bank) {
  return {mtm_psd(signal, bank), periodogram(signal)};
}

}  // namespace wbss
