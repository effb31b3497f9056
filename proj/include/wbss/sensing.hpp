#pragma once

// Threshold calibration, hypothesis decisions, micro-averaged Pd/Pf, ROC
// sweeps and per-subband reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wbss/binary_io.hpp"
#include "wbss/error.hpp"

namespace wbss {

enum class ThresholdMode { per_subband, global };

inline const char* to_string(ThresholdMode m) { return m == ThresholdMode::global ? "global" : "per_subband"; }

inline ThresholdMode parse_threshold_mode(const std::string& s) {
  if (s == "per_subband") return ThresholdMode::per_subband;
  if (s == "global") return ThresholdMode::global;
  throw ConfigError("unknown threshold mode '" + s + "' (expected per_subband or global)");
}

struct ThresholdVector {
  std::vector<double> lambda;
  double target_pf = 0.01;
  std::string calibration_set_id;
  ThresholdMode mode = ThresholdMode::per_subband;

  std::size_t size() const { return lambda.size(); }
};

namespace detail {

inline void check_grid(std::size_t scores, std::size_t labels, std::size_t n, const char* what) {
  if (n == 0 || scores != labels || scores % n != 0) throw ShapeError(std::string(what) + ": scores/labels shape mismatch");
}

/// Smallest sample value leaving at most floor(pf * n) values strictly above
/// it, i.e. the higher-value (1 - pf) empirical quantile.
inline double upper_quantile(std::vector<double> values, double pf) {
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto allowed = static_cast<std::size_t>(std::floor(pf * static_cast<double>(n) + 1e-9));
  allowed = std::min(allowed, n - 1);
  return values[n - 1 - allowed];
}

inline std::size_t required_h0(double pf) { return static_cast<std::size_t>(std::ceil(1.0 / pf - 1e-9)); }

}  // namespace detail

/// Thresholds from H0 scores of a calibration set. scores and labels are
/// row-major (samples x N). In per_subband mode each subband gets its own
/// quantile; in global mode all H0 scores are pooled into one threshold.
inline ThresholdVector calibrate_thresholds(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                            std::size_t num_subbands, double target_pf,
                                            ThresholdMode mode = ThresholdMode::per_subband,
                                            std::string calibration_set_id = {}) {
  detail::check_grid(scores.size(), labels.size(), num_subbands, "calibrate_thresholds");
  if (!(target_pf > 0.0 && target_pf < 1.0)) throw ConfigError("target_pf must lie in (0, 1)");
  const std::size_t need = detail::required_h0(target_pf);
  ThresholdVector t;
  t.target_pf = target_pf;
  t.calibration_set_id = std::move(calibration_set_id);
  t.mode = mode;
  t.lambda.assign(num_subbands, 0.0);

  if (mode == ThresholdMode::global) {
    std::vector<double> h0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      if (!labels[k]) h0.push_back(scores[k]);
    }
    if (h0.size() < need) {
      throw CalibrationError("calibration set has " + std::to_string(h0.size()) + " unoccupied instances in total, " +
                             std::to_string(need) + " required");
    }
    std::fill(t.lambda.begin(), t.lambda.end(), detail::upper_quantile(std::move(h0), target_pf));
    return t;
  }

  const std::size_t rows = scores.size() / num_subbands;
  for (std::size_t i = 0; i < num_subbands; ++i) {
    std::vector<double> h0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!labels[r * num_subbands + i]) h0.push_back(scores[r * num_subbands + i]);
    }
    if (h0.size() < need) {
      throw CalibrationError("subband " + std::to_string(i) + " has " + std::to_string(h0.size()) +
                             " unoccupied calibration instances, " + std::to_string(need) + " required");
    }
    t.lambda[i] = detail::upper_quantile(std::move(h0), target_pf);
  }
  return t;
}

/// H1 iff gamma_i > lambda_i; equality decides H0.
inline std::vector<std::uint8_t> decide(std::span<const double> gamma, const ThresholdVector& t) {
  if (gamma.size() != t.size()) throw ShapeError("decide: gamma and thresholds differ in length");
  std::vector<std::uint8_t> d(gamma.size());
  for (std::size_t i = 0; i < gamma.size(); ++i) d[i] = gamma[i] > t.lambda[i] ? 1 : 0;
  return d;
}

/// Row-major batch version of decide.
inline std::vector<std::uint8_t> decide_all(std::span<const double> scores, const ThresholdVector& t) {
  if (t.size() == 0 || scores.size() % t.size() != 0) throw ShapeError("decide_all: scores are not rows of N");
  std::vector<std::uint8_t> d(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) d[k] = scores[k] > t.lambda[k % t.size()] ? 1 : 0;
  return d;
}

struct ConfusionCounts {
  std::vector<std::uint64_t> tp, fp, tn, fn;

  ConfusionCounts() = default;
  explicit ConfusionCounts(std::size_t n) : tp(n, 0), fp(n, 0), tn(n, 0), fn(n, 0) {}

  std::size_t size() const { return tp.size(); }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    if (o.size() != size()) throw ShapeError("merging confusion counts of different widths");
    for (std::size_t i = 0; i < size(); ++i) {
      tp[i] += o.tp[i];
      fp[i] += o.fp[i];
      tn[i] += o.tn[i];
      fn[i] += o.fn[i];
    }
    return *this;
  }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts merge(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }

/// Adds one or more rows of (decision, label) pairs; both row-major with N
/// columns, N = counts.size().
inline void accumulate_confusion(std::span<const std::uint8_t> decisions, std::span<const std::uint8_t> labels,
                                 ConfusionCounts& counts) {
  detail::check_grid(decisions.size(), labels.size(), counts.size(), "accumulate_confusion");
  const std::size_t n = counts.size();
  for (std::size_t k = 0; k < decisions.size(); ++k) {
    const std::size_t i = k % n;
    const bool d = decisions[k] != 0, z = labels[k] != 0;
    if (d && z) ++counts.tp[i];
    else if (d) ++counts.fp[i];
    else if (z) ++counts.fn[i];
    else ++counts.tn[i];
  }
}

struct MicroMetrics {
  double pd = 0.0;
  double pf = 0.0;
};

inline double micro_pd(const ConfusionCounts& c) {
  std::uint64_t tp = 0, pos = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    tp += c.tp[i];
    pos += c.tp[i] + c.fn[i];
  }
  if (pos == 0) throw UndefinedMetricError("pd is undefined: no occupied instances");
  return static_cast<double>(tp) / static_cast<double>(pos);
}

inline double micro_pf(const ConfusionCounts& c) {
  std::uint64_t fp = 0, neg = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    fp += c.fp[i];
    neg += c.fp[i] + c.tn[i];
  }
  if (neg == 0) throw UndefinedMetricError("pf is undefined: no unoccupied instances");
  return static_cast<double>(fp) / static_cast<double>(neg);
}

inline MicroMetrics micro_metrics(const ConfusionCounts& c) { return {micro_pd(c), micro_pf(c)}; }

struct RocPoint {
  double threshold = 0.0;
  double pf = 0.0;
  double pd = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // increasing pf

  std::vector<double> threshold_grid() const {
    std::vector<double> g;
    for (const auto& p : points) g.push_back(p.threshold);
    return g;
  }
};

/// Sweeps one global threshold over the distinct observed scores (evenly
/// subsampled to at most grid_size values) plus the endpoints 0 and 1.
inline RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t grid_size) {
  if (scores.size() != labels.size()) throw ShapeError("roc_curve: scores/labels length mismatch");
  std::vector<double> h0, h1;
  for (std::size_t k = 0; k < scores.size(); ++k) (labels[k] ? h1 : h0).push_back(scores[k]);
  if (h1.empty()) throw UndefinedMetricError("roc_curve: pd is undefined, no occupied instances");
  if (h0.empty()) throw UndefinedMetricError("roc_curve: pf is undefined, no unoccupied instances");
  std::sort(h0.begin(), h0.end());
  std::sort(h1.begin(), h1.end());

  std::vector<double> distinct(scores.begin(), scores.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> grid;
  if (grid_size >= distinct.size()) {
    grid = distinct;
  } else if (grid_size == 1) {
    grid.push_back(distinct[distinct.size() / 2]);
  } else if (grid_size > 1) {
    const double step = static_cast<double>(distinct.size() - 1) / static_cast<double>(grid_size - 1);
    for (std::size_t g = 0; g < grid_size; ++g) {
      grid.push_back(distinct[static_cast<std::size_t>(std::llround(step * static_cast<double>(g)))]);
    }
  }
  grid.push_back(0.0);
  grid.push_back(1.0);
  std::sort(grid.begin(), grid.end(), std::greater<>());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  auto above = [](const std::vector<double>& v, double t) {
    return static_cast<double>(v.end() - std::upper_bound(v.begin(), v.end(), t)) / static_cast<double>(v.size());
  };
  RocCurve c;
  for (double t : grid) c.points.push_back({t, above(h0, t), above(h1, t)});
  return c;
}

inline void write_roc_csv(std::ostream& os, const RocCurve& c) {
  os << "threshold,pf,pd\n";
  for (const auto& p : c.points) {
    os << io::format_real(p.threshold) << "," << io::format_real(p.pf) << "," << io::format_real(p.pd) << "\n";
  }
}

struct SubbandRow {
  std::size_t subband = 0;
  std::optional<double> pd;
  std::optional<double> pf;
};

inline std::vector<SubbandRow> per_subband_report(const ConfusionCounts& c) {
  std::vector<SubbandRow> rows;
  for (std::size_t i = 0; i < c.size(); ++i) {
    SubbandRow r{i, std::nullopt, std::nullopt};
    if (c.tp[i] + c.fn[i] > 0) r.pd = static_cast<double>(c.tp[i]) / static_cast<double>(c.tp[i] + c.fn[i]);
    if (c.fp[i] + c.tn[i] > 0) r.pf = static_cast<double>(c.fp[i]) / static_cast<double>(c.fp[i] + c.tn[i]);
    rows.push_back(r);
  }
  return rows;
}

inline void write_per_subband_csv(std::ostream& os, const std::vector<SubbandRow>& rows) {
  auto cell = [](const std::optional<double>& v) { return v ? io::format_real(*v) : std::string("undefined"); };
  os << "subband,pd,pf\n";
  for (const auto& r : rows) os << r.subband << "," << cell(r.pd) << "," << cell(r.pf) << "\n";
}

}  // namespace wbss
