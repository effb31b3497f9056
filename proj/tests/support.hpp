#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "wbss/nn/model.hpp"
#include "wbss/random.hpp"

namespace wbss::testkit {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct MiniBatch {
  std::size_t batch = 0;
  std::vector<double> mtm, pg;
  std::vector<std::uint8_t> labels;
};

inline MiniBatch random_minibatch(std::size_t batch, std::size_t m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  MiniBatch mb;
  mb.batch = batch;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<double> a(m), c(m);
    for (auto& v : a) v = std::exp(rng.normal());
    for (auto& v : c) v = std::exp(rng.normal());
    const auto na = nn::normalize_input<double>(std::span<const double>(a));
    const auto nc = nn::normalize_input<double>(std::span<const double>(c));
    mb.mtm.insert(mb.mtm.end(), na.begin(), na.end());
    mb.pg.insert(mb.pg.end(), nc.begin(), nc.end());
    for (std::size_t i = 0; i < n; ++i) mb.labels.push_back(rng.uniform01() < 0.5);
  }
  return mb;
}

/// Miniature model with every parameter jittered so BN shifts, scales and
/// biases all carry non-trivial values.
inline nn::DsffModel<double> jittered_miniature(std::uint64_t seed) {
  nn::DsffModel<double> model(nn::Topology::miniature(4), seed);
  Rng rng(derive_seed(seed, 0, 99));
  model.for_each_parameter([&](std::span<double> v, std::span<double>) {
    for (auto& x : v) x += rng.uniform(-0.2, 0.2);
  });
  return model;
}

inline double batch_loss(const nn::DsffModel<double>& model, const MiniBatch& mb) {
  nn::ModelCache<double> cache;
  model.forward(mb.mtm, mb.pg, mb.batch, nn::Mode::train, cache);
  return nn::bce_loss(cache.gamma, mb.labels);
}

inline std::vector<double> analytic_gradient(nn::DsffModel<double>& model, const MiniBatch& mb) {
  nn::ModelCache<double> cache;
  model.forward(mb.mtm, mb.pg, mb.batch, nn::Mode::train, cache);
  model.backward(cache, nn::bce_logit_gradient(cache.gamma, mb.labels));
  std::vector<double> g;
  model.for_each_parameter([&](std::span<double>, std::span<double> grad) { g.insert(g.end(), grad.begin(), grad.end()); });
  return g;
}

/// Central differences, step 1e-4, against reverse-mode gradients of the
/// miniature model (M = 64, N = 4, batch 3, train-mode BN).
inline GradCheckResult gradient_check(std::uint64_t seed) {
  auto model = jittered_miniature(seed);
  const auto mb = random_minibatch(3, 64, 4, derive_seed(seed, 1, 98));
  const auto analytic = analytic_gradient(model, mb);

  std::vector<double*> slots;
  model.for_each_parameter([&](std::span<double> v, std::span<double>) {
    for (auto& x : v) slots.push_back(&x);
  });
  const double h = 1e-4;
  GradCheckResult r;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const double saved = *slots[k];
    *slots[k] = saved + h;
    const double up = batch_loss(model, mb);
    *slots[k] = saved - h;
    const double down = batch_loss(model, mb);
    *slots[k] = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-6});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(numeric - analytic[k]) / denom);
    ++r.checked;
  }
  return r;
}

}  // namespace wbss::testkit
