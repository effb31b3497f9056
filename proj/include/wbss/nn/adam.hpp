#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wbss/error.hpp"

namespace wbss::nn {

/// Optimizer state plus the plateau bookkeeping used by the trainer.
struct TrainState {
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double best_metric = -1.0;
  std::size_t epochs_since_improve = 0;
  std::size_t patience_lr = 5;
  std::size_t patience_stop = 15;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("learning rate must be > 0");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in (0, 1)");
  }
};

/// One Adam update over every (parameter, gradient) pair visited by the
/// model, in visiting order. Moment buffers are allocated on first use.
template <typename Model>
void adam_step(TrainState& st, Model& model) {
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  std::size_t slot = 0;
  model.for_each_parameter([&](auto value, auto grad) {
    if (slot == st.adam_m.size()) {
      st.adam_m.emplace_back(value.size(), 0.0);
      st.adam_v.emplace_back(value.size(), 0.0);
    }
    auto& m = st.adam_m[slot];
    auto& v = st.adam_v[slot];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] = static_cast<typename decltype(value)::value_type>(value[i] - st.lr * mhat / (std::sqrt(vhat) + st.eps));
    }
    ++slot;
  });
}

}  // namespace wbss::nn
