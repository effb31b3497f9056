#pragma once

// Mini-batch training loop: Adam, learning-rate drop on plateau, early
// stopping on validation subband accuracy, best-checkpoint selection.

#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "wbss/dataset.hpp"
#include "wbss/nn/adam.hpp"
#include "wbss/nn/model.hpp"
#include "wbss/parallel.hpp"

namespace wbss::nn {

/// PSDs after normalize_input, ready to feed the network.
struct PreparedSet {
  std::size_t signal_length = 0;
  std::size_t num_subbands = 0;
  std::vector<float> mtm;
  std::vector<float> pg;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return signal_length == 0 ? 0 : pg.size() / signal_length; }
};

inline PreparedSet prepare(const PsdSet& set) {
  PreparedSet out;
  out.signal_length = set.signal_length;
  out.num_subbands = set.num_subbands;
  out.labels = set.labels;
  out.mtm.resize(set.mtm.size());
  out.pg.resize(set.pg.size());
  const std::size_t m = set.signal_length;
  parallel_for(set.size(), [&](std::size_t i) {
    const auto a = normalize_input<float>(set.mtm_row(i));
    const auto b = normalize_input<float>(set.pg_row(i));
    std::copy(a.begin(), a.end(), out.mtm.begin() + static_cast<std::ptrdiff_t>(i * m));
    std::copy(b.begin(), b.end(), out.pg.begin() + static_cast<std::ptrdiff_t>(i * m));
  });
  return out;
}

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t patience_lr = 5;
  std::size_t patience_stop = 15;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    TrainState st;
    st.lr = lr;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,train_loss,val_accuracy,lr\n";
  for (const auto& r : history) {
    os << r.epoch << "," << io::format_real(r.train_loss) << "," << io::format_real(r.val_accuracy) << ","
       << io::format_real(r.lr) << "\n";
  }
}

/// Decision statistics (count x N) for every sample, eval mode.
template <typename T>
std::vector<double> score(const DsffModel<T>& model, const PreparedSet& set, std::size_t batch_size = 32) {
  const std::size_t m = set.signal_length, n = set.num_subbands;
  std::vector<double> out(set.size() * n);
  ModelCache<T> cache;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, set.size() - start);
    std::vector<T> a(set.mtm.begin() + static_cast<std::ptrdiff_t>(start * m),
                     set.mtm.begin() + static_cast<std::ptrdiff_t>((start + count) * m));
    std::vector<T> b(set.pg.begin() + static_cast<std::ptrdiff_t>(start * m),
                     set.pg.begin() + static_cast<std::ptrdiff_t>((start + count) * m));
    model.forward(a, b, count, Mode::eval, cache);
    std::copy(cache.gamma.begin(), cache.gamma.end(), out.begin() + static_cast<std::ptrdiff_t>(start * n));
  }
  return out;
}

/// Fraction of per-subband decisions (gamma > 0.5) that match the labels.
inline double subband_accuracy(std::span<const double> gamma, std::span<const std::uint8_t> labels) {
  if (gamma.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < gamma.size(); ++k) correct += (gamma[k] > 0.5) == (labels[k] != 0);
  return static_cast<double>(correct) / static_cast<double>(gamma.size());
}

template <typename T>
struct TrainResult {
  DsffModel<T> best;
  std::vector<EpochRecord> history;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

/// One optimizer step on the given samples; returns the batch loss.
template <typename T>
double train_step(DsffModel<T>& model, TrainState& st, const PreparedSet& set, std::span<const std::size_t> idx,
                  ModelCache<T>& cache) {
  const std::size_t m = set.signal_length, n = set.num_subbands;
  std::vector<T> a(idx.size() * m), b(idx.size() * m);
  std::vector<std::uint8_t> lab(idx.size() * n);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy_n(set.mtm.begin() + static_cast<std::ptrdiff_t>(idx[k] * m), m, a.begin() + static_cast<std::ptrdiff_t>(k * m));
    std::copy_n(set.pg.begin() + static_cast<std::ptrdiff_t>(idx[k] * m), m, b.begin() + static_cast<std::ptrdiff_t>(k * m));
    std::copy_n(set.labels.begin() + static_cast<std::ptrdiff_t>(idx[k] * n), n, lab.begin() + static_cast<std::ptrdiff_t>(k * n));
  }
  model.forward(a, b, idx.size(), Mode::train, cache);
  const double loss = bce_loss(cache.gamma, lab);
  model.backward(cache, bce_logit_gradient(cache.gamma, lab));
  model.commit_batch_statistics(cache);
  adam_step(st, model);
  return loss;
}

/// Trains `model` and returns the checkpoint with the best validation
/// accuracy. With max_epochs = 0 the initial model is returned unchanged.
template <typename T>
TrainResult<T> train(DsffModel<T> model, const PreparedSet& train_set, const PreparedSet& val_set,
                     const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw ConfigError("train: training and validation sets must be non-empty");
  if (train_set.num_subbands != model.num_subbands() || val_set.num_subbands != model.num_subbands()) {
    throw ConfigError("train: dataset subband count does not match the model");
  }
  TrainState st;
  st.lr = cfg.lr;
  st.beta1 = cfg.beta1;
  st.beta2 = cfg.beta2;
  st.eps = cfg.eps;
  st.patience_lr = cfg.patience_lr;
  st.patience_stop = cfg.patience_stop;

  TrainResult<T> result{model, {}, 0.0, 0};
  ModelCache<T> cache;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, epoch, 21));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      loss_sum += train_step(model, st, train_set, idx, cache) * static_cast<double>(count);
    }
    const double acc = subband_accuracy(score(model, val_set), val_set.labels);
    result.history.push_back({epoch, loss_sum / static_cast<double>(order.size()), acc, st.lr});
    if (log) {
      *log << "epoch " << epoch << " loss " << result.history.back().train_loss << " val_acc " << acc << " lr " << st.lr
           << "\n";
    }

    if (acc > st.best_metric) {
      st.best_metric = acc;
      st.epochs_since_improve = 0;
      result.best = model;
      result.best_accuracy = acc;
      result.best_epoch = epoch;
    } else {
      ++st.epochs_since_improve;
    }
    if (st.epochs_since_improve >= st.patience_stop) break;
    if (st.epochs_since_improve > 0 && st.patience_lr > 0 && st.epochs_since_improve % st.patience_lr == 0) {
      st.lr *= 0.1;
    }
  }
  return result;
}

}  // namespace wbss::nn
