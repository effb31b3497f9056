#pragma once

// Experiment configuration and the command implementations behind the CLI:
// generate, preprocess, augment, train, calibrate, evaluate, roc.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wbss/augment.hpp"
#include "wbss/dataset.hpp"
#include "wbss/nn/checkpoint.hpp"
#include "wbss/nn/train.hpp"
#include "wbss/sensing.hpp"

namespace wbss {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  GenerationConfig generation;
  bool master_seed_set = false;
  double w_times_m = 4.0;
  std::size_t num_tapers = 7;
  std::string taper_cache;
  std::size_t factor_inter = 1;
  std::size_t factor_intra = 1;
  nn::TrainConfig train;
  double validation_fraction = 0.1;
  double calibration_fraction = 0.2;
  double target_pf = 0.01;
  ThresholdMode threshold_mode = ThresholdMode::per_subband;
  std::size_t roc_grid_size = 200;

  /// Seeds of the individual stages, all derived from `seed`.
  std::uint64_t augment_seed() const { return derive_seed(seed, 0, 31); }
  std::uint64_t split_seed() const { return derive_seed(seed, 0, 32); }
  std::uint64_t init_seed() const { return derive_seed(seed, 0, 33); }
  std::uint64_t shuffle_seed() const { return derive_seed(seed, 0, 34); }

  GenerationConfig resolved_generation() const {
    GenerationConfig g = generation;
    if (!master_seed_set) g.master_seed = seed;
    return g;
  }

  void validate() const {
    generation.validate();
    if (!(w_times_m > 0)) throw ConfigError("tapers.W_times_M must be > 0");
    if (num_tapers == 0) throw ConfigError("tapers.L must be >= 1");
    if (static_cast<double>(num_tapers) > std::floor(2.0 * w_times_m + 1e-9)) {
      throw ConfigError("tapers.L exceeds 2*W*M, the number of well-concentrated tapers");
    }
    train.validate();
    if (!(validation_fraction > 0 && validation_fraction < 1)) throw ConfigError("train.validation_fraction must lie in (0, 1)");
    if (!(calibration_fraction >= 0 && calibration_fraction < 1)) {
      throw ConfigError("train.calibration_fraction must lie in [0, 1)");
    }
    if (validation_fraction + calibration_fraction >= 1) {
      throw ConfigError("train.validation_fraction + train.calibration_fraction must be < 1");
    }
    if (!(target_pf > 0 && target_pf < 1)) throw ConfigError("sensing.target_pf must lie in (0, 1)");
    if (roc_grid_size < 2) throw ConfigError("sensing.roc_grid_size must be >= 2");
  }
};

/// Resolved configuration with every default filled in; feeding it back
/// through config_from_json reproduces the same ExperimentConfig.
inline json to_json(const ExperimentConfig& c) {
  json gen = to_json(c.resolved_generation());
  gen.erase("version");
  gen.erase("num_samples");
  return {{"seed", c.seed},
          {"generation", gen},
          {"tapers", {{"W_times_M", c.w_times_m}, {"L", c.num_tapers}, {"cache_dir", c.taper_cache}}},
          {"augment", {{"factor_inter", c.factor_inter}, {"factor_intra", c.factor_intra}}},
          {"train",
           {{"batch_size", c.train.batch_size},
            {"max_epochs", c.train.max_epochs},
            {"lr", c.train.lr},
            {"beta1", c.train.beta1},
            {"beta2", c.train.beta2},
            {"eps", c.train.eps},
            {"patience_lr", c.train.patience_lr},
            {"patience_stop", c.train.patience_stop},
            {"validation_fraction", c.validation_fraction},
            {"calibration_fraction", c.calibration_fraction}}},
          {"sensing",
           {{"target_pf", c.target_pf}, {"threshold_mode", to_string(c.threshold_mode)}, {"roc_grid_size", c.roc_grid_size}}}};
}

inline ExperimentConfig config_from_json(const json& j) {
  using config::field;
  config::reject_unknown(j, "config", {"seed", "generation", "tapers", "augment", "train", "sensing"});
  ExperimentConfig c;
  c.seed = field(j, "config", "seed", c.seed);
  if (j.contains("generation")) {
    c.generation = generation_from_json(j.at("generation"));
    c.master_seed_set = j.at("generation").contains("master_seed");
  }
  if (j.contains("tapers")) {
    const auto& t = j.at("tapers");
    config::reject_unknown(t, "tapers", {"W_times_M", "L", "cache_dir"});
    c.w_times_m = field(t, "tapers", "W_times_M", c.w_times_m);
    c.num_tapers = field(t, "tapers", "L", c.num_tapers);
    c.taper_cache = field(t, "tapers", "cache_dir", c.taper_cache);
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    config::reject_unknown(a, "augment", {"factor_inter", "factor_intra"});
    c.factor_inter = field(a, "augment", "factor_inter", c.factor_inter);
    c.factor_intra = field(a, "augment", "factor_intra", c.factor_intra);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    config::reject_unknown(t, "train",
                           {"batch_size", "max_epochs", "lr", "beta1", "beta2", "eps", "patience_lr", "patience_stop",
                            "validation_fraction", "calibration_fraction"});
    c.train.batch_size = field(t, "train", "batch_size", c.train.batch_size);
    c.train.max_epochs = field(t, "train", "max_epochs", c.train.max_epochs);
    c.train.lr = field(t, "train", "lr", c.train.lr);
    c.train.beta1 = field(t, "train", "beta1", c.train.beta1);
    c.train.beta2 = field(t, "train", "beta2", c.train.beta2);
    c.train.eps = field(t, "train", "eps", c.train.eps);
    c.train.patience_lr = field(t, "train", "patience_lr", c.train.patience_lr);
    c.train.patience_stop = field(t, "train", "patience_stop", c.train.patience_stop);
    c.validation_fraction = field(t, "train", "validation_fraction", c.validation_fraction);
    c.calibration_fraction = field(t, "train", "calibration_fraction", c.calibration_fraction);
  }
  if (j.contains("sensing")) {
    const auto& s = j.at("sensing");
    config::reject_unknown(s, "sensing", {"target_pf", "threshold_mode", "roc_grid_size"});
    c.target_pf = field(s, "sensing", "target_pf", c.target_pf);
    c.threshold_mode = parse_threshold_mode(field<std::string>(s, "sensing", "threshold_mode", "per_subband"));
    c.roc_grid_size = field(s, "sensing", "roc_grid_size", c.roc_grid_size);
  }
  c.validate();
  return c;
}

/// Parses a config file. JSON syntax errors report line and column.
inline ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const PreconditionError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

namespace pipeline {

/// Writes config.json: the command, its inputs and the fully resolved config.
inline void echo_config(const ExperimentConfig& cfg, const fs::path& path, const std::string& command, json inputs) {
  json j = {{"command", command}, {"inputs", std::move(inputs)}, {"config", to_json(cfg)}};
  io::write_text(path, j.dump(2) + "\n");
}

inline void require(bool ok, const std::string& what, const std::string& command) {
  if (!ok) throw PreconditionError(what + " (run `" + command + "` first)");
}

inline json generate(const ExperimentConfig& cfg, const fs::path& out) {
  const auto gen = cfg.resolved_generation();
  generate_dataset(gen, out);
  echo_config(cfg, out / "config.json", "generate", json::object());
  return to_json(gen);
}

inline void preprocess(const ExperimentConfig& cfg, const fs::path& dataset, const fs::path& out) {
  require(fs::exists(dataset / "manifest.json"), "no dataset at " + dataset.string(), "generate");
  preprocess_dataset(dataset, out, cfg.w_times_m, cfg.num_tapers, cfg.taper_cache);
  echo_config(cfg, out / "config.json", "preprocess", {{"dataset", dataset_name(dataset)}});
}

inline void augment(const ExperimentConfig& cfg, const fs::path& psd, const fs::path& out) {
  require(has_psd_cache(psd), "no PSD cache at " + psd.string(), "preprocess");
  augment_psd_cache(psd, out, cfg.factor_inter, cfg.factor_intra, cfg.augment_seed());
  echo_config(cfg, out / "config.json", "augment", {{"psd", dataset_name(psd)}, {"seed", cfg.augment_seed()}});
}

/// Rows of `set` selected by index.
inline PsdSet subset(const PsdSet& set, const std::vector<std::size_t>& rows) {
  PsdSet out;
  out.signal_length = set.signal_length;
  out.num_subbands = set.num_subbands;
  out.meta = set.meta;
  for (auto r : rows) out.append(set.spectra(r), set.label_row(r));
  return out;
}

struct Split {
  std::vector<std::size_t> train, validation, calibration;
};

/// Splits by origin sample so that augmented variants never straddle
/// partitions. Validation and calibration keep only original samples.
inline Split split_by_origin(const std::vector<AugmentRecord>& records, double validation_fraction,
                             double calibration_fraction, std::uint64_t seed) {
  std::vector<std::size_t> origins;
  for (const auto& r : records) origins.push_back(r.origin_index);
  std::sort(origins.begin(), origins.end());
  origins.erase(std::unique(origins.begin(), origins.end()), origins.end());
  Rng rng(seed);
  rng.shuffle(origins.begin(), origins.end());
  const auto n = static_cast<double>(origins.size());
  const auto n_cal = static_cast<std::size_t>(std::llround(calibration_fraction * n));
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(validation_fraction * n)));
  if (n_cal + n_val >= origins.size()) throw ConfigError("train: too few samples for the requested splits");
  std::vector<int> role(origins.empty() ? 0 : *std::max_element(origins.begin(), origins.end()) + 1, 0);
  for (std::size_t k = 0; k < origins.size(); ++k) role[origins[k]] = k < n_cal ? 2 : (k < n_cal + n_val ? 1 : 0);
  Split s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int r = role[records[i].origin_index];
    if (r == 0) s.train.push_back(i);
    else if (records[i].kind == "orig") (r == 1 ? s.validation : s.calibration).push_back(i);
  }
  return s;
}

inline std::vector<AugmentRecord> records_of(const fs::path& psd, std::size_t count) {
  if (fs::exists(psd / "aug_meta.jsonl")) {
    auto r = load_augment_records(psd);
    if (r.size() != count) throw IoError("aug_meta.jsonl does not match the PSD cache in " + psd.string());
    return r;
  }
  std::vector<AugmentRecord> r;
  for (std::size_t i = 0; i < count; ++i) r.push_back({i, "orig", 0});
  return r;
}

inline json train(const ExperimentConfig& cfg, const fs::path& psd, const fs::path& out, std::ostream* log = nullptr) {
  require(has_psd_cache(psd), "no PSD cache at " + psd.string(), "preprocess");
  const auto all = load_psd_set(psd);
  const auto split = split_by_origin(records_of(psd, all.size()), cfg.validation_fraction, cfg.calibration_fraction,
                                     cfg.split_seed());
  const auto train_set = nn::prepare(subset(all, split.train));
  const auto val_set = nn::prepare(subset(all, split.validation));

  nn::DsffModel<float> model(nn::Topology::reference(all.num_subbands), cfg.init_seed());
  auto tc = cfg.train;
  tc.seed = cfg.shuffle_seed();
  auto result = nn::train(model, train_set, val_set, tc, log);

  io::OutputGuard guard(out);
  const json manifest = {{"seed", cfg.seed},
                         {"init_seed", cfg.init_seed()},
                         {"shuffle_seed", tc.seed},
                         {"train", to_json(cfg).at("train")},
                         {"M_train", all.signal_length},
                         {"dataset", dataset_name(psd)},
                         {"best_epoch", result.best_epoch},
                         {"best_val_accuracy", result.best_accuracy}};
  nn::save_checkpoint(guard.track("model.dsff"), result.best, manifest);
  {
    std::ostringstream h;
    nn::write_history_csv(h, result.history);
    io::write_text(guard.track("history.csv"), h.str());
  }
  const json split_json = {{"source", fs::absolute(psd).lexically_normal().string()},
                           {"dataset", dataset_name(psd)},
                           {"train", split.train},
                           {"validation", split.validation},
                           {"calibration", split.calibration}};
  io::write_text(guard.track("split.json"), split_json.dump(2) + "\n");
  echo_config(cfg, guard.track("config.json"), "train", {{"psd", dataset_name(psd)}});
  guard.commit();
  return manifest;
}

/// Scores of every row of a PSD set under a model (eval mode).
inline std::vector<double> score_set(const nn::DsffModel<float>& model, const PsdSet& set) {
  if (set.num_subbands != model.num_subbands()) {
    throw PreconditionError("PSD set has N = " + std::to_string(set.num_subbands) + " but the model expects " +
                            std::to_string(model.num_subbands()));
  }
  return nn::score(model, nn::prepare(set));
}

inline nn::Checkpoint load_model(const fs::path& path, const std::string& producer) {
  require(fs::exists(path), "no checkpoint at " + path.string(), producer);
  return nn::load_checkpoint(path);
}

inline fs::path checkpoint_path(const fs::path& p) { return fs::is_directory(p) ? p / "model.dsff" : p; }

/// Calibrates on `psd` when given, else on the held-out calibration split
/// recorded by `train`.
inline ThresholdVector calibrate(const ExperimentConfig& cfg, const fs::path& model_path,
                                 const std::optional<fs::path>& psd, const fs::path& out) {
  const auto mpath = checkpoint_path(model_path);
  auto ck = load_model(mpath, "train");
  PsdSet cal;
  std::string cal_id;
  if (psd) {
    require(has_psd_cache(*psd), "no PSD cache at " + psd->string(), "preprocess");
    cal = load_psd_set(*psd);
    cal_id = dataset_name(*psd);
  } else {
    const auto split_path = mpath.parent_path() / "split.json";
    require(fs::exists(split_path), "no calibration split next to " + mpath.string() + "; pass --psd", "train");
    const auto split = json::parse(io::read_text(split_path));
    const fs::path source = split.at("source").get<std::string>();
    require(has_psd_cache(source), "no PSD cache at " + source.string(), "preprocess");
    const auto rows = split.at("calibration").get<std::vector<std::size_t>>();
    if (rows.empty()) throw PreconditionError("the training split holds no calibration samples; pass --psd");
    cal = subset(load_psd_set(source), rows);
    cal_id = split.at("dataset").get<std::string>() + "#calibration";
  }
  const auto scores = score_set(ck.model, cal);
  auto t = calibrate_thresholds(scores, cal.labels, cal.num_subbands, cfg.target_pf, cfg.threshold_mode, cal_id);

  io::OutputGuard guard(out);
  nn::save_checkpoint(guard.track("model.dsff"), ck.model, ck.manifest, t);
  json tj = {{"lambda", t.lambda},
             {"target_pf", t.target_pf},
             {"threshold_mode", to_string(t.mode)},
             {"calibration_set_id", t.calibration_set_id},
             {"calibration_samples", cal.size()}};
  io::write_text(guard.track("thresholds.json"), tj.dump(2) + "\n");
  echo_config(cfg, guard.track("config.json"), "calibrate", {{"model", mpath.filename().string()}, {"calibration_set", cal_id}});
  guard.commit();
  return t;
}

inline std::string roc_text(const RocCurve& c) {
  std::ostringstream os;
  write_roc_csv(os, c);
  return os.str();
}

/// Writes metrics.json, per_subband.csv and roc.csv; returns the metrics.
inline json evaluate(const ExperimentConfig& cfg, const fs::path& model_path, const fs::path& psd, const fs::path& out) {
  const auto mpath = checkpoint_path(model_path);
  auto ck = load_model(mpath, "calibrate");
  if (!ck.thresholds) throw PreconditionError("checkpoint " + mpath.string() + " has no thresholds (run `calibrate` first)");
  require(has_psd_cache(psd), "no PSD cache at " + psd.string(), "preprocess");
  const auto test = load_psd_set(psd);
  const auto scores = score_set(ck.model, test);
  ConfusionCounts counts(test.num_subbands);
  accumulate_confusion(decide_all(scores, *ck.thresholds), test.labels, counts);
  const auto& t = *ck.thresholds;

  auto metric = [](auto fn) -> json {
    try {
      return fn();
    } catch (const UndefinedMetricError&) {
      return nullptr;
    }
  };
  json counts_j = {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}};
  json metrics = {{"pd", metric([&] { return micro_pd(counts); })},
                  {"pf", metric([&] { return micro_pf(counts); })},
                  {"target_pf", t.target_pf},
                  {"threshold_mode", to_string(t.mode)},
                  {"thresholds", t.lambda},
                  {"datasets", {{"test", dataset_name(psd)}, {"calibration", t.calibration_set_id}}},
                  {"num_samples", test.size()},
                  {"counts", counts_j}};

  io::OutputGuard guard(out);
  io::write_text(guard.track("metrics.json"), metrics.dump(2) + "\n");
  {
    std::ostringstream os;
    write_per_subband_csv(os, per_subband_report(counts));
    io::write_text(guard.track("per_subband.csv"), os.str());
  }
  io::write_text(guard.track("roc.csv"), roc_text(roc_curve(scores, test.labels, cfg.roc_grid_size)));
  echo_config(cfg, guard.track("config.json"), "evaluate", {{"model", mpath.filename().string()}, {"psd", dataset_name(psd)}});
  guard.commit();
  return metrics;
}

inline RocCurve roc(const ExperimentConfig& cfg, const fs::path& model_path, const fs::path& psd, const fs::path& out) {
  const auto mpath = checkpoint_path(model_path);
  auto ck = load_model(mpath, "train");
  require(has_psd_cache(psd), "no PSD cache at " + psd.string(), "preprocess");
  const auto set = load_psd_set(psd);
  const auto curve = roc_curve(score_set(ck.model, set), set.labels, cfg.roc_grid_size);
  io::OutputGuard guard(out);
  io::write_text(guard.track("roc.csv"), roc_text(curve));
  echo_config(cfg, guard.track("config.json"), "roc", {{"model", mpath.filename().string()}, {"psd", dataset_name(psd)}});
  guard.commit();
  return curve;
}

}  // namespace pipeline
}  // namespace wbss
