// wbss: command-line driver for dataset generation, spectral preprocessing,
// augmentation, training, calibration and evaluation.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "wbss/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 2, kPrecondition = 3, kRuntime = 4 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment configuration (JSON); defaults apply when omitted");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--seed", c.seed, "global seed, overrides the config");
  cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

wbss::ExperimentConfig resolve(const Common& c) {
  wbss::ExperimentConfig cfg = c.config.empty() ? wbss::config_from_json(nlohmann::json::object())
                                                : wbss::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  wbss::set_num_threads(c.threads);
  return cfg;
}

void require_distinct(const fs::path& in, const fs::path& out) {
  if (fs::exists(in) && fs::exists(out) && fs::equivalent(in, out)) {
    throw wbss::ConfigError("input and output directories must differ");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wideband spectrum sensing with dual power-spectrum inputs"};
  app.require_subcommand(1);

  Common common;
  std::string dataset, psd, model;
  std::optional<std::size_t> max_epochs;

  auto* gen = app.add_subcommand("generate", "generate a labeled wideband IQ dataset");
  add_common(gen, common);

  auto* pre = app.add_subcommand("preprocess", "compute periodogram and multitaper PSD caches");
  add_common(pre, common);
  pre->add_option("--dataset", dataset, "dataset directory written by `generate`")->required();

  auto* aug = app.add_subcommand("augment", "inter/intra subband shuffle augmentation of a PSD cache");
  add_common(aug, common);
  aug->add_option("--psd", psd, "PSD cache directory")->required();

  auto* trn = app.add_subcommand("train", "train the dual-stream network");
  add_common(trn, common);
  trn->add_option("--psd", psd, "PSD cache directory (plain or augmented)")->required();
  trn->add_option("--max-epochs", max_epochs, "override train.max_epochs");

  auto* cal = app.add_subcommand("calibrate", "calibrate decision thresholds to the target false-alarm rate");
  add_common(cal, common);
  cal->add_option("--model", model, "checkpoint file or `train` output directory")->required();
  cal->add_option("--psd", psd, "calibration PSD cache (default: the held-out split recorded by `train`)");

  auto* ev = app.add_subcommand("evaluate", "micro Pd/Pf, per-subband report and ROC on a test set");
  add_common(ev, common);
  ev->add_option("--model", model, "calibrated checkpoint or `calibrate` output directory")->required();
  ev->add_option("--psd", psd, "test PSD cache")->required();

  auto* roc = app.add_subcommand("roc", "ROC curve under a single global threshold");
  add_common(roc, common);
  roc->add_option("--model", model, "checkpoint file or directory")->required();
  roc->add_option("--psd", psd, "PSD cache")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    auto cfg = resolve(common);
    const fs::path out = common.out;
    if (gen->parsed()) {
      const auto manifest = wbss::pipeline::generate(cfg, out);
      std::cout << "generated " << manifest.at("num_samples") << " samples (M = " << manifest.at("M")
                << ", N = " << manifest.at("N") << ", snr_mode = " << manifest.at("snr_mode").get<std::string>()
                << ", channel = " << manifest.at("channel").at("kind").get<std::string>() << ") into " << out << "\n";
    } else if (pre->parsed()) {
      require_distinct(dataset, out);
      wbss::pipeline::preprocess(cfg, dataset, out);
      std::cout << "wrote PSD cache to " << out << "\n";
    } else if (aug->parsed()) {
      require_distinct(psd, out);
      wbss::pipeline::augment(cfg, psd, out);
      std::cout << "wrote augmented PSD cache to " << out << "\n";
    } else if (trn->parsed()) {
      require_distinct(psd, out);
      if (max_epochs) cfg.train.max_epochs = *max_epochs;
      const auto m = wbss::pipeline::train(cfg, psd, out, &std::cout);
      std::cout << "best epoch " << m.at("best_epoch") << ", validation accuracy " << m.at("best_val_accuracy") << "\n";
    } else if (cal->parsed()) {
      std::optional<fs::path> cal_psd;
      if (!psd.empty()) cal_psd = psd;
      const auto t = wbss::pipeline::calibrate(cfg, model, cal_psd, out);
      std::cout << "calibrated " << t.size() << " thresholds (" << wbss::to_string(t.mode)
                << ", target_pf = " << t.target_pf << ")\n";
    } else if (ev->parsed()) {
      const auto m = wbss::pipeline::evaluate(cfg, model, psd, out);
      std::cout << "pd " << m.at("pd") << " pf " << m.at("pf") << " (target_pf " << m.at("target_pf") << ")\n";
    } else if (roc->parsed()) {
      const auto c = wbss::pipeline::roc(cfg, model, psd, out);
      std::cout << "wrote " << c.points.size() << " ROC points to " << (out / "roc.csv") << "\n";
    }
  } catch (const wbss::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const wbss::PreconditionError& e) {
    std::cerr << "precondition failed: " << e.what() << "\n";
    return kPrecondition;
  } catch (const wbss::CalibrationError& e) {
    std::cerr << "calibration failed: " << e.what() << "\n";
    return kPrecondition;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
