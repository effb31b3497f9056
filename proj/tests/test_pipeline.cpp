#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "wbss/pipeline.hpp"

using namespace wbss;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "wbss_test_pipeline";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(WBSS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json small_config() {
  return json::parse(R"({
    "seed": 5,
    "generation": {"M": 256, "N": 16, "snr_mode": "per-user-random", "snr_range_db": [0, 20],
                   "random_samples": 60, "sps_choices": [4]},
    "tapers": {"W_times_M": 4, "L": 7},
    "augment": {"factor_inter": 1, "factor_intra": 1},
    "train": {"batch_size": 16, "max_epochs": 2, "validation_fraction": 0.2, "calibration_fraction": 0.3},
    "sensing": {"target_pf": 0.05, "threshold_mode": "global", "roc_grid_size": 50}
  })");
}

fs::path write_config(const fs::path& dir, const json& j) {
  fs::create_directories(dir);
  io::write_text(dir / "config.json", j.dump(2));
  return dir / "config.json";
}

class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
  void TearDown() override { fs::remove_all(kRoot); }
};

std::string config_error(const std::string& text) {
  const auto path = kRoot / "bad.json";
  io::write_text(path, text);
  try {
    load_config(path);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_F(Pipeline, ConfigDefaultsRoundTrip) {
  const auto c = config_from_json(json::object());
  EXPECT_EQ(c.generation.signal_length, 32768u);
  EXPECT_EQ(c.generation.num_subbands, 16u);
  EXPECT_EQ(c.resolved_generation().num_samples(), 4200u);
  EXPECT_EQ(c.target_pf, 0.01);
  const auto again = config_from_json(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
  const auto seeded = config_from_json(json{{"seed", 9}});
  EXPECT_EQ(seeded.resolved_generation().master_seed, 9u);
}

TEST_F(Pipeline, ConfigErrorsNameTheProblem) {
  EXPECT_NE(config_error(R"({"train": {"batch": 3}})").find("train.batch"), std::string::npos);
  EXPECT_NE(config_error(R"({"generation": {"M": "big"}})").find("generation.M"), std::string::npos);
  EXPECT_NE(config_error(R"({"sensing": {"target_pf": 2}})").find("target_pf"), std::string::npos);
  const auto syntax = config_error("{\n  \"seed\": 1,\n  oops\n}");
  EXPECT_NE(syntax.find("line 3"), std::string::npos) << syntax;
  EXPECT_NE(syntax.find("column"), std::string::npos) << syntax;
  EXPECT_THROW(load_config(kRoot / "missing.json"), ConfigError);
}

TEST_F(Pipeline, CliExitCodes) {
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("generate"), 2);
  EXPECT_EQ(run_cli("bogus --out x"), 2);
  const auto bad = write_config(kRoot / "cfgbad", json{{"train", {{"lr", -1}}}});
  EXPECT_EQ(run_cli("generate --config " + bad.string() + " --out " + (kRoot / "g").string()), 2);
  EXPECT_EQ(run_cli("preprocess --dataset " + (kRoot / "none").string() + " --out " + (kRoot / "p").string()), 3);
  EXPECT_EQ(run_cli("train --psd " + (kRoot / "none").string() + " --out " + (kRoot / "t").string()), 3);
  EXPECT_EQ(run_cli("evaluate --model " + (kRoot / "none").string() + " --psd " + (kRoot / "none").string() +
                    " --out " + (kRoot / "e").string()),
            3);
  EXPECT_FALSE(fs::exists(kRoot / "p" / "psd_meta.json"));
}

TEST_F(Pipeline, EndToEndIsReproducible) {
  const auto cfg = write_config(kRoot / "cfg", small_config());
  auto run_all = [&](const fs::path& base) {
    const auto c = " --config " + cfg.string() + " --out ";
    ASSERT_EQ(run_cli("generate" + c + (base / "data").string()), 0);
    ASSERT_EQ(run_cli("preprocess --dataset " + (base / "data").string() + c + (base / "psd").string()), 0);
    ASSERT_EQ(run_cli("augment --psd " + (base / "psd").string() + c + (base / "aug").string()), 0);
    ASSERT_EQ(run_cli("train --psd " + (base / "aug").string() + c + (base / "model").string()), 0);
    ASSERT_EQ(run_cli("calibrate --model " + (base / "model").string() + c + (base / "cal").string()), 0);
    ASSERT_EQ(run_cli("evaluate --model " + (base / "cal").string() + " --psd " + (base / "psd").string() + c +
                      (base / "eval").string()),
              0);
    ASSERT_EQ(run_cli("roc --model " + (base / "model").string() + " --psd " + (base / "psd").string() + c +
                      (base / "roc").string()),
              0);
  };
  run_all(kRoot / "a");
  run_all(kRoot / "b");

  for (const char* f : {"data/iq.f32", "data/manifest.json", "psd/psd_mtm.f32", "psd/psd_pg.f32", "aug/aug_meta.jsonl",
                        "model/model.dsff", "model/history.csv", "cal/model.dsff", "cal/thresholds.json",
                        "eval/metrics.json", "eval/per_subband.csv", "eval/roc.csv", "roc/roc.csv"}) {
    EXPECT_EQ(io::read_text(kRoot / "a" / f), io::read_text(kRoot / "b" / f)) << f;
  }
  for (const char* d : {"data", "psd", "aug", "model", "cal", "eval", "roc"}) {
    EXPECT_TRUE(fs::exists(kRoot / "a" / d / "config.json")) << d;
    EXPECT_FALSE(fs::exists(kRoot / "a" / d / ".incomplete")) << d;
  }

  const auto psd_meta = json::parse(io::read_text(kRoot / "a/psd/psd_meta.json"));
  EXPECT_EQ(psd_meta.at("L"), 7);
  EXPECT_EQ(psd_meta.at("M"), 256);
  EXPECT_DOUBLE_EQ(psd_meta.at("W").get<double>(), 4.0 / 256);
  EXPECT_EQ(fs::file_size(kRoot / "a/psd/psd_mtm.f32"), 60u * 256 * 4);
  EXPECT_EQ(fs::file_size(kRoot / "a/psd/psd_pg.f32"), 60u * 256 * 4);

  const auto metrics = json::parse(io::read_text(kRoot / "a/eval/metrics.json"));
  EXPECT_EQ(metrics.at("target_pf"), 0.05);
  EXPECT_EQ(metrics.at("threshold_mode"), "global");
  EXPECT_EQ(metrics.at("num_samples"), 60);
  EXPECT_EQ(metrics.at("datasets").at("test"), "psd");
  const auto echo = json::parse(io::read_text(kRoot / "a/eval/config.json"));
  EXPECT_EQ(config_from_json(echo.at("config")).seed, 5u);

  const auto hist = io::read_text(kRoot / "a/model/history.csv");
  EXPECT_EQ(hist.rfind("epoch,train_loss,val_accuracy,lr\n", 0), 0u);
}

TEST_F(Pipeline, ZeroEpochCheckpointEqualsInitialization) {
  auto j = small_config();
  j["generation"]["random_samples"] = 20;
  const auto cfg_path = write_config(kRoot / "cfg", j);
  const auto c = " --config " + cfg_path.string() + " --out ";
  ASSERT_EQ(run_cli("generate" + c + (kRoot / "data").string()), 0);
  ASSERT_EQ(run_cli("preprocess --dataset " + (kRoot / "data").string() + c + (kRoot / "psd").string()), 0);
  ASSERT_EQ(run_cli("train --max-epochs 0 --psd " + (kRoot / "psd").string() + c + (kRoot / "model").string()), 0);

  const auto cfg = load_config(cfg_path);
  nn::DsffModel<float> init(nn::Topology::reference(16), cfg.init_seed());
  auto ck = nn::load_checkpoint(kRoot / "model" / "model.dsff");
  std::vector<float> a, b;
  init.for_each_parameter([&](std::span<float> v, std::span<float>) { a.insert(a.end(), v.begin(), v.end()); });
  ck.model.for_each_parameter([&](std::span<float> v, std::span<float>) { b.insert(b.end(), v.begin(), v.end()); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(io::read_text(kRoot / "model" / "history.csv"), "epoch,train_loss,val_accuracy,lr\n");
}

TEST_F(Pipeline, CalibrationFailureLeavesNoPartialOutput) {
  auto j = small_config();
  j["generation"]["random_samples"] = 20;
  j["sensing"]["threshold_mode"] = "per_subband";
  j["sensing"]["target_pf"] = 0.01;
  const auto cfg_path = write_config(kRoot / "cfg", j);
  const auto c = " --config " + cfg_path.string() + " --out ";
  ASSERT_EQ(run_cli("generate" + c + (kRoot / "data").string()), 0);
  ASSERT_EQ(run_cli("preprocess --dataset " + (kRoot / "data").string() + c + (kRoot / "psd").string()), 0);
  ASSERT_EQ(run_cli("train --max-epochs 0 --psd " + (kRoot / "psd").string() + c + (kRoot / "model").string()), 0);
  EXPECT_EQ(run_cli("calibrate --model " + (kRoot / "model").string() + c + (kRoot / "cal").string()), 3);
  EXPECT_FALSE(fs::exists(kRoot / "cal" / "model.dsff"));
  EXPECT_EQ(run_cli("evaluate --model " + (kRoot / "model").string() + " --psd " + (kRoot / "psd").string() + c +
                    (kRoot / "eval").string()),
            3);
  EXPECT_EQ(run_cli("preprocess --dataset " + (kRoot / "data").string() + c + (kRoot / "data").string()), 2);
}

TEST_F(Pipeline, SplitKeepsAugmentedVariantsWithTheirOrigin) {
  std::vector<AugmentRecord> records;
  for (std::size_t i = 0; i < 50; ++i) {
    records.push_back({i, "orig", 0});
    records.push_back({i, "inter", 1});
    records.push_back({i, "intra", 2});
  }
  const auto s = pipeline::split_by_origin(records, 0.1, 0.2, 7);
  EXPECT_EQ(s.validation.size(), 5u);
  EXPECT_EQ(s.calibration.size(), 10u);
  EXPECT_EQ(s.train.size(), 35u * 3);
  std::vector<int> role(50, -1);
  for (auto k : s.train) role[records[k].origin_index] = 0;
  for (auto k : s.validation) {
    EXPECT_EQ(role[records[k].origin_index], -1);
    EXPECT_EQ(records[k].kind, "orig");
  }
  for (auto k : s.calibration) {
    EXPECT_EQ(role[records[k].origin_index], -1);
    EXPECT_EQ(records[k].kind, "orig");
  }
  const auto again = pipeline::split_by_origin(records, 0.1, 0.2, 7);
  EXPECT_EQ(again.train, s.train);
}
