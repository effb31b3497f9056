// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <CLI11.hpp>
#include <sys/wait.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "support.hpp"
#include "wbss/augment.hpp"
#include "wbss/pipeline.hpp"

using namespace wbss;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::vector<cdouble> complex_noise(std::size_t n, Rng& rng) {
  std::vector<cdouble> x(n);
  for (auto& v : x) v = {rng.normal() * std::numbers::sqrt2 / 2, rng.normal() * std::numbers::sqrt2 / 2};
  return x;
}

// ---------------------------------------------------------------------------

Outcome shape_conformance() {
  const auto t0 = Clock::now();
  const nn::DsffModel<float> model(nn::Topology::reference(16), 1);
  const std::vector<float> x(32768, 0.0f);
  nn::ModelCache<float> cache;
  model.forward(x, x, 1, nn::Mode::eval, cache);
  const std::vector<std::size_t> got(cache.lengths.begin() + 1, cache.lengths.end());
  const std::vector<std::size_t> want{32768, 32768, 32768, 16382, 8191, 8191, 4094, 2047, 2047, 8192, 64, 16};
  const double dt = seconds_since(t0);
  std::string seq;
  for (auto v : got) seq += (seq.empty() ? "" : " ") + std::to_string(v);
  return {got == want && dt < 10.0, "lengths [" + seq + "], " + fmt(dt, 3) + " s (limit 10 s)"};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = testkit::gradient_check(seed);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  const double dt = seconds_since(t0);
  return {worst < 1e-4 && dt < 60.0, std::to_string(checked) + " parameter gradients over 5 seeds, max rel error " +
                                         fmt(worst, 3) + " (limit 1e-4), " + fmt(dt, 3) + " s (limit 60 s)"};
}

Outcome dpss_validity() {
  const auto t0 = Clock::now();
  const std::size_t m = 512, l = 7;
  const double w = 4.0 / 512;
  const auto bank = dpss_tapers(m, w, l);
  double gram = 0.0;
  for (std::size_t a = 0; a < l; ++a) {
    for (std::size_t b = 0; b < l; ++b) {
      double dot = 0;
      for (std::size_t k = 0; k < m; ++k) dot += bank.tapers[a][k] * bank.tapers[b][k];
      gram = std::max(gram, std::abs(dot - (a == b ? 1.0 : 0.0)));
    }
  }
  bool decreasing = true;
  for (std::size_t k = 1; k < l; ++k) decreasing &= bank.concentrations[k] < bank.concentrations[k - 1];

  // Dense oracle: eigenvectors of the commuting tridiagonal matrix, energy
  // concentration from the full sinc kernel.
  Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd kernel(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const double c = (static_cast<double>(m) - 1.0) / 2.0 - static_cast<double>(i);
    tri(i, i) = c * c * std::cos(2.0 * std::numbers::pi * w);
    if (i + 1 < m) tri(i, i + 1) = tri(i + 1, i) = 0.5 * static_cast<double>(i + 1) * static_cast<double>(m - i - 1);
    for (std::size_t j = 0; j < m; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      kernel(i, j) = i == j ? 2.0 * w : std::sin(2.0 * std::numbers::pi * w * d) / (std::numbers::pi * d);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tri);
  double vec_err = 0.0, conc_err = 0.0, oracle0 = 0.0;
  for (std::size_t k = 0; k < l; ++k) {
    const Eigen::VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(m - 1 - k));
    Eigen::VectorXd ours(m);
    for (std::size_t i = 0; i < m; ++i) ours(static_cast<Eigen::Index>(i)) = bank.tapers[k][i];
    vec_err = std::max(vec_err, std::abs(std::abs(v.dot(ours)) - 1.0));
    const double lambda = v.dot(kernel * v);
    if (k == 0) oracle0 = lambda;
    conc_err = std::max(conc_err, std::abs(lambda - bank.concentrations[k]));
  }
  const double dt = seconds_since(t0);
  const bool ok = gram < 1e-8 && decreasing && bank.concentrations[0] > 0.99999 && oracle0 > 0.99999 &&
                  vec_err < 1e-9 && conc_err < 1e-9 && dt < 30.0;
  return {ok, "Gram deviation " + fmt(gram, 3) + " (limit 1e-8), concentrations decreasing " +
                  (decreasing ? "yes" : "no") + ", lambda0 " + fmt(bank.concentrations[0], 12) + " (oracle " +
                  fmt(oracle0, 12) + "), oracle vector/concentration error " + fmt(vec_err, 3) + "/" + fmt(conc_err, 3) +
                  ", " + fmt(dt, 3) + " s (limit 30 s)"};
}

Outcome spectral_identities() {
  Rng rng(404);
  double parseval = 0.0;
  for (int r = 0; r < 100; ++r) {
    const auto x = complex_noise(1024, rng);
    const auto p = periodogram(x).psd;
    double lhs = 0, rhs = 0;
    for (double v : p) lhs += v;
    for (const auto& v : x) rhs += std::norm(v);
    rhs *= 1024;
    parseval = std::max(parseval, std::abs(lhs - rhs) / rhs);
  }
  std::size_t tone_hits = 0;
  const std::size_t m = 256;
  for (std::size_t bin = 0; bin < m; ++bin) {
    std::vector<cdouble> x(m);
    for (std::size_t k = 0; k < m; ++k) {
      x[k] = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(bin * k) / static_cast<double>(m));
    }
    const auto p = periodogram(x).psd;
    const auto peak = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    tone_hits += peak == (bin + m / 2) % m;
  }
  const auto bank = dpss_tapers(512, 3.0 / 512, 1);
  const auto x = complex_noise(512, rng);
  std::vector<cdouble> tapered(512);
  for (std::size_t k = 0; k < 512; ++k) tapered[k] = x[k] * bank.tapers[0][k];
  const bool bitwise = mtm_psd(x, bank).psd == periodogram(tapered).psd;
  return {parseval <= 1e-6 && tone_hits == m && bitwise,
          "Parseval max rel error " + fmt(parseval, 3) + " over 100 signals (limit 1e-6), tones localized " +
              std::to_string(tone_hits) + "/" + std::to_string(m) + ", L=1 MTM bit-identical to tapered periodogram " +
              (bitwise ? "yes" : "no")};
}

Outcome mtm_variance() {
  const auto t0 = Clock::now();
  const std::size_t m = 4096, runs = 200;
  const auto bank = dpss_tapers(m, 4.0 / m, 7);
  std::vector<double> s1m(m), s2m(m), s1p(m), s2p(m);
  Rng rng(505);
  for (std::size_t r = 0; r < runs; ++r) {
    const auto x = complex_noise(m, rng);
    const auto d = dual_representation(x, bank);
    for (std::size_t k = 0; k < m; ++k) {
      s1m[k] += d.mtm.psd[k];
      s2m[k] += d.mtm.psd[k] * d.mtm.psd[k];
      s1p[k] += d.pg.psd[k];
      s2p[k] += d.pg.psd[k] * d.pg.psd[k];
    }
  }
  auto median_var = [&](const std::vector<double>& s1, const std::vector<double>& s2, bool relative) {
    std::vector<double> v(m);
    const double n = static_cast<double>(runs);
    for (std::size_t k = 0; k < m; ++k) {
      v[k] = (s2[k] - s1[k] * s1[k] / n) / (n - 1);
      if (relative) v[k] /= (s1[k] / n) * (s1[k] / n);
    }
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m / 2), v.end());
    return v[m / 2];
  };
  const double vm = median_var(s1m, s2m, false), vp = median_var(s1p, s2p, false);
  // Scale-free variance (var / mean^2) so the unnormalized periodogram cannot pass on scale alone.
  const double rm = median_var(s1m, s2m, true), rp = median_var(s1p, s2p, true);
  const double dt = seconds_since(t0);
  return {vm < vp && rm < rp && dt < 120.0,
          "median per-bin variance MTM " + fmt(vm) + " vs periodogram " + fmt(vp) + "; relative " + fmt(rm, 4) +
              " vs " + fmt(rp, 4) + ", " + fmt(dt, 3) + " s (limit 120 s)"};
}

Outcome metric_oracle() {
  Rng rng(606);
  const std::size_t n = 16, total = 10000;
  std::vector<std::uint8_t> d(total), z(total);
  for (std::size_t k = 0; k < total; ++k) {
    d[k] = rng.uniform01() < 0.45;
    z[k] = rng.uniform01() < 0.55;
  }
  ConfusionCounts c(n);
  accumulate_confusion(d, z, c);
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t k = 0; k < total; ++k) {
    tp += d[k] && z[k];
    fp += d[k] && !z[k];
    tn += !d[k] && !z[k];
    fn += !d[k] && z[k];
  }
  const auto mm = micro_metrics(c);
  const bool exact = mm.pd == static_cast<double>(tp) / static_cast<double>(tp + fn) &&
                     mm.pf == static_cast<double>(fp) / static_cast<double>(fp + tn);

  bool roc_ok = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    std::vector<double> s(2000);
    std::vector<std::uint8_t> lab(2000);
    for (std::size_t k = 0; k < s.size(); ++k) {
      lab[k] = r.uniform01() < 0.5;
      s[k] = std::clamp(0.7 * r.uniform01() + (lab[k] ? 0.3 : 0.0), 1e-9, 1 - 1e-9);
    }
    const auto curve = roc_curve(s, lab, 200);
    const auto& f = curve.points.front();
    const auto& b = curve.points.back();
    roc_ok &= f.pf == 0.0 && f.pd == 0.0 && b.pf == 1.0 && b.pd == 1.0;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
      roc_ok &= curve.points[k].pf >= curve.points[k - 1].pf && curve.points[k].pd >= curve.points[k - 1].pd;
    }
  }
  return {exact && roc_ok, "micro pd " + fmt(mm.pd, 17) + " pf " + fmt(mm.pf, 17) + " on 10^4 pairs, brute-force match " +
                               (exact ? "exact" : "MISMATCH") + ", ROC monotone with anchored endpoints on 20 random sets " +
                               (roc_ok ? "yes" : "no")};
}

Outcome augmentation_soundness(const fs::path& work) {
  const auto dir = work / "c7";
  fs::remove_all(dir);
  GenerationConfig g;
  g.signal_length = 512;
  g.num_subbands = 16;
  g.snr_mode = SnrMode::per_user_random;
  g.snr_low_db = 0;
  g.snr_high_db = 20;
  g.random_samples = 50;
  g.sps_choices = {4};
  g.master_seed = 707;
  generate_dataset(g, dir / "data");
  preprocess_dataset(dir / "data", dir / "psd", 4.0, 7);
  augment_psd_cache(dir / "psd", dir / "aug", 1, 1, 708);

  const auto orig = load_psd_set(dir / "psd");
  const auto aug = load_psd_set(dir / "aug");
  const auto records = load_augment_records(dir / "aug");
  const std::size_t width = orig.signal_length / orig.num_subbands;
  std::size_t checked = 0, replay_ok = 0, label_ok = 0, energy_ok = 0;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& rec = records[k];
    if (rec.kind == "orig") continue;
    ++checked;
    const auto src = orig.spectra(rec.origin_index);
    const auto src_lab = orig.label_row(rec.origin_index);
    const auto plan = replay_plan(rec, src_lab, width);
    const auto again = rec.kind == "inter" ? inter_subband_shuffle(src, src_lab, plan) : intra_subband_shuffle(src, src_lab, plan);
    const auto stored = aug.spectra(k);
    replay_ok += again.spectra.mtm.psd == stored.mtm.psd && again.spectra.pg.psd == stored.pg.psd;

    const auto lab = aug.label_row(k);
    bool lab_match = true;
    for (std::size_t i = 0; i < lab.size(); ++i) {
      const auto expected = rec.kind == "inter" ? src_lab[plan.subband_permutation[i]] : src_lab[i];
      lab_match &= lab[i] == expected;
    }
    label_ok += lab_match;

    bool energy = true;
    for (auto [a, b] : {std::pair{src.mtm.psd, stored.mtm.psd}, std::pair{src.pg.psd, stored.pg.psd}}) {
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      double ea = 0, eb = 0;
      for (float v : a) ea += v;
      for (float v : b) eb += v;
      energy &= a == b && ea == eb;
    }
    energy_ok += energy;
  }

  PsdSet base;
  base.signal_length = orig.signal_length;
  base.num_subbands = orig.num_subbands;
  for (std::size_t i = 0; i < 420; ++i) base.append(orig.spectra(i % orig.size()), orig.label_row(i % orig.size()));
  const auto grown = augment_set(base, 1, 1, 709).set.size();

  fs::remove_all(dir);
  const bool ok = checked == 100 && replay_ok == checked && label_ok == checked && energy_ok == checked && grown == 1260;
  return {ok, std::to_string(checked) + " augmented samples: replay bit-exact " + std::to_string(replay_ok) +
                  ", labels correct " + std::to_string(label_ok) + ", energy conserved " + std::to_string(energy_ok) +
                  "; 420 originals with factors 1+1 -> " + std::to_string(grown)};
}

// Desk-scale datasets shared by criteria 8 and 9.
struct DeskSets {
  PsdSet train, validation, calibration, test;
};

PsdSet desk_set(const fs::path& dir, const std::string& name, std::size_t count, std::uint64_t seed) {
  GenerationConfig g;
  g.signal_length = 4096;
  g.num_subbands = 16;
  g.snr_mode = SnrMode::per_user_random;
  g.snr_low_db = 0;
  g.snr_high_db = 20;
  g.random_samples = count;
  g.master_seed = seed;
  generate_dataset(g, dir / (name + "_iq"));
  preprocess_dataset(dir / (name + "_iq"), dir / (name + "_psd"), 4.0, 7, dir / "tapers");
  fs::remove_all(dir / (name + "_iq"));
  return load_psd_set(dir / (name + "_psd"));
}

const DeskSets& desk_sets(const fs::path& work) {
  static std::optional<DeskSets> sets;
  if (!sets) {
    const auto dir = work / "desk";
    fs::remove_all(dir);
    sets = DeskSets{desk_set(dir, "train", 400, 8001), desk_set(dir, "validation", 100, 8002),
                    desk_set(dir, "calibration", 100, 8003), desk_set(dir, "test", 200, 8004)};
  }
  return *sets;
}

struct DeskResult {
  double pd = 0, pf = 0, val_accuracy = 0;
  std::size_t epochs = 0;
};

DeskResult desk_run(const PsdSet& train_set, const DeskSets& s, std::uint64_t seed) {
  nn::TrainConfig tc;
  tc.max_epochs = 30;
  tc.seed = derive_seed(seed, 0, 34);
  const auto result = nn::train(nn::DsffModel<float>(nn::Topology::reference(16), derive_seed(seed, 0, 33)),
                                nn::prepare(train_set), nn::prepare(s.validation), tc);
  const auto cal_scores = pipeline::score_set(result.best, s.calibration);
  const auto t = calibrate_thresholds(cal_scores, s.calibration.labels, 16, 0.01, ThresholdMode::global, "calibration");
  const auto test_scores = pipeline::score_set(result.best, s.test);
  ConfusionCounts c(16);
  accumulate_confusion(decide_all(test_scores, t), s.test.labels, c);
  return {micro_pd(c), micro_pf(c), result.best_accuracy, result.history.size()};
}

Outcome desk_trainability(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto& s = desk_sets(work);
  const auto r = desk_run(s.train, s, 1);
  const double dt = seconds_since(t0);
  return {r.pd >= 0.90 && r.pf <= 0.02 && dt <= 1800.0,
          "test micro Pd " + fmt(r.pd, 4) + " (limit >= 0.90), Pf " + fmt(r.pf, 4) + " (limit <= 0.02), " +
              std::to_string(r.epochs) + " epochs, best validation accuracy " + fmt(r.val_accuracy, 4) + ", " +
              fmt(dt, 4) + " s (limit 1800 s)"};
}

Outcome augmentation_benefit(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto& s = desk_sets(work);
  std::vector<std::size_t> first(100);
  std::iota(first.begin(), first.end(), std::size_t{0});
  const auto small = pipeline::subset(s.train, first);
  double with = 0, without = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto plain = desk_run(small, s, 100 + seed);
    const auto grown = desk_run(augment_set(small, 1, 1, derive_seed(seed, 0, 31)).set, s, 100 + seed);
    without += plain.pd / 3;
    with += grown.pd / 3;
    per_seed += " [" + fmt(plain.pd, 4) + " -> " + fmt(grown.pd, 4) + "]";
  }
  const double dt = seconds_since(t0);
  return {with > without, "mean test micro Pd without augmentation " + fmt(without, 5) + ", with " + fmt(with, 5) +
                              "; per seed" + per_seed + ", " + fmt(dt, 4) + " s"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(WBSS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end_determinism(const fs::path& work) {
  const auto dir = work / "c10";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const json cfg = json::parse(R"({
    "seed": 1010,
    "generation": {"M": 1024, "N": 16, "snr_mode": "per-user-random", "snr_range_db": [0, 20], "random_samples": 80},
    "train": {"max_epochs": 2, "validation_fraction": 0.2, "calibration_fraction": 0.3},
    "sensing": {"target_pf": 0.05, "threshold_mode": "global"}
  })");
  io::write_text(dir / "config.json", cfg.dump(2));
  std::vector<std::string> metrics;
  for (const char* run : {"a", "b"}) {
    const auto base = dir / run;
    const auto c = " --config " + (dir / "config.json").string() + " --out ";
    const std::vector<std::string> steps = {
        "generate" + c + (base / "data").string(),
        "preprocess --dataset " + (base / "data").string() + c + (base / "psd").string(),
        "train --psd " + (base / "psd").string() + c + (base / "model").string(),
        "calibrate --model " + (base / "model").string() + c + (base / "cal").string(),
        "evaluate --model " + (base / "cal").string() + " --psd " + (base / "psd").string() + c + (base / "eval").string()};
    for (const auto& step : steps) {
      if (const int code = run_cli(step); code != 0) {
        return {false, "command `" + step.substr(0, step.find(' ')) + "` exited with " + std::to_string(code)};
      }
    }
    metrics.push_back(io::read_text(base / "eval" / "metrics.json"));
  }
  fs::remove_all(dir);
  const bool same = metrics[0] == metrics[1];
  return {same, std::string("metrics.json byte-identical across two full runs: ") + (same ? "yes" : "no") + " (" +
                    std::to_string(metrics[0].size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string workdir = (fs::temp_directory_path() / "wbss_acceptance").string();
  std::vector<int> only;
  unsigned threads = 0;
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--threads", threads, "worker threads (0 = all cores)");
  CLI11_PARSE(app, argc, argv);
  set_num_threads(threads);
  const fs::path work = workdir;
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"layer shape conformance", shape_conformance},
      {"gradient correctness", gradient_correctness},
      {"DPSS validity", dpss_validity},
      {"spectral identities", spectral_identities},
      {"MTM variance reduction", mtm_variance},
      {"metric oracle equivalence", metric_oracle},
      {"augmentation soundness", [&] { return augmentation_soundness(work); }},
      {"desk-scale trainability", [&] { return desk_trainability(work); }},
      {"augmentation benefit", [&] { return augmentation_benefit(work); }},
      {"end-to-end determinism", [&] { return end_to_end_determinism(work); }},
  };

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first << "): " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
