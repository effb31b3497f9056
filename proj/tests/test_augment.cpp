#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "wbss/augment.hpp"

using namespace wbss;
namespace fs = std::filesystem;

namespace {

DualSpectrum<double> blocks(std::vector<double> pg, std::vector<double> mtm) {
  DualSpectrum<double> d;
  d.pg = {std::move(pg), true, Estimator::periodogram};
  d.mtm = {std::move(mtm), true, Estimator::multitaper};
  return d;
}

PsdSet random_set(std::size_t count, std::size_t m, std::size_t n, std::uint64_t seed) {
  PsdSet set;
  set.signal_length = m;
  set.num_subbands = n;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    DualSpectrum<float> d;
    for (std::size_t k = 0; k < m; ++k) {
      d.mtm.psd.push_back(static_cast<float>(rng.uniform(0, 10)));
      d.pg.psd.push_back(static_cast<float>(rng.uniform(0, 10)));
    }
    std::vector<std::uint8_t> lab(n);
    for (auto& b : lab) b = rng.uniform01() < 0.5;
    set.append(d, lab);
  }
  return set;
}

}  // namespace

TEST(Inter, AppliesIndexArrayToBlocksAndLabels) {
  // Blocks A..D of width 2; output j takes input perm[j].
  const auto d = blocks({1, 1, 2, 2, 3, 3, 4, 4}, {10, 10, 20, 20, 30, 30, 40, 40});
  const std::vector<std::uint8_t> labels{1, 0, 0, 1};
  const ShufflePlan plan{ShuffleKind::inter, {2, 0, 3, 1}, {}, 0};
  const auto out = inter_subband_shuffle(d, labels, plan);
  EXPECT_EQ(out.spectra.pg.psd, (std::vector<double>{3, 3, 1, 1, 4, 4, 2, 2}));
  EXPECT_EQ(out.spectra.mtm.psd, (std::vector<double>{30, 30, 10, 10, 40, 40, 20, 20}));
  EXPECT_EQ(out.labels, (std::vector<std::uint8_t>{0, 1, 1, 0}));
}

TEST(Inter, IdentityAndMultisetPreservation) {
  const auto set = random_set(1, 64, 8, 3);
  const auto d = set.spectra(0);
  const auto lab = set.label_row(0);
  const ShufflePlan id{ShuffleKind::inter, {0, 1, 2, 3, 4, 5, 6, 7}, {}, 0};
  const auto same = inter_subband_shuffle(d, lab, id);
  EXPECT_EQ(same.spectra.pg.psd, d.pg.psd);
  EXPECT_EQ(same.spectra.mtm.psd, d.mtm.psd);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto out = inter_subband_shuffle(d, lab, make_inter_plan(8, s));
    auto a = out.spectra.pg.psd, b = d.pg.psd;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_EQ(std::count(out.labels.begin(), out.labels.end(), 1), std::count(lab.begin(), lab.end(), 1));
  }
}

TEST(Inter, RejectsBadPlans) {
  const auto d = blocks({1, 2, 3, 4}, {1, 2, 3, 4});
  const std::vector<std::uint8_t> labels{1, 0};
  EXPECT_THROW(inter_subband_shuffle(d, labels, ShufflePlan{ShuffleKind::inter, {0, 1, 2}, {}, 0}), InvalidInputError);
  EXPECT_THROW(inter_subband_shuffle(d, labels, ShufflePlan{ShuffleKind::inter, {1, 1}, {}, 0}), InvalidInputError);
  EXPECT_THROW(inter_subband_shuffle(d, labels, ShufflePlan{ShuffleKind::intra, {0, 1}, {}, 0}), InvalidInputError);
}

TEST(Intra, PermutesOnlyOccupiedSubbands) {
  const auto d = blocks({4, 0, 0, 0, 1, 2, 3, 4}, {8, 0, 0, 0, 5, 6, 7, 8});
  const std::vector<std::uint8_t> labels{1, 0};
  const ShufflePlan plan{ShuffleKind::intra, {}, {{1, 0, 2, 3}, {3, 2, 1, 0}}, 0};
  const auto out = intra_subband_shuffle(d, labels, plan);
  EXPECT_EQ(out.spectra.pg.psd, (std::vector<double>{0, 4, 0, 0, 1, 2, 3, 4}));
  EXPECT_EQ(out.spectra.mtm.psd, (std::vector<double>{0, 8, 0, 0, 5, 6, 7, 8}));
  EXPECT_EQ(out.labels, std::vector<std::uint8_t>(labels.begin(), labels.end()));
}

TEST(Intra, IdentityPlanAndBinSums) {
  const auto set = random_set(1, 64, 4, 9);
  const auto d = set.spectra(0);
  const auto lab = set.label_row(0);
  ShufflePlan id{ShuffleKind::intra, {}, std::vector<std::vector<std::size_t>>(4, detail::iota(16)), 0};
  EXPECT_EQ(intra_subband_shuffle(d, lab, id).spectra.pg.psd, d.pg.psd);
  const auto out = intra_subband_shuffle(d, lab, make_intra_plan(lab, 16, 5));
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<float> a(out.spectra.pg.psd.begin() + s * 16, out.spectra.pg.psd.begin() + (s + 1) * 16);
    std::vector<float> b(d.pg.psd.begin() + s * 16, d.pg.psd.begin() + (s + 1) * 16);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(Intra, RejectsWrongLengthPermutation) {
  const auto d = blocks({1, 2, 3, 4}, {1, 2, 3, 4});
  const std::vector<std::uint8_t> labels{1, 1};
  EXPECT_THROW(intra_subband_shuffle(d, labels, ShufflePlan{ShuffleKind::intra, {}, {{0, 1}, {0, 1, 2}}, 0}),
               InvalidInputError);
}

TEST(AugmentSet, CountsAndReplay) {
  const auto in = random_set(420, 64, 16, 1);
  const auto out = augment_set(in, 1, 1, 77);
  EXPECT_EQ(out.set.size(), 1260u);
  const auto none = augment_set(in, 0, 0, 77);
  EXPECT_EQ(none.set.mtm, in.mtm);
  EXPECT_EQ(none.set.pg, in.pg);
  EXPECT_EQ(none.set.labels, in.labels);

  for (std::size_t k = 0; k < out.records.size(); ++k) {
    const auto& rec = out.records[k];
    const auto origin = in.spectra(rec.origin_index);
    const auto lab = in.label_row(rec.origin_index);
    if (rec.kind == "orig") {
      EXPECT_EQ(out.set.spectra(k).pg.psd, origin.pg.psd);
      continue;
    }
    const auto plan = replay_plan(rec, lab, 4);
    const auto again = rec.kind == "inter" ? inter_subband_shuffle(origin, lab, plan) : intra_subband_shuffle(origin, lab, plan);
    EXPECT_EQ(again.spectra.pg.psd, out.set.spectra(k).pg.psd);
    EXPECT_EQ(again.spectra.mtm.psd, out.set.spectra(k).mtm.psd);
    const auto stored = out.set.label_row(k);
    EXPECT_TRUE(std::equal(again.labels.begin(), again.labels.end(), stored.begin()));
  }
}

TEST(AugmentCache, WritesProvenanceAndRequiresCache) {
  const auto base = fs::temp_directory_path() / "wbss_test_augment";
  fs::remove_all(base);
  auto set = random_set(10, 64, 16, 2);
  set.meta = {{"source", "synthetic"}};
  {
    io::OutputGuard guard(base / "psd");
    write_psd_set(set, guard);
    guard.commit();
  }
  augment_psd_cache(base / "psd", base / "aug", 2, 1, 5);
  const auto records = load_augment_records(base / "aug");
  ASSERT_EQ(records.size(), 40u);
  EXPECT_EQ(records[0].kind, "orig");
  EXPECT_EQ(records[1].kind, "inter");
  EXPECT_EQ(records[3].kind, "intra");
  EXPECT_EQ(records[4].origin_index, 1u);
  EXPECT_EQ(load_psd_set(base / "aug").size(), 40u);
  EXPECT_FALSE(fs::exists(base / "aug" / ".incomplete"));
  EXPECT_THROW(augment_psd_cache(base / "missing", base / "aug2", 1, 1, 5), PreconditionError);
  fs::remove_all(base);
}
