#pragma once

// Frequency-domain augmentation on cached PSDs: inter-subband shuffle
// (reorder whole subband blocks together with their labels) and
// intra-subband shuffle (permute bins inside occupied subbands).

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wbss/dataset.hpp"
#include "wbss/error.hpp"
#include "wbss/random.hpp"
#include "wbss/specest.hpp"

namespace wbss {

enum class ShuffleKind { inter, intra };

inline const char* to_string(ShuffleKind k) { return k == ShuffleKind::inter ? "inter" : "intra"; }

/// Block j of the output takes block subband_permutation[j] of the input;
/// inside subband s, output bin b takes input bin intra_bin_permutations[s][b].
struct ShufflePlan {
  ShuffleKind kind = ShuffleKind::inter;
  std::vector<std::size_t> subband_permutation;
  std::vector<std::vector<std::size_t>> intra_bin_permutations;
  std::uint64_t seed = 0;
};

namespace detail {

inline bool is_permutation_of_iota(std::span<const std::size_t> p) {
  std::vector<char> seen(p.size(), 0);
  for (auto v : p) {
    if (v >= p.size() || seen[v]) return false;
    seen[v] = 1;
  }
  return true;
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

template <typename T>
void check_dual(const DualSpectrum<T>& s) {
  if (s.mtm.size() != s.pg.size()) throw InvalidInputError("dual spectrum components differ in length");
}

}  // namespace detail

inline ShufflePlan make_inter_plan(std::size_t num_subbands, std::uint64_t seed) {
  ShufflePlan plan{ShuffleKind::inter, detail::iota(num_subbands), {}, seed};
  Rng rng(seed);
  rng.shuffle(plan.subband_permutation.begin(), plan.subband_permutation.end());
  return plan;
}

/// Uniform bin permutation for each occupied subband, identity elsewhere.
inline ShufflePlan make_intra_plan(std::span<const std::uint8_t> labels, std::size_t bins_per_subband,
                                   std::uint64_t seed) {
  ShufflePlan plan{ShuffleKind::intra, {}, {}, seed};
  Rng rng(seed);
  for (auto occupied : labels) {
    auto perm = detail::iota(bins_per_subband);
    if (occupied) rng.shuffle(perm.begin(), perm.end());
    plan.intra_bin_permutations.push_back(std::move(perm));
  }
  return plan;
}

template <typename T>
struct Augmented {
  DualSpectrum<T> spectra;
  std::vector<std::uint8_t> labels;
};

template <typename T>
Augmented<T> inter_subband_shuffle(const DualSpectrum<T>& spectra, std::span<const std::uint8_t> labels,
                                   const ShufflePlan& plan) {
  if (plan.kind != ShuffleKind::inter) throw InvalidInputError("inter_subband_shuffle: plan kind must be inter");
  detail::check_dual(spectra);
  const std::size_t n_sub = labels.size();
  const auto& perm = plan.subband_permutation;
  if (perm.size() != n_sub) {
    throw InvalidInputError("inter_subband_shuffle: permutation length " + std::to_string(perm.size()) +
                            " != N = " + std::to_string(n_sub));
  }
  if (!detail::is_permutation_of_iota(perm)) throw InvalidInputError("inter_subband_shuffle: not a permutation");
  const std::size_t m = spectra.size();
  if (n_sub == 0 || m % n_sub != 0) throw InvalidInputError("inter_subband_shuffle: M must be divisible by N");
  const std::size_t width = m / n_sub;

  Augmented<T> out{spectra, std::vector<std::uint8_t>(n_sub)};
  for (std::size_t j = 0; j < n_sub; ++j) {
    const std::size_t src = perm[j] * width;
    for (std::size_t b = 0; b < width; ++b) {
      out.spectra.mtm.psd[j * width + b] = spectra.mtm.psd[src + b];
      out.spectra.pg.psd[j * width + b] = spectra.pg.psd[src + b];
    }
    out.labels[j] = labels[perm[j]];
  }
  return out;
}

template <typename T>
Augmented<T> intra_subband_shuffle(const DualSpectrum<T>& spectra, std::span<const std::uint8_t> labels,
                                   const ShufflePlan& plan) {
  if (plan.kind != ShuffleKind::intra) throw InvalidInputError("intra_subband_shuffle: plan kind must be intra");
  detail::check_dual(spectra);
  const std::size_t n_sub = labels.size();
  const std::size_t m = spectra.size();
  if (n_sub == 0 || m % n_sub != 0) throw InvalidInputError("intra_subband_shuffle: M must be divisible by N");
  const std::size_t width = m / n_sub;
  if (plan.intra_bin_permutations.size() != n_sub) {
    throw InvalidInputError("intra_subband_shuffle: need one bin permutation per subband");
  }
  Augmented<T> out{spectra, {labels.begin(), labels.end()}};
  for (std::size_t s = 0; s < n_sub; ++s) {
    const auto& perm = plan.intra_bin_permutations[s];
    if (perm.size() != width || !detail::is_permutation_of_iota(perm)) {
      throw InvalidInputError("intra_subband_shuffle: bin permutation for subband " + std::to_string(s) +
                              " must be a permutation of length " + std::to_string(width));
    }
    if (!labels[s]) continue;
    for (std::size_t b = 0; b < width; ++b) {
      out.spectra.mtm.psd[s * width + b] = spectra.mtm.psd[s * width + perm[b]];
      out.spectra.pg.psd[s * width + b] = spectra.pg.psd[s * width + perm[b]];
    }
  }
  return out;
}

/// Provenance of one augmented-set entry.
struct AugmentRecord {
  std::size_t origin_index = 0;
  std::string kind;  // "orig", "inter" or "intra"
  std::uint64_t plan_seed = 0;
};

/// Rebuilds the plan an AugmentRecord refers to.
inline ShufflePlan replay_plan(const AugmentRecord& rec, std::span<const std::uint8_t> origin_labels,
                               std::size_t bins_per_subband) {
  if (rec.kind == "inter") return make_inter_plan(origin_labels.size(), rec.plan_seed);
  if (rec.kind == "intra") return make_intra_plan(origin_labels, bins_per_subband, rec.plan_seed);
  throw InvalidInputError("replay_plan: record of kind '" + rec.kind + "' has no plan");
}

struct AugmentedSet {
  PsdSet set;
  std::vector<AugmentRecord> records;
};

/// Per origin: the original, then factor_inter inter-shuffled and
/// factor_intra intra-shuffled variants, each with its own plan seed.
inline AugmentedSet augment_set(const PsdSet& in, std::size_t factor_inter, std::size_t factor_intra,
                                std::uint64_t seed) {
  AugmentedSet out;
  out.set.signal_length = in.signal_length;
  out.set.num_subbands = in.num_subbands;
  out.set.meta = in.meta;
  const std::size_t width = in.signal_length / in.num_subbands;
  const std::size_t per_origin = factor_inter + factor_intra;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto spectra = in.spectra(i);
    const auto labels = in.label_row(i);
    out.set.append(spectra, labels);
    out.records.push_back({i, "orig", 0});
    for (std::size_t v = 0; v < per_origin; ++v) {
      const bool inter = v < factor_inter;
      AugmentRecord rec{i, inter ? "inter" : "intra", derive_seed(seed, i * per_origin + v, inter ? 11 : 12)};
      const auto plan = replay_plan(rec, labels, width);
      const auto aug = inter ? inter_subband_shuffle(spectra, labels, plan) : intra_subband_shuffle(spectra, labels, plan);
      out.set.append(aug.spectra, aug.labels);
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

inline void augment_psd_cache(const fs::path& in_dir, const fs::path& out_dir, std::size_t factor_inter,
                              std::size_t factor_intra, std::uint64_t seed) {
  if (!has_psd_cache(in_dir)) {
    throw PreconditionError("augment: no PSD cache at " + in_dir.string() + " (run `preprocess` first)");
  }
  const auto in = load_psd_set(in_dir);
  auto out = augment_set(in, factor_inter, factor_intra, seed);
  out.set.meta["augmentation"] = {{"factor_inter", factor_inter},
                                  {"factor_intra", factor_intra},
                                  {"seed", seed},
                                  {"origin", dataset_name(in_dir)}};
  io::OutputGuard guard(out_dir);
  write_psd_set(out.set, guard);
  auto os = io::open_out(guard.track("aug_meta.jsonl"));
  for (const auto& r : out.records) {
    os << json{{"origin_index", r.origin_index}, {"kind", r.kind}, {"plan_seed", r.plan_seed}}.dump() << "\n";
  }
  os.close();
  if (!os) throw IoError("failed writing aug_meta.jsonl");
  guard.commit();
}

inline std::vector<AugmentRecord> load_augment_records(const fs::path& dir) {
  auto is = io::open_in(dir / "aug_meta.jsonl");
  std::vector<AugmentRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("origin_index").get<std::size_t>(), j.at("kind").get<std::string>(),
                   j.at("plan_seed").get<std::uint64_t>()});
  }
  return out;
}

}  // namespace wbss
