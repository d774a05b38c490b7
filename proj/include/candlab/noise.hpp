#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "candlab/dataset.hpp"

namespace candlab {

enum class NoiseKind { uniform_flip, structured };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::uniform_flip;
  double rate = 0.0;
  std::uint64_t seed = 0;
  int cluster_count = 1;      // structured only
  double ood_fraction = 0.0;  // structured only

  void validate() const;
};

struct NoiseLedgerEntry {
  std::size_t index = 0;
  int original = 0;
  int assigned = 0;
  bool ood = false;
  std::optional<int> cluster;

  friend bool operator==(const NoiseLedgerEntry&, const NoiseLedgerEntry&) = default;
};

/// One entry per corrupted record, sorted by record index.
struct NoiseLedger {
  std::vector<NoiseLedgerEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
  std::vector<std::size_t> flipped_indices() const;
  std::vector<int> original_labels() const;
  std::vector<int> assigned_labels() const;
  /// Throws unless entries are sorted, unique and every assigned label differs from the original.
  void validate() const;

  friend bool operator==(const NoiseLedger&, const NoiseLedger&) = default;
};

/// Round half up: floor(x + 0.5).
std::size_t round_half_up(double x);

// Label-level plans. These hold all of the selection logic; the dataset
// operations below apply them to records.

/// Exactly round_half_up(rate * n_c) records per class get a uniformly random
/// different class.
NoiseLedger plan_uniform_flip(std::span<const int> labels, int num_classes, double rate, std::uint64_t seed);

/// round_half_up(rate * N) records are split into cluster_count groups; every
/// record in group g is relabeled to the group's target class. Targets are a
/// random permutation of the classes taken cyclically, records are assigned
/// to the least-filled group whose target differs from their label, and the
/// first round_half_up(ood_fraction * |group|) members of each group (in
/// selection order) are marked out-of-distribution.
NoiseLedger plan_structured(std::span<const int> labels, int num_classes, const NoiseSpec& spec);

struct MixPlan {
  std::vector<std::size_t> kept_clean;   // ascending
  std::vector<std::size_t> added_noisy;  // ascending
  std::size_t removed = 0;
};

/// Removes round_half_up(f * |clean|) clean records uniformly and draws
/// r times that many noisy records without replacement, matching the removed
/// records' class counts where the noisy pool allows and filling any shortfall
/// uniformly from the rest.
MixPlan plan_mix(std::span<const int> clean_labels, std::span<const int> noisy_labels, double fraction, int ratio,
                 std::uint64_t seed);

std::pair<CandidateDataset, NoiseLedger> flip_uniform(const CandidateDataset& dataset, double rate, std::uint64_t seed);

/// Out-of-distribution records take their pixels from `distractors`. The pool
/// is grouped into themes by keyword (first-appearance order); group g draws
/// without replacement from theme g mod #themes. When no pool is given and OOD
/// content is needed, a procedural pool is generated with one theme per group.
std::pair<CandidateDataset, NoiseLedger> make_structured(const CandidateDataset& dataset, const NoiseSpec& spec,
                                                         const CandidateDataset* distractors = nullptr);

CandidateDataset mix(const CandidateDataset& clean, const CandidateDataset& noisy, double fraction, int ratio,
                     std::uint64_t seed);

/// Smooth random color fields: each theme has a base field built from
/// low-frequency cosines; theme members add a smaller perturbation field.
/// Records get keyword "distractor-<theme>" and source synthetic.
CandidateDataset make_distractor_pool(std::span<const std::size_t> per_theme, int height, int width, int channels,
                                      std::uint64_t seed);

/// Restores the original labels recorded in the ledger (pixels of OOD
/// records are not restored).
CandidateDataset revert_labels(const CandidateDataset& dataset, const NoiseLedger& ledger);

void write_ledger_jsonl(const NoiseLedger& ledger, const std::filesystem::path& path);
NoiseLedger read_ledger_jsonl(const std::filesystem::path& path);

}  // namespace candlab
