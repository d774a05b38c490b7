#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "candlab/dataset.hpp"

namespace candlab {

struct SimilarityPair {
  std::string pair_id;
  std::string test_id;
  std::string train_id;
  double l2_distance = 0.0;
  double ssim = 0.0;
  std::optional<int> rank_l2;
  std::optional<int> rank_ssim;

  int min_rank() const { return std::min(rank_l2.value_or(INT32_MAX), rank_ssim.value_or(INT32_MAX)); }
  friend bool operator==(const SimilarityPair&, const SimilarityPair&) = default;
};

enum class Verdict { similar, distinct };

std::string_view to_string(Verdict verdict) noexcept;
std::optional<Verdict> parse_verdict(std::string_view text) noexcept;

struct ReviewDecision {
  std::string pair_id;
  Verdict verdict = Verdict::distinct;
  std::string reviewer;
  std::int64_t timestamp_ms = 0;

  friend bool operator==(const ReviewDecision&, const ReviewDecision&) = default;
};

// SSIM stabilizers for 8-bit dynamic range: (0.01 * 255)^2 and (0.03 * 255)^2.
inline constexpr double kSsimC1 = (0.01 * 255.0) * (0.01 * 255.0);
inline constexpr double kSsimC2 = (0.03 * 255.0) * (0.03 * 255.0);

/// Euclidean distance between raw 8-bit intensities.
double l2_distance(const Image& a, const Image& b);

/// Global (single-window) SSIM on luma 0.299 R + 0.587 G + 0.114 B, using
/// population moments. Gray images use their single channel.
double ssim(const Image& a, const Image& b);

struct ScanOptions {
  std::size_t threads = 0;
};

/// For each test image, the k nearest training images by l2 and the k most
/// similar by SSIM, merged per (test, train). Ties go to the earlier training
/// record. Output is sorted by (test_id, best rank, train order).
/// k larger than |train| is clamped and reported in `warnings`.
std::vector<SimilarityPair> scan(const CandidateDataset& test, const CandidateDataset& train, int k,
                                 const ScanOptions& options = {}, std::vector<std::string>* warnings = nullptr);

inline constexpr double kExactL2 = 1e-6;
inline constexpr double kExactSsim = 1.0 - 1e-9;

/// pair_ids of exact copies (l2 <= 1e-6 or ssim >= 1 - 1e-9), in input order.
std::vector<std::string> auto_flag(std::span<const SimilarityPair> pairs);

/// "similar" decisions for the given pair ids, attributed to reviewer "auto_flag".
std::vector<ReviewDecision> auto_decisions(std::span<const std::string> pair_ids, std::int64_t timestamp_ms);

struct RemovalEntry {
  std::string train_id;
  std::string pair_id;
  std::string verdict_source;  // reviewer of the deciding verdict
};

struct ApplyResult {
  CandidateDataset cleaned;
  std::vector<RemovalEntry> removals;
  std::vector<std::string> warnings;
};

/// Removes every training record that is the train side of a pair whose
/// latest decision (by timestamp, then position) is "similar".
ApplyResult apply_decisions(const CandidateDataset& train, std::span<const SimilarityPair> pairs,
                            std::span<const ReviewDecision> decisions);

// Pairs file: a header line {"format":"candlab-pairs", metric config...}
// followed by one SimilarityPair per line.
struct PairsHeader {
  int k = 0;
  std::size_t test_size = 0;
  std::size_t train_size = 0;
};
void write_pairs_jsonl(std::span<const SimilarityPair> pairs, const PairsHeader& header,
                       const std::filesystem::path& path);
std::vector<SimilarityPair> read_pairs_jsonl(const std::filesystem::path& path, PairsHeader* header = nullptr);

std::string decision_to_json(const ReviewDecision& decision);
ReviewDecision decision_from_json(std::string_view line);
std::vector<ReviewDecision> read_decisions_jsonl(const std::filesystem::path& path);
/// Appends and flushes to disk before returning.
void append_decisions_jsonl(std::span<const ReviewDecision> decisions, const std::filesystem::path& path);

void write_removal_report(std::span<const RemovalEntry> removals, const std::filesystem::path& path);

}  // namespace candlab
