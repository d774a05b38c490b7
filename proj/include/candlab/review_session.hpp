#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "candlab/dedup.hpp"

namespace candlab {

struct ReviewProgress {
  std::size_t total = 0;
  std::size_t decided = 0;
  std::size_t pending = 0;
  std::size_t leased = 0;

  friend bool operator==(const ReviewProgress&, const ReviewProgress&) = default;
};

/// Review queue over a fixed pair list. The decisions log is the only
/// persistent state; constructing a session replays it.
class ReviewSession {
 public:
  using MonotonicClock = std::function<std::chrono::steady_clock::time_point()>;
  using WallClock = std::function<std::int64_t()>;  // milliseconds since epoch

  struct Options {
    std::chrono::steady_clock::duration lease = std::chrono::minutes(10);
    MonotonicClock monotonic;  // default: steady_clock::now
    WallClock wall;            // default: system_clock in ms
  };

  ReviewSession(std::vector<SimilarityPair> pairs, std::filesystem::path log_path);
  ReviewSession(std::vector<SimilarityPair> pairs, std::filesystem::path log_path, Options options);

  /// First pending pair in list order, leased to `reviewer`; nullopt when
  /// every pair is decided or under a live lease.
  std::optional<SimilarityPair> next_pair(const std::string& reviewer);

  /// Appends to the log (flushed to disk) before updating state. A zero
  /// timestamp is replaced by the wall clock. Throws InvalidArgument for an
  /// unknown pair_id, leaving the log unchanged.
  ReviewDecision record_decision(ReviewDecision decision);

  ReviewProgress progress() const;

  bool contains(const std::string& pair_id) const;
  const std::vector<SimilarityPair>& pairs() const noexcept { return pairs_; }
  const std::filesystem::path& log_path() const noexcept { return log_path_; }
  /// Log lines that referenced pairs outside this session during replay.
  const std::vector<std::string>& replay_warnings() const noexcept { return replay_warnings_; }

 private:
  struct State {
    bool decided = false;
    std::string reviewer;
    std::optional<std::chrono::steady_clock::time_point> lease_expiry;
  };

  bool leased(const State& s, std::chrono::steady_clock::time_point now) const {
    return !s.decided && s.lease_expiry && now < *s.lease_expiry;
  }

  std::vector<SimilarityPair> pairs_;
  std::unordered_map<std::string, std::size_t> index_;
  std::filesystem::path log_path_;
  Options options_;
  std::vector<std::string> replay_warnings_;

  mutable std::mutex mutex_;
  std::vector<State> state_;
};

}  // namespace candlab
