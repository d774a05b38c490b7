#include "candlab/review_session.hpp"

#include "candlab/error.hpp"

namespace candlab {

ReviewSession::ReviewSession(std::vector<SimilarityPair> pairs, std::filesystem::path log_path)
    : ReviewSession(std::move(pairs), std::move(log_path), Options{}) {}

ReviewSession::ReviewSession(std::vector<SimilarityPair> pairs, std::filesystem::path log_path, Options options)
    : pairs_(std::move(pairs)), log_path_(std::move(log_path)), options_(std::move(options)) {
  if (!options_.monotonic) options_.monotonic = [] { return std::chrono::steady_clock::now(); };
  if (!options_.wall) {
    options_.wall = [] {
      return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
    };
  }
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    if (!index_.emplace(pairs_[i].pair_id, i).second) {
      throw InvalidArgument("duplicate pair_id '" + pairs_[i].pair_id + "'");
    }
  }
  state_.resize(pairs_.size());
  if (std::filesystem::exists(log_path_)) {
    for (const auto& d : read_decisions_jsonl(log_path_)) {
      auto it = index_.find(d.pair_id);
      if (it == index_.end()) {
        replay_warnings_.push_back("decision for unknown pair '" + d.pair_id + "' ignored");
        continue;
      }
      state_[it->second].decided = true;
    }
  }
}

std::optional<SimilarityPair> ReviewSession::next_pair(const std::string& reviewer) {
  std::lock_guard lock(mutex_);
  const auto now = options_.monotonic();
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    auto& s = state_[i];
    if (s.decided || leased(s, now)) continue;
    s.reviewer = reviewer;
    s.lease_expiry = now + options_.lease;
    return pairs_[i];
  }
  return std::nullopt;
}

ReviewDecision ReviewSession::record_decision(ReviewDecision decision) {
  std::lock_guard lock(mutex_);
  auto it = index_.find(decision.pair_id);
  if (it == index_.end()) throw InvalidArgument("unknown pair_id '" + decision.pair_id + "'");
  if (decision.timestamp_ms == 0) decision.timestamp_ms = options_.wall();
  append_decisions_jsonl(std::span<const ReviewDecision>(&decision, 1), log_path_);
  auto& s = state_[it->second];
  s.decided = true;
  s.lease_expiry.reset();
  return decision;
}

ReviewProgress ReviewSession::progress() const {
  std::lock_guard lock(mutex_);
  const auto now = options_.monotonic();
  ReviewProgress p;
  p.total = pairs_.size();
  for (const auto& s : state_) {
    if (s.decided) {
      ++p.decided;
    } else if (leased(s, now)) {
      ++p.leased;
    } else {
      ++p.pending;
    }
  }
  return p;
}

bool ReviewSession::contains(const std::string& pair_id) const { return index_.count(pair_id) > 0; }

}  // namespace candlab
