#include "candlab/dedup.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "candlab/error.hpp"
#include "candlab/parallel.hpp"

namespace candlab {

using json = nlohmann::ordered_json;

std::string_view to_string(Verdict verdict) noexcept {
  return verdict == Verdict::similar ? "similar" : "distinct";
}

std::optional<Verdict> parse_verdict(std::string_view text) noexcept {
  if (text == "similar") return Verdict::similar;
  if (text == "distinct") return Verdict::distinct;
  return std::nullopt;
}

namespace {

// Luma scaled by 1000 so that all moment sums are exact integers.
struct LumaStats {
  std::vector<std::int32_t> luma;
  std::int64_t sum = 0;
  std::int64_t sum_sq = 0;
};

LumaStats luma_stats(const Image& image) {
  LumaStats s;
  const std::size_t n = std::size_t(image.height) * image.width;
  s.luma.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint8_t* px = &image.pixels[p * image.channels];
    const std::int32_t l = image.channels == 3 ? 299 * px[0] + 587 * px[1] + 114 * px[2] : 1000 * px[0];
    s.luma[p] = l;
    s.sum += l;
    s.sum_sq += std::int64_t(l) * l;
  }
  return s;
}

std::int64_t cross_sum(const LumaStats& a, const LumaStats& b) {
  std::int64_t acc = 0;
  for (std::size_t p = 0; p < a.luma.size(); ++p) acc += std::int64_t(a.luma[p]) * b.luma[p];
  return acc;
}

double ssim_from_sums(const LumaStats& a, const LumaStats& b, std::int64_t cross) {
  // Luma is stored as integers scaled by 1000, so C1 * 1000^2 = 6502500 and
  // C2 * 1000^2 = 58522500 are integers too. Every factor below is the
  // corresponding SSIM term times n^2 * 1000^2, computed exactly.
  using i128 = __int128;
  const auto n = static_cast<i128>(a.luma.size());
  const i128 c1 = 6502500, c2 = 58522500;
  const i128 sa = a.sum, sb = b.sum;
  const i128 lum_num = 2 * sa * sb + c1 * n * n;
  const i128 lum_den = sa * sa + sb * sb + c1 * n * n;
  const i128 con_num = 2 * (n * cross - sa * sb) + c2 * n * n;
  const i128 con_den = (n * a.sum_sq - sa * sa) + (n * b.sum_sq - sb * sb) + c2 * n * n;
  return (static_cast<double>(lum_num) / static_cast<double>(lum_den)) *
         (static_cast<double>(con_num) / static_cast<double>(con_den));
}

std::int64_t l2_squared(const Image& a, const Image& b) {
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const int d = int(a.pixels[i]) - int(b.pixels[i]);
    acc += d * d;
  }
  return acc;
}

void require_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("images differ in dimensions");
}

}  // namespace

double l2_distance(const Image& a, const Image& b) {
  require_same_shape(a, b);
  return std::sqrt(static_cast<double>(l2_squared(a, b)));
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b);
  const auto sa = luma_stats(a);
  const auto sb = luma_stats(b);
  return ssim_from_sums(sa, sb, cross_sum(sa, sb));
}

std::vector<SimilarityPair> scan(const CandidateDataset& test, const CandidateDataset& train, int k,
                                 const ScanOptions& options, std::vector<std::string>* warnings) {
  if (k < 1) throw InvalidArgument("k must be at least 1");
  if (test.empty() || train.empty()) return {};
  if (!test.records.front().image.same_shape(train.records.front().image)) {
    throw DimensionError("test and train images differ in dimensions");
  }
  auto kk = static_cast<std::size_t>(k);
  if (kk > train.size()) {
    if (warnings) {
      warnings->push_back("k = " + std::to_string(k) + " exceeds training set size " + std::to_string(train.size()) +
                          "; clamped");
    }
    kk = train.size();
  }

  std::vector<LumaStats> train_stats(train.size());
  parallel_for(train.size(), options.threads, [&](std::size_t j) { train_stats[j] = luma_stats(train.records[j].image); });

  std::vector<std::vector<SimilarityPair>> per_test(test.size());
  parallel_for(test.size(), options.threads, [&](std::size_t i) {
    const auto& query = test.records[i].image;
    const auto qs = luma_stats(query);
    std::vector<std::int64_t> l2sq(train.size());
    std::vector<double> sim(train.size());
    for (std::size_t j = 0; j < train.size(); ++j) {
      require_same_shape(query, train.records[j].image);
      l2sq[j] = l2_squared(query, train.records[j].image);
      sim[j] = ssim_from_sums(qs, train_stats[j], cross_sum(qs, train_stats[j]));
    }
    std::vector<std::size_t> by_l2(train.size());
    std::iota(by_l2.begin(), by_l2.end(), std::size_t{0});
    auto by_ssim = by_l2;
    std::partial_sort(by_l2.begin(), by_l2.begin() + static_cast<std::ptrdiff_t>(kk), by_l2.end(),
                      [&](std::size_t a, std::size_t b) { return l2sq[a] != l2sq[b] ? l2sq[a] < l2sq[b] : a < b; });
    std::partial_sort(by_ssim.begin(), by_ssim.begin() + static_cast<std::ptrdiff_t>(kk), by_ssim.end(),
                      [&](std::size_t a, std::size_t b) { return sim[a] != sim[b] ? sim[a] > sim[b] : a < b; });

    std::map<std::size_t, SimilarityPair> merged;
    auto entry = [&](std::size_t j) -> SimilarityPair& {
      auto [it, inserted] = merged.try_emplace(j);
      if (inserted) {
        auto& p = it->second;
        p.pair_id = "p" + std::to_string(i) + "-" + std::to_string(j);
        p.test_id = test.records[i].id;
        p.train_id = train.records[j].id;
        p.l2_distance = std::sqrt(static_cast<double>(l2sq[j]));
        p.ssim = sim[j];
      }
      return it->second;
    };
    for (std::size_t r = 0; r < kk; ++r) entry(by_l2[r]).rank_l2 = static_cast<int>(r + 1);
    for (std::size_t r = 0; r < kk; ++r) entry(by_ssim[r]).rank_ssim = static_cast<int>(r + 1);

    std::vector<std::pair<std::size_t, SimilarityPair>> rows(merged.begin(), merged.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return a.second.min_rank() < b.second.min_rank();
    });
    auto& out = per_test[i];
    out.reserve(rows.size());
    for (auto& row : rows) out.push_back(std::move(row.second));
  });

  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return test.records[a].id < test.records[b].id; });
  std::vector<SimilarityPair> pairs;
  for (const auto i : order) {
    for (auto& p : per_test[i]) pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<std::string> auto_flag(std::span<const SimilarityPair> pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) {
    if (p.l2_distance <= kExactL2 || p.ssim >= kExactSsim) out.push_back(p.pair_id);
  }
  return out;
}

std::vector<ReviewDecision> auto_decisions(std::span<const std::string> pair_ids, std::int64_t timestamp_ms) {
  std::vector<ReviewDecision> out;
  for (const auto& id : pair_ids) out.push_back({id, Verdict::similar, "auto_flag", timestamp_ms});
  return out;
}

ApplyResult apply_decisions(const CandidateDataset& train, std::span<const SimilarityPair> pairs,
                            std::span<const ReviewDecision> decisions) {
  ApplyResult result;
  std::unordered_map<std::string, std::size_t> pair_index;
  for (std::size_t i = 0; i < pairs.size(); ++i) pair_index.emplace(pairs[i].pair_id, i);

  std::unordered_map<std::string, std::size_t> latest;  // pair_id -> decision position
  for (std::size_t d = 0; d < decisions.size(); ++d) {
    const auto& decision = decisions[d];
    if (!pair_index.count(decision.pair_id)) {
      throw InvalidArgument("decision refers to unknown pair_id '" + decision.pair_id + "'",
                            "decision " + std::to_string(d));
    }
    auto it = latest.find(decision.pair_id);
    if (it == latest.end()) {
      latest.emplace(decision.pair_id, d);
      continue;
    }
    const auto& current = decisions[it->second];
    if (decision.timestamp_ms == current.timestamp_ms && decision.verdict != current.verdict) {
      result.warnings.push_back("contradictory decisions for pair " + decision.pair_id + " at timestamp " +
                                std::to_string(decision.timestamp_ms) + "; later line wins");
    }
    if (decision.timestamp_ms >= current.timestamp_ms) it->second = d;
  }

  std::unordered_set<std::string> present;
  for (const auto& r : train.records) present.insert(r.id);
  std::unordered_set<std::string> removed;
  for (const auto& p : pairs) {
    auto it = latest.find(p.pair_id);
    if (it == latest.end()) continue;
    const auto& decision = decisions[it->second];
    if (decision.verdict != Verdict::similar) continue;
    if (!present.count(p.train_id) || removed.count(p.train_id)) continue;
    removed.insert(p.train_id);
    result.removals.push_back({p.train_id, p.pair_id, decision.reviewer});
  }

  result.cleaned.num_classes = train.num_classes;
  result.cleaned.class_names = train.class_names;
  result.cleaned.rng_seed = train.rng_seed;
  for (const auto& r : train.records) {
    if (!removed.count(r.id)) result.cleaned.records.push_back(r);
  }
  return result;
}

namespace {

json pair_to_json(const SimilarityPair& p) {
  json j;
  j["pair_id"] = p.pair_id;
  j["test_id"] = p.test_id;
  j["train_id"] = p.train_id;
  j["l2"] = p.l2_distance;
  j["ssim"] = p.ssim;
  j["rank_l2"] = p.rank_l2 ? json(*p.rank_l2) : json();
  j["rank_ssim"] = p.rank_ssim ? json(*p.rank_ssim) : json();
  return j;
}

std::optional<int> optional_int(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<int>();
}

}  // namespace

void write_pairs_jsonl(std::span<const SimilarityPair> pairs, const PairsHeader& header,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pairs", path.string());
  json h;
  h["format"] = "candlab-pairs";
  h["version"] = 1;
  h["l2"] = "euclidean over raw 8-bit intensities";
  h["ssim"] = {{"window", "global"},
               {"luma", {0.299, 0.587, 0.114}},
               {"c1", kSsimC1},
               {"c2", kSsimC2},
               {"moments", "population"}};
  h["k"] = header.k;
  h["test_size"] = header.test_size;
  h["train_size"] = header.train_size;
  out << h.dump() << '\n';
  for (const auto& p : pairs) out << pair_to_json(p).dump() << '\n';
  if (!out) throw IoError("short write", path.string());
}

std::vector<SimilarityPair> read_pairs_jsonl(const std::filesystem::path& path, PairsHeader* header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pairs", path.string());
  std::vector<SimilarityPair> pairs;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      if (j.contains("format")) {
        if (header) {
          header->k = j.value("k", 0);
          header->test_size = j.value("test_size", std::size_t{0});
          header->train_size = j.value("train_size", std::size_t{0});
        }
        continue;
      }
      SimilarityPair p;
      p.pair_id = j.at("pair_id").get<std::string>();
      p.test_id = j.at("test_id").get<std::string>();
      p.train_id = j.at("train_id").get<std::string>();
      p.l2_distance = j.at("l2").get<double>();
      p.ssim = j.at("ssim").get<double>();
      p.rank_l2 = optional_int(j, "rank_l2");
      p.rank_ssim = optional_int(j, "rank_ssim");
      pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw FormatError(std::string("invalid pairs line: ") + e.what(), "line " + std::to_string(number));
    }
  }
  return pairs;
}

std::string decision_to_json(const ReviewDecision& decision) {
  json j;
  j["pair_id"] = decision.pair_id;
  j["verdict"] = std::string(to_string(decision.verdict));
  j["reviewer"] = decision.reviewer;
  j["timestamp"] = decision.timestamp_ms;
  return j.dump();
}

ReviewDecision decision_from_json(std::string_view line) {
  try {
    const auto j = json::parse(line);
    ReviewDecision d;
    d.pair_id = j.at("pair_id").get<std::string>();
    const auto verdict = parse_verdict(j.at("verdict").get<std::string>());
    if (!verdict) throw FormatError("verdict must be 'similar' or 'distinct'");
    d.verdict = *verdict;
    d.reviewer = j.value("reviewer", std::string{});
    d.timestamp_ms = j.value("timestamp", std::int64_t{0});
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid decision: ") + e.what());
  }
}

std::vector<ReviewDecision> read_decisions_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open decisions", path.string());
  std::vector<ReviewDecision> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(decision_from_json(line));
    } catch (const FormatError& e) {
      throw FormatError(e.what(), path.string() + " line " + std::to_string(number));
    }
  }
  return out;
}

void append_decisions_jsonl(std::span<const ReviewDecision> decisions, const std::filesystem::path& path) {
  std::string text;
  for (const auto& d : decisions) text += decision_to_json(d) + "\n";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw IoError(std::string("cannot open decisions log: ") + std::strerror(errno), path.string());
  std::size_t written = 0;
  while (written < text.size()) {
    const auto n = ::write(fd, text.data() + written, text.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw IoError(std::string("write failed: ") + std::strerror(errno), path.string());
    }
    written += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw IoError("fsync failed", path.string());
}

void write_removal_report(std::span<const RemovalEntry> removals, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write removal report", path.string());
  for (const auto& r : removals) {
    json j;
    j["train_id"] = r.train_id;
    j["pair_id"] = r.pair_id;
    j["verdict_source"] = r.verdict_source;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("short write", path.string());
}

}  // namespace candlab
