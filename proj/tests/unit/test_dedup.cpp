#include <doctest.h>

#include <fstream>
#include <map>
#include <random>
#include <set>

#include "candlab/dedup.hpp"
#include "candlab/error.hpp"
#include "oracles.hpp"

using namespace candlab;

namespace {

CandidateDataset random_set(std::size_t n, int side, std::uint64_t seed, const std::string& prefix, int channels = 3) {
  std::mt19937_64 gen(seed);
  CandidateDataset ds;
  ds.num_classes = 2;
  ds.class_names = default_class_names(2);
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r;
    r.id = prefix + std::to_string(i);
    r.label = static_cast<int>(i % 2);
    r.image = oracle::random_image(gen, side, side, channels);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

SimilarityPair pair_of(const std::string& id, const std::string& train_id, double l2 = 50.0, double s = 0.5) {
  SimilarityPair p;
  p.pair_id = id;
  p.test_id = "t";
  p.train_id = train_id;
  p.l2_distance = l2;
  p.ssim = s;
  p.rank_l2 = 1;
  return p;
}

ReviewDecision decide(const std::string& pair, Verdict v, std::int64_t ts, const std::string& who = "alice") {
  return ReviewDecision{pair, v, who, ts};
}

}  // namespace

TEST_CASE("an exact copy ranks first on both metrics") {
  auto train = random_set(20, 8, 1, "tr");
  auto test = random_set(1, 8, 2, "te");
  train.records[7].image = test.records[0].image;
  const auto pairs = scan(test, train, 3);
  REQUIRE_FALSE(pairs.empty());
  const auto& top = pairs.front();
  CHECK(top.train_id == "tr7");
  CHECK(top.l2_distance == 0.0);
  CHECK(top.ssim == 1.0);
  CHECK(top.rank_l2 == 1);
  CHECK(top.rank_ssim == 1);
}

TEST_CASE("ssim properties") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_image(gen, 6, 5, trial % 2 ? 1 : 3);
    const auto b = oracle::random_image(gen, 6, 5, trial % 2 ? 1 : 3);
    CHECK(ssim(a, a) == 1.0);
    CHECK(ssim(a, b) == ssim(b, a));
    CHECK(ssim(a, b) == doctest::Approx(oracle::naive_ssim(a, b)).epsilon(1e-9));
    CHECK(ssim(a, b) <= 1.0);
  }
  Image c1(4, 4, 3), c2(4, 4, 3);
  std::fill(c1.pixels.begin(), c1.pixels.end(), 100);
  std::fill(c2.pixels.begin(), c2.pixels.end(), 100);
  CHECK(ssim(c1, c2) == 1.0);
  std::fill(c2.pixels.begin(), c2.pixels.end(), 0);
  // Constant images: variance terms vanish, leaving the luminance factor.
  CHECK(ssim(c1, c2) == doctest::Approx(kSsimC1 / (100.0 * 100.0 + kSsimC1)).epsilon(1e-12));
}

TEST_CASE("ssim 4x4 hand example") {
  Image a(4, 4, 1), b(4, 4, 1);
  for (int i = 0; i < 16; ++i) {
    a.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i * 16);
    b.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(255 - i * 16);
  }
  // a: 0..240 step 16, mean 120, population variance 16^2 * (16^2 - 1) / 12 = 5440.
  // b = 255 - a: mean 135, same variance, covariance -5440.
  const double ma = 120.0, mb = 135.0, v = 5440.0, cov = -5440.0;
  const double want = ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) / ((ma * ma + mb * mb + kSsimC1) * (2 * v + kSsimC2));
  CHECK(ssim(a, b) == doctest::Approx(want).epsilon(1e-9));
  CHECK(ssim(a, b) < 0.0);
}

TEST_CASE("l2 axioms") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_image(gen, 5, 5, 3);
    const auto b = oracle::random_image(gen, 5, 5, 3);
    const auto c = oracle::random_image(gen, 5, 5, 3);
    CHECK(l2_distance(a, a) == 0.0);
    CHECK(l2_distance(a, b) == l2_distance(b, a));
    CHECK(l2_distance(a, b) > 0.0);
    CHECK(l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-12);
    CHECK(l2_distance(a, b) == doctest::Approx(oracle::naive_l2(a, b)).epsilon(1e-12));
  }
  Image small(2, 2, 3), big(3, 3, 3);
  CHECK_THROWS_AS(l2_distance(small, big), DimensionError);
  CHECK_THROWS_AS(ssim(small, big), DimensionError);
}

TEST_CASE("scan equals brute force") {
  const auto test = random_set(50, 8, 5, "te");
  auto train = random_set(1000, 8, 6, "tr");
  // Duplicate training images create exact ties that must break by index.
  train.records[500].image = train.records[10].image;
  train.records[900].image = test.records[3].image;
  const std::size_t k = 10;
  const auto pairs = scan(test, train, static_cast<int>(k));
  const auto want = oracle::brute_force_neighbors(test, train, k);

  std::map<std::string, std::size_t> train_index;
  for (std::size_t j = 0; j < train.size(); ++j) train_index[train.records[j].id] = j;
  std::map<std::string, std::size_t> test_index;
  for (std::size_t i = 0; i < test.size(); ++i) test_index[test.records[i].id] = i;

  std::vector<std::vector<std::size_t>> by_l2(test.size(), std::vector<std::size_t>(k)),
      by_ssim(test.size(), std::vector<std::size_t>(k));
  std::set<std::string> ids;
  for (const auto& p : pairs) {
    CHECK(ids.insert(p.pair_id).second);
    const auto i = test_index.at(p.test_id);
    const auto j = train_index.at(p.train_id);
    CHECK(p.l2_distance == doctest::Approx(oracle::naive_l2(test.records[i].image, train.records[j].image)));
    CHECK(p.ssim == doctest::Approx(oracle::naive_ssim(test.records[i].image, train.records[j].image)).epsilon(1e-9));
    REQUIRE((p.rank_l2 || p.rank_ssim));
    if (p.rank_l2) by_l2[i][static_cast<std::size_t>(*p.rank_l2 - 1)] = j;
    if (p.rank_ssim) by_ssim[i][static_cast<std::size_t>(*p.rank_ssim - 1)] = j;
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(by_l2[i] == want[i].by_l2);
    CHECK(by_ssim[i] == want[i].by_ssim);
  }

  // Output order: grouped by test id, then best rank.
  for (std::size_t n = 1; n < pairs.size(); ++n) {
    const auto& a = pairs[n - 1];
    const auto& b = pairs[n];
    CHECK(a.test_id <= b.test_id);
    if (a.test_id == b.test_id) CHECK(a.min_rank() <= b.min_rank());
  }
  ScanOptions serial;
  serial.threads = 1;
  CHECK(scan(test, train, static_cast<int>(k), serial) == pairs);
}

TEST_CASE("k larger than the training set is clamped with a warning") {
  const auto test = random_set(2, 4, 7, "te");
  const auto train = random_set(3, 4, 8, "tr");
  std::vector<std::string> warnings;
  const auto pairs = scan(test, train, 10, {}, &warnings);
  CHECK(pairs.size() == 6);
  CHECK(warnings.size() == 1);
  CHECK_THROWS_AS(scan(test, train, 0), InvalidArgument);
  CHECK(scan(CandidateDataset{}, train, 3).empty());
  const auto gray = random_set(2, 4, 9, "g", 1);
  CHECK_THROWS_AS(scan(gray, train, 3), DimensionError);
}

TEST_CASE("auto flag") {
  std::vector<SimilarityPair> pairs{pair_of("a", "x", 7.69, 0.99), pair_of("b", "y", 0.0, 1.0),
                                    pair_of("c", "z", 3.0, 1.0), pair_of("d", "w", 1e-7, 0.9)};
  CHECK(auto_flag(pairs) == std::vector<std::string>{"b", "c", "d"});
  const auto decisions = auto_decisions(auto_flag(pairs), 42);
  REQUIRE(decisions.size() == 3);
  CHECK(decisions[0].verdict == Verdict::similar);
  CHECK(decisions[0].reviewer == "auto_flag");
  CHECK(decisions[0].timestamp_ms == 42);

  auto train = random_set(200, 8, 10, "tr");
  const auto test = random_set(20, 8, 11, "te");
  for (int i = 0; i < 5; ++i) train.records[static_cast<std::size_t>(40 * i + 3)].image = test.records[static_cast<std::size_t>(i)].image;
  const auto found = auto_flag(scan(test, train, 5));
  CHECK(found.size() == 5);
}

TEST_CASE("apply decisions") {
  auto train = random_set(6, 2, 12, "tr");

  SUBCASE("no decisions keeps everything") {
    const std::vector<SimilarityPair> pairs{pair_of("p1", "tr1")};
    const auto r = apply_decisions(train, pairs, {});
    CHECK(r.cleaned == train);
    CHECK(r.removals.empty());
  }
  SUBCASE("three similar pairs on one training id remove it once") {
    const std::vector<SimilarityPair> pairs{pair_of("p1", "tr2"), pair_of("p2", "tr2"), pair_of("p3", "tr2")};
    const std::vector<ReviewDecision> d{decide("p1", Verdict::similar, 1), decide("p2", Verdict::similar, 2),
                                        decide("p3", Verdict::similar, 3, "bob")};
    const auto r = apply_decisions(train, pairs, d);
    CHECK(r.cleaned.size() == 5);
    REQUIRE(r.removals.size() == 1);
    CHECK(r.removals[0].train_id == "tr2");
    CHECK(r.removals[0].pair_id == "p1");
    CHECK(r.removals[0].verdict_source == "alice");
  }
  SUBCASE("ten pairs, four similar over three ids") {
    std::vector<SimilarityPair> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back(pair_of("p" + std::to_string(i), "tr" + std::to_string(i % 6)));
    std::vector<ReviewDecision> d;
    for (int i = 0; i < 10; ++i) d.push_back(decide("p" + std::to_string(i), Verdict::distinct, 1));
    for (const int i : {0, 1, 6, 3}) d.push_back(decide("p" + std::to_string(i), Verdict::similar, 2));
    const auto r = apply_decisions(train, pairs, d);
    // p0 and p6 both point at tr0.
    CHECK(r.removals.size() == 3);
    CHECK(r.cleaned.size() == 3);
    std::vector<std::string> kept;
    for (const auto& rec : r.cleaned.records) kept.push_back(rec.id);
    CHECK(kept == std::vector<std::string>{"tr2", "tr4", "tr5"});
    const auto again = apply_decisions(r.cleaned, pairs, d);
    CHECK(again.cleaned == r.cleaned);
    CHECK(again.removals.empty());
  }
  SUBCASE("latest decision wins") {
    const std::vector<SimilarityPair> pairs{pair_of("p1", "tr1")};
    const std::vector<ReviewDecision> flip{decide("p1", Verdict::distinct, 5), decide("p1", Verdict::similar, 3)};
    CHECK(apply_decisions(train, pairs, flip).removals.empty());
    const std::vector<ReviewDecision> later{decide("p1", Verdict::distinct, 3), decide("p1", Verdict::similar, 5)};
    CHECK(apply_decisions(train, pairs, later).removals.size() == 1);
  }
  SUBCASE("simultaneous conflicting decisions warn and take the later line") {
    const std::vector<SimilarityPair> pairs{pair_of("p1", "tr1")};
    const std::vector<ReviewDecision> d{decide("p1", Verdict::similar, 5), decide("p1", Verdict::distinct, 5, "bob")};
    const auto r = apply_decisions(train, pairs, d);
    CHECK(r.removals.empty());
    CHECK(r.warnings.size() == 1);
  }
  SUBCASE("unknown pair id") {
    const std::vector<SimilarityPair> pairs{pair_of("p1", "tr1")};
    const std::vector<ReviewDecision> d{decide("nope", Verdict::similar, 1)};
    CHECK_THROWS_AS(apply_decisions(train, pairs, d), InvalidArgument);
  }
}

TEST_CASE("verdict strings") {
  CHECK(to_string(Verdict::similar) == "similar");
  CHECK(parse_verdict("distinct") == Verdict::distinct);
  CHECK_FALSE(parse_verdict("maybe").has_value());
}

TEST_CASE("pairs and decisions files round trip") {
  oracle::TempDir dir("dedup");
  const auto test = random_set(4, 6, 13, "te");
  const auto train = random_set(30, 6, 14, "tr");
  const auto pairs = scan(test, train, 3);
  write_pairs_jsonl(pairs, PairsHeader{3, 4, 30}, dir / "pairs.jsonl");
  PairsHeader header;
  const auto back = read_pairs_jsonl(dir / "pairs.jsonl", &header);
  CHECK(header.k == 3);
  CHECK(header.train_size == 30);
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].pair_id == pairs[i].pair_id);
    CHECK(back[i].rank_l2 == pairs[i].rank_l2);
    CHECK(back[i].rank_ssim == pairs[i].rank_ssim);
    CHECK(back[i].l2_distance == pairs[i].l2_distance);
    CHECK(back[i].ssim == pairs[i].ssim);
  }

  const std::vector<ReviewDecision> d1{decide(pairs[0].pair_id, Verdict::similar, 10)};
  const std::vector<ReviewDecision> d2{decide(pairs[1].pair_id, Verdict::distinct, 11, "bob")};
  append_decisions_jsonl(d1, dir / "decisions.jsonl");
  append_decisions_jsonl(d2, dir / "decisions.jsonl");
  const auto all = read_decisions_jsonl(dir / "decisions.jsonl");
  REQUIRE(all.size() == 2);
  CHECK(all[0] == d1[0]);
  CHECK(all[1] == d2[0]);
  CHECK(decision_from_json(decision_to_json(d2[0])) == d2[0]);
  CHECK_THROWS_AS(decision_from_json("{\"pair_id\":\"x\",\"verdict\":\"maybe\"}"), FormatError);

  std::ofstream(dir / "junk.jsonl") << "not json\n";
  CHECK_THROWS_AS(read_pairs_jsonl(dir / "junk.jsonl"), FormatError);
}
