#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "candlab/error.hpp"
#include "candlab/noise.hpp"
#include "oracles.hpp"

using namespace candlab;

namespace {

CandidateDataset small_dataset(int classes, std::size_t per_class, std::uint64_t seed, int side = 4) {
  std::mt19937_64 gen(seed);
  CandidateDataset ds;
  ds.num_classes = classes;
  ds.class_names = default_class_names(classes);
  for (int c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < per_class; ++j) {
      ImageRecord r;
      r.id = "c" + std::to_string(c) + "-" + std::to_string(j);
      r.label = c;
      r.keyword = ds.class_names[static_cast<std::size_t>(c)];
      r.image = oracle::random_image(gen, side, side, 3);
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

std::vector<int> labels_per_class(int classes, std::size_t per_class) {
  std::vector<int> out;
  for (int c = 0; c < classes; ++c) out.insert(out.end(), per_class, c);
  return out;
}

}  // namespace

TEST_CASE("round half up") {
  CHECK(round_half_up(0.5) == 1);
  CHECK(round_half_up(1.49) == 1);
  CHECK(round_half_up(2.5) == 3);
  CHECK(round_half_up(0.0) == 0);
}

TEST_CASE("rate zero is the identity") {
  const auto ds = small_dataset(3, 5, 1);
  const auto [out, ledger] = flip_uniform(ds, 0.0, 7);
  CHECK(ledger.empty());
  CHECK(out == ds);
}

TEST_CASE("uniform flip corrupts exactly the rounded count per class") {
  const auto labels = labels_per_class(10, 1000);
  const auto ledger = plan_uniform_flip(labels, 10, 0.45, 3);
  ledger.validate();
  std::vector<std::size_t> per_class(10, 0);
  std::map<int, std::size_t> targets;
  for (const auto& e : ledger.entries) {
    CHECK(e.original == labels[e.index]);
    CHECK(e.assigned != e.original);
    CHECK_FALSE(e.ood);
    ++per_class[static_cast<std::size_t>(e.original)];
    ++targets[e.assigned];
  }
  for (const auto n : per_class) CHECK(n == 450);
  // Targets are uniform over the other classes: each gets about 450.
  for (const auto& [cls, n] : targets) CHECK(n > 350);

  const auto uneven = plan_uniform_flip(labels_per_class(3, 7), 3, 0.5, 4);
  CHECK(uneven.size() == 12);  // round_half_up(3.5) = 4 per class
}

TEST_CASE("rate one with two classes swaps every label") {
  const auto ds = small_dataset(2, 6, 2);
  const auto [out, ledger] = flip_uniform(ds, 1.0, 5);
  CHECK(ledger.size() == 12);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(out.records[i].label == 1 - ds.records[i].label);
    CHECK(out.records[i].clean == false);
    CHECK(out.records[i].image == ds.records[i].image);
  }
}

TEST_CASE("flip sets clean flags and revert restores labels") {
  const auto ds = small_dataset(4, 20, 3);
  const auto [out, ledger] = flip_uniform(ds, 0.3, 11);
  const auto flipped = ledger.flipped_indices();
  const std::set<std::size_t> f(flipped.begin(), flipped.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out.records[i].clean == !f.count(i));
    CHECK((out.records[i].label != ds.records[i].label) == (f.count(i) == 1));
  }
  CHECK(ledger.size() == 24);
  const auto back = revert_labels(out, ledger);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.records[i].label == ds.records[i].label);
  CHECK_THROWS_AS(revert_labels(ds, ledger), InvalidArgument);
}

TEST_CASE("noise plans are deterministic in the seed") {
  const auto labels = labels_per_class(5, 40);
  CHECK(plan_uniform_flip(labels, 5, 0.4, 9) == plan_uniform_flip(labels, 5, 0.4, 9));
  CHECK_FALSE(plan_uniform_flip(labels, 5, 0.4, 9) == plan_uniform_flip(labels, 5, 0.4, 10));
  NoiseSpec spec{NoiseKind::structured, 0.3, 12, 3, 0.5};
  CHECK(plan_structured(labels, 5, spec) == plan_structured(labels, 5, spec));
}

TEST_CASE("structured groups share one wrong label") {
  const auto labels = labels_per_class(10, 100);
  NoiseSpec spec{NoiseKind::structured, 0.2, 21, 4, 0.5};
  const auto ledger = plan_structured(labels, 10, spec);
  ledger.validate();
  CHECK(ledger.size() == 200);
  std::map<int, std::set<int>> targets;
  std::map<int, std::size_t> sizes, ood;
  for (const auto& e : ledger.entries) {
    REQUIRE(e.cluster.has_value());
    targets[*e.cluster].insert(e.assigned);
    ++sizes[*e.cluster];
    ood[*e.cluster] += e.ood;
    CHECK(e.assigned != e.original);
  }
  CHECK(targets.size() == 4);
  std::set<int> distinct;
  for (const auto& [g, t] : targets) {
    CHECK(t.size() == 1);
    distinct.insert(*t.begin());
  }
  CHECK(distinct.size() == 4);
  for (const auto& [g, n] : sizes) {
    CHECK(n == 50);
    CHECK(ood[g] == 25);
  }
}

TEST_CASE("structured noise errors") {
  const auto labels = labels_per_class(3, 2);
  NoiseSpec spec{NoiseKind::structured, 0.5, 1, 4, 0.0};
  CHECK_THROWS_AS(plan_structured(labels, 3, spec), InvalidArgument);  // 3 corrupted, 4 groups
  spec.cluster_count = 0;
  CHECK_THROWS_AS(plan_structured(labels, 3, spec), InvalidArgument);
  spec.cluster_count = 1;
  spec.ood_fraction = 1.5;
  CHECK_THROWS_AS(plan_structured(labels, 3, spec), InvalidArgument);

  const auto ds = small_dataset(3, 10, 4);
  NoiseSpec ood{NoiseKind::structured, 0.4, 2, 2, 1.0};
  const std::vector<std::size_t> tiny{1, 1};
  const auto pool = make_distractor_pool(tiny, 4, 4, 3, 5);
  CHECK_THROWS_AS(make_structured(ds, ood, &pool), InvalidArgument);
  const std::vector<std::size_t> wrong_shape{20};
  const auto big = make_distractor_pool(wrong_shape, 5, 5, 3, 5);
  CHECK_THROWS_AS(make_structured(ds, ood, &big), DimensionError);
}

TEST_CASE("structured noise replaces OOD pixels from the group's theme") {
  const auto ds = small_dataset(4, 25, 6, 8);
  NoiseSpec spec{NoiseKind::structured, 0.4, 3, 2, 1.0};
  const auto [out, ledger] = make_structured(ds, spec);
  CHECK(ledger.size() == 40);
  std::map<int, std::set<std::string>> keywords;
  for (const auto& e : ledger.entries) {
    const auto& r = out.records[e.index];
    CHECK(r.label == e.assigned);
    CHECK(r.source == Source::synthetic);
    CHECK(r.image != ds.records[e.index].image);
    CHECK(r.clean == false);
    keywords[*e.cluster].insert(r.keyword);
  }
  CHECK(keywords.size() == 2);
  CHECK(keywords[0].size() == 1);
  CHECK(keywords[1].size() == 1);
  CHECK(*keywords[0].begin() != *keywords[1].begin());
  const auto again = make_structured(ds, spec);
  CHECK(again.first == out);
}

TEST_CASE("mix size law") {
  const auto clean = labels_per_class(10, 20);
  const auto noisy = labels_per_class(10, 200);
  for (const double f : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    for (const int r : {1, 10}) {
      const auto plan = plan_mix(clean, noisy, f, r, 8);
      const auto removed = round_half_up(f * 200.0);
      CHECK(plan.removed == removed);
      CHECK(plan.kept_clean.size() == 200 - removed);
      CHECK(plan.added_noisy.size() == removed * static_cast<std::size_t>(r));
      CHECK(std::set<std::size_t>(plan.added_noisy.begin(), plan.added_noisy.end()).size() == plan.added_noisy.size());
      // Class counts of the added records follow the removed ones.
      std::vector<int> removed_count(10, 0), added_count(10, 0);
      std::set<std::size_t> kept(plan.kept_clean.begin(), plan.kept_clean.end());
      for (std::size_t i = 0; i < clean.size(); ++i) {
        if (!kept.count(i)) ++removed_count[static_cast<std::size_t>(clean[i])];
      }
      for (const auto i : plan.added_noisy) ++added_count[static_cast<std::size_t>(noisy[i])];
      for (int c = 0; c < 10; ++c) CHECK(added_count[c] == removed_count[c] * r);
    }
  }
}

TEST_CASE("mix examples") {
  const auto clean = small_dataset(2, 10, 1);
  auto noisy = small_dataset(2, 50, 2);
  const auto none = mix(clean, noisy, 0.0, 10, 3);
  CHECK(none == clean);
  const auto half = mix(clean, noisy, 0.5, 10, 3);
  CHECK(half.size() == 10 + 100);
  const auto all = mix(clean, noisy, 1.0, 1, 3);
  CHECK(all.size() == 20);
  std::set<std::string> ids;
  for (const auto& r : all.records) ids.insert(r.id);
  CHECK(ids.size() == 20);  // colliding ids were renamed
  CHECK_THROWS_AS(mix(clean, noisy, 1.0, 10, 3), InvalidArgument);
  CHECK_THROWS_AS(mix(clean, noisy, 1.5, 1, 3), InvalidArgument);
  CHECK_THROWS_AS(mix(clean, noisy, 0.5, 0, 3), InvalidArgument);
  CHECK(mix(clean, noisy, 0.5, 10, 3) == half);
}

TEST_CASE("ledger JSONL round trip") {
  oracle::TempDir dir("ledger");
  NoiseSpec spec{NoiseKind::structured, 0.3, 4, 3, 0.5};
  const auto ledger = plan_structured(labels_per_class(5, 20), 5, spec);
  write_ledger_jsonl(ledger, dir / "l.jsonl");
  CHECK(read_ledger_jsonl(dir / "l.jsonl") == ledger);
  const auto flat = plan_uniform_flip(labels_per_class(5, 20), 5, 0.3, 4);
  write_ledger_jsonl(flat, dir / "f.jsonl");
  CHECK(read_ledger_jsonl(dir / "f.jsonl") == flat);
}
