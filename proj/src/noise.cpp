#include "candlab/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "candlab/error.hpp"
#include "candlab/rng.hpp"

namespace candlab {

void NoiseSpec::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidArgument("noise rate must be in [0, 1]");
  if (kind == NoiseKind::structured) {
    if (cluster_count < 1) throw InvalidArgument("cluster_count must be at least 1");
    if (!(ood_fraction >= 0.0 && ood_fraction <= 1.0)) throw InvalidArgument("ood_fraction must be in [0, 1]");
  }
}

std::vector<std::size_t> NoiseLedger::flipped_indices() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries) out.push_back(e.index);
  return out;
}

std::vector<int> NoiseLedger::original_labels() const {
  std::vector<int> out;
  for (const auto& e : entries) out.push_back(e.original);
  return out;
}

std::vector<int> NoiseLedger::assigned_labels() const {
  std::vector<int> out;
  for (const auto& e : entries) out.push_back(e.assigned);
  return out;
}

void NoiseLedger::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].assigned == entries[i].original) {
      throw InvalidArgument("ledger entry keeps its original label", "index " + std::to_string(entries[i].index));
    }
    if (i > 0 && entries[i].index <= entries[i - 1].index) throw InvalidArgument("ledger indices not strictly increasing");
  }
}

std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

namespace {

void check_labels(std::span<const int> labels, int num_classes) {
  for (const int l : labels) {
    if (l < 0 || l >= num_classes) throw InvalidArgument("label out of range");
  }
}

void sort_ledger(NoiseLedger& ledger) {
  std::sort(ledger.entries.begin(), ledger.entries.end(),
            [](const auto& a, const auto& b) { return a.index < b.index; });
}

}  // namespace

NoiseLedger plan_uniform_flip(std::span<const int> labels, int num_classes, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidArgument("noise rate must be in [0, 1]");
  check_labels(labels, num_classes);
  NoiseLedger ledger;
  if (rate == 0.0) return ledger;
  if (num_classes < 2) throw InvalidArgument("label flipping needs at least two classes");

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  for (int c = 0; c < num_classes; ++c) {
    const auto& members = by_class[static_cast<std::size_t>(c)];
    const std::size_t count = round_half_up(rate * static_cast<double>(members.size()));
    for (const auto pick : sample_without_replacement(members.size(), count, rng)) {
      const int u = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(num_classes - 1)));
      ledger.entries.push_back({members[pick], c, u < c ? u : u + 1, false, std::nullopt});
    }
  }
  sort_ledger(ledger);
  return ledger;
}

NoiseLedger plan_structured(std::span<const int> labels, int num_classes, const NoiseSpec& spec) {
  spec.validate();
  check_labels(labels, num_classes);
  NoiseLedger ledger;
  const std::size_t corrupt = round_half_up(spec.rate * static_cast<double>(labels.size()));
  if (corrupt == 0) return ledger;
  if (num_classes < 2) throw InvalidArgument("structured noise needs at least two classes");
  const auto groups = static_cast<std::size_t>(spec.cluster_count);
  if (groups > corrupt) {
    throw InvalidArgument("cluster_count (" + std::to_string(groups) + ") exceeds the number of corrupted records (" +
                          std::to_string(corrupt) + ")");
  }

  Rng rng(spec.seed);
  std::vector<int> classes(static_cast<std::size_t>(num_classes));
  std::iota(classes.begin(), classes.end(), 0);
  shuffle(classes, rng);
  std::vector<int> target(groups);
  for (std::size_t g = 0; g < groups; ++g) target[g] = classes[g % classes.size()];

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (groups >= 2 || labels[i] != target[0]) eligible.push_back(i);
  }
  if (eligible.size() < corrupt) throw InvalidArgument("not enough records with a valid wrong target label");

  std::vector<std::vector<std::size_t>> members(groups);
  for (const auto pick : sample_without_replacement(eligible.size(), corrupt, rng)) {
    const std::size_t index = eligible[pick];
    std::size_t best = groups;
    for (std::size_t g = 0; g < groups; ++g) {
      if (target[g] == labels[index]) continue;
      if (best == groups || members[g].size() < members[best].size()) best = g;
    }
    members[best].push_back(index);
  }
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t ood = round_half_up(spec.ood_fraction * static_cast<double>(members[g].size()));
    for (std::size_t j = 0; j < members[g].size(); ++j) {
      const auto index = members[g][j];
      ledger.entries.push_back({index, labels[index], target[g], j < ood, static_cast<int>(g)});
    }
  }
  sort_ledger(ledger);
  return ledger;
}

MixPlan plan_mix(std::span<const int> clean_labels, std::span<const int> noisy_labels, double fraction, int ratio,
                 std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("mixing fraction must be in [0, 1]");
  if (ratio < 1) throw InvalidArgument("mixing ratio must be at least 1");
  MixPlan plan;
  const std::size_t n = clean_labels.size();
  plan.removed = round_half_up(fraction * static_cast<double>(n));
  const std::size_t wanted = plan.removed * static_cast<std::size_t>(ratio);
  if (noisy_labels.size() < wanted) {
    throw InvalidArgument("insufficient noisy records: need " + std::to_string(wanted) + ", have " +
                          std::to_string(noisy_labels.size()));
  }

  Rng rng(seed);
  auto removed = sample_without_replacement(n, plan.removed, rng);
  std::vector<bool> is_removed(n, false);
  std::map<int, std::size_t> removed_per_class;
  for (const auto i : removed) {
    is_removed[i] = true;
    ++removed_per_class[clean_labels[i]];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_removed[i]) plan.kept_clean.push_back(i);
  }

  std::map<int, std::vector<std::size_t>> noisy_by_class;
  for (std::size_t i = 0; i < noisy_labels.size(); ++i) noisy_by_class[noisy_labels[i]].push_back(i);
  std::vector<bool> taken(noisy_labels.size(), false);
  std::size_t shortfall = 0;
  for (const auto& [cls, count] : removed_per_class) {
    const std::size_t need = count * static_cast<std::size_t>(ratio);
    auto& pool = noisy_by_class[cls];
    const std::size_t take = std::min(need, pool.size());
    for (const auto pick : sample_without_replacement(pool.size(), take, rng)) {
      taken[pool[pick]] = true;
      plan.added_noisy.push_back(pool[pick]);
    }
    shortfall += need - take;
  }
  if (shortfall > 0) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < noisy_labels.size(); ++i) {
      if (!taken[i]) rest.push_back(i);
    }
    for (const auto pick : sample_without_replacement(rest.size(), shortfall, rng)) plan.added_noisy.push_back(rest[pick]);
  }
  std::sort(plan.added_noisy.begin(), plan.added_noisy.end());
  return plan;
}

std::pair<CandidateDataset, NoiseLedger> flip_uniform(const CandidateDataset& dataset, double rate, std::uint64_t seed) {
  const auto labels = dataset.labels();
  auto ledger = plan_uniform_flip(labels, dataset.num_classes, rate, seed);
  CandidateDataset out = dataset;
  if (ledger.empty() && rate == 0.0) return {std::move(out), std::move(ledger)};
  out.rng_seed = seed;
  for (auto& r : out.records) r.clean = true;
  for (const auto& e : ledger.entries) {
    auto& r = out.records[e.index];
    r.label = e.assigned;
    r.clean = false;
  }
  return {std::move(out), std::move(ledger)};
}

namespace {

double smooth_field(const std::vector<double>& coef, int y, int x, int c, int height, int width) {
  // coef holds 3 x 3 amplitudes followed by 2 phases, per channel.
  const std::size_t base = static_cast<std::size_t>(c) * 11;
  double v = 0.0;
  for (int u = 0; u < 3; ++u) {
    for (int w = 0; w < 3; ++w) {
      v += coef[base + static_cast<std::size_t>(u * 3 + w)] *
           std::cos(std::numbers::pi * u * (y + 0.5) / height + coef[base + 9]) *
           std::cos(std::numbers::pi * w * (x + 0.5) / width + coef[base + 10]);
    }
  }
  return v;
}

std::vector<double> random_field_coefficients(Rng& rng, int channels) {
  std::vector<double> coef(static_cast<std::size_t>(channels) * 11);
  for (int c = 0; c < channels; ++c) {
    for (int t = 0; t < 9; ++t) coef[static_cast<std::size_t>(c * 11 + t)] = standard_normal(rng) / 3.0;
    coef[static_cast<std::size_t>(c * 11 + 9)] = uniform_real(rng) * 2.0 * std::numbers::pi;
    coef[static_cast<std::size_t>(c * 11 + 10)] = uniform_real(rng) * 2.0 * std::numbers::pi;
  }
  return coef;
}

}  // namespace

CandidateDataset make_distractor_pool(std::span<const std::size_t> per_theme, int height, int width, int channels,
                                      std::uint64_t seed) {
  if (height <= 0 || width <= 0 || (channels != 1 && channels != 3)) throw InvalidArgument("invalid image shape");
  CandidateDataset pool;
  pool.num_classes = 1;
  pool.class_names = {"distractor"};
  pool.rng_seed = seed;
  Rng rng(seed);
  for (std::size_t t = 0; t < per_theme.size(); ++t) {
    const auto theme = random_field_coefficients(rng, channels);
    for (std::size_t j = 0; j < per_theme[t]; ++j) {
      const auto member = random_field_coefficients(rng, channels);
      ImageRecord r;
      r.id = "distractor-" + std::to_string(t) + "-" + std::to_string(j);
      r.keyword = "distractor-" + std::to_string(t);
      r.source = Source::synthetic;
      r.image = Image(height, width, channels);
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          for (int c = 0; c < channels; ++c) {
            const double v = 128.0 + 70.0 * smooth_field(theme, y, x, c, height, width) +
                             25.0 * smooth_field(member, y, x, c, height, width) + 6.0 * standard_normal(rng);
            r.image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
          }
        }
      }
      pool.records.push_back(std::move(r));
    }
  }
  return pool;
}

std::pair<CandidateDataset, NoiseLedger> make_structured(const CandidateDataset& dataset, const NoiseSpec& spec,
                                                         const CandidateDataset* distractors) {
  if (spec.kind != NoiseKind::structured) throw InvalidArgument("make_structured needs a structured noise spec");
  const auto labels = dataset.labels();
  auto ledger = plan_structured(labels, dataset.num_classes, spec);
  CandidateDataset out = dataset;
  if (ledger.empty()) return {std::move(out), std::move(ledger)};

  const auto groups = static_cast<std::size_t>(spec.cluster_count);
  std::vector<std::size_t> ood_per_group(groups, 0);
  for (const auto& e : ledger.entries) {
    if (e.ood) ++ood_per_group[static_cast<std::size_t>(*e.cluster)];
  }

  CandidateDataset generated;
  if (!distractors && std::any_of(ood_per_group.begin(), ood_per_group.end(), [](auto n) { return n > 0; })) {
    generated = make_distractor_pool(ood_per_group, dataset.height(), dataset.width(), dataset.channels(),
                                     derive_seed(spec.seed, "distractor-pool"));
    distractors = &generated;
  }

  // Themes in first-appearance order of keyword.
  std::vector<std::vector<std::size_t>> themes;
  if (distractors) {
    std::map<std::string, std::size_t> theme_of;
    for (std::size_t i = 0; i < distractors->size(); ++i) {
      const auto& rec = distractors->records[i];
      if (!rec.image.same_shape(dataset.records.front().image)) {
        throw DimensionError("distractor image shape differs from dataset", rec.id);
      }
      auto [it, inserted] = theme_of.emplace(rec.keyword, themes.size());
      if (inserted) themes.emplace_back();
      themes[it->second].push_back(i);
    }
  }
  std::vector<std::size_t> needed(themes.size(), 0);
  for (std::size_t g = 0; g < groups; ++g) {
    if (ood_per_group[g] == 0) continue;
    if (themes.empty()) throw InvalidArgument("distractor pool is empty");
    needed[g % themes.size()] += ood_per_group[g];
  }
  Rng rng(derive_seed(spec.seed, "distractor-draw"));
  std::vector<std::vector<std::size_t>> draws(themes.size());
  for (std::size_t t = 0; t < themes.size(); ++t) {
    if (needed[t] > themes[t].size()) {
      throw InvalidArgument("distractor pool smaller than required: theme " + std::to_string(t) + " has " +
                            std::to_string(themes[t].size()) + ", need " + std::to_string(needed[t]));
    }
    for (const auto pick : sample_without_replacement(themes[t].size(), needed[t], rng)) {
      draws[t].push_back(themes[t][pick]);
    }
  }

  std::vector<std::size_t> cursor(themes.size(), 0);
  out.rng_seed = spec.seed;
  for (auto& r : out.records) r.clean = true;
  for (const auto& e : ledger.entries) {
    auto& r = out.records[e.index];
    r.label = e.assigned;
    r.clean = false;
    if (e.ood) {
      const std::size_t t = static_cast<std::size_t>(*e.cluster) % themes.size();
      const auto& donor = distractors->records[draws[t][cursor[t]++]];
      r.image = donor.image;
      r.keyword = donor.keyword;
      r.source = Source::synthetic;
      r.origin.clear();
    }
  }
  return {std::move(out), std::move(ledger)};
}

CandidateDataset mix(const CandidateDataset& clean, const CandidateDataset& noisy, double fraction, int ratio,
                     std::uint64_t seed) {
  if (clean.num_classes != noisy.num_classes) throw InvalidArgument("clean and noisy datasets differ in class count");
  if (!clean.empty() && !noisy.empty() && !clean.records.front().image.same_shape(noisy.records.front().image)) {
    throw DimensionError("clean and noisy images differ in shape");
  }
  const auto plan = plan_mix(clean.labels(), noisy.labels(), fraction, ratio, seed);
  CandidateDataset out = select(clean, plan.kept_clean);
  if (plan.removed == 0) return out;
  out.rng_seed = seed;
  std::map<std::string, bool> ids;
  for (const auto& r : out.records) ids[r.id] = true;
  for (const auto i : plan.added_noisy) {
    ImageRecord r = noisy.records[i];
    while (ids.count(r.id)) r.id += "#noisy";
    ids[r.id] = true;
    out.records.push_back(std::move(r));
  }
  return out;
}

CandidateDataset revert_labels(const CandidateDataset& dataset, const NoiseLedger& ledger) {
  CandidateDataset out = dataset;
  for (const auto& e : ledger.entries) {
    if (e.index >= out.size()) throw InvalidArgument("ledger index out of range");
    if (out.records[e.index].label != e.assigned) {
      throw InvalidArgument("record label does not match ledger", "index " + std::to_string(e.index));
    }
    out.records[e.index].label = e.original;
  }
  return out;
}

void write_ledger_jsonl(const NoiseLedger& ledger, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ledger", path.string());
  for (const auto& e : ledger.entries) {
    nlohmann::ordered_json j;
    j["index"] = e.index;
    j["original"] = e.original;
    j["assigned"] = e.assigned;
    j["ood"] = e.ood;
    if (e.cluster) j["cluster"] = *e.cluster;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("short write", path.string());
}

NoiseLedger read_ledger_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ledger", path.string());
  NoiseLedger ledger;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      NoiseLedgerEntry e;
      e.index = j.at("index").get<std::size_t>();
      e.original = j.at("original").get<int>();
      e.assigned = j.at("assigned").get<int>();
      e.ood = j.value("ood", false);
      if (j.contains("cluster") && !j.at("cluster").is_null()) e.cluster = j.at("cluster").get<int>();
      ledger.entries.push_back(e);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("invalid ledger line: ") + e.what(), "line " + std::to_string(number));
    }
  }
  return ledger;
}

}  // namespace candlab
