#include "candlab/experiment.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "candlab/dedup.hpp"
#include "candlab/error.hpp"
#include "candlab/featurizer.hpp"
#include "candlab/report.hpp"
#include "candlab/synthetic.hpp"

namespace candlab {

using json = nlohmann::ordered_json;

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void reject_unknown(const json& object, std::initializer_list<const char*> known, const std::string& where) {
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& item : object.items()) {
    if (!allowed.count(item.key())) throw InvalidArgument("unknown config key '" + item.key() + "'", where);
  }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

NoiseKind parse_noise_kind(const std::string& text) {
  if (text == "uniform_flip" || text == "uniform") return NoiseKind::uniform_flip;
  if (text == "structured") return NoiseKind::structured;
  throw InvalidArgument("noise kind must be 'uniform_flip' or 'structured'", "noise.kind");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw InvalidArgument("output_dir is required");
  if (!synthetic) {
    for (const auto* p : {&clean_path, &noisy_path, &test_path}) {
      if (p->empty()) throw InvalidArgument("inputs.clean, inputs.noisy and inputs.test are required without synthetic");
      if (!std::filesystem::exists(*p)) throw IoError("input does not exist", p->string());
    }
  } else if (synthetic->num_classes < 2 || synthetic->clean_per_class == 0 || synthetic->test_per_class == 0) {
    throw InvalidArgument("synthetic source needs at least 2 classes and non-empty clean and test sets");
  }
  if (filters <= 0 || kernel <= 0 || pool_grid <= 0) throw InvalidArgument("filter bank dimensions must be positive");
  train.validate();
  if (noise) noise->validate();
  if (fractions.empty() || ratios.empty()) throw InvalidArgument("mixing fractions and ratios must be non-empty");
  for (const double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw InvalidArgument("mixing fractions must be in [0, 1]");
  }
  for (const int r : ratios) {
    if (r < 1) throw InvalidArgument("mixing ratios must be at least 1");
  }
  if (dedup_k < 0) throw InvalidArgument("dedup.k must be non-negative");
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("early_stop.tau must be in (0, 1]");
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  try {
    reject_unknown(j,
                   {"seed", "output_dir", "threads", "inputs", "synthetic", "filter_bank", "train", "noise", "mixing",
                    "dedup", "early_stop"},
                   "config");
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>(), base_dir);
    c.threads = j.value("threads", std::size_t{0});
    if (j.contains("inputs")) {
      const auto& in = j.at("inputs");
      reject_unknown(in, {"clean", "noisy", "test"}, "inputs");
      c.clean_path = resolve(in.value("clean", std::string{}), base_dir);
      c.noisy_path = resolve(in.value("noisy", std::string{}), base_dir);
      c.test_path = resolve(in.value("test", std::string{}), base_dir);
    }
    if (j.contains("synthetic") && !j.at("synthetic").is_null()) {
      const auto& s = j.at("synthetic");
      reject_unknown(s, {"num_classes", "clean_per_class", "noisy_per_class", "test_per_class", "height", "width",
                         "channels"},
                     "synthetic");
      SyntheticSource src;
      src.num_classes = s.value("num_classes", src.num_classes);
      src.clean_per_class = s.value("clean_per_class", src.clean_per_class);
      src.noisy_per_class = s.value("noisy_per_class", src.noisy_per_class);
      src.test_per_class = s.value("test_per_class", src.test_per_class);
      src.height = s.value("height", src.height);
      src.width = s.value("width", src.width);
      src.channels = s.value("channels", src.channels);
      c.synthetic = src;
    }
    if (j.contains("filter_bank")) {
      const auto& fb = j.at("filter_bank");
      reject_unknown(fb, {"filters", "kernel", "pool_grid"}, "filter_bank");
      c.filters = fb.value("filters", c.filters);
      c.kernel = fb.value("kernel", c.kernel);
      c.pool_grid = fb.value("pool_grid", c.pool_grid);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, {"step_size", "max_iters", "eval_interval", "max_snapshots"}, "train");
      if (t.contains("step_size") && !t.at("step_size").is_null()) c.train.step_size = t.at("step_size").get<double>();
      c.train.max_iters = t.value("max_iters", c.train.max_iters);
      c.train.eval_interval = t.value("eval_interval", c.train.eval_interval);
      c.train.max_snapshots = t.value("max_snapshots", c.train.max_snapshots);
    }
    if (j.contains("noise") && !j.at("noise").is_null()) {
      const auto& n = j.at("noise");
      reject_unknown(n, {"kind", "rate", "cluster_count", "ood_fraction"}, "noise");
      NoiseSpec spec;
      spec.kind = parse_noise_kind(n.value("kind", std::string("uniform_flip")));
      spec.rate = n.value("rate", 0.0);
      spec.cluster_count = n.value("cluster_count", 1);
      spec.ood_fraction = n.value("ood_fraction", 0.0);
      c.noise = spec;
    }
    if (j.contains("mixing")) {
      const auto& m = j.at("mixing");
      reject_unknown(m, {"fractions", "ratios"}, "mixing");
      if (m.contains("fractions")) c.fractions = m.at("fractions").get<std::vector<double>>();
      if (m.contains("ratios")) c.ratios = m.at("ratios").get<std::vector<int>>();
    }
    if (j.contains("dedup")) {
      const auto& d = j.at("dedup");
      reject_unknown(d, {"k"}, "dedup");
      c.dedup_k = d.value("k", 0);
    }
    if (j.contains("early_stop")) {
      const auto& e = j.at("early_stop");
      reject_unknown(e, {"rule", "tau"}, "early_stop");
      const auto rule = e.value("rule", std::string("holdout"));
      if (rule == "holdout") {
        c.stop_rule = StopRule::holdout;
      } else if (rule == "clean") {
        c.stop_rule = StopRule::clean;
      } else {
        throw InvalidArgument("early_stop.rule must be 'holdout' or 'clean'");
      }
      c.tau = e.value("tau", c.tau);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str(), path.parent_path());
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["threads"] = c.threads;
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["synthetic"] = {{"num_classes", s.num_classes},         {"clean_per_class", s.clean_per_class},
                      {"noisy_per_class", s.noisy_per_class}, {"test_per_class", s.test_per_class},
                      {"height", s.height},                   {"width", s.width},
                      {"channels", s.channels}};
  } else {
    j["inputs"] = {{"clean", c.clean_path.string()}, {"noisy", c.noisy_path.string()}, {"test", c.test_path.string()}};
  }
  j["filter_bank"] = {{"filters", c.filters}, {"kernel", c.kernel}, {"pool_grid", c.pool_grid}};
  j["train"] = {{"step_size", c.train.step_size ? json(*c.train.step_size) : json()},
                {"max_iters", c.train.max_iters},
                {"eval_interval", c.train.eval_interval},
                {"max_snapshots", c.train.max_snapshots}};
  if (c.noise) {
    j["noise"] = {{"kind", c.noise->kind == NoiseKind::structured ? "structured" : "uniform_flip"},
                  {"rate", c.noise->rate},
                  {"cluster_count", c.noise->cluster_count},
                  {"ood_fraction", c.noise->ood_fraction}};
  } else {
    j["noise"] = nullptr;
  }
  j["mixing"] = {{"fractions", c.fractions}, {"ratios", c.ratios}};
  j["dedup"] = {{"k", c.dedup_k}};
  j["early_stop"] = {{"rule", c.stop_rule == StopRule::clean ? "clean" : "holdout"}, {"tau", c.tau}};
  return j.dump(2);
}

void write_summary_csv(const std::vector<ExperimentRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write summary", path.string());
  out << "ratio,fraction,train_size,clean_kept,noisy_added,stop_iteration,stop_test_accuracy,final_test_accuracy,"
         "final_train_accuracy\n";
  for (const auto& r : rows) {
    out << r.ratio << ',' << format_double(r.fraction) << ',' << r.train_size << ',' << r.clean_kept << ','
        << r.noisy_added << ',' << r.stop_iteration << ',' << format_double(r.stop_test_accuracy) << ','
        << format_double(r.final_test_accuracy) << ',' << format_double(r.final_train_accuracy) << '\n';
  }
  if (!out) throw IoError("short write", path.string());
}

namespace {

struct Sources {
  CandidateDataset clean;
  CandidateDataset noisy;
  CandidateDataset test;
};

Sources load_sources(const ExperimentConfig& c) {
  Sources s;
  if (c.synthetic) {
    const auto& src = *c.synthetic;
    const std::size_t per_class = src.clean_per_class + src.noisy_per_class + src.test_per_class;
    const auto all = make_synthetic_images(src.num_classes, per_class, src.height, src.width, src.channels,
                                           derive_seed(c.seed, "synthetic"));
    const auto total = static_cast<double>(per_class);
    const std::vector<double> fractions{static_cast<double>(src.clean_per_class) / total,
                                        static_cast<double>(src.noisy_per_class) / total,
                                        static_cast<double>(src.test_per_class) / total};
    auto parts = split(all, fractions, derive_seed(c.seed, "split"));
    s.clean = std::move(parts[0]);
    s.noisy = std::move(parts[1]);
    s.test = std::move(parts[2]);
  } else {
    s.clean = load_dataset(c.clean_path);
    s.noisy = load_dataset(c.noisy_path, PackedLayout{32, 32, 3, s.clean.num_classes});
    s.test = load_dataset(c.test_path, PackedLayout{32, 32, 3, s.clean.num_classes});
  }
  if (s.clean.num_classes != s.noisy.num_classes || s.clean.num_classes != s.test.num_classes) {
    throw InvalidArgument("clean, noisy and test datasets disagree on the number of classes");
  }
  std::unordered_set<std::string> ids;
  for (const auto& r : s.clean.records) ids.insert(r.id);
  for (auto& r : s.noisy.records) {
    while (ids.count(r.id)) r.id += "#noisy";
    ids.insert(r.id);
  }
  return s;
}

std::string fraction_tag(double f) { return format_double(f); }

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  namespace fs = std::filesystem;
  const auto& out = config.output_dir;
  fs::create_directories(out / "curves");
  {
    std::ofstream echo(out / "effective_config.json");
    if (!echo) throw IoError("cannot write effective config", (out / "effective_config.json").string());
    echo << experiment_config_to_json(config) << '\n';
  }

  auto sources = load_sources(config);
  ExperimentResult result;

  if (config.noise) {
    NoiseSpec spec = *config.noise;
    spec.seed = derive_seed(config.seed, "noise-lab");
    std::pair<CandidateDataset, NoiseLedger> noisy;
    if (spec.kind == NoiseKind::uniform_flip) {
      noisy = flip_uniform(sources.noisy, spec.rate, spec.seed);
    } else {
      noisy = make_structured(sources.noisy, spec);
    }
    sources.noisy = std::move(noisy.first);
    write_ledger_jsonl(noisy.second, out / "noise_ledger.jsonl");
  }

  if (config.dedup_k > 0) {
    CandidateDataset train = sources.clean;
    train.records.insert(train.records.end(), sources.noisy.records.begin(), sources.noisy.records.end());
    std::vector<std::string> warnings;
    const auto pairs = scan(sources.test, train, config.dedup_k, ScanOptions{config.threads}, &warnings);
    write_pairs_jsonl(pairs, PairsHeader{config.dedup_k, sources.test.size(), train.size()}, out / "pairs.jsonl");
    const auto flagged = auto_flag(pairs);
    const auto decisions = auto_decisions(flagged, 0);
    std::ofstream(out / "decisions.jsonl").close();
    append_decisions_jsonl(decisions, out / "decisions.jsonl");
    const auto applied = apply_decisions(train, pairs, decisions);
    write_removal_report(applied.removals, out / "removals.jsonl");
    std::unordered_set<std::string> removed;
    for (const auto& r : applied.removals) removed.insert(r.train_id);
    result.dedup_removed = removed.size();
    auto keep = [&](const CandidateDataset& ds) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!removed.count(ds.records[i].id)) idx.push_back(i);
      }
      return select(ds, idx);
    };
    sources.clean = keep(sources.clean);
    sources.noisy = keep(sources.noisy);
  }

  const int channels = sources.clean.empty() ? sources.test.channels() : sources.clean.channels();
  const auto bank = make_filter_bank(config.filters, config.kernel, channels, config.pool_grid,
                                     derive_seed(config.seed, "featurizer"));
  result.feature_dim = bank.feature_dim();
  const auto clean_features = featurize<double>(bank, sources.clean, config.threads);
  const auto noisy_features = featurize<double>(bank, sources.noisy, config.threads);
  const auto test_features = featurize<double>(bank, sources.test, config.threads);
  const auto clean_labels = sources.clean.labels();
  const auto noisy_labels = sources.noisy.labels();

  TrainConfig train_config = config.train;
  train_config.seed = derive_seed(config.seed, "trainer");
  const auto mix_seed = derive_seed(config.seed, "mixing");

  for (const int ratio : config.ratios) {
    for (const double fraction : config.fractions) {
      const auto plan = plan_mix(clean_labels, noisy_labels, fraction, ratio, mix_seed);
      auto features = select_rows(clean_features, plan.kept_clean);
      const auto added = select_rows(noisy_features, plan.added_noisy);
      const Eigen::Index n0 = features.rows();
      const Eigen::Index n = n0 + added.rows();
      if (n == 0) throw InvalidArgument("mixing left an empty training set", "fraction " + fraction_tag(fraction));
      features.X.conservativeResize(n, Eigen::NoChange);
      features.Y.conservativeResize(n, Eigen::NoChange);
      if (added.rows() > 0) {
        features.X.bottomRows(added.rows()) = added.X;
        features.Y.bottomRows(added.rows()) = added.Y;
      }
      features.record_ids.insert(features.record_ids.end(), added.record_ids.begin(), added.record_ids.end());

      std::vector<std::size_t> clean_rows;
      for (Eigen::Index i = 0; i < n0; ++i) clean_rows.push_back(static_cast<std::size_t>(i));
      for (std::size_t j = 0; j < plan.added_noisy.size(); ++j) {
        if (sources.noisy.records[plan.added_noisy[j]].clean.value_or(false)) {
          clean_rows.push_back(static_cast<std::size_t>(n0) + j);
        }
      }

      const auto trace = train(features, train_config, clean_rows, &test_features);
      std::size_t stop = 0;
      if (config.stop_rule == StopRule::holdout) {
        stop = early_stop_holdout(trace);
      } else {
        if (clean_rows.empty()) {
          throw InvalidArgument("clean-subset early stopping needs clean records",
                                "ratio " + std::to_string(ratio) + ", fraction " + fraction_tag(fraction));
        }
        stop = early_stop_clean(trace, config.tau);
      }
      write_learning_curve_csv(trace, out / "curves" / ("r" + std::to_string(ratio) + "_f" + fraction_tag(fraction) + ".csv"));

      ExperimentRow row;
      row.ratio = ratio;
      row.fraction = fraction;
      row.train_size = static_cast<std::size_t>(n);
      row.clean_kept = plan.kept_clean.size();
      row.noisy_added = plan.added_noisy.size();
      row.stop_iteration = trace.checkpoints[stop].iteration;
      row.stop_test_accuracy = trace.checkpoints[stop].holdout_accuracy.value_or(0.0);
      row.final_test_accuracy = trace.final_checkpoint().holdout_accuracy.value_or(0.0);
      row.final_train_accuracy = trace.final_checkpoint().train_accuracy;
      result.rows.push_back(row);
    }
  }
  write_summary_csv(result.rows, out / "summary.csv");
  return result;
}

}  // namespace candlab
