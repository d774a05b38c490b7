// candlab command-line entry point.

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "candlab/dataset.hpp"
#include "candlab/dedup.hpp"
#include "candlab/dynamics.hpp"
#include "candlab/error.hpp"
#include "candlab/experiment.hpp"
#include "candlab/featurizer.hpp"
#include "candlab/noise.hpp"
#include "candlab/report.hpp"
#include "candlab/review_server.hpp"
#include "candlab/review_session.hpp"
#include "candlab/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace candlab;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 0;
};

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// <out>/.lock held for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
    if (fd < 0) {
      std::ifstream in(path_);
      std::string holder((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      while (!holder.empty() && holder.back() == '\n') holder.pop_back();
      throw IoError("output directory is locked (" + holder + ")", path_.string());
    }
    const auto now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    const std::string text = "pid " + std::to_string(::getpid()) + " started " + stamp + "\n";
    const auto written = ::write(fd, text.data(), text.size());
    ::close(fd);
    if (written != static_cast<ssize_t>(text.size())) {
      fs::remove(path_);
      throw IoError("cannot write lock file", path_.string());
    }
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw InvalidArgument("--out is required for this subcommand");
  return fs::path(g.out);
}

// Fills options that were not given on the command line from a JSON config
// section: {"<subcommand>": {"<long option name>": value}}.
void apply_config_defaults(CLI::App& sub, const json& section) {
  if (!section.is_object()) throw InvalidArgument("config section for '" + sub.get_name() + "' must be an object");
  for (const auto& item : section.items()) {
    if (item.value().is_object()) continue;  // nested subcommand section
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + item.key());
    } catch (const CLI::OptionNotFound&) {
      throw InvalidArgument("unknown config key '" + item.key() + "'", sub.get_name());
    }
    if (opt->count() > 0) continue;
    opt->clear();
    if (item.value().is_array()) {
      for (const auto& v : item.value()) opt->add_result(v.is_string() ? v.get<std::string>() : v.dump());
    } else if (item.value().is_boolean()) {
      opt->add_result(item.value().get<bool>() ? "true" : "false");
    } else {
      opt->add_result(item.value().is_string() ? item.value().get<std::string>() : item.value().dump());
    }
    opt->run_callback();
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config", path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what(), path.string());
  }
}

// Output dataset in the same container format as the input.
fs::path dataset_output(const fs::path& out, const fs::path& input) {
  return out / (input.extension() == ".bin" ? "dataset.bin" : "dataset.jsonl");
}

json dataset_summary(const CandidateDataset& ds) {
  json j;
  j["records"] = ds.size();
  j["num_classes"] = ds.num_classes;
  j["class_names"] = ds.class_names;
  j["class_counts"] = ds.class_counts();
  if (!ds.empty()) j["shape"] = {ds.height(), ds.width(), ds.channels()};
  std::size_t clean = 0;
  std::size_t flagged = 0;
  for (const auto& r : ds.records) {
    if (r.clean) {
      ++flagged;
      if (*r.clean) ++clean;
    }
  }
  j["clean_flagged"] = flagged;
  j["clean"] = clean;
  return j;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string manifest;
  int num_classes = 0;
};

void run_ingest(const IngestArgs& a, const Globals& g) {
  auto ds = load_dataset(a.manifest, PackedLayout{32, 32, 3, a.num_classes > 0 ? a.num_classes : 10});
  if (a.num_classes > 0 && fs::path(a.manifest).extension() != ".bin") ds = ingest_manifest(a.manifest, a.num_classes);
  ds.validate();
  const auto summary = dataset_summary(ds);
  std::cout << summary.dump(2) << '\n';
  if (!g.out.empty()) {
    const fs::path out(g.out);
    OutputLock lock(out);
    save_dataset(ds, out / "dataset.jsonl");
    std::ofstream(out / "summary.json") << summary.dump(2) << '\n';
  }
}

// ---------------------------------------------------------------- featurize

struct FeaturizeArgs {
  std::string dataset;
  int filters = 4000;
  int kernel = 6;
  int pool = 3;
};

void run_featurize(const FeaturizeArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto ds = load_dataset(a.dataset);
  if (ds.empty()) throw InvalidArgument("dataset is empty", a.dataset);
  const auto bank = make_filter_bank(a.filters, a.kernel, ds.channels(), a.pool, derive_seed(g.seed, "featurizer"));
  const auto features = featurize<float>(bank, ds, g.threads);
  write_rfmx(features, out / "features.rfmx");
  write_filter_bank(bank, out / "filter_bank.json");
  std::cout << json{{"rows", features.rows()}, {"dim", features.dim()}, {"num_classes", features.num_classes()}}.dump()
            << '\n';
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string features;
  std::string holdout;
  std::string dataset;  // optional: clean flags matched by record id
  double step_size = 0.0;
  long iters = 1000;
  long eval_interval = 10;
  std::size_t max_snapshots = 64;
  double tau = 0.99;
};

std::vector<std::size_t> clean_rows_from_dataset(const FeatureMatrix<double>& features, const fs::path& dataset) {
  const auto ds = load_dataset(dataset);
  std::unordered_map<std::string, bool> clean;
  for (const auto& r : ds.records) clean[r.id] = r.clean.value_or(false);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < features.record_ids.size(); ++i) {
    auto it = clean.find(features.record_ids[i]);
    if (it != clean.end() && it->second) rows.push_back(i);
  }
  return rows;
}

json checkpoint_json(const Checkpoint& cp) {
  json j;
  j["t"] = cp.iteration;
  j["loss"] = cp.loss;
  j["train_acc"] = cp.train_accuracy;
  j["clean_acc"] = cp.clean_accuracy ? json(*cp.clean_accuracy) : json();
  j["holdout_acc"] = cp.holdout_accuracy ? json(*cp.holdout_accuracy) : json();
  return j;
}

void run_train(const TrainArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto features = read_rfmx<double>(a.features);
  std::optional<FeatureMatrix<double>> holdout;
  if (!a.holdout.empty()) holdout = read_rfmx<double>(a.holdout);
  std::vector<std::size_t> clean;
  if (!a.dataset.empty()) clean = clean_rows_from_dataset(features, a.dataset);

  TrainConfig config;
  if (a.step_size > 0.0) config.step_size = a.step_size;
  config.max_iters = a.iters;
  config.eval_interval = a.eval_interval;
  config.max_snapshots = a.max_snapshots;
  config.seed = derive_seed(g.seed, "trainer");
  config.clean_threshold = a.tau;
  const auto trace = train(features, config, clean, holdout ? &*holdout : nullptr);

  write_trace_jsonl(trace, out / "trace.jsonl");
  write_learning_curve_csv(trace, out / "learning_curve.csv");
  fs::create_directories(out / "snapshots");
  for (const auto& s : trace.snapshots) {
    write_rfwz(s.Z, out / "snapshots" / ("z_" + std::to_string(s.iteration) + ".rfwz"));
  }
  json summary;
  summary["eta"] = trace.eta_used;
  summary["sigma_max_sq"] = trace.sigma_max_sq;
  summary["kernel_form"] = trace.kernel_form;
  summary["final"] = checkpoint_json(trace.final_checkpoint());
  if (!clean.empty()) summary["early_stop_clean"] = checkpoint_json(trace.checkpoints[early_stop_clean(trace, a.tau)]);
  if (holdout) summary["early_stop_holdout"] = checkpoint_json(trace.checkpoints[early_stop_holdout(trace)]);
  std::ofstream(out / "train_summary.json") << summary.dump(2) << '\n';
  std::cout << summary.dump() << '\n';
}

// ---------------------------------------------------------------- dynamics

struct DynamicsArgs {
  std::string features;
  double eta = 0.0;
  std::vector<long> t;
};

void run_dynamics(const DynamicsArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  if (a.t.empty()) throw InvalidArgument("--t needs at least one iteration");
  const auto features = read_rfmx<double>(a.features);
  const auto profile = decompose(features);

  TrainConfig config;
  if (a.eta > 0.0) config.step_size = a.eta;
  config.max_iters = std::max(1L, *std::max_element(a.t.begin(), a.t.end()));
  config.eval_interval = config.max_iters;
  config.extra_checkpoints = a.t;
  config.max_snapshots = 2;
  config.seed = derive_seed(g.seed, "trainer");
  const auto trace = train(features, config);

  std::ofstream csv(out / "dynamics.csv");
  if (!csv) throw IoError("cannot write dynamics table", (out / "dynamics.csv").string());
  csv << "t,predicted,measured,relative_error\n";
  std::cout << "t\tpredicted\tmeasured\trelative_error\n";
  double worst = 0.0;
  for (const long t : a.t) {
    const auto it = std::find_if(trace.checkpoints.begin(), trace.checkpoints.end(),
                                 [&](const Checkpoint& cp) { return cp.iteration == t; });
    if (it == trace.checkpoints.end()) throw InvalidArgument("iteration " + std::to_string(t) + " was not recorded");
    const double predicted = predict_residual(profile, trace.eta_used, t).total();
    const double measured = it->loss;
    const double rel = std::abs(predicted - measured) / std::max(std::abs(measured), 1e-300);
    worst = std::max(worst, rel);
    csv << t << ',' << format_double(predicted) << ',' << format_double(measured) << ',' << format_double(rel) << '\n';
    std::cout << t << '\t' << predicted << '\t' << measured << '\t' << rel << '\n';
  }
  write_spectrum_json(profile, out / "spectrum.json");
  write_eigenvectors(profile, out / "eigenvectors.rfev");
  std::cout << json{{"eta", trace.eta_used}, {"max_relative_error", worst}}.dump() << '\n';
}

// ---------------------------------------------------------------- noise

struct FlipArgs {
  std::string dataset;
  double rate = 0.0;
};

struct StructuredArgs {
  std::string dataset;
  double rate = 0.0;
  int clusters = 1;
  double ood_fraction = 0.0;
  std::string distractors;
};

struct MixArgs {
  std::string clean;
  std::string noisy;
  double fraction = 0.0;
  int ratio = 1;
};

void run_flip(const FlipArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto ds = load_dataset(a.dataset);
  const auto [noisy, ledger] = flip_uniform(ds, a.rate, derive_seed(g.seed, "noise-lab"));
  save_dataset(noisy, dataset_output(out, a.dataset));
  write_ledger_jsonl(ledger, out / "ledger.jsonl");
  std::cout << json{{"records", noisy.size()}, {"flipped", ledger.size()}}.dump() << '\n';
}

void run_structured(const StructuredArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto ds = load_dataset(a.dataset);
  NoiseSpec spec{NoiseKind::structured, a.rate, derive_seed(g.seed, "noise-lab"), a.clusters, a.ood_fraction};
  std::optional<CandidateDataset> pool;
  if (!a.distractors.empty()) pool = load_dataset(a.distractors);
  const auto [noisy, ledger] = make_structured(ds, spec, pool ? &*pool : nullptr);
  save_dataset(noisy, dataset_output(out, a.dataset));
  write_ledger_jsonl(ledger, out / "ledger.jsonl");
  std::cout << json{{"records", noisy.size()}, {"corrupted", ledger.size()}}.dump() << '\n';
}

void run_mix(const MixArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto clean = load_dataset(a.clean);
  const auto noisy = load_dataset(a.noisy, PackedLayout{32, 32, 3, clean.num_classes});
  const auto mixed = mix(clean, noisy, a.fraction, a.ratio, derive_seed(g.seed, "mixing"));
  save_dataset(mixed, dataset_output(out, a.clean));
  std::cout << json{{"records", mixed.size()}}.dump() << '\n';
}

// ---------------------------------------------------------------- dedup

struct ScanArgs {
  std::string test;
  std::string train;
  int k = 100;
};

struct AutoFlagArgs {
  std::string pairs;
};

struct ApplyArgs {
  std::string train;
  std::string pairs;
  std::string decisions;
};

struct ServeArgs {
  std::string test;
  std::string train;
  std::string pairs;
  std::string decisions;
  std::string host = "127.0.0.1";
  int port = kDefaultReviewPort;
  std::string static_dir;
};

void run_scan(const ScanArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto test = load_dataset(a.test);
  const auto train = load_dataset(a.train);
  std::vector<std::string> warnings;
  const auto pairs = scan(test, train, a.k, ScanOptions{g.threads}, &warnings);
  for (const auto& w : warnings) std::cerr << json{{"warning", w}}.dump() << '\n';
  write_pairs_jsonl(pairs, PairsHeader{a.k, test.size(), train.size()}, out / "pairs.jsonl");
  std::cout << json{{"pairs", pairs.size()}}.dump() << '\n';
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void run_auto_flag(const AutoFlagArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto pairs = read_pairs_jsonl(a.pairs);
  const auto flagged = auto_flag(pairs);
  append_decisions_jsonl(auto_decisions(flagged, now_ms()), out / "decisions.jsonl");
  std::cout << json{{"flagged", flagged.size()}, {"pair_ids", flagged}}.dump() << '\n';
}

void run_apply(const ApplyArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto train = load_dataset(a.train);
  const auto pairs = read_pairs_jsonl(a.pairs);
  const auto decisions = read_decisions_jsonl(a.decisions);
  const auto result = apply_decisions(train, pairs, decisions);
  for (const auto& w : result.warnings) std::cerr << json{{"warning", w}}.dump() << '\n';
  save_dataset(result.cleaned, dataset_output(out, a.train));
  write_removal_report(result.removals, out / "removals.jsonl");
  std::cout << json{{"removed", result.removals.size()}, {"remaining", result.cleaned.size()}}.dump() << '\n';
}

void run_serve(const ServeArgs& a, const Globals& g) {
  const auto test = load_dataset(a.test);
  const auto train = load_dataset(a.train);
  auto pairs = read_pairs_jsonl(a.pairs);
  fs::path log = a.decisions;
  std::optional<OutputLock> lock;
  if (log.empty()) {
    const auto out = require_out(g);
    lock.emplace(out);
    log = out / "decisions.jsonl";
  }
  ReviewSession session(std::move(pairs), log);
  for (const auto& w : session.replay_warnings()) std::cerr << json{{"warning", w}}.dump() << '\n';
  ReviewServer server(session, test, train, a.static_dir);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  const int port = server.bind(a.host, a.port);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  std::cout << json{{"listening", "http://" + a.host + ":" + std::to_string(port)}, {"decisions", log.string()}}.dump()
            << std::endl;
  server.run();
  // run() returns after stop(); wake the waiter if it is still blocked.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string weights;
  std::string bank;
  std::string test;
  double alpha = 0.05;
};

void run_evaluate(const EvaluateArgs& a, const Globals& g) {
  const auto out = require_out(g);
  OutputLock lock(out);
  const auto Z = read_rfwz(a.weights);
  const auto bank = read_filter_bank(a.bank);
  const auto test = load_dataset(a.test);
  const auto result = evaluate(Z, bank, test, a.alpha, g.threads);
  write_eval_json(result, out / "eval.json", test.class_names);
  write_per_class_csv(result, out / "per_class.csv", test.class_names);
  std::cout << json{{"overall_accuracy", result.overall_accuracy}}.dump() << '\n';
}

// ---------------------------------------------------------------- experiment

void run_experiment_cmd(CLI::App& root, const Globals& g) {
  if (g.config.empty()) throw InvalidArgument("experiment needs --config");
  auto config = load_experiment_config(g.config);
  if (root.get_option("--seed")->count() > 0) config.seed = g.seed;
  if (!g.out.empty()) config.output_dir = g.out;
  if (root.get_option("--threads")->count() > 0) config.threads = g.threads;
  if (config.output_dir.empty()) throw InvalidArgument("experiment needs an output directory (--out or output_dir)");
  OutputLock lock(config.output_dir);
  const auto result = run_experiment(config);
  std::cout << json{{"rows", result.rows.size()},
                    {"feature_dim", result.feature_dim},
                    {"dedup_removed", result.dedup_removed},
                    {"summary", (config.output_dir / "summary.csv").string()}}
                   .dump()
            << '\n';
}

void print_error(const std::string& kind, const std::string& message, const std::string& context) {
  json j{{"error", kind}, {"message", message}};
  if (!context.empty()) j["context"] = context;
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"candlab: noisy candidate-label laboratory", "candlab"};
  app.set_version_flag("--version", CANDLAB_VERSION);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--seed", g.seed, "Global seed; sub-modules derive their own");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");

  std::function<void()> action;
  CLI::App* selected = nullptr;
  auto bind = [&](CLI::App* sub, std::function<void()> fn) {
    sub->fallthrough();
    sub->callback([&, sub, fn] {
      selected = sub;
      action = fn;
    });
  };

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a manifest or packed file and summarize it");
  ingest_cmd->add_option("--manifest", ingest.manifest, "Manifest (.jsonl) or packed (.bin) file")->required();
  ingest_cmd->add_option("--num-classes", ingest.num_classes, "Number of classes when not in the manifest header");
  bind(ingest_cmd, [&] { run_ingest(ingest, g); });

  FeaturizeArgs feat;
  auto* feat_cmd = app.add_subcommand("featurize", "Random-filter features of a dataset (writes features.rfmx)");
  feat_cmd->add_option("--dataset", feat.dataset, "Input dataset")->required();
  feat_cmd->add_option("--filters", feat.filters, "Number of filters")->capture_default_str();
  feat_cmd->add_option("--kernel", feat.kernel, "Filter size")->capture_default_str();
  feat_cmd->add_option("--pool", feat.pool, "Pooling grid")->capture_default_str();
  bind(feat_cmd, [&] { run_featurize(feat, g); });

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Gradient descent on squared loss (writes trace and snapshots)");
  train_cmd->add_option("--features", tr.features, "Training RFMX")->required();
  train_cmd->add_option("--holdout", tr.holdout, "Holdout RFMX");
  train_cmd->add_option("--dataset", tr.dataset, "Dataset providing clean flags by record id");
  train_cmd->add_option("--step-size", tr.step_size, "Step size (default 1/sigma_max^2)");
  train_cmd->add_option("--iters", tr.iters, "Iterations")->capture_default_str();
  train_cmd->add_option("--eval-interval", tr.eval_interval, "Checkpoint interval")->capture_default_str();
  train_cmd->add_option("--max-snapshots", tr.max_snapshots, "Stored weight snapshots")->capture_default_str();
  train_cmd->add_option("--tau", tr.tau, "Clean-subset early-stop threshold")->capture_default_str();
  bind(train_cmd, [&] { run_train(tr, g); });

  DynamicsArgs dyn;
  auto* dyn_cmd = app.add_subcommand("dynamics", "Predicted vs. measured residuals over an iteration list");
  dyn_cmd->add_option("--features", dyn.features, "RFMX file")->required();
  dyn_cmd->add_option("--eta", dyn.eta, "Step size (default 1/sigma_max^2)");
  dyn_cmd->add_option("--t", dyn.t, "Iterations, comma separated")->delimiter(',')->required();
  bind(dyn_cmd, [&] { run_dynamics(dyn, g); });

  auto* noise_cmd = app.add_subcommand("noise", "Label-noise injection and mixing");
  noise_cmd->require_subcommand(1);
  noise_cmd->fallthrough();
  FlipArgs flip;
  auto* flip_cmd = noise_cmd->add_subcommand("flip", "Uniform per-class label flips");
  flip_cmd->add_option("--dataset", flip.dataset, "Input dataset")->required();
  flip_cmd->add_option("--rate", flip.rate, "Flip rate in [0, 1]")->required();
  bind(flip_cmd, [&] { run_flip(flip, g); });
  StructuredArgs st;
  auto* st_cmd = noise_cmd->add_subcommand("structured", "Grouped coherent mislabeling");
  st_cmd->add_option("--dataset", st.dataset, "Input dataset")->required();
  st_cmd->add_option("--rate", st.rate, "Corrupted fraction")->required();
  st_cmd->add_option("--clusters", st.clusters, "Number of groups")->capture_default_str();
  st_cmd->add_option("--ood-fraction", st.ood_fraction, "Fraction of each group drawn from distractors");
  st_cmd->add_option("--distractors", st.distractors, "Distractor dataset (themes by keyword)");
  bind(st_cmd, [&] { run_structured(st, g); });
  MixArgs mx;
  auto* mix_cmd = noise_cmd->add_subcommand("mix", "Replace a fraction of clean records by r times as many noisy ones");
  mix_cmd->add_option("--clean", mx.clean, "Clean dataset")->required();
  mix_cmd->add_option("--noisy", mx.noisy, "Noisy pool")->required();
  mix_cmd->add_option("--fraction", mx.fraction, "Removed clean fraction f")->required();
  mix_cmd->add_option("--ratio", mx.ratio, "Noisy records per removed clean record r")->required();
  bind(mix_cmd, [&] { run_mix(mx, g); });

  auto* dedup_cmd = app.add_subcommand("dedup", "Train/test near-duplicate detection and removal");
  dedup_cmd->require_subcommand(1);
  dedup_cmd->fallthrough();
  ScanArgs sc;
  auto* scan_cmd = dedup_cmd->add_subcommand("scan", "k nearest neighbors by l2 and SSIM (writes pairs.jsonl)");
  scan_cmd->add_option("--test", sc.test, "Test dataset")->required();
  scan_cmd->add_option("--train", sc.train, "Training dataset")->required();
  scan_cmd->add_option("--k", sc.k, "Neighbors per metric")->capture_default_str();
  bind(scan_cmd, [&] { run_scan(sc, g); });
  AutoFlagArgs af;
  auto* af_cmd = dedup_cmd->add_subcommand("auto-flag", "Append 'similar' decisions for exact copies");
  af_cmd->add_option("--pairs", af.pairs, "Pairs file")->required();
  bind(af_cmd, [&] { run_auto_flag(af, g); });
  ApplyArgs ap;
  auto* apply_cmd = dedup_cmd->add_subcommand("apply", "Remove training records judged similar");
  apply_cmd->add_option("--train", ap.train, "Training dataset")->required();
  apply_cmd->add_option("--pairs", ap.pairs, "Pairs file")->required();
  apply_cmd->add_option("--decisions", ap.decisions, "Decisions log")->required();
  bind(apply_cmd, [&] { run_apply(ap, g); });
  ServeArgs sv;
  auto* serve_cmd = dedup_cmd->add_subcommand("serve", "HTTP review service");
  serve_cmd->add_option("--test", sv.test, "Test dataset")->required();
  serve_cmd->add_option("--train", sv.train, "Training dataset")->required();
  serve_cmd->add_option("--pairs", sv.pairs, "Pairs file")->required();
  serve_cmd->add_option("--decisions", sv.decisions, "Decisions log (default <out>/decisions.jsonl)");
  serve_cmd->add_option("--host", sv.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", sv.port, "Port (0 picks a free port)")->capture_default_str();
  serve_cmd->add_option("--static", sv.static_dir, "Directory with the built review UI");
  bind(serve_cmd, [&] { run_serve(sv, g); });

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Per-class accuracy with exact binomial intervals");
  eval_cmd->add_option("--weights", ev.weights, "Weight snapshot (.rfwz)")->required();
  eval_cmd->add_option("--bank", ev.bank, "Filter bank JSON")->required();
  eval_cmd->add_option("--test", ev.test, "Test dataset")->required();
  eval_cmd->add_option("--alpha", ev.alpha, "1 - confidence level")->capture_default_str();
  bind(eval_cmd, [&] { run_evaluate(ev, g); });

  auto* exp_cmd = app.add_subcommand("experiment", "Full pipeline from an experiment config (--config)");
  bind(exp_cmd, [&] { run_experiment_cmd(app, g); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what(), "");
    return 2;
  }

  try {
    if (!g.config.empty() && selected && selected != exp_cmd) {
      const auto config = read_json_file(g.config);
      std::vector<CLI::App*> chain;
      for (auto* s = selected; s && s != &app; s = s->get_parent()) chain.insert(chain.begin(), s);
      const json* section = &config;
      for (auto* s : chain) {
        if (!section->is_object() || !section->contains(s->get_name())) {
          section = nullptr;
          break;
        }
        section = &section->at(s->get_name());
      }
      if (section) apply_config_defaults(*selected, *section);
    }
    if (action) action();
    return 0;
  } catch (const Error& e) {
    print_error(e.kind(), e.what(), e.context());
  } catch (const CLI::Error& e) {
    print_error("usage", e.what(), "");
  } catch (const std::filesystem::filesystem_error& e) {
    print_error("io", e.what(), e.path1().string());
  } catch (const std::exception& e) {
    print_error("internal", e.what(), "");
  }
  return 1;
}
