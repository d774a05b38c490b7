#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "candlab/dataset.hpp"
#include "candlab/featurizer.hpp"
#include "oracles.hpp"

using namespace candlab;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunResult run(const oracle::TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + CANDLAB_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

CandidateDataset tiny_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  CandidateDataset ds;
  ds.num_classes = 10;
  ds.class_names = default_class_names(10);
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r;
    r.id = "r" + std::to_string(i);
    r.label = static_cast<int>(i % 10);
    r.image = oracle::random_image(gen, 32, 32, 3);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("help and version") {
  oracle::TempDir dir("cli");
  auto r = run(dir, "--version");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find(CANDLAB_VERSION) != std::string::npos);
  for (const char* sub : {"ingest", "featurize", "train", "dynamics", "noise", "noise flip", "dedup", "dedup scan",
                          "dedup serve", "evaluate", "experiment"}) {
    r = run(dir, std::string(sub) + " --help");
    CHECK_MESSAGE(r.exit_code == 0, sub);
    CHECK_MESSAGE(r.out.find("Usage") != std::string::npos, sub);
  }
}

TEST_CASE("usage errors print JSON and exit 2") {
  oracle::TempDir dir("cli");
  const auto r = run(dir, "noise flip --rate 0.1");
  CHECK(r.exit_code == 2);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["error"] == "usage");
  CHECK(j.contains("message"));
}

TEST_CASE("runtime errors print JSON and exit 1") {
  oracle::TempDir dir("cli");
  const auto r = run(dir, "--out " + (dir / "o").string() + " ingest --manifest " + (dir / "missing.jsonl").string());
  CHECK(r.exit_code == 1);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["error"] == "io");
}

TEST_CASE("flip at rate zero reproduces the input") {
  oracle::TempDir dir("cli");
  const auto ds = tiny_dataset(12, 1);
  write_packed(ds, dir / "in.bin");
  auto r = run(dir, "--out " + (dir / "flip").string() + " --seed 4 noise flip --dataset " + (dir / "in.bin").string() +
                        " --rate 0");
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(dir / "flip" / "dataset.bin") == slurp(dir / "in.bin"));
  CHECK(slurp(dir / "flip" / "ledger.jsonl").empty());

  // Manifest input: ingest writes a manifest, flip at rate 0 reproduces it byte for byte.
  r = run(dir, "--out " + (dir / "ing").string() + " ingest --manifest " + (dir / "in.bin").string());
  REQUIRE(r.exit_code == 0);
  r = run(dir, "--out " + (dir / "flip2").string() + " noise flip --dataset " + (dir / "ing" / "dataset.jsonl").string() +
                   " --rate 0");
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(dir / "flip2" / "dataset.jsonl") == slurp(dir / "ing" / "dataset.jsonl"));
}

TEST_CASE("noise flip writes a ledger that matches the labels") {
  oracle::TempDir dir("cli");
  write_packed(tiny_dataset(30, 2), dir / "in.bin");
  const auto r = run(dir, "--out " + (dir / "o").string() + " --seed 9 noise flip --dataset " +
                              (dir / "in.bin").string() + " --rate 0.4");
  REQUIRE(r.exit_code == 0);
  const auto before = load_dataset(dir / "in.bin", PackedLayout{});
  const auto after = load_dataset(dir / "o" / "dataset.bin", PackedLayout{});
  std::size_t changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) changed += before.records[i].label != after.records[i].label;
  CHECK(changed == 10);
  std::ifstream ledger(dir / "o" / "ledger.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(ledger, line);) lines += !line.empty();
  CHECK(lines == 10);
}

TEST_CASE("dynamics predictions agree with measured residuals") {
  oracle::TempDir dir("cli");
  std::mt19937_64 gen(3);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(300.0));
  FeatureMatrix<double> f;
  f.X.resize(100, 300);
  for (Eigen::Index i = 0; i < f.X.size(); ++i) f.X.data()[i] = normal(gen);
  std::vector<int> labels(100);
  for (auto& l : labels) l = static_cast<int>(gen() % 10);
  f.Y = one_hot<double>(labels, 10);
  for (int i = 0; i < 100; ++i) f.record_ids.push_back("x" + std::to_string(i));
  write_rfmx(f.cast<float>(), dir / "f.rfmx");
  const auto r = run(dir, "--out " + (dir / "o").string() + " dynamics --features " + (dir / "f.rfmx").string() +
                              " --t 0,1,5,20,60");
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const auto rows = read_csv(dir / "o" / "dynamics.csv");
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == std::vector<std::string>{"t", "predicted", "measured", "relative_error"});
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][3]) <= 1e-6);
  CHECK(fs::exists(dir / "o" / "spectrum.json"));
  CHECK(fs::exists(dir / "o" / "eigenvectors.rfev"));
}

TEST_CASE("featurize, train and evaluate chain") {
  oracle::TempDir dir("cli");
  write_packed(tiny_dataset(30, 5), dir / "train.bin");
  write_packed(tiny_dataset(20, 6), dir / "test.bin");
  auto r = run(dir, "--out " + (dir / "f").string() + " featurize --dataset " + (dir / "train.bin").string() +
                        " --filters 16 --kernel 5 --pool 2");
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  r = run(dir, "--out " + (dir / "t").string() + " train --features " + (dir / "f" / "features.rfmx").string() +
                   " --iters 50 --eval-interval 10");
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  CHECK(read_csv(dir / "t" / "learning_curve.csv").size() == 7);
  REQUIRE(fs::exists(dir / "t" / "snapshots" / "z_50.rfwz"));
  r = run(dir, "--out " + (dir / "e").string() + " evaluate --weights " + (dir / "t" / "snapshots" / "z_50.rfwz").string() +
                   " --bank " + (dir / "f" / "filter_bank.json").string() + " --test " + (dir / "test.bin").string());
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const auto eval = nlohmann::json::parse(slurp(dir / "e" / "eval.json"));
  CHECK(eval.contains("overall_accuracy"));
  CHECK(read_csv(dir / "e" / "per_class.csv").size() == 11);
}

TEST_CASE("experiment is deterministic") {
  oracle::TempDir dir("cli");
  std::ofstream(dir / "exp.json") << R"({"seed": 3,
    "synthetic": {"num_classes": 4, "clean_per_class": 4, "noisy_per_class": 40, "test_per_class": 5},
    "filter_bank": {"filters": 16, "kernel": 5, "pool_grid": 2},
    "train": {"max_iters": 60, "eval_interval": 10},
    "noise": {"kind": "uniform_flip", "rate": 0.3},
    "dedup": {"k": 3}})";
  for (const char* name : {"a", "b"}) {
    const auto r = run(dir, "--config " + (dir / "exp.json").string() + " --out " + (dir / name).string() + " experiment");
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  }
  const auto rows = read_csv(dir / "a" / "summary.csv");
  CHECK(rows.size() == 11);  // header + 5 fractions x 2 ratios
  CHECK(slurp(dir / "a" / "summary.csv") == slurp(dir / "b" / "summary.csv"));
  CHECK(slurp(dir / "a" / "noise_ledger.jsonl") == slurp(dir / "b" / "noise_ledger.jsonl"));
  CHECK(slurp(dir / "a" / "pairs.jsonl") == slurp(dir / "b" / "pairs.jsonl"));
  CHECK(fs::exists(dir / "a" / "effective_config.json"));
  CHECK_FALSE(fs::exists(dir / "a" / ".lock"));

  const auto r = run(dir, "--config " + (dir / "exp.json").string() + " --seed 4 --out " + (dir / "c").string() +
                              " experiment");
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(dir / "c" / "noise_ledger.jsonl") != slurp(dir / "a" / "noise_ledger.jsonl"));
}

TEST_CASE("a held lock blocks a second writer") {
  oracle::TempDir dir("cli");
  write_packed(tiny_dataset(6, 7), dir / "in.bin");
  fs::create_directories(dir / "o");
  std::ofstream(dir / "o" / ".lock") << "pid 1 started earlier\n";
  const auto r = run(dir, "--out " + (dir / "o").string() + " noise flip --dataset " + (dir / "in.bin").string() +
                              " --rate 0.5");
  CHECK(r.exit_code == 1);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["message"].get<std::string>().find("lock") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "o" / "dataset.bin"));
}
