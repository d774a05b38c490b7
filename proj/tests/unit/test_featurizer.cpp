#include <doctest.h>

#include <fstream>
#include <random>

#include "candlab/error.hpp"
#include "candlab/featurizer.hpp"
#include "oracles.hpp"

using namespace candlab;

namespace {

CandidateDataset random_dataset(std::size_t n, int h, int w, int c, int classes, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  CandidateDataset ds;
  ds.num_classes = classes;
  ds.class_names = default_class_names(classes);
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r;
    r.id = "img" + std::to_string(i);
    r.label = static_cast<int>(i % static_cast<std::size_t>(classes));
    r.image = oracle::random_image(gen, h, w, c);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace

TEST_CASE("dimension law") {
  CHECK(make_filter_bank(4000, 6, 3, 3, 1).feature_dim() == 72000);
  CHECK(make_filter_bank(1, 1, 1, 1, 1).feature_dim() == 2);
  std::mt19937_64 gen(0);
  for (int trial = 0; trial < 10; ++trial) {
    const int F = 1 + static_cast<int>(gen() % 5), k = 1 + static_cast<int>(gen() % 3),
              p = 1 + static_cast<int>(gen() % 3);
    const auto bank = make_filter_bank(F, k, 1, p, gen());
    const auto ds = random_dataset(2, 8, 9, 1, 2, gen());
    CHECK(featurize(bank, ds).dim() == F * 2 * p * p);
  }
}

TEST_CASE("canonical 32x32x3 image gives 72000 features") {
  const auto bank = make_filter_bank(4000, 6, 3, 3, 42);
  const auto ds = random_dataset(1, 32, 32, 3, 10, 1);
  const auto features = featurize(bank, ds);
  CHECK(features.X.cols() == 72000);
  CHECK(features.X.minCoeff() >= 0.0);
}

TEST_CASE("filter bank is deterministic and scaled") {
  const auto a = make_filter_bank(50, 5, 3, 2, 99);
  const auto b = make_filter_bank(50, 5, 3, 2, 99);
  const auto c = make_filter_bank(50, 5, 3, 2, 100);
  CHECK(a.weights() == b.weights());
  CHECK(a.weights() != c.weights());
  CHECK(a.biases().isZero());
  // Entries are N(0,1)/sqrt(75): sample variance near 1/75.
  const double var = a.weights().array().square().mean();
  CHECK(var == doctest::Approx(1.0 / 75.0).epsilon(0.1));
  CHECK_THROWS_AS(make_filter_bank(0, 3, 3, 3, 1), InvalidArgument);
  CHECK_THROWS_AS(make_filter_bank(3, 0, 3, 3, 1), InvalidArgument);
  CHECK_THROWS_AS(make_filter_bank(3, 3, -1, 3, 1), InvalidArgument);
  CHECK_THROWS_AS(make_filter_bank(3, 3, 3, 0, 1), InvalidArgument);
}

TEST_CASE("matches the scalar-loop oracle") {
  SUBCASE("8x8x1 with (2, 3, 1, 2)") {
    const auto bank = make_filter_bank(2, 3, 1, 2, 5);
    const auto ds = random_dataset(1, 8, 8, 1, 1, 6);
    const auto got = bank.apply(ds.records[0].image);
    const auto want = oracle::naive_features(bank, ds.records[0].image);
    REQUIRE(got.size() == static_cast<Eigen::Index>(want.size()));
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(got(static_cast<Eigen::Index>(i)) == doctest::Approx(want[i]).epsilon(1e-6).scale(1e-12));
    }
  }
  SUBCASE("uneven pooling cells, color") {
    const auto bank = make_filter_bank(3, 4, 3, 3, 8);
    const auto ds = random_dataset(3, 13, 11, 3, 1, 9);
    for (const auto& r : ds.records) {
      const auto got = bank.apply(r.image);
      const auto want = oracle::naive_features(bank, r.image);
      for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(got(static_cast<Eigen::Index>(i)) == doctest::Approx(want[i]).epsilon(1e-6).scale(1e-12));
      }
    }
  }
}

TEST_CASE("constant images give zero features") {
  const auto bank = make_filter_bank(4, 3, 3, 2, 1);
  for (const std::uint8_t v : {0, 17, 255}) {
    Image img(6, 6, 3);
    std::fill(img.pixels.begin(), img.pixels.end(), v);
    CHECK(bank.apply(img).isZero(0.0));
  }
}

TEST_CASE("featurize is permutation equivariant and batch independent") {
  const auto bank = make_filter_bank(6, 3, 3, 2, 3);
  const auto ds = random_dataset(12, 9, 9, 3, 3, 4);
  const auto full = featurize(bank, ds, 3);
  const auto serial = featurize(bank, ds, 1);
  CHECK(full.X == serial.X);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CandidateDataset one = ds;
    one.records = {ds.records[i]};
    CHECK(featurize(bank, one).X.row(0) == full.X.row(static_cast<Eigen::Index>(i)));
  }
  std::vector<std::size_t> perm{5, 3, 11, 0, 1, 2, 4, 6, 7, 8, 9, 10};
  const auto shuffled = featurize(bank, select(ds, perm));
  for (std::size_t i = 0; i < perm.size(); ++i) {
    CHECK(shuffled.X.row(static_cast<Eigen::Index>(i)) == full.X.row(static_cast<Eigen::Index>(perm[i])));
    CHECK(shuffled.record_ids[i] == ds.records[perm[i]].id);
  }
  CHECK(full.X.minCoeff() >= 0.0);
  for (Eigen::Index i = 0; i < full.Y.rows(); ++i) {
    CHECK(full.Y.row(i).sum() == 1.0);
    CHECK(full.Y.row(i).maxCoeff() == 1.0);
  }
}

TEST_CASE("dimension mismatches are rejected") {
  const auto bank = make_filter_bank(2, 5, 3, 2, 1);
  CHECK_THROWS_AS(featurize(bank, random_dataset(1, 8, 8, 1, 1, 1)), DimensionError);
  CHECK_THROWS_AS(featurize(bank, random_dataset(1, 4, 8, 3, 1, 1)), DimensionError);
  const Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(bank.feature_dim() + 1, 2);
  const auto ds = random_dataset(1, 8, 8, 3, 1, 1);
  CHECK_THROWS_AS(predict(Z, bank, ds.records[0]), DimensionError);
}

TEST_CASE("predict uses argmax with ties to the lowest class") {
  const auto bank = make_filter_bank(2, 3, 3, 2, 1);
  const auto ds = random_dataset(4, 8, 8, 3, 2, 2);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(bank.feature_dim(), 3);
  for (const auto& r : ds.records) CHECK(predict(zero, bank, r) == 0);

  Eigen::RowVector2d scores(0.2, 0.9);
  CHECK(argmax(scores) == 1);
  Eigen::RowVector3d tie(0.5, 0.5, 0.1);
  CHECK(argmax(tie) == 0);
}

TEST_CASE("RFMX round trip") {
  oracle::TempDir dir("rfmx");
  const auto bank = make_filter_bank(3, 3, 3, 2, 1);
  const auto ds = random_dataset(5, 7, 7, 3, 3, 3);
  const auto f = featurize<float>(bank, ds);
  write_rfmx(f, dir / "f.rfmx");
  const auto back = read_rfmx<float>(dir / "f.rfmx");
  CHECK(back.X == f.X);
  CHECK(back.Y == f.Y);
  CHECK(back.record_ids == f.record_ids);
  CHECK(back.flags == kFlagMeanSubtracted);

  write_filter_bank(bank, dir / "bank.json");
  const auto bank2 = read_filter_bank(dir / "bank.json");
  CHECK(bank2.params() == bank.params());
  CHECK(bank2.weights() == bank.weights());

  std::ofstream(dir / "junk.rfmx") << "JUNKJUNK";
  CHECK_THROWS_AS(read_rfmx<double>(dir / "junk.rfmx"), FormatError);
}
