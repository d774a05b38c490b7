#include "candlab/synthetic.hpp"

#include <cmath>

#include "candlab/error.hpp"

namespace candlab {

ClusterModel::ClusterModel(const ClusterSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.num_classes < 1 || spec.dim < 1) throw InvalidArgument("cluster model needs classes and dimensions");
  if (!(spec.separation >= 0.0)) throw InvalidArgument("separation must be non-negative");
  noise_scale_.resize(spec.dim);
  for (Eigen::Index j = 0; j < spec.dim; ++j) {
    noise_scale_(j) = std::pow(static_cast<double>(j + 1), -spec.noise_exponent / 2.0);
  }
  noise_scale_ /= noise_scale_.norm();
  Rng rng(seed);
  means_ = draw_centers(spec.num_classes, rng);
}

Eigen::MatrixXd ClusterModel::draw_centers(int count, Rng& rng) const {
  Eigen::MatrixXd centers(count, spec_.dim);
  const double scale = spec_.separation / std::sqrt(static_cast<double>(spec_.dim));
  for (int c = 0; c < count; ++c) {
    for (Eigen::Index j = 0; j < spec_.dim; ++j) centers(c, j) = standard_normal(rng) * scale;
  }
  return centers;
}

Eigen::RowVectorXd ClusterModel::sample_around(const Eigen::RowVectorXd& center, Rng& rng) const {
  if (center.size() != spec_.dim) throw DimensionError("center dimension mismatch");
  Eigen::RowVectorXd x(spec_.dim);
  for (Eigen::Index j = 0; j < spec_.dim; ++j) x(j) = center(j) + standard_normal(rng) * noise_scale_(j);
  return x;
}

RowMatrix<double> ClusterModel::sample(std::span<const int> labels, Rng& rng) const {
  RowMatrix<double> X(static_cast<Eigen::Index>(labels.size()), spec_.dim);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= spec_.num_classes) throw InvalidArgument("label out of range");
    X.row(static_cast<Eigen::Index>(i)) = sample_around(means_.row(labels[i]), rng);
  }
  return X;
}

std::vector<int> balanced_labels(int num_classes, std::size_t per_class) {
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(num_classes) * per_class);
  for (int c = 0; c < num_classes; ++c) labels.insert(labels.end(), per_class, c);
  return labels;
}

FeatureMatrix<double> make_feature_matrix(RowMatrix<double> X, std::span<const int> labels, int num_classes,
                                          const std::string& id_prefix) {
  if (static_cast<std::size_t>(X.rows()) != labels.size()) throw DimensionError("row count differs from labels");
  FeatureMatrix<double> out;
  out.X = std::move(X);
  out.Y = one_hot<double>(labels, num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) out.record_ids.push_back(id_prefix + std::to_string(i));
  return out;
}

ClusterBase make_cluster_base(const ClusterSpec& spec, std::size_t per_class, std::size_t holdout_per_class,
                              std::uint64_t seed) {
  ClusterModel model(spec, derive_seed(seed, "cluster-means"));
  Rng rng(derive_seed(seed, "cluster-samples"));
  const auto train_labels = balanced_labels(spec.num_classes, per_class);
  const auto holdout_labels = balanced_labels(spec.num_classes, holdout_per_class);
  auto train = make_feature_matrix(model.sample(train_labels, rng), train_labels, spec.num_classes, "train-");
  auto holdout = make_feature_matrix(model.sample(holdout_labels, rng), holdout_labels, spec.num_classes, "holdout-");
  return ClusterBase{std::move(model), std::move(train), std::move(holdout)};
}

NoisyFeatures apply_label_noise(const FeatureMatrix<double>& features, const NoiseLedger& ledger) {
  ledger.validate();
  NoisyFeatures out{features, ledger, {}};
  std::vector<bool> corrupted(static_cast<std::size_t>(features.rows()), false);
  for (const auto& e : ledger.entries) {
    if (e.index >= corrupted.size()) throw InvalidArgument("ledger index out of range");
    const auto row = static_cast<Eigen::Index>(e.index);
    out.features.Y.row(row).setZero();
    out.features.Y(row, e.assigned) = 1.0;
    corrupted[e.index] = true;
  }
  for (std::size_t i = 0; i < corrupted.size(); ++i) {
    if (!corrupted[i]) out.clean_indices.push_back(i);
  }
  return out;
}

NoisyFeatures apply_structured_noise(const FeatureMatrix<double>& features, const NoiseLedger& ledger,
                                     const ClusterModel& model, std::uint64_t seed) {
  if (features.dim() != model.spec().dim) throw DimensionError("feature dimension differs from cluster model");
  auto out = apply_label_noise(features, ledger);
  int groups = 0;
  for (const auto& e : ledger.entries) {
    if (e.cluster) groups = std::max(groups, *e.cluster + 1);
  }
  Rng rng(seed);
  const Eigen::MatrixXd themes = model.draw_centers(groups, rng);
  for (const auto& e : ledger.entries) {
    if (!e.ood) continue;
    if (!e.cluster) throw InvalidArgument("out-of-distribution ledger entry without a cluster");
    out.features.X.row(static_cast<Eigen::Index>(e.index)) = model.sample_around(themes.row(*e.cluster), rng);
  }
  return out;
}

CandidateDataset make_synthetic_images(int num_classes, std::size_t per_class, int height, int width, int channels,
                                       std::uint64_t seed) {
  if (num_classes < 1) throw InvalidArgument("num_classes must be positive");
  const std::vector<std::size_t> per_theme(static_cast<std::size_t>(num_classes), per_class);
  auto ds = make_distractor_pool(per_theme, height, width, channels, seed);
  ds.num_classes = num_classes;
  ds.class_names = default_class_names(num_classes);
  std::size_t i = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t j = 0; j < per_class; ++j, ++i) {
      auto& r = ds.records[i];
      r.id = "syn-" + std::to_string(c) + "-" + std::to_string(j);
      r.label = c;
      r.keyword = ds.class_names[static_cast<std::size_t>(c)];
    }
  }
  return ds;
}

}  // namespace candlab
