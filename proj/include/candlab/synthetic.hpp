#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "candlab/dataset.hpp"
#include "candlab/featurizer.hpp"
#include "candlab/noise.hpp"
#include "candlab/rng.hpp"

namespace candlab {

/// Gaussian class clusters in feature space: x = mu_label + e, with
/// mu_c ~ separation * N(0, I / dim) and e having independent coordinates of
/// variance proportional to j^(-noise_exponent), scaled to unit total variance.
struct ClusterSpec {
  int num_classes = 10;
  Eigen::Index dim = 4000;
  double separation = 0.2;
  double noise_exponent = 1.0;
};

class ClusterModel {
 public:
  ClusterModel(const ClusterSpec& spec, std::uint64_t seed);

  const ClusterSpec& spec() const noexcept { return spec_; }
  const Eigen::MatrixXd& means() const noexcept { return means_; }
  const Eigen::VectorXd& noise_scale() const noexcept { return noise_scale_; }

  /// One row per label.
  RowMatrix<double> sample(std::span<const int> labels, Rng& rng) const;
  /// center + noise.
  Eigen::RowVectorXd sample_around(const Eigen::RowVectorXd& center, Rng& rng) const;
  /// Extra cluster centers drawn like the class means (off-class themes).
  Eigen::MatrixXd draw_centers(int count, Rng& rng) const;

 private:
  ClusterSpec spec_;
  Eigen::MatrixXd means_;  // num_classes x dim
  Eigen::VectorXd noise_scale_;
};

/// `per_class` labels for each class, in class-major order.
std::vector<int> balanced_labels(int num_classes, std::size_t per_class);

FeatureMatrix<double> make_feature_matrix(RowMatrix<double> X, std::span<const int> labels, int num_classes,
                                          const std::string& id_prefix);

struct ClusterBase {
  ClusterModel model;
  FeatureMatrix<double> train;  // true labels
  FeatureMatrix<double> holdout;
};

ClusterBase make_cluster_base(const ClusterSpec& spec, std::size_t per_class, std::size_t holdout_per_class,
                              std::uint64_t seed);

struct NoisyFeatures {
  FeatureMatrix<double> features;
  NoiseLedger ledger;
  std::vector<std::size_t> clean_indices;  // rows whose label was not changed
};

/// Relabels the ledger's rows to their assigned classes.
NoisyFeatures apply_label_noise(const FeatureMatrix<double>& features, const NoiseLedger& ledger);

/// Structured noise at the feature level: rows marked OOD in the ledger are
/// replaced by samples around per-group theme centers (theme g for cluster g),
/// so each group is a coherent off-class cluster sharing one wrong label.
NoisyFeatures apply_structured_noise(const FeatureMatrix<double>& features, const NoiseLedger& ledger,
                                     const ClusterModel& model, std::uint64_t seed);

/// Small labeled image dataset: each class is a theme of smooth color fields
/// (see make_distractor_pool). Ids are "syn-<class>-<j>".
CandidateDataset make_synthetic_images(int num_classes, std::size_t per_class, int height, int width, int channels,
                                       std::uint64_t seed);

}  // namespace candlab
