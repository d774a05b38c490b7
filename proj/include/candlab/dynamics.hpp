#pragma once

#include <cmath>
#include <filesystem>

#include <Eigen/Dense>

#include "candlab/error.hpp"
#include "candlab/featurizer.hpp"

namespace candlab {

/// Spectrum of the Gram matrix X X^T together with the label projections
/// onto its eigenvectors.
struct SpectrumProfile {
  Eigen::VectorXd eigenvalues;     // sigma_i^2, descending, >= 0
  Eigen::MatrixXd eigenvectors;    // N x N, column i is v_i
  Eigen::MatrixXd alignments;      // N x K, entry (i, k) = <y_k, v_i>
  Eigen::VectorXd residual_floor;  // per column: energy along zero-eigenvalue directions
  double zero_threshold = 0.0;     // eigenvalues at or below this count as zero

  Eigen::Index size() const noexcept { return eigenvalues.size(); }
  Eigen::Index rank() const {
    Eigen::Index r = 0;
    while (r < eigenvalues.size() && eigenvalues(r) > zero_threshold) ++r;
    return r;
  }
  double sigma_max_sq() const { return eigenvalues.size() ? eigenvalues(0) : 0.0; }
};

struct DecomposeOptions {
  Eigen::Index max_rows = 5000;
  // relative to the largest eigenvalue
  double zero_tolerance = 1e-10;
};

/// Projections V^T Y plus per-column energy outside the range of X X^T.
inline void align_labels(const SpectrumProfile& profile, const Eigen::Ref<const Eigen::MatrixXd>& labels,
                         Eigen::MatrixXd& alignments, Eigen::VectorXd& floor) {
  if (labels.rows() != profile.eigenvectors.rows()) throw DimensionError("label rows do not match spectrum size");
  alignments = profile.eigenvectors.transpose() * labels;
  const Eigen::Index r = profile.rank();
  floor = alignments.bottomRows(alignments.rows() - r).colwise().squaredNorm().transpose();
}

template <typename DerivedX, typename DerivedY>
SpectrumProfile decompose(const Eigen::MatrixBase<DerivedX>& X, const Eigen::MatrixBase<DerivedY>& Y,
                          const DecomposeOptions& options = {}) {
  if (X.rows() != Y.rows()) throw DimensionError("X and Y row counts differ");
  if (X.rows() > options.max_rows) {
    throw InvalidArgument("N = " + std::to_string(X.rows()) + " exceeds the Gram matrix cap of " +
                          std::to_string(options.max_rows));
  }
  if (!X.allFinite() || !Y.allFinite()) throw InvalidArgument("non-finite entries in feature or label matrix");

  const Eigen::MatrixXd Xd = X.template cast<double>();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(Xd.rows(), Xd.rows());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(Xd);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw Error("numeric", "symmetric eigensolver did not converge");

  SpectrumProfile profile;
  const Eigen::Index n = Xd.rows();
  profile.eigenvalues = solver.eigenvalues().reverse().cwiseMax(0.0);
  profile.eigenvectors = solver.eigenvectors().rowwise().reverse();
  profile.zero_threshold = options.zero_tolerance * (n ? profile.eigenvalues(0) : 0.0);
  align_labels(profile, Y.template cast<double>(), profile.alignments, profile.residual_floor);
  return profile;
}

template <typename Scalar>
SpectrumProfile decompose(const FeatureMatrix<Scalar>& features, const DecomposeOptions& options = {}) {
  return decompose(features.X, features.Y, options);
}

struct ResidualPrediction {
  Eigen::VectorXd per_column;
  bool divergent = false;  // eta * sigma_max^2 >= 2

  double total() const { return per_column.sum(); }
};

/// Squared residual of gradient descent after t steps with step size eta,
/// per label column:
///   sum_i (1 - eta sigma_i^2)^(2t) <y_k, v_i>^2 + floor_k
/// with the sum over nonzero eigenvalues.
inline ResidualPrediction predict_residual(const SpectrumProfile& profile, double eta, long t) {
  if (!(eta > 0.0)) throw InvalidArgument("step size must be positive");
  if (t < 0) throw InvalidArgument("iteration count must be nonnegative");
  ResidualPrediction out;
  out.divergent = eta * profile.sigma_max_sq() >= 2.0;
  out.per_column = profile.residual_floor;
  const Eigen::Index r = profile.rank();
  for (Eigen::Index i = 0; i < r; ++i) {
    const double decay = std::pow(1.0 - eta * profile.eigenvalues(i), 2.0 * static_cast<double>(t));
    out.per_column += decay * profile.alignments.row(i).transpose().cwiseAbs2();
  }
  return out;
}

/// Share of the label energy ||Y||_F^2 captured by the leading
/// ceil(top_fraction * N) eigendirections (zero-eigenvalue directions excluded).
inline double energy_fraction(const SpectrumProfile& profile, const Eigen::Ref<const Eigen::MatrixXd>& labels,
                              double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw InvalidArgument("top_fraction must be in (0, 1]");
  Eigen::MatrixXd a;
  Eigen::VectorXd floor;
  align_labels(profile, labels, a, floor);
  const double total = labels.squaredNorm();
  if (total == 0.0) return 0.0;
  const auto cut = std::min<Eigen::Index>(
      static_cast<Eigen::Index>(std::ceil(top_fraction * static_cast<double>(profile.size()) - 1e-12)), profile.rank());
  return a.topRows(cut).squaredNorm() / total;
}

struct AlignmentSummary {
  Eigen::Index cut = 0;
  double clean_fraction = 0.0;
  double noisy_fraction = 0.0;
};

inline AlignmentSummary alignment_report(const SpectrumProfile& profile,
                                         const Eigen::Ref<const Eigen::MatrixXd>& clean_labels,
                                         const Eigen::Ref<const Eigen::MatrixXd>& noisy_labels, double top_fraction) {
  if (clean_labels.rows() != noisy_labels.rows() || clean_labels.cols() != noisy_labels.cols()) {
    throw DimensionError("clean and noisy label matrices differ in shape");
  }
  AlignmentSummary out;
  out.cut = static_cast<Eigen::Index>(std::ceil(top_fraction * static_cast<double>(profile.size()) - 1e-12));
  out.clean_fraction = energy_fraction(profile, clean_labels, top_fraction);
  out.noisy_fraction = energy_fraction(profile, noisy_labels, top_fraction);
  return out;
}

/// JSON with eigenvalues, alignments, floors and the zero threshold.
void write_spectrum_json(const SpectrumProfile& profile, const std::filesystem::path& path);
/// Eigenvectors: "RFEV", u32 version, u64 N, eigenvalues f64, V f64 row-major.
void write_eigenvectors(const SpectrumProfile& profile, const std::filesystem::path& path);
SpectrumProfile read_eigenvectors(const std::filesystem::path& path);

}  // namespace candlab
