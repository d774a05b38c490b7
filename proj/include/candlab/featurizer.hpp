#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "candlab/dataset.hpp"
#include "candlab/error.hpp"
#include "candlab/parallel.hpp"
#include "candlab/rng.hpp"

namespace candlab {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// RFMX flag bit 0: pixels were scaled to [0,1] and mean-subtracted per image.
inline constexpr std::uint32_t kFlagMeanSubtracted = 1u;

/// X (N x m) random features and Y (N x K) one-hot labels, rows aligned
/// with `record_ids`.
template <typename Scalar = double>
struct FeatureMatrix {
  RowMatrix<Scalar> X;
  RowMatrix<Scalar> Y;
  std::vector<std::string> record_ids;
  std::uint32_t flags = 0;

  Eigen::Index rows() const noexcept { return X.rows(); }
  Eigen::Index dim() const noexcept { return X.cols(); }
  Eigen::Index num_classes() const noexcept { return Y.cols(); }

  /// Class index of each row of Y.
  std::vector<int> labels() const {
    std::vector<int> out(static_cast<std::size_t>(Y.rows()));
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      Eigen::Index k = 0;
      Y.row(i).maxCoeff(&k);
      out[static_cast<std::size_t>(i)] = static_cast<int>(k);
    }
    return out;
  }

  template <typename To>
  FeatureMatrix<To> cast() const {
    return FeatureMatrix<To>{X.template cast<To>(), Y.template cast<To>(), record_ids, flags};
  }
};

template <typename Scalar = double>
RowMatrix<Scalar> one_hot(std::span<const int> labels, int num_classes) {
  RowMatrix<Scalar> Y = RowMatrix<Scalar>::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw InvalidArgument("label out of range for one-hot");
    Y(static_cast<Eigen::Index>(i), labels[i]) = Scalar(1);
  }
  return Y;
}

template <typename Scalar>
FeatureMatrix<Scalar> select_rows(const FeatureMatrix<Scalar>& features, std::span<const std::size_t> rows) {
  FeatureMatrix<Scalar> out;
  out.flags = features.flags;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), features.dim());
  out.Y.resize(static_cast<Eigen::Index>(rows.size()), features.num_classes());
  out.record_ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    if (r >= features.rows()) throw InvalidArgument("row index out of range");
    out.X.row(static_cast<Eigen::Index>(i)) = features.X.row(r);
    out.Y.row(static_cast<Eigen::Index>(i)) = features.Y.row(r);
    if (!features.record_ids.empty()) out.record_ids.push_back(features.record_ids[rows[i]]);
  }
  return out;
}

/// Index of the largest coefficient; ties go to the lowest index.
template <typename Derived>
int argmax(const Eigen::DenseBase<Derived>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k) {
    if (row(k) > row(best)) best = k;
  }
  return static_cast<int>(best);
}

template <typename Derived>
std::vector<int> argmax_rows(const Eigen::DenseBase<Derived>& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax(scores.row(i));
  return out;
}

struct FilterBankParams {
  int filters = 0;
  int kernel = 0;
  int channels = 0;
  int pool_grid = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const FilterBankParams&, const FilterBankParams&) = default;
};

/// One-layer random convolutional featurizer: F filters of C x k x k,
/// two-sided rectification, p x p average pooling. Feature length F * 2 * p^2.
class RandomFilterBank {
 public:
  RandomFilterBank() = default;

  /// Filter entries are i.i.d. N(0,1) / sqrt(C k^2), drawn in (filter,
  /// channel, row, col) order from the seed; biases are zero.
  explicit RandomFilterBank(const FilterBankParams& params) : params_(params) {
    if (params.filters <= 0 || params.kernel <= 0 || params.channels <= 0 || params.pool_grid <= 0) {
      throw InvalidArgument("filter bank dimensions must be positive");
    }
    const int taps = params.channels * params.kernel * params.kernel;
    weights_.resize(params.filters, taps);
    Rng rng(params.seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(taps));
    for (int f = 0; f < params.filters; ++f) {
      for (int t = 0; t < taps; ++t) weights_(f, t) = standard_normal(rng) * scale;
    }
    biases_ = Eigen::VectorXd::Zero(params.filters);
  }

  const FilterBankParams& params() const noexcept { return params_; }
  int filters() const noexcept { return params_.filters; }
  int kernel() const noexcept { return params_.kernel; }
  int channels() const noexcept { return params_.channels; }
  int pool_grid() const noexcept { return params_.pool_grid; }
  Eigen::Index feature_dim() const noexcept {
    return Eigen::Index(params_.filters) * 2 * params_.pool_grid * params_.pool_grid;
  }

  /// F x (C k k), taps ordered (channel, row, col).
  const RowMatrix<double>& weights() const noexcept { return weights_; }
  const Eigen::VectorXd& biases() const noexcept { return biases_; }
  double weight(int f, int c, int i, int j) const {
    return weights_(f, (c * params_.kernel + i) * params_.kernel + j);
  }

  void check_image(const Image& image) const {
    if (image.channels != params_.channels) throw DimensionError("image channel count does not match filter bank");
    if (params_.kernel > image.height || params_.kernel > image.width) {
      throw DimensionError("kernel larger than image");
    }
    if (image.height - params_.kernel + 1 < params_.pool_grid || image.width - params_.kernel + 1 < params_.pool_grid) {
      throw DimensionError("response map smaller than pooling grid");
    }
  }

  /// G(x) for one image.
  template <typename Scalar = double>
  RowVector<Scalar> apply(const Image& image) const;

 private:
  FilterBankParams params_;
  RowMatrix<double> weights_;
  Eigen::VectorXd biases_;
};

inline RandomFilterBank make_filter_bank(int filters, int kernel, int channels, int pool_grid, std::uint64_t seed) {
  return RandomFilterBank(FilterBankParams{filters, kernel, channels, pool_grid, seed});
}

/// Start of pooling cell `cell` when `length` positions are split into
/// `cells` near-equal runs.
inline int pool_cell_begin(int cell, int length, int cells) {
  return static_cast<int>((static_cast<long long>(cell) * length) / cells);
}

template <typename Scalar>
RowVector<Scalar> RandomFilterBank::apply(const Image& image) const {
  check_image(image);
  const int k = params_.kernel;
  const int C = params_.channels;
  const int p = params_.pool_grid;
  const int out_h = image.height - k + 1;
  const int out_w = image.width - k + 1;
  const int taps = C * k * k;

  // (v - mean) / 255 with the centering done in integers.
  const auto count = static_cast<long long>(image.size());
  long long total = 0;
  for (const auto v : image.pixels) total += v;
  const Scalar scale = Scalar(1) / (Scalar(255) * Scalar(count));
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pixels(static_cast<Eigen::Index>(image.size()));
  for (std::size_t i = 0; i < image.size(); ++i) {
    pixels(static_cast<Eigen::Index>(i)) = Scalar(image.pixels[i] * count - total) * scale;
  }

  RowMatrix<Scalar> patches(out_h * out_w, taps);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Eigen::Index row = y * out_w + x;
      Eigen::Index t = 0;
      for (int c = 0; c < C; ++c) {
        for (int i = 0; i < k; ++i) {
          for (int j = 0; j < k; ++j) {
            patches(row, t++) = pixels((static_cast<Eigen::Index>(y + i) * image.width + (x + j)) * C + c);
          }
        }
      }
    }
  }
  // responses: positions x F
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> responses =
      patches * weights_.cast<Scalar>().transpose();

  RowVector<Scalar> out(feature_dim());
  for (int f = 0; f < params_.filters; ++f) {
    const Scalar bias = Scalar(biases_(f));
    for (int polarity = 0; polarity < 2; ++polarity) {
      const Scalar sign = polarity == 0 ? Scalar(1) : Scalar(-1);
      for (int cr = 0; cr < p; ++cr) {
        const int y0 = pool_cell_begin(cr, out_h, p);
        const int y1 = pool_cell_begin(cr + 1, out_h, p);
        for (int cc = 0; cc < p; ++cc) {
          const int x0 = pool_cell_begin(cc, out_w, p);
          const int x1 = pool_cell_begin(cc + 1, out_w, p);
          Scalar sum(0);
          for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
              const Scalar v = sign * responses(y * out_w + x, f) - bias;
              if (v > Scalar(0)) sum += v;
            }
          }
          out(((f * 2 + polarity) * p + cr) * p + cc) = sum / Scalar((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  return out;
}

/// Row-wise G(x) over a dataset. Rows follow record order regardless of
/// `threads`.
template <typename Scalar = double>
FeatureMatrix<Scalar> featurize(const RandomFilterBank& bank, const CandidateDataset& dataset,
                                std::size_t threads = 0) {
  FeatureMatrix<Scalar> out;
  out.flags = kFlagMeanSubtracted;
  const auto n = static_cast<Eigen::Index>(dataset.size());
  out.X.resize(n, bank.feature_dim());
  for (const auto& r : dataset.records) {
    bank.check_image(r.image);
    out.record_ids.push_back(r.id);
  }
  const auto labels = dataset.labels();
  out.Y = one_hot<Scalar>(labels, dataset.num_classes);
  parallel_for(dataset.size(), threads, [&](std::size_t i) {
    out.X.row(static_cast<Eigen::Index>(i)) = bank.apply<Scalar>(dataset.records[i].image);
  });
  return out;
}

/// argmax_k (G(x) Z)_k, ties to the lowest class.
template <typename Derived>
int predict(const Eigen::MatrixBase<Derived>& Z, const RandomFilterBank& bank, const Image& image) {
  if (Z.rows() != bank.feature_dim()) throw DimensionError("weight rows do not match feature dimension");
  using Scalar = typename Derived::Scalar;
  const RowVector<Scalar> scores = bank.apply<Scalar>(image) * Z;
  return argmax(scores);
}

template <typename Derived>
int predict(const Eigen::MatrixBase<Derived>& Z, const RandomFilterBank& bank, const ImageRecord& record) {
  return predict(Z, bank, record.image);
}

// Feature matrix file: "RFMX", u32 version, u32 flags, u64 N, u64 m, u64 K,
// X (f32 row-major), Y (f32 row-major), newline-joined record ids.
inline constexpr std::uint32_t kRfmxVersion = 1;

template <typename Scalar>
void write_rfmx(const FeatureMatrix<Scalar>& features, const std::filesystem::path& path);

template <typename Scalar = double>
FeatureMatrix<Scalar> read_rfmx(const std::filesystem::path& path);

/// The bank is persisted by its generating parameters only.
void write_filter_bank(const RandomFilterBank& bank, const std::filesystem::path& path);
RandomFilterBank read_filter_bank(const std::filesystem::path& path);

}  // namespace candlab
