#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "candlab/error.hpp"
#include "candlab/featurizer.hpp"
#include "candlab/rng.hpp"

namespace candlab {

struct TrainConfig {
  std::optional<double> step_size;  // empty: 1 / sigma_max^2
  long max_iters = 1000;
  long eval_interval = 10;
  std::uint64_t seed = 0;
  double clean_threshold = 0.99;
  std::size_t max_snapshots = 64;
  // Iterations recorded as checkpoints in addition to the regular grid.
  std::vector<long> extra_checkpoints;

  void validate() const {
    if (step_size && !(*step_size > 0.0)) throw InvalidArgument("step size must be positive");
    if (max_iters <= 0) throw InvalidArgument("max_iters must be positive");
    if (eval_interval <= 0 || eval_interval > max_iters) throw InvalidArgument("eval_interval must be in [1, max_iters]");
    if (!(clean_threshold > 0.0 && clean_threshold <= 1.0)) throw InvalidArgument("clean threshold must be in (0, 1]");
    if (max_snapshots < 2) throw InvalidArgument("max_snapshots must be at least 2");
  }
};

struct Checkpoint {
  long iteration = 0;
  double loss = 0.0;                // ||Y - X Z_t||_F^2
  Eigen::VectorXd column_loss;      // per label column
  double train_accuracy = 0.0;
  std::optional<double> clean_accuracy;
  std::optional<double> holdout_accuracy;
  std::optional<std::size_t> snapshot;  // index into TrainTrace::snapshots
};

struct Snapshot {
  long iteration = 0;
  Eigen::MatrixXd Z;  // m x K
};

struct TrainTrace {
  std::vector<Checkpoint> checkpoints;
  std::vector<Snapshot> snapshots;
  double eta_used = 0.0;
  double sigma_max_sq = 0.0;
  bool kernel_form = false;

  const Checkpoint& final_checkpoint() const { return checkpoints.back(); }

  /// Weights stored for checkpoint `index`, or nullptr when thinned away.
  const Eigen::MatrixXd* weights_at(std::size_t index) const {
    const auto& cp = checkpoints.at(index);
    return cp.snapshot ? &snapshots[*cp.snapshot].Z : nullptr;
  }
};

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration; stops when the Rayleigh quotient changes by at most
/// rel_tol relative.
template <typename Derived>
double power_iteration(const Eigen::MatrixBase<Derived>& S, std::uint64_t seed, double rel_tol = 1e-6,
                       int max_iters = 10000) {
  using Vec = Eigen::VectorXd;
  if (S.rows() != S.cols()) throw DimensionError("power iteration needs a square matrix");
  if (S.rows() == 0) return 0.0;
  Rng rng(seed);
  Vec v(S.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = standard_normal(rng);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vec w = S.template cast<double>() * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (it > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

/// Largest eigenvalue of X^T X (equivalently X X^T), iterating on the
/// smaller side without forming either product.
template <typename Derived>
double top_gram_eigenvalue(const Eigen::MatrixBase<Derived>& X, std::uint64_t seed, double rel_tol = 1e-6,
                           int max_iters = 10000) {
  const bool rows_side = X.rows() <= X.cols();
  const Eigen::Index n = rows_side ? X.rows() : X.cols();
  if (n == 0) return 0.0;
  Rng rng(seed);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = standard_normal(rng);
  v.normalize();
  const Eigen::MatrixXd Xd = X.template cast<double>();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd w = rows_side ? Eigen::VectorXd(Xd * (Xd.transpose() * v)) : Eigen::VectorXd(Xd.transpose() * (Xd * v));
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (it > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

namespace detail {

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth,
                       std::span<const std::size_t> subset) {
  if (subset.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto i : subset) correct += predicted[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(subset.size());
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (truth.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

/// Sorted, deduplicated checkpoint iterations: 0, every interval, T, extras.
inline std::vector<long> checkpoint_schedule(const TrainConfig& config) {
  std::vector<long> out;
  for (long t = 0; t <= config.max_iters; t += config.eval_interval) out.push_back(t);
  out.push_back(config.max_iters);
  for (const long t : config.extra_checkpoints) {
    if (t < 0 || t > config.max_iters) throw InvalidArgument("extra checkpoint outside [0, max_iters]");
    out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Which checkpoints keep a weight snapshot: all of them when they fit
/// under the cap, otherwise a uniform stride plus the last one.
inline std::vector<bool> snapshot_mask(std::size_t checkpoints, std::size_t cap) {
  std::vector<bool> keep(checkpoints, false);
  if (checkpoints <= cap) {
    std::fill(keep.begin(), keep.end(), true);
    return keep;
  }
  const std::size_t stride = (checkpoints - 1 + cap - 2) / (cap - 1);
  for (std::size_t j = 0; j < checkpoints; j += stride) keep[j] = true;
  keep.back() = true;
  return keep;
}

}  // namespace detail

/// Full-batch gradient descent on ||Y - X Z||_F^2 from Z_0 = 0:
///   Z_{t+1} = Z_t - eta X^T (X Z_t - Y).
/// When N < m the iterates are carried as Z_t = X^T A_t with
///   A_{t+1} = A_t - eta (X X^T A_t - Y),
/// which produces the same sequence at O(N^2 K) per step.
template <typename Scalar>
TrainTrace train(const FeatureMatrix<Scalar>& features, const TrainConfig& config,
                 std::span<const std::size_t> clean_indices = {}, const FeatureMatrix<Scalar>* holdout = nullptr) {
  using Mat = Eigen::MatrixXd;
  config.validate();
  const Eigen::Index n = features.rows();
  const Eigen::Index m = features.dim();
  const Eigen::Index K = features.num_classes();
  if (features.Y.rows() != n || n == 0 || K == 0) throw DimensionError("feature and label matrices are inconsistent");
  for (const auto i : clean_indices) {
    if (static_cast<Eigen::Index>(i) >= n) throw InvalidArgument("clean index out of range");
  }
  if (holdout && (holdout->dim() != m || holdout->num_classes() != K)) {
    throw DimensionError("holdout dimensions do not match training features");
  }

  const Mat X = features.X.template cast<double>();
  const Mat Y = features.Y.template cast<double>();
  const std::vector<int> truth = features.labels();
  std::vector<int> holdout_truth;
  Mat Xh;
  if (holdout) {
    Xh = holdout->X.template cast<double>();
    holdout_truth = holdout->labels();
  }

  TrainTrace trace;
  trace.kernel_form = n < m;

  Mat gram;        // N x N, kernel form only
  Mat cross_gram;  // Nh x N, kernel form with holdout
  if (trace.kernel_form) {
    gram = Mat::Zero(n, n);
    gram.template selfadjointView<Eigen::Lower>().rankUpdate(X);
    gram = Mat(gram.template selfadjointView<Eigen::Lower>());
    if (holdout) cross_gram = Xh * X.transpose();
    trace.sigma_max_sq = power_iteration(gram, derive_seed(config.seed, "power-iteration"));
  } else {
    trace.sigma_max_sq = top_gram_eigenvalue(X, derive_seed(config.seed, "power-iteration"));
  }
  if (config.step_size) {
    trace.eta_used = *config.step_size;
  } else {
    if (!(trace.sigma_max_sq > 0.0)) throw InvalidArgument("feature matrix is zero; automatic step size undefined");
    trace.eta_used = 1.0 / trace.sigma_max_sq;
  }
  const double eta = trace.eta_used;

  const auto schedule = detail::checkpoint_schedule(config);
  const auto keep = detail::snapshot_mask(schedule.size(), config.max_snapshots);

  // Coefficients: Z (m x K) in primal form, A (N x K) in kernel form.
  Mat coef = Mat::Zero(trace.kernel_form ? n : m, K);
  Mat predictions(n, K);
  Mat residual(n, K);
  std::size_t next_cp = 0;
  for (long t = 0;; ++t) {
    if (trace.kernel_form) {
      predictions.noalias() = gram * coef;
    } else {
      predictions.noalias() = X * coef;
    }
    residual = predictions - Y;
    const double loss = residual.squaredNorm();
    if (!std::isfinite(loss)) throw DivergenceError("non-finite loss during gradient descent", t);

    if (next_cp < schedule.size() && schedule[next_cp] == t) {
      Checkpoint cp;
      cp.iteration = t;
      cp.loss = loss;
      cp.column_loss = residual.colwise().squaredNorm().transpose();
      const auto predicted = argmax_rows(predictions);
      cp.train_accuracy = detail::accuracy(predicted, truth);
      if (!clean_indices.empty()) cp.clean_accuracy = detail::accuracy(predicted, truth, clean_indices);
      std::optional<Mat> weights;
      if (keep[next_cp]) weights = trace.kernel_form ? Mat(X.transpose() * coef) : coef;
      if (holdout) {
        const Mat scores = trace.kernel_form ? Mat(cross_gram * coef) : Mat(Xh * coef);
        cp.holdout_accuracy = detail::accuracy(argmax_rows(scores), holdout_truth);
      }
      if (keep[next_cp]) {
        cp.snapshot = trace.snapshots.size();
        trace.snapshots.push_back(Snapshot{t, std::move(*weights)});
      }
      trace.checkpoints.push_back(std::move(cp));
      ++next_cp;
    }
    if (t == config.max_iters) break;

    if (trace.kernel_form) {
      coef.noalias() -= eta * residual;
    } else {
      coef.noalias() -= eta * (X.transpose() * residual);
    }
  }
  return trace;
}

/// First checkpoint whose clean-subset accuracy reaches tau; if none does,
/// the earliest checkpoint with the highest clean-subset accuracy.
std::size_t early_stop_clean(const TrainTrace& trace, double tau);

/// Earliest checkpoint with the highest holdout accuracy.
std::size_t early_stop_holdout(const TrainTrace& trace);

/// Trace JSONL: one {t, loss, train_acc, clean_acc, holdout_acc} per line.
void write_trace_jsonl(const TrainTrace& trace, const std::filesystem::path& path);
std::vector<Checkpoint> read_trace_jsonl(const std::filesystem::path& path);

/// Weight snapshot: "RFWZ", u64 m, u64 K, f32 row-major.
void write_rfwz(const Eigen::MatrixXd& Z, const std::filesystem::path& path);
Eigen::MatrixXd read_rfwz(const std::filesystem::path& path);

}  // namespace candlab
