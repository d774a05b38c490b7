#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "candlab/dataset.hpp"
#include "candlab/featurizer.hpp"
#include "candlab/trainer.hpp"

namespace candlab {

using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ClassStats {
  int cls = 0;
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double accuracy = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  bool undefined = false;  // no test records of this class; interval is [0, 1]
};

struct EvalResult {
  std::vector<ClassStats> per_class;
  ConfusionMatrix confusion;  // rows: true class, columns: predicted
  double overall_accuracy = 0.0;
  double alpha = 0.05;

  int num_classes() const noexcept { return static_cast<int>(per_class.size()); }
};

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// q with I_q(a, b) = p, by bisection to `tol`.
double beta_quantile(double p, double a, double b, double tol = 1e-12);

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

/// Exact binomial interval at confidence 1 - alpha.
Interval clopper_pearson(std::int64_t successes, std::int64_t trials, double alpha = 0.05);

EvalResult evaluate_predictions(std::span<const int> truth, std::span<const int> predicted, int num_classes,
                                double alpha = 0.05);

EvalResult evaluate(const Eigen::MatrixXd& Z, const RandomFilterBank& bank, const CandidateDataset& test,
                    double alpha = 0.05, std::size_t threads = 0);

struct ClassFraction {
  int cls = 0;
  double fraction = 0.0;
};

/// The correct-class fraction first, then other classes with nonzero mass by
/// descending fraction (ties to the lower class index).
std::vector<ClassFraction> confusion_breakdown(const EvalResult& result, int class_index);

std::string eval_to_json(const EvalResult& result, std::span<const std::string> class_names = {});
void write_eval_json(const EvalResult& result, const std::filesystem::path& path,
                     std::span<const std::string> class_names = {});
void write_per_class_csv(const EvalResult& result, const std::filesystem::path& path,
                         std::span<const std::string> class_names = {});
void write_learning_curve_csv(const TrainTrace& trace, const std::filesystem::path& path);

}  // namespace candlab
