#include "candlab/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "candlab/error.hpp"

namespace candlab {

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double beta_quantile(double p, double a, double b, double tol) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("quantile level must be in [0, 1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (incomplete_beta(a, b, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Interval clopper_pearson(std::int64_t successes, std::int64_t trials, double alpha) {
  if (trials < 1) throw InvalidArgument("trials must be at least 1");
  if (successes < 0 || successes > trials) throw InvalidArgument("successes must be in [0, trials]");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0, 1)");
  const auto x = static_cast<double>(successes);
  const auto n = static_cast<double>(trials);
  Interval out;
  out.low = successes == 0 ? 0.0 : beta_quantile(alpha / 2.0, x, n - x + 1.0);
  out.high = successes == trials ? 1.0 : beta_quantile(1.0 - alpha / 2.0, x + 1.0, n - x);
  return out;
}

EvalResult evaluate_predictions(std::span<const int> truth, std::span<const int> predicted, int num_classes,
                                double alpha) {
  if (truth.empty()) throw InvalidArgument("empty test set");
  if (truth.size() != predicted.size()) throw DimensionError("truth and prediction lengths differ");
  if (num_classes < 1) throw InvalidArgument("num_classes must be positive");
  EvalResult result;
  result.alpha = alpha;
  result.confusion = ConfusionMatrix::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes) {
      throw InvalidArgument("class index out of range", "record " + std::to_string(i));
    }
    ++result.confusion(truth[i], predicted[i]);
  }
  for (int c = 0; c < num_classes; ++c) {
    ClassStats s;
    s.cls = c;
    s.correct = result.confusion(c, c);
    s.total = result.confusion.row(c).sum();
    if (s.total == 0) {
      s.undefined = true;
    } else {
      s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.total);
      const auto ci = clopper_pearson(s.correct, s.total, alpha);
      s.ci_low = std::min(ci.low, s.accuracy);
      s.ci_high = std::max(ci.high, s.accuracy);
    }
    result.per_class.push_back(s);
  }
  result.overall_accuracy =
      static_cast<double>(result.confusion.trace()) / static_cast<double>(result.confusion.sum());
  return result;
}

EvalResult evaluate(const Eigen::MatrixXd& Z, const RandomFilterBank& bank, const CandidateDataset& test,
                    double alpha, std::size_t threads) {
  if (test.empty()) throw InvalidArgument("empty test set");
  if (Z.rows() != bank.feature_dim()) {
    throw DimensionError("weight rows " + std::to_string(Z.rows()) + " != feature dimension " +
                         std::to_string(bank.feature_dim()));
  }
  if (Z.cols() != test.num_classes) {
    throw DimensionError("weight columns " + std::to_string(Z.cols()) + " != number of classes " +
                         std::to_string(test.num_classes));
  }
  const auto features = featurize<double>(bank, test, threads);
  const Eigen::MatrixXd scores = features.X * Z;
  const auto predicted = argmax_rows(scores);
  const auto truth = test.labels();
  return evaluate_predictions(truth, predicted, test.num_classes, alpha);
}

std::vector<ClassFraction> confusion_breakdown(const EvalResult& result, int class_index) {
  if (class_index < 0 || class_index >= result.num_classes()) throw InvalidArgument("class index out of range");
  const auto row = result.confusion.row(class_index);
  const auto total = row.sum();
  if (total == 0) throw InvalidArgument("class " + std::to_string(class_index) + " has no test records");
  const auto t = static_cast<double>(total);
  std::vector<ClassFraction> out;
  out.push_back({class_index, static_cast<double>(row(class_index)) / t});
  std::vector<ClassFraction> rest;
  for (int c = 0; c < result.num_classes(); ++c) {
    if (c != class_index && row(c) > 0) rest.push_back({c, static_cast<double>(row(c)) / t});
  }
  std::stable_sort(rest.begin(), rest.end(),
                   [](const ClassFraction& a, const ClassFraction& b) { return a.fraction > b.fraction; });
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

std::string eval_to_json(const EvalResult& result, std::span<const std::string> class_names) {
  nlohmann::ordered_json j;
  j["overall_accuracy"] = result.overall_accuracy;
  j["alpha"] = result.alpha;
  auto per_class = nlohmann::ordered_json::array();
  for (const auto& s : result.per_class) {
    nlohmann::ordered_json e;
    e["class"] = s.cls;
    if (static_cast<std::size_t>(s.cls) < class_names.size()) e["name"] = class_names[s.cls];
    e["correct"] = s.correct;
    e["total"] = s.total;
    e["accuracy"] = s.accuracy;
    e["ci_low"] = s.ci_low;
    e["ci_high"] = s.ci_high;
    e["undefined"] = s.undefined;
    per_class.push_back(std::move(e));
  }
  j["per_class"] = std::move(per_class);
  auto confusion = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < result.confusion.rows(); ++r) {
    std::vector<std::int64_t> row(static_cast<std::size_t>(result.confusion.cols()));
    for (Eigen::Index c = 0; c < result.confusion.cols(); ++c) row[static_cast<std::size_t>(c)] = result.confusion(r, c);
    confusion.push_back(row);
  }
  j["confusion"] = std::move(confusion);
  return j.dump(2);
}

void write_eval_json(const EvalResult& result, const std::filesystem::path& path,
                     std::span<const std::string> class_names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write evaluation", path.string());
  out << eval_to_json(result, class_names) << '\n';
}

void write_per_class_csv(const EvalResult& result, const std::filesystem::path& path,
                         std::span<const std::string> class_names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write per-class csv", path.string());
  out << "class,name,correct,total,accuracy,ci_low,ci_high,undefined\n";
  for (const auto& s : result.per_class) {
    const std::string name =
        static_cast<std::size_t>(s.cls) < class_names.size() ? class_names[s.cls] : std::to_string(s.cls);
    out << s.cls << ',' << name << ',' << s.correct << ',' << s.total << ',' << format_double(s.accuracy) << ','
        << format_double(s.ci_low) << ',' << format_double(s.ci_high) << ',' << (s.undefined ? 1 : 0) << '\n';
  }
}

void write_learning_curve_csv(const TrainTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write learning curve", path.string());
  out << "iteration,loss,train_accuracy,clean_accuracy,holdout_accuracy\n";
  const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& cp : trace.checkpoints) {
    out << cp.iteration << ',' << format_double(cp.loss) << ',' << format_double(cp.train_accuracy) << ','
        << opt(cp.clean_accuracy) << ',' << opt(cp.holdout_accuracy) << '\n';
  }
}

}  // namespace candlab
