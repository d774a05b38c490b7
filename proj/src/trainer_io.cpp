#include <fstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "candlab/trainer.hpp"

namespace candlab {

std::size_t early_stop_clean(const TrainTrace& trace, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("clean threshold must be in (0, 1]");
  if (trace.checkpoints.empty()) throw InvalidArgument("trace has no checkpoints");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trace.checkpoints.size(); ++i) {
    const auto& acc = trace.checkpoints[i].clean_accuracy;
    if (!acc) throw InvalidArgument("trace lacks clean-subset accuracies");
    if (*acc >= tau) return i;
    if (!best || *acc > *trace.checkpoints[*best].clean_accuracy) best = i;
  }
  return *best;
}

std::size_t early_stop_holdout(const TrainTrace& trace) {
  if (trace.checkpoints.empty()) throw InvalidArgument("trace has no checkpoints");
  std::size_t best = 0;
  for (std::size_t i = 0; i < trace.checkpoints.size(); ++i) {
    const auto& acc = trace.checkpoints[i].holdout_accuracy;
    if (!acc) throw InvalidArgument("trace lacks holdout accuracies");
    if (*acc > *trace.checkpoints[best].holdout_accuracy) best = i;
  }
  return best;
}

void write_trace_jsonl(const TrainTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace", path.string());
  for (const auto& cp : trace.checkpoints) {
    nlohmann::ordered_json j;
    j["t"] = cp.iteration;
    j["loss"] = cp.loss;
    j["train_acc"] = cp.train_accuracy;
    j["clean_acc"] = cp.clean_accuracy ? nlohmann::ordered_json(*cp.clean_accuracy) : nlohmann::ordered_json();
    j["holdout_acc"] = cp.holdout_accuracy ? nlohmann::ordered_json(*cp.holdout_accuracy) : nlohmann::ordered_json();
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("short write", path.string());
}

std::vector<Checkpoint> read_trace_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace", path.string());
  std::vector<Checkpoint> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Checkpoint cp;
      cp.iteration = j.at("t").get<long>();
      cp.loss = j.at("loss").get<double>();
      cp.train_accuracy = j.at("train_acc").get<double>();
      if (j.contains("clean_acc") && !j.at("clean_acc").is_null()) cp.clean_accuracy = j.at("clean_acc").get<double>();
      if (j.contains("holdout_acc") && !j.at("holdout_acc").is_null()) {
        cp.holdout_accuracy = j.at("holdout_acc").get<double>();
      }
      out.push_back(std::move(cp));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("invalid trace line: ") + e.what(), "line " + std::to_string(number));
    }
  }
  return out;
}

void write_rfwz(const Eigen::MatrixXd& Z, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights", path.string());
  detail::write_magic(out, "RFWZ");
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(Z.rows()));
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(Z.cols()));
  const RowMatrix<double> rows = Z;
  detail::write_f32(out, rows.data(), static_cast<std::size_t>(rows.size()));
  if (!out) throw IoError("short write", path.string());
}

Eigen::MatrixXd read_rfwz(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string ctx = path.string();
  if (!in) throw IoError("cannot open weights", ctx);
  detail::expect_magic(in, "RFWZ", ctx);
  const auto m = static_cast<Eigen::Index>(detail::read_pod<std::uint64_t>(in, ctx));
  const auto k = static_cast<Eigen::Index>(detail::read_pod<std::uint64_t>(in, ctx));
  RowMatrix<double> rows(m, k);
  detail::read_f32(in, rows.data(), static_cast<std::size_t>(rows.size()), ctx);
  return rows;
}

}  // namespace candlab
