#include <fstream>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "candlab/featurizer.hpp"

namespace candlab {

template <typename Scalar>
void write_rfmx(const FeatureMatrix<Scalar>& features, const std::filesystem::path& path) {
  if (features.X.rows() != features.Y.rows()) throw DimensionError("X and Y row counts differ");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file", path.string());
  detail::write_magic(out, "RFMX");
  detail::write_pod<std::uint32_t>(out, kRfmxVersion);
  detail::write_pod<std::uint32_t>(out, features.flags);
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(features.X.rows()));
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(features.X.cols()));
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(features.Y.cols()));
  detail::write_f32(out, features.X.data(), static_cast<std::size_t>(features.X.size()));
  detail::write_f32(out, features.Y.data(), static_cast<std::size_t>(features.Y.size()));
  for (std::size_t i = 0; i < features.record_ids.size(); ++i) {
    if (i) out.put('\n');
    out << features.record_ids[i];
  }
  if (!out) throw IoError("short write", path.string());
}

template <typename Scalar>
FeatureMatrix<Scalar> read_rfmx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string ctx = path.string();
  if (!in) throw IoError("cannot open feature file", ctx);
  detail::expect_magic(in, "RFMX", ctx);
  const auto version = detail::read_pod<std::uint32_t>(in, ctx);
  if (version != kRfmxVersion) throw FormatError("unsupported RFMX version " + std::to_string(version), ctx);
  FeatureMatrix<Scalar> out;
  out.flags = detail::read_pod<std::uint32_t>(in, ctx);
  const auto n = static_cast<Eigen::Index>(detail::read_pod<std::uint64_t>(in, ctx));
  const auto m = static_cast<Eigen::Index>(detail::read_pod<std::uint64_t>(in, ctx));
  const auto k = static_cast<Eigen::Index>(detail::read_pod<std::uint64_t>(in, ctx));
  out.X.resize(n, m);
  out.Y.resize(n, k);
  detail::read_f32(in, out.X.data(), static_cast<std::size_t>(out.X.size()), ctx);
  detail::read_f32(in, out.Y.data(), static_cast<std::size_t>(out.Y.size()), ctx);
  std::string id;
  while (std::getline(in, id)) out.record_ids.push_back(id);
  if (!out.record_ids.empty() && static_cast<Eigen::Index>(out.record_ids.size()) != n) {
    throw FormatError("record id count does not match N", ctx);
  }
  return out;
}

template void write_rfmx<float>(const FeatureMatrix<float>&, const std::filesystem::path&);
template void write_rfmx<double>(const FeatureMatrix<double>&, const std::filesystem::path&);
template FeatureMatrix<float> read_rfmx<float>(const std::filesystem::path&);
template FeatureMatrix<double> read_rfmx<double>(const std::filesystem::path&);

void write_filter_bank(const RandomFilterBank& bank, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  const auto& p = bank.params();
  j["seed"] = p.seed;
  j["filters"] = p.filters;
  j["kernel"] = p.kernel;
  j["channels"] = p.channels;
  j["pool_grid"] = p.pool_grid;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write filter bank", path.string());
  out << j.dump(2) << '\n';
}

RandomFilterBank read_filter_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open filter bank", path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return make_filter_bank(j.at("filters").get<int>(), j.at("kernel").get<int>(), j.at("channels").get<int>(),
                            j.at("pool_grid").get<int>(), j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid filter bank file: ") + e.what(), path.string());
  }
}

}  // namespace candlab
