#include <fstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "candlab/dynamics.hpp"

namespace candlab {

void write_spectrum_json(const SpectrumProfile& profile, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["n"] = profile.size();
  j["rank"] = profile.rank();
  j["zero_threshold"] = profile.zero_threshold;
  j["eigenvalues"] = std::vector<double>(profile.eigenvalues.data(), profile.eigenvalues.data() + profile.size());
  auto alignments = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < profile.alignments.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(profile.alignments.cols()));
    for (Eigen::Index k = 0; k < profile.alignments.cols(); ++k) row[static_cast<std::size_t>(k)] = profile.alignments(i, k);
    alignments.push_back(row);
  }
  j["alignments"] = std::move(alignments);
  j["residual_floor"] =
      std::vector<double>(profile.residual_floor.data(), profile.residual_floor.data() + profile.residual_floor.size());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write spectrum", path.string());
  out << j.dump() << '\n';
}

void write_eigenvectors(const SpectrumProfile& profile, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write eigenvectors", path.string());
  detail::write_magic(out, "RFEV");
  detail::write_pod<std::uint32_t>(out, 1);
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(profile.size()));
  for (Eigen::Index i = 0; i < profile.size(); ++i) detail::write_pod(out, profile.eigenvalues(i));
  const RowMatrix<double> rows = profile.eigenvectors;
  for (Eigen::Index i = 0; i < rows.size(); ++i) detail::write_pod(out, rows.data()[i]);
  if (!out) throw IoError("short write", path.string());
}

SpectrumProfile read_eigenvectors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string ctx = path.string();
  if (!in) throw IoError("cannot open eigenvectors", ctx);
  detail::expect_magic(in, "RFEV", ctx);
  if (detail::read_pod<std::uint32_t>(in, ctx) != 1) throw FormatError("unsupported RFEV version", ctx);
  const auto n = static_cast<Eigen::Index>(detail::read_pod<std::uint64_t>(in, ctx));
  SpectrumProfile profile;
  profile.eigenvalues.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) profile.eigenvalues(i) = detail::read_pod<double>(in, ctx);
  RowMatrix<double> rows(n, n);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = detail::read_pod<double>(in, ctx);
  profile.eigenvectors = rows;
  return profile;
}

}  // namespace candlab
