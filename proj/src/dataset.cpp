#include "candlab/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "candlab/error.hpp"
#include "candlab/parallel.hpp"
#include "candlab/png_io.hpp"
#include "candlab/rng.hpp"

namespace candlab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view to_string(Source source) noexcept {
  switch (source) {
    case Source::clean: return "clean";
    case Source::candidate: return "candidate";
    case Source::synthetic: return "synthetic";
  }
  return "candidate";
}

Source parse_source(std::string_view text) {
  if (text == "clean") return Source::clean;
  if (text == "candidate") return Source::candidate;
  if (text == "synthetic") return Source::synthetic;
  throw FormatError("unknown source '" + std::string(text) + "'");
}

std::vector<std::size_t> CandidateDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (const auto& r : records) {
    if (r.label >= 0 && r.label < num_classes) ++counts[static_cast<std::size_t>(r.label)];
  }
  return counts;
}

std::vector<int> CandidateDataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

void CandidateDataset::validate() const {
  if (num_classes <= 0) throw InvalidArgument("dataset must declare a positive class count");
  if (class_names.size() != static_cast<std::size_t>(num_classes)) {
    throw InvalidArgument("class_names must have exactly num_classes entries");
  }
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string where = "record " + std::to_string(i) + " (" + r.id + ")";
    if (r.label < 0 || r.label >= num_classes) throw InvalidArgument("label out of range", where);
    if (!r.image.same_shape(records.front().image)) throw DimensionError("image dimension mismatch", where);
    if (r.image.channels != 1 && r.image.channels != 3) throw DimensionError("channels must be 1 or 3", where);
    if (!ids.insert(r.id).second) throw InvalidArgument("duplicate record id", where);
  }
}

std::vector<std::string> default_class_names(int num_classes) {
  std::vector<std::string> names;
  for (int k = 0; k < num_classes; ++k) names.push_back("class" + std::to_string(k));
  return names;
}

namespace {

struct ManifestLine {
  std::size_t line_number = 0;
  std::string path;
  ImageRecord record;
};

std::string line_context(std::size_t line, const std::string& id) {
  std::string out = "line " + std::to_string(line);
  if (!id.empty()) out += ", id " + id;
  return out;
}

}  // namespace

CandidateDataset ingest_manifest(const fs::path& manifest, int num_classes_hint) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest", manifest.string());
  const fs::path base = fs::absolute(manifest).parent_path();

  CandidateDataset out;
  bool have_header = false;
  std::vector<ManifestLine> lines;
  std::string text;
  std::size_t line_number = 0;
  while (std::getline(in, text)) {
    ++line_number;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("malformed manifest line: ") + e.what(), line_context(line_number, {}));
    }
    if (lines.empty() && !have_header && j.contains("num_classes")) {
      have_header = true;
      out.num_classes = j.at("num_classes").get<int>();
      if (j.contains("class_names")) out.class_names = j.at("class_names").get<std::vector<std::string>>();
      if (j.contains("rng_seed")) out.rng_seed = j.at("rng_seed").get<std::uint64_t>();
      continue;
    }
    ManifestLine entry;
    entry.line_number = line_number;
    try {
      auto& r = entry.record;
      r.id = j.at("id").get<std::string>();
      entry.path = j.at("path").get<std::string>();
      r.label = j.at("label").get<int>();
      if (j.contains("keyword")) r.keyword = j.at("keyword").get<std::string>();
      if (j.contains("source")) r.source = parse_source(j.at("source").get<std::string>());
      if (j.contains("clean") && !j.at("clean").is_null()) r.clean = j.at("clean").get<bool>();
    } catch (const json::exception& e) {
      throw FormatError(std::string("invalid manifest record: ") + e.what(),
                        line_context(line_number, entry.record.id));
    } catch (const FormatError& e) {
      throw FormatError(e.what(), line_context(line_number, entry.record.id));
    }
    lines.push_back(std::move(entry));
  }

  if (!have_header) {
    out.num_classes = num_classes_hint;
    if (out.num_classes <= 0) {
      int max_label = -1;
      for (const auto& l : lines) max_label = std::max(max_label, l.record.label);
      out.num_classes = max_label + 1;
    }
  }
  if (out.class_names.empty()) out.class_names = default_class_names(out.num_classes);

  for (const auto& l : lines) {
    if (l.record.label < 0 || l.record.label >= out.num_classes) {
      throw InvalidArgument("label out of range", line_context(l.line_number, l.record.id));
    }
  }

  parallel_for(lines.size(), 0, [&](std::size_t i) {
    auto& l = lines[i];
    fs::path p(l.path);
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p)) {
      throw IoError("image file not found: " + p.string(), line_context(l.line_number, l.record.id));
    }
    try {
      l.record.image = read_png(p);
    } catch (const Error& e) {
      throw FormatError(std::string("undecodable image: ") + e.what(), line_context(l.line_number, l.record.id));
    }
    l.record.origin = fs::weakly_canonical(p).string();
  });

  out.records.reserve(lines.size());
  for (auto& l : lines) {
    if (!out.records.empty() && !l.record.image.same_shape(out.records.front().image)) {
      throw DimensionError("image dimension mismatch", line_context(l.line_number, l.record.id));
    }
    out.records.push_back(std::move(l.record));
  }
  out.validate();
  return out;
}

namespace {

std::string image_file_name(std::size_t index, const std::string& id) {
  std::string safe;
  for (const char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    safe.push_back(ok ? c : '_');
  }
  return std::to_string(index) + "_" + safe + ".png";
}

}  // namespace

void write_manifest(const CandidateDataset& dataset, const fs::path& manifest, const fs::path& image_dir) {
  const fs::path target = fs::absolute(manifest);
  const fs::path images = image_dir.empty() ? target.parent_path() / "images" : fs::absolute(image_dir);
  if (!target.parent_path().empty()) fs::create_directories(target.parent_path());

  std::ofstream out(target);
  if (!out) throw IoError("cannot write manifest", target.string());
  json header;
  header["num_classes"] = dataset.num_classes;
  header["class_names"] = dataset.class_names;
  header["rng_seed"] = dataset.rng_seed;
  out << header.dump() << '\n';

  bool made_dir = false;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    std::string path = r.origin;
    if (path.empty()) {
      if (!made_dir) {
        fs::create_directories(images);
        made_dir = true;
      }
      const fs::path file = images / image_file_name(i, r.id);
      write_png(r.image, file);
      path = file.string();
    }
    json line;
    line["id"] = r.id;
    line["path"] = path;
    line["label"] = r.label;
    line["keyword"] = r.keyword;
    line["source"] = std::string(to_string(r.source));
    if (r.clean) line["clean"] = *r.clean;
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("short write", target.string());
}

CandidateDataset read_packed(const fs::path& path, int height, int width, int channels, int num_classes) {
  if (height <= 0 || width <= 0 || (channels != 1 && channels != 3)) {
    throw InvalidArgument("invalid packed layout");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open packed file", path.string());
  const std::size_t plane = std::size_t(height) * width;
  const std::size_t record_bytes = 1 + plane * channels;
  std::vector<std::uint8_t> buffer(record_bytes);

  CandidateDataset out;
  out.num_classes = num_classes;
  out.class_names = default_class_names(num_classes);
  const std::string stem = path.stem().string();
  std::size_t index = 0;
  while (in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(record_bytes))) {
    ImageRecord r;
    r.id = stem + ":" + std::to_string(index);
    r.label = buffer[0];
    if (r.label >= num_classes) {
      throw InvalidArgument("label out of range", "record " + std::to_string(index));
    }
    r.image = Image(height, width, channels);
    for (int c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        r.image.pixels[p * channels + c] = buffer[1 + c * plane + p];
      }
    }
    out.records.push_back(std::move(r));
    ++index;
  }
  if (in.gcount() != 0) throw FormatError("truncated packed record", "record " + std::to_string(index));
  return out;
}

void write_packed(const CandidateDataset& dataset, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write packed file", path.string());
  for (const auto& r : dataset.records) {
    if (r.label < 0 || r.label > 255) throw InvalidArgument("label does not fit a byte", r.id);
    const auto& img = r.image;
    const std::size_t plane = std::size_t(img.height) * img.width;
    std::vector<std::uint8_t> buffer(1 + img.pixels.size());
    buffer[0] = static_cast<std::uint8_t>(r.label);
    for (int c = 0; c < img.channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) buffer[1 + c * plane + p] = img.pixels[p * img.channels + c];
    }
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  }
  if (!out) throw IoError("short write", path.string());
}

CandidateDataset load_dataset(const fs::path& path, const PackedLayout& packed) {
  if (path.extension() == ".bin") {
    return read_packed(path, packed.height, packed.width, packed.channels, packed.num_classes);
  }
  return ingest_manifest(path);
}

void save_dataset(const CandidateDataset& dataset, const fs::path& path) {
  if (path.extension() == ".bin") {
    write_packed(dataset, path);
  } else {
    write_manifest(dataset, path);
  }
}

std::vector<CandidateDataset> split(const CandidateDataset& dataset, std::span<const double> fractions,
                                    std::uint64_t seed) {
  if (dataset.empty()) throw InvalidArgument("cannot split an empty dataset");
  if (fractions.empty()) throw InvalidArgument("split needs at least one fraction");
  double total = 0.0;
  for (const double f : fractions) {
    if (!(f > 0.0)) throw InvalidArgument("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("split fractions must sum to 1");

  const std::size_t parts = fractions.size();
  std::vector<std::vector<std::size_t>> chosen(parts);
  // Running (quota - assigned) per part, used to break remainder ties so the
  // overall part sizes stay balanced across classes.
  std::vector<double> deficit(parts, 0.0);

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.records[i].label)].push_back(i);
  }
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    Rng rng(seed ^ static_cast<std::uint64_t>(c));
    shuffle(members, rng);

    const double n = static_cast<double>(members.size());
    std::vector<std::size_t> counts(parts);
    std::vector<double> remainder(parts);
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < parts; ++j) {
      const double quota = fractions[j] * n;
      counts[j] = static_cast<std::size_t>(std::floor(quota + 1e-9));
      remainder[j] = quota - static_cast<double>(counts[j]);
      assigned += counts[j];
    }
    std::vector<std::size_t> order(parts);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (std::abs(remainder[a] - remainder[b]) > 1e-9) return remainder[a] > remainder[b];
      return deficit[a] > deficit[b] + 1e-9;
    });
    for (std::size_t u = 0; assigned < members.size(); ++u, ++assigned) ++counts[order[u % parts]];

    std::size_t offset = 0;
    for (std::size_t j = 0; j < parts; ++j) {
      deficit[j] += fractions[j] * n - static_cast<double>(counts[j]);
      for (std::size_t u = 0; u < counts[j]; ++u) chosen[j].push_back(members[offset + u]);
      offset += counts[j];
    }
  }

  std::vector<CandidateDataset> out;
  out.reserve(parts);
  for (auto& indices : chosen) {
    std::sort(indices.begin(), indices.end());
    out.push_back(select(dataset, indices));
  }
  return out;
}

std::vector<std::size_t> clean_subset_indices(const CandidateDataset& dataset) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.records[i].clean.value_or(false)) out.push_back(i);
  }
  return out;
}

CandidateDataset select(const CandidateDataset& dataset, std::span<const std::size_t> indices) {
  CandidateDataset out;
  out.num_classes = dataset.num_classes;
  out.class_names = dataset.class_names;
  out.rng_seed = dataset.rng_seed;
  out.records.reserve(indices.size());
  for (const auto i : indices) {
    if (i >= dataset.size()) throw InvalidArgument("record index out of range");
    out.records.push_back(dataset.records[i]);
  }
  return out;
}

}  // namespace candlab
