#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace candlab {

/// 8-bit image, pixels interleaved row-major: pixels[(y * width + x) * channels + c].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), pixels(std::size_t(h) * w * c, 0) {}

  std::size_t size() const noexcept { return pixels.size(); }
  std::uint8_t at(int y, int x, int c) const { return pixels[(std::size_t(y) * width + x) * channels + c]; }
  std::uint8_t& at(int y, int x, int c) { return pixels[(std::size_t(y) * width + x) * channels + c]; }
  bool same_shape(const Image& other) const noexcept {
    return height == other.height && width == other.width && channels == other.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

enum class Source { clean, candidate, synthetic };

std::string_view to_string(Source source) noexcept;
Source parse_source(std::string_view text);

struct ImageRecord {
  std::string id;
  Image image;
  int label = 0;
  std::string keyword;
  Source source = Source::candidate;
  std::optional<bool> clean;
  // Absolute path of the file the pixels were decoded from; empty once the
  // pixels no longer match that file.
  std::string origin;

  // Provenance (`origin`) is not part of record identity.
  friend bool operator==(const ImageRecord& a, const ImageRecord& b) {
    return a.id == b.id && a.image == b.image && a.label == b.label && a.keyword == b.keyword &&
           a.source == b.source && a.clean == b.clean;
  }
};

struct CandidateDataset {
  std::vector<ImageRecord> records;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::uint64_t rng_seed = 0;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  int height() const { return records.empty() ? 0 : records.front().image.height; }
  int width() const { return records.empty() ? 0 : records.front().image.width; }
  int channels() const { return records.empty() ? 0 : records.front().image.channels; }

  std::vector<std::size_t> class_counts() const;
  std::vector<int> labels() const;

  /// Throws if any dataset invariant is violated (label range, uniform
  /// shape, unique ids, class name count).
  void validate() const;

  friend bool operator==(const CandidateDataset&, const CandidateDataset&) = default;
};

/// Default class names "class0", "class1", ...
std::vector<std::string> default_class_names(int num_classes);

/// Reads a JSONL manifest. An optional first line carrying "num_classes"
/// (and optionally "class_names", "rng_seed") declares K; otherwise K is
/// `num_classes_hint` when positive, else max label + 1. Image paths are
/// resolved relative to the manifest's directory.
CandidateDataset ingest_manifest(const std::filesystem::path& manifest, int num_classes_hint = 0);

/// Writes a manifest with a header line. Records whose `origin` is set are
/// written with that path; other images are encoded as PNG under
/// `image_dir` (default: "<manifest dir>/images"). All paths are absolute.
void write_manifest(const CandidateDataset& dataset, const std::filesystem::path& manifest,
                    const std::filesystem::path& image_dir = {});

/// Packed binary records: [u8 label][H*W*C u8 pixels, channel-planar].
CandidateDataset read_packed(const std::filesystem::path& path, int height, int width,
                             int channels, int num_classes);
void write_packed(const CandidateDataset& dataset, const std::filesystem::path& path);

/// Dispatches on extension: ".bin" is packed (32x32x3 unless given), anything
/// else is a manifest.
struct PackedLayout {
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 10;
};
CandidateDataset load_dataset(const std::filesystem::path& path, const PackedLayout& packed = {});
void save_dataset(const CandidateDataset& dataset, const std::filesystem::path& path);

/// Stratified split. Within each class the records are shuffled with seed
/// (seed XOR class) and cut by largest-remainder rounding of the fractions.
std::vector<CandidateDataset> split(const CandidateDataset& dataset, std::span<const double> fractions,
                                    std::uint64_t seed);

/// Indices of records whose clean flag is set to true, in dataset order.
std::vector<std::size_t> clean_subset_indices(const CandidateDataset& dataset);

/// Copy of the dataset restricted to `indices` (in the given order).
CandidateDataset select(const CandidateDataset& dataset, std::span<const std::size_t> indices);

}  // namespace candlab
