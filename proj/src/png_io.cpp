#include "candlab/png_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "candlab/error.hpp"

namespace candlab {

namespace {

struct PngImageGuard {
  png_image image{};
  PngImageGuard() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImageGuard() { png_image_free(&image); }
  PngImageGuard(const PngImageGuard&) = delete;
  PngImageGuard& operator=(const PngImageGuard&) = delete;
};

}  // namespace

Image decode_png(std::span<const std::uint8_t> bytes) {
  PngImageGuard guard;
  if (!png_image_begin_read_from_memory(&guard.image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("undecodable PNG: ") + guard.image.message);
  }
  const bool color = (guard.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  guard.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image out(static_cast<int>(guard.image.height), static_cast<int>(guard.image.width), color ? 3 : 1);
  if (!png_image_finish_read(&guard.image, nullptr, out.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("undecodable PNG: ") + guard.image.message);
  }
  return out;
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image", path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.what(), path.string());
  }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw InvalidArgument("PNG encoding supports 1 or 3 channels");
  }
  PngImageGuard guard;
  guard.image.width = static_cast<png_uint_32>(image.width);
  guard.image.height = static_cast<png_uint_32>(image.height);
  guard.image.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(guard.image, size, 0, image.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + guard.image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&guard.image, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + guard.image.message);
  }
  out.resize(size);
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write", path.string());
}

}  // namespace candlab
