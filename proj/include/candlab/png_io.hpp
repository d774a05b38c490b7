#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "candlab/dataset.hpp"

namespace candlab {

// Gray and RGB only; alpha is dropped, palettes and 16-bit depths are expanded.
Image decode_png(std::span<const std::uint8_t> bytes);
Image read_png(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const Image& image, const std::filesystem::path& path);

}  // namespace candlab
