#pragma once

#include "ssbver/tensor.hpp"

#include <filesystem>

namespace ssbver {

/// Reads an 8-bit PNG (gray, RGB or RGBA) into [0,1] planar RGB.
Image read_png(const std::filesystem::path& path);

/// Writes RGB8, rounding each channel to the nearest of 256 levels.
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace ssbver
