#include "ssbver/png_io.hpp"

#include "ssbver/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace ssbver {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_stdio(&img, file.get())) {
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  }

  Image out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * out.width + x) * 3;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = buffer[base + c] / 255.0;
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<png_byte> buffer(static_cast<std::size_t>(image.height) * image.width * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * image.width + x) * 3;
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        buffer[base + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;

  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot create " + path.string());
  if (!png_image_write_to_stdio(&img, file.get(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot encode " + path.string() + ": " + img.message);
  }
}

}  // namespace ssbver
