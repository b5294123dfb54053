#pragma once

#include "ssbver/datamodel.hpp"
#include "ssbver/rng.hpp"

#include <array>
#include <vector>

namespace ssbver {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentConfig {
  Range global_area{0.8, 1.0};
  Range local_area{0.1, 0.4};
  int n_local = 4;
  int global_size = 128;
  int local_size = 64;
  double flip_prob = 0.5;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 0.05;
  double erase_prob = 0.5;
  Range erase_area{0.02, 0.2};
  Range crop_aspect{3.0 / 4.0, 4.0 / 3.0};

  void validate() const;  // ConfigError
};

/// Where a view came from, in source pixel units.
struct CropRecord {
  double x0 = 0, y0 = 0, width = 0, height = 0;
  double area_ratio = 0;
  bool flipped = false;
  bool erased = false;
};

struct View {
  Image image;
  CropRecord crop;
};

/// Two global views and L local views of one sample; every view inherits the
/// source identity and camera.
struct ViewBundle {
  std::array<View, 2> globals;
  std::vector<View> locals;
  int identity = 0;
  int camera = 0;

  int n_views() const { return 2 + static_cast<int>(locals.size()); }
};

/// Teacher-side transformation: crop with area ratio in global_area, zero-pad
/// back to the source extent, resize, flip, jitter colors, random erase.
std::array<View, 2> make_global_views(const ImageSample& sample, const AugmentConfig& cfg, Rng& rng);

/// Student-side local transformation: small crop, resize, flip, jitter. No erasing.
std::vector<View> make_local_views(const ImageSample& sample, const AugmentConfig& cfg, Rng& rng);

ViewBundle make_view_bundle(const ImageSample& sample, const AugmentConfig& cfg, Rng& rng);

/// Bilinear resize of the whole image.
Image resize(const Image& source, int height, int width);

}  // namespace ssbver
