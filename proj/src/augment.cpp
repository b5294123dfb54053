#include "ssbver/augment.hpp"

#include "ssbver/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ssbver {
namespace {

/// Bilinear sample of channel c at continuous pixel-center coordinates.
double sample(const Image& src, int c, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(src.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(src.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, src.width - 1);
  const int y1 = std::min(y0 + 1, src.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * src.at(c, y0, x0) + fx * src.at(c, y0, x1);
  const double bottom = (1.0 - fx) * src.at(c, y1, x0) + fx * src.at(c, y1, x1);
  return (1.0 - fy) * top + fy * bottom;
}

struct Box {
  double x0, y0, width, height;
};

/// Crop box with the given area ratio; aspect drawn log-uniformly from the
/// configured range restricted to values that keep the box inside the source.
Box draw_crop(const Image& src, double area_ratio, const Range& aspect, Rng& rng) {
  const double lo = std::max(aspect.lo, area_ratio);
  const double hi = std::min(aspect.hi, 1.0 / area_ratio);
  double r = 1.0;
  if (lo < hi) r = std::exp(rng.uniform(std::log(lo), std::log(hi)));
  else if (lo == hi) r = lo;
  const double w = std::min(src.width * std::sqrt(area_ratio * r), static_cast<double>(src.width));
  const double h = std::min(src.height * std::sqrt(area_ratio / r), static_cast<double>(src.height));
  const double x0 = rng.uniform(0.0, src.width - w);
  const double y0 = rng.uniform(0.0, src.height - h);
  return {x0, y0, w, h};
}

/// Crop content, zero-padded (centered) back to the source extent, resampled to size x size.
Image crop_pad_resize(const Image& src, const Box& box, int size) {
  Image out(size, size);
  const double off_x = 0.5 * (src.width - box.width);
  const double off_y = 0.5 * (src.height - box.height);
  const double sx = static_cast<double>(src.width) / size;
  const double sy = static_cast<double>(src.height) / size;
  for (int v = 0; v < size; ++v) {
    const double py = (v + 0.5) * sy;
    if (py < off_y || py >= off_y + box.height) continue;
    for (int u = 0; u < size; ++u) {
      const double px = (u + 0.5) * sx;
      if (px < off_x || px >= off_x + box.width) continue;
      const double x = box.x0 + (px - off_x) - 0.5;
      const double y = box.y0 + (py - off_y) - 0.5;
      for (int c = 0; c < 3; ++c) out.at(c, v, u) = sample(src, c, x, y);
    }
  }
  return out;
}

/// Crop content stretched to size x size.
Image crop_resize(const Image& src, const Box& box, int size) {
  Image out(size, size);
  const double sx = box.width / size;
  const double sy = box.height / size;
  for (int v = 0; v < size; ++v) {
    const double y = box.y0 + (v + 0.5) * sy - 0.5;
    for (int u = 0; u < size; ++u) {
      const double x = box.x0 + (u + 0.5) * sx - 0.5;
      for (int c = 0; c < 3; ++c) out.at(c, v, u) = sample(src, c, x, y);
    }
  }
  return out;
}

void flip_horizontal(Image& img) {
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
    }
  }
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d / 6.0 + 1.0, 1.0);
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double h6 = h * 6.0;
  const int i = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

double gray(const Image& img, int y, int x) {
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

void color_jitter(Image& img, const AugmentConfig& cfg, Rng& rng) {
  const double brightness = rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness);
  const double contrast = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
  const double saturation = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation);
  const double hue = rng.uniform(-cfg.hue, cfg.hue);

  if (brightness != 1.0) {
    for (double& p : img.data) p = std::clamp(p * brightness, 0.0, 1.0);
  }
  if (contrast != 1.0) {
    double mean = 0.0;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) mean += gray(img, y, x);
    }
    mean /= static_cast<double>(img.plane());
    for (double& p : img.data) p = std::clamp(mean + contrast * (p - mean), 0.0, 1.0);
  }
  if (saturation != 1.0) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double g = gray(img, y, x);
        for (int c = 0; c < 3; ++c) {
          img.at(c, y, x) = std::clamp(g + saturation * (img.at(c, y, x) - g), 0.0, 1.0);
        }
      }
    }
  }
  if (hue != 0.0) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        double h, s, v;
        rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, s, v);
        h = std::fmod(h + hue + 1.0, 1.0);
        hsv_to_rgb(h, s, v, img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
      }
    }
  }
}

/// Zero-fills one random rectangle; returns whether a rectangle was placed.
bool random_erase(Image& img, const AugmentConfig& cfg, Rng& rng) {
  const double area = static_cast<double>(img.plane());
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = rng.uniform(cfg.erase_area.lo, cfg.erase_area.hi) * area;
    const double aspect = std::exp(rng.uniform(std::log(0.3), std::log(1.0 / 0.3)));
    const int h = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (h < 1 || w < 1 || h >= img.height || w >= img.width) continue;
    const int y0 = rng.index(img.height - h + 1);
    const int x0 = rng.index(img.width - w + 1);
    for (int c = 0; c < 3; ++c) {
      for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) img.at(c, y, x) = 0.0;
      }
    }
    return true;
  }
  return false;
}

View finish_view(Image img, const Box& box, const Image& src, const AugmentConfig& cfg, Rng& rng) {
  View view;
  view.crop = {box.x0, box.y0, box.width, box.height,
               box.width * box.height / (static_cast<double>(src.width) * src.height), false, false};
  if (rng.bernoulli(cfg.flip_prob)) {
    flip_horizontal(img);
    view.crop.flipped = true;
  }
  color_jitter(img, cfg, rng);
  view.image = std::move(img);
  return view;
}

}  // namespace

void AugmentConfig::validate() const {
  auto check_range = [](const Range& r, const char* name) {
    if (!(r.lo > 0.0 && r.lo <= r.hi && r.hi <= 1.0)) {
      throw ConfigError(std::string(name) + " must satisfy 0 < lo <= hi <= 1");
    }
  };
  check_range(global_area, "global area range");
  check_range(local_area, "local area range");
  if (local_area.hi > global_area.lo) throw ConfigError("local area max must not exceed global area min");
  if (n_local < 0) throw ConfigError("number of local views must be >= 0");
  if (global_size < 8 || local_size < 8) throw ConfigError("view resolutions must be >= 8");
  if (flip_prob < 0.0 || flip_prob > 1.0 || erase_prob < 0.0 || erase_prob > 1.0) {
    throw ConfigError("probabilities must lie in [0,1]");
  }
  if (brightness < 0.0 || brightness >= 1.0 || contrast < 0.0 || contrast >= 1.0 || saturation < 0.0 ||
      saturation >= 1.0 || hue < 0.0 || hue > 0.5) {
    throw ConfigError("color jitter strengths out of range");
  }
  if (!(erase_area.lo > 0.0 && erase_area.lo <= erase_area.hi && erase_area.hi < 1.0)) {
    throw ConfigError("erase area range must satisfy 0 < lo <= hi < 1");
  }
  if (!(crop_aspect.lo > 0.0 && crop_aspect.lo <= 1.0 && crop_aspect.hi >= 1.0)) {
    throw ConfigError("crop aspect range must contain 1");
  }
}

Image resize(const Image& source, int height, int width) {
  Image out(height, width);
  const double sx = static_cast<double>(source.width) / width;
  const double sy = static_cast<double>(source.height) / height;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      for (int c = 0; c < 3; ++c) out.at(c, v, u) = sample(source, c, (u + 0.5) * sx - 0.5, (v + 0.5) * sy - 0.5);
    }
  }
  return out;
}

std::array<View, 2> make_global_views(const ImageSample& sample_in, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const Image& src = sample_in.pixels;
  std::array<View, 2> views;
  for (auto& view : views) {
    const double area = rng.uniform(cfg.global_area.lo, cfg.global_area.hi);
    const Box box = draw_crop(src, area, cfg.crop_aspect, rng);
    view = finish_view(crop_pad_resize(src, box, cfg.global_size), box, src, cfg, rng);
    if (rng.bernoulli(cfg.erase_prob)) view.crop.erased = random_erase(view.image, cfg, rng);
  }
  return views;
}

std::vector<View> make_local_views(const ImageSample& sample_in, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const Image& src = sample_in.pixels;
  std::vector<View> views;
  views.reserve(cfg.n_local);
  for (int i = 0; i < cfg.n_local; ++i) {
    const double area = rng.uniform(cfg.local_area.lo, cfg.local_area.hi);
    const Box box = draw_crop(src, area, cfg.crop_aspect, rng);
    views.push_back(finish_view(crop_resize(src, box, cfg.local_size), box, src, cfg, rng));
  }
  return views;
}

ViewBundle make_view_bundle(const ImageSample& sample_in, const AugmentConfig& cfg, Rng& rng) {
  ViewBundle bundle;
  bundle.globals = make_global_views(sample_in, cfg, rng);
  bundle.locals = make_local_views(sample_in, cfg, rng);
  bundle.identity = sample_in.identity;
  bundle.camera = sample_in.camera;
  return bundle;
}

}  // namespace ssbver
