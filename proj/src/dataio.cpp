#include "ssbver/dataio.hpp"

#include "ssbver/errors.hpp"
#include "ssbver/png_io.hpp"
#include "ssbver/rng.hpp"

#include "json.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace ssbver {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "query") return Split::query;
  if (name == "gallery") return Split::gallery;
  throw ParseError("unknown split '" + name + "' (expected train, query or gallery)");
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split which) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == which) out.push_back(&e);
  }
  return out;
}

namespace {

int required_int(const json& obj, const char* key, int line_no) {
  if (!obj.contains(key)) throw ParseError("line " + std::to_string(line_no) + ": missing \"" + key + "\"");
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) {
    throw ParseError("line " + std::to_string(line_no) + ": \"" + key + "\" must be an integer");
  }
  const auto value = v.get<long long>();
  if (value < 0 || value > std::numeric_limits<int>::max()) {
    throw ParseError("line " + std::to_string(line_no) + ": \"" + key + "\" out of range");
  }
  return static_cast<int>(value);
}

std::string required_string(const json& obj, const char* key, int line_no) {
  if (!obj.contains(key)) throw ParseError("line " + std::to_string(line_no) + ": missing \"" + key + "\"");
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ParseError("line " + std::to_string(line_no) + ": \"" + key + "\" must be a string");
  return v.get<std::string>();
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("manifest " + path.string() + " not found");

  DatasetManifest manifest;
  manifest.root_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) throw ParseError("line " + std::to_string(line_no) + ": expected a JSON object");

    ManifestEntry entry;
    entry.image_path = required_string(obj, "image_path", line_no);
    entry.identity = required_int(obj, "identity", line_no);
    entry.camera = required_int(obj, "camera", line_no);
    entry.split = split_from_string(required_string(obj, "split", line_no));
    manifest.entries.push_back(std::move(entry));
  }

  std::set<int> gallery_ids;
  std::set<int> train_ids;
  for (const auto& e : manifest.entries) {
    if (e.split == Split::gallery) gallery_ids.insert(e.identity);
    if (e.split == Split::train) train_ids.insert(e.identity);
  }
  for (const auto& e : manifest.entries) {
    if (e.split == Split::query && !gallery_ids.contains(e.identity)) {
      throw SplitError("query identity " + std::to_string(e.identity) + " (" + e.image_path +
                       ") has no gallery entry");
    }
  }
  int dense = 0;
  for (int id : train_ids) manifest.train_identity_map[id] = dense++;

  for (const auto& e : manifest.entries) {
    const fs::path p = manifest.root_dir / e.image_path;
    if (!fs::exists(p)) throw MissingFileError(e.image_path + " not found under " + manifest.root_dir.string());
  }
  return manifest;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : entries) {
    json obj = {{"image_path", e.image_path}, {"identity", e.identity}, {"camera", e.camera},
                {"split", to_string(e.split)}};
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ImageSample> load_split(const DatasetManifest& manifest, Split which) {
  std::vector<ImageSample> out;
  for (const auto* e : manifest.split(which)) {
    ImageSample s;
    s.pixels = read_png(manifest.root_dir / e->image_path);
    s.identity = which == Split::train ? manifest.train_identity_map.at(e->identity) : e->identity;
    s.camera = e->camera;
    s.source_path = e->image_path;
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic toy vehicles

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 10> kBodyPalette{{
    {0.85, 0.10, 0.10}, {0.10, 0.30, 0.80}, {0.95, 0.95, 0.95}, {0.10, 0.10, 0.10}, {0.15, 0.60, 0.20},
    {0.95, 0.80, 0.10}, {0.55, 0.55, 0.60}, {0.55, 0.25, 0.70}, {0.95, 0.50, 0.10}, {0.40, 0.75, 0.90},
}};

constexpr std::array<Rgb, 8> kMarkerPalette{{
    {1.00, 0.00, 0.00}, {0.00, 0.90, 0.20}, {0.00, 0.20, 1.00}, {1.00, 1.00, 0.00},
    {0.00, 0.00, 0.00}, {1.00, 1.00, 1.00}, {1.00, 0.00, 1.00}, {0.00, 1.00, 1.00},
}};

constexpr std::array<double, 3> kAspectRatios{1.4, 1.8, 2.2};
constexpr int kShapes = 3;

constexpr std::uint64_t kAttributeStream = 0xA77B17E5ULL;

VehicleAttributes draw_attributes(Rng& rng) {
  VehicleAttributes a;
  a.body_color = rng.index(static_cast<int>(kBodyPalette.size()));
  a.shape = rng.index(kShapes);
  a.aspect = rng.index(static_cast<int>(kAspectRatios.size()));
  a.marker_primary = rng.index(static_cast<int>(kMarkerPalette.size()));
  do {
    a.marker_secondary = rng.index(static_cast<int>(kMarkerPalette.size()));
  } while (a.marker_secondary == a.marker_primary);
  return a;
}

bool inside_body(int shape, double u, double v) {
  switch (shape) {
    case 0: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case 1: return u * u + v * v <= 1.0;
    default: return std::abs(u) <= 1.0 && v <= 1.0 && v >= -1.0 + 0.9 * (u + 1.0) * 0.5;
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_identities < 2) throw ConfigError("n_identities must be >= 2 (got " + std::to_string(n_identities) + ")");
  if (images_per_identity < 2) {
    throw ConfigError("images_per_identity must be >= 2 (got " + std::to_string(images_per_identity) + ")");
  }
  if (height < kMinImageExtent || width < kMinImageExtent) throw ConfigError("image_size must be at least 32x32");
  if (n_cameras < 1) throw ConfigError("n_cameras must be >= 1");
  if (query_per_identity < 0 || gallery_per_identity < 0) {
    throw ConfigError("query/gallery counts must be non-negative");
  }
  if (query_per_identity > 0 && gallery_per_identity < 1) {
    throw ConfigError("query images need at least one gallery image per identity");
  }
  if (query_per_identity + gallery_per_identity > images_per_identity) {
    throw ConfigError("query_per_identity + gallery_per_identity exceeds images_per_identity");
  }
  const long tuples = static_cast<long>(kBodyPalette.size()) * kShapes * static_cast<long>(kAspectRatios.size()) *
                      static_cast<long>(kMarkerPalette.size()) * static_cast<long>(kMarkerPalette.size() - 1);
  if (n_identities > tuples) throw ConfigError("n_identities exceeds the number of distinct attribute tuples");
}

std::vector<VehicleAttributes> draw_identity_attributes(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<VehicleAttributes> out;
  std::set<VehicleAttributes> used;
  for (int id = 0; id < spec.n_identities; ++id) {
    Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(id), kAttributeStream}));
    VehicleAttributes a = draw_attributes(rng);
    while (used.contains(a)) a = draw_attributes(rng);
    used.insert(a);
    out.push_back(a);
  }
  return out;
}

Image render_vehicle(const SyntheticSpec& spec, const VehicleAttributes& attributes, int identity,
                     int image_index) {
  Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(identity), static_cast<std::uint64_t>(image_index)}));
  const double angle = rng.uniform(-30.0, 30.0) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(0.7, 1.0);
  const Rgb background{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};

  const Rgb& body = kBodyPalette[attributes.body_color];
  const Rgb& primary = kMarkerPalette[attributes.marker_primary];
  const Rgb& secondary = kMarkerPalette[attributes.marker_secondary];
  const double half_length = 0.4 * spec.width * scale;
  const double half_height = half_length / kAspectRatios[attributes.aspect];
  const double cx = 0.5 * spec.width;
  const double cy = 0.5 * spec.height;
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);

  Image img(spec.height, spec.width);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double u = (dx * ca + dy * sa) / half_length;
      const double v = (-dx * sa + dy * ca) / half_height;
      const Rgb* color = &background;
      if (inside_body(attributes.shape, u, v)) {
        color = &body;
        if (std::abs(v) < 0.25 && std::abs(u) < 0.9) color = &primary;
        if (u > 0.35 && u < 0.75 && v > -0.75 && v < -0.3) color = &secondary;
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = (*color)[c];
    }
  }
  for (double& p : img.data) p = std::clamp(p + rng.normal(0.0, 0.02), 0.0, 1.0);
  return img;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  const auto attributes = draw_identity_attributes(spec);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  std::vector<ManifestEntry> entries;
  for (int id = 0; id < spec.n_identities; ++id) {
    for (int n = 0; n < spec.images_per_identity; ++n) {
      char name[64];
      std::snprintf(name, sizeof(name), "images/%04d_%03d.png", id, n);
      write_png(out_dir / name, render_vehicle(spec, attributes[id], id, n));

      ManifestEntry e;
      e.image_path = name;
      e.identity = id;
      e.camera = n % spec.n_cameras;
      if (n < spec.query_per_identity) {
        e.split = Split::query;
      } else if (n < spec.query_per_identity + spec.gallery_per_identity) {
        e.split = Split::gallery;
      } else {
        e.split = Split::train;
      }
      entries.push_back(std::move(e));
    }
  }
  write_manifest(out_dir / "manifest.jsonl", entries);
  return load_manifest(out_dir / "manifest.jsonl");
}

json to_json(const SyntheticSpec& spec) {
  return {{"n_identities", spec.n_identities},
          {"images_per_identity", spec.images_per_identity},
          {"image_size", {spec.height, spec.width}},
          {"n_cameras", spec.n_cameras},
          {"seed", spec.seed},
          {"query_per_identity", spec.query_per_identity},
          {"gallery_per_identity", spec.gallery_per_identity}};
}

SyntheticSpec synthetic_spec_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  SyntheticSpec spec;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "n_identities") spec.n_identities = value.get<int>();
      else if (key == "images_per_identity") spec.images_per_identity = value.get<int>();
      else if (key == "n_cameras") spec.n_cameras = value.get<int>();
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else if (key == "query_per_identity") spec.query_per_identity = value.get<int>();
      else if (key == "gallery_per_identity") spec.gallery_per_identity = value.get<int>();
      else if (key == "image_size") {
        if (value.is_number_integer()) {
          spec.height = spec.width = value.get<int>();
        } else {
          if (!value.is_array() || value.size() != 2) throw ConfigError("image_size must be [H, W]");
          spec.height = value[0].get<int>();
          spec.width = value[1].get<int>();
        }
      } else {
        throw ConfigError("unknown synthetic spec key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synthetic spec value: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace ssbver
