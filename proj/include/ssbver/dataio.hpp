#pragma once

#include "ssbver/datamodel.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ssbver {

enum class Split { train, query, gallery };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct ManifestEntry {
  std::string image_path;  // relative to root_dir
  int identity = 0;        // identity as written in the manifest
  int camera = 0;
  Split split = Split::train;
};

/// Parsed JSONL manifest. Training identities are re-indexed densely; the
/// original ids are kept on the entries so query/gallery matching stays exact.
struct DatasetManifest {
  std::filesystem::path root_dir;
  std::vector<ManifestEntry> entries;
  std::map<int, int> train_identity_map;  // original -> dense

  int num_train_identities() const { return static_cast<int>(train_identity_map.size()); }
  std::vector<const ManifestEntry*> split(Split which) const;
};

/// One JSON object per line with keys image_path, identity, camera, split.
/// Blank lines are ignored. Throws ParseError, SplitError or MissingFileError.
DatasetManifest load_manifest(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Loads the images of one split. Training samples carry dense identities;
/// query and gallery samples carry the manifest identities.
std::vector<ImageSample> load_split(const DatasetManifest& manifest, Split which);

struct SyntheticSpec {
  int n_identities = 20;
  int images_per_identity = 20;
  int height = 64;
  int width = 64;
  int n_cameras = 4;
  std::uint64_t seed = 0;
  int query_per_identity = 0;
  int gallery_per_identity = 0;

  void validate() const;  // ConfigError naming the violated invariant
};

/// {"n_identities", "images_per_identity", "image_size": [H, W], "n_cameras",
///  "seed", "query_per_identity", "gallery_per_identity"}; missing keys keep
/// their defaults, unknown keys are a ConfigError.
nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);

/// Fixed per-identity appearance. Palette indices keep the tuple discrete so
/// uniqueness across identities is checkable.
struct VehicleAttributes {
  int body_color = 0;
  int shape = 0;  // 0 sedan box, 1 ellipse, 2 wedge
  int aspect = 0;
  int marker_primary = 0;
  int marker_secondary = 0;

  auto operator<=>(const VehicleAttributes&) const = default;
};

/// Per-identity attributes for a spec, redrawn on collision so every identity
/// gets a distinct tuple.
std::vector<VehicleAttributes> draw_identity_attributes(const SyntheticSpec& spec);

/// Renders one image of an identity; the pose/background/noise stream is
/// derived from (seed, identity, image_index).
Image render_vehicle(const SyntheticSpec& spec, const VehicleAttributes& attributes, int identity,
                     int image_index);

/// Writes images/<id>_<n>.png and manifest.jsonl under out_dir and returns the
/// loaded manifest. Per identity the first query_per_identity images go to the
/// query split, the next gallery_per_identity to the gallery, the rest to train.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace ssbver
