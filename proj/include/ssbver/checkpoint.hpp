#pragma once

#include "ssbver/tensor.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>

namespace ssbver {

inline constexpr const char* kCheckpointFormat = "ssbver-checkpoint/1";

/// Named arrays plus a JSON metadata document.
///
/// File layout (little-endian):
///   8 bytes   magic "SSBVCKPT"
///   u64       header length in bytes
///   header    JSON: {"format", "metadata", "arrays": [{"name","shape","offset"}]}
///   payload   float64 values of every array, concatenated in index order
struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  ParamList arrays;

  void add(const Tensor& t) { arrays.push_back(t); }
  void add(const ParamList& list, const std::string& prefix);
  const Tensor& get(const std::string& name) const;  // DataError when absent
  bool contains(const std::string& name) const;
  /// Copies values of prefix+name into every tensor of `list`; shapes must match.
  void read_into(ParamList& list, const std::string& prefix) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace ssbver
