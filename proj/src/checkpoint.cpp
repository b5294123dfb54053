#include "ssbver/checkpoint.hpp"

#include "ssbver/errors.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace ssbver {
namespace {

constexpr char kMagic[8] = {'S', 'S', 'B', 'V', 'C', 'K', 'P', 'T'};

}  // namespace

void Archive::add(const ParamList& list, const std::string& prefix) { append_prefixed(arrays, list, prefix); }

bool Archive::contains(const std::string& name) const {
  for (const auto& t : arrays) {
    if (t.name == name) return true;
  }
  return false;
}

const Tensor& Archive::get(const std::string& name) const {
  for (const auto& t : arrays) {
    if (t.name == name) return t;
  }
  throw DataError("checkpoint has no array named '" + name + "'");
}

void Archive::read_into(ParamList& list, const std::string& prefix) const {
  for (auto& t : list) {
    const Tensor& src = get(prefix + t.name);
    if (src.shape != t.shape) throw ShapeMismatchError("checkpoint array '" + src.name + "' has a different shape");
    t.values = src.values;
  }
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["metadata"] = archive.metadata;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : archive.arrays) {
    header["arrays"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.size();
  }
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : archive.arrays) {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("checkpoint " + path.string() + " not found");
  char magic[8];
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint archive");
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (header.value("format", std::string()) != kCheckpointFormat) {
    throw DataError("unsupported checkpoint format '" + header.value("format", std::string()) + "'");
  }

  Archive archive;
  archive.metadata = header.at("metadata");
  for (const auto& entry : header.at("arrays")) {
    Tensor t(entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<int>>());
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint payload in " + path.string());
    archive.arrays.push_back(std::move(t));
  }
  return archive;
}

}  // namespace ssbver
