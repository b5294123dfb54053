#include "ssbver/eval.hpp"

#include "ssbver/errors.hpp"
#include "ssbver/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>

namespace ssbver {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Protocol protocol) { return protocol == Protocol::none ? "none" : "cross_camera"; }

Protocol protocol_from_string(const std::string& name) {
  if (name == "none") return Protocol::none;
  if (name == "cross_camera") return Protocol::cross_camera;
  throw ConfigError("unknown protocol '" + name + "' (expected none or cross_camera)");
}

EmbeddingMatrix extract_embeddings(const Encoder& encoder, const BnNeckState& bn, std::span<const Image> images) {
  if (images.empty()) return EmbeddingMatrix{Matrix(0, encoder.dim()), true};
  return l2_normalized(bn_neck_eval(encoder.forward(images), bn));
}

EmbeddingMatrix extract_embeddings(const Encoder& encoder, const BnNeckState& bn,
                                   const std::vector<ImageSample>& samples) {
  std::vector<Image> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.pixels);
  return extract_embeddings(encoder, bn, images);
}

Matrix pairwise_distances(const Matrix& queries, const Matrix& gallery) {
  if (queries.cols() != gallery.cols()) throw ShapeMismatchError("query and gallery dimensions differ");
  Matrix d(queries.rows(), gallery.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    for (Eigen::Index j = 0; j < gallery.rows(); ++j) d(i, j) = (queries.row(i) - gallery.row(j)).norm();
  }
  return d;
}

// ---------------------------------------------------------------------------
// Ranking

int RankedResult::match_count() const {
  return static_cast<int>(std::count(relevant.begin(), relevant.end(), true));
}

RankedResult rank_gallery(int query_index, std::span<const double> distances, int query_identity, int query_camera,
                          const RetrievalLabels& gallery, Protocol protocol) {
  const int n = gallery.size();
  if (static_cast<int>(distances.size()) != n) throw ShapeMismatchError("distance row does not match gallery size");

  RankedResult r;
  r.query_index = query_index;
  r.junk.assign(n, false);
  for (int j = 0; j < n; ++j) {
    const bool same_id = gallery.identities[j] == query_identity;
    r.junk[j] = protocol == Protocol::cross_camera && same_id && gallery.cameras[j] == query_camera;
    if (!r.junk[j]) r.order.push_back(j);
  }
  std::sort(r.order.begin(), r.order.end(), [&](int a, int b) {
    if (distances[a] != distances[b]) return distances[a] < distances[b];
    return a < b;
  });
  r.relevant.reserve(r.order.size());
  for (int j : r.order) r.relevant.push_back(gallery.identities[j] == query_identity);
  return r;
}

double average_precision(const RankedResult& ranked) {
  double sum = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < ranked.relevant.size(); ++i) {
    if (!ranked.relevant[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  if (hits == 0) throw NoMatchError("query " + std::to_string(ranked.query_index) + " has no valid gallery match");
  return sum / hits;
}

bool hit_at(const RankedResult& ranked, int k) {
  const auto end = std::min<std::size_t>(ranked.relevant.size(), static_cast<std::size_t>(std::max(k, 0)));
  return std::any_of(ranked.relevant.begin(), ranked.relevant.begin() + static_cast<long>(end),
                     [](bool v) { return v; });
}

RetrievalMetrics evaluate_retrieval(const Matrix& distances, const RetrievalLabels& queries,
                                    const RetrievalLabels& gallery, Protocol protocol, const std::vector<int>& ks) {
  if (distances.rows() != queries.size() || distances.cols() != gallery.size()) {
    throw ShapeMismatchError("distance matrix does not match query/gallery sizes");
  }
  if (queries.size() == 0) throw NoMatchError("no queries");

  RetrievalMetrics m;
  m.protocol = protocol;
  m.n_query = queries.size();
  m.n_gallery = gallery.size();
  std::map<int, int> hits;
  for (int k : ks) hits[k] = 0;

  std::vector<int> offending;
  for (int q = 0; q < queries.size(); ++q) {
    const auto row = distances.row(q);
    const std::vector<double> d(row.data(), row.data() + row.size());
    const RankedResult ranked = rank_gallery(q, d, queries.identities[q], queries.cameras[q], gallery, protocol);
    if (ranked.match_count() == 0) {
      offending.push_back(q);
      continue;
    }
    m.average_precisions.push_back(average_precision(ranked));
    for (auto& [k, count] : hits) count += hit_at(ranked, k) ? 1 : 0;
  }
  if (!offending.empty()) {
    std::string list;
    for (std::size_t i = 0; i < offending.size(); ++i) {
      if (i > 0) list += ", ";
      list += std::to_string(offending[i]) + " (identity " + std::to_string(queries.identities[offending[i]]) +
              ", camera " + std::to_string(queries.cameras[offending[i]]) + ")";
    }
    throw NoMatchError(std::to_string(offending.size()) + " queries have no valid match under protocol " +
                       to_string(protocol) + ": " + list);
  }
  m.mean_ap = std::accumulate(m.average_precisions.begin(), m.average_precisions.end(), 0.0) / m.n_query;
  for (const auto& [k, count] : hits) m.cmc[k] = static_cast<double>(count) / m.n_query;
  return m;
}

double mean_ap(const Matrix& distances, const RetrievalLabels& queries, const RetrievalLabels& gallery,
               Protocol protocol) {
  return evaluate_retrieval(distances, queries, gallery, protocol, {}).mean_ap;
}

double cmc(const Matrix& distances, const RetrievalLabels& queries, const RetrievalLabels& gallery, int k,
           Protocol protocol) {
  return evaluate_retrieval(distances, queries, gallery, protocol, {k}).cmc.at(k);
}

json to_json(const RetrievalMetrics& metrics) {
  json cmc_json = json::object();
  for (const auto& [k, v] : metrics.cmc) cmc_json[std::to_string(k)] = v;
  return {{"protocol", to_string(metrics.protocol)},
          {"mAP", metrics.mean_ap},
          {"cmc", cmc_json},
          {"n_query", metrics.n_query},
          {"n_gallery", metrics.n_gallery}};
}

// ---------------------------------------------------------------------------
// Distance distributions

DistanceReport distance_report(const EmbeddingMatrix& embeddings, const std::vector<int>& labels, int bins) {
  const int n = embeddings.count();
  if (static_cast<int>(labels.size()) != n) throw ShapeMismatchError("one label per embedding required");
  if (n < 2) throw DegenerateError("distance report needs at least two samples");
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); })) {
    throw DegenerateError("distance report needs at least two identities");
  }
  if (bins < 1) throw ConfigError("histogram needs at least one bin");

  DistanceReport r;
  r.positive_hist.assign(bins, 0);
  r.negative_hist.assign(bins, 0);
  const double width = r.range_max / bins;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = (embeddings.rows.row(i) - embeddings.rows.row(j)).norm();
      const int bin = std::clamp(static_cast<int>(d / width), 0, bins - 1);
      if (labels[i] == labels[j]) {
        r.positive.push_back(d);
        ++r.positive_hist[bin];
      } else {
        r.negative.push_back(d);
        ++r.negative_hist[bin];
      }
    }
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  r.mean_positive = mean(r.positive);
  r.mean_negative = mean(r.negative);
  return r;
}

void write_distance_report(const fs::path& dir, const DistanceReport& report) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "distances.csv");
  if (!csv) throw IoError("cannot write " + (dir / "distances.csv").string());
  csv << "bin_left,bin_right,pos_count,neg_count\n";
  const double width = report.range_max / report.bins();
  char line[128];
  for (int b = 0; b < report.bins(); ++b) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%ld,%ld\n", b * width, (b + 1) * width, report.positive_hist[b],
                  report.negative_hist[b]);
    csv << line;
  }
  const json summary = {{"mu_pos", report.mean_positive},
                        {"mu_neg", report.mean_negative},
                        {"n_pos", report.positive.size()},
                        {"n_neg", report.negative.size()},
                        {"bins", report.bins()},
                        {"range", {0.0, report.range_max}}};
  std::ofstream(dir / "distance_summary.json") << summary.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Saliency

namespace {

struct Embedded {
  RowVector unit;
  RowVector raw;  // post-neck, pre-normalization
  std::unique_ptr<EncoderTrace> trace;
};

Embedded embed_traced(const Encoder& encoder, const BnNeckState& bn, const Image& image) {
  Embedded e;
  const Matrix f = encoder.forward(std::span<const Image>(&image, 1), e.trace);
  e.raw = bn_neck_eval(f, bn).row(0);
  const double n = e.raw.norm();
  e.unit = n > 0.0 ? RowVector(e.raw / n) : e.raw;
  return e;
}

Image input_gradient(const Encoder& encoder, const BnNeckState& bn, const Embedded& self, const RowVector& other) {
  const double n = self.raw.norm();
  RowVector d_raw = RowVector::Zero(self.raw.size());
  if (n > 0.0) d_raw = (other - other.dot(self.unit) * self.unit) / n;
  Matrix d_feat(1, d_raw.size());
  d_feat.row(0) = d_raw.array() * (bn.running_var.transpose().array() + bn.eps).rsqrt();
  return encoder.backward(*self.trace, d_feat, nullptr, true).at(0);
}

}  // namespace

SimilarityGradients similarity_gradients(const Encoder& encoder, const BnNeckState& bn, const Image& query,
                                         const Image& gallery) {
  const Embedded q = embed_traced(encoder, bn, query);
  const Embedded g = embed_traced(encoder, bn, gallery);
  SimilarityGradients out;
  out.score = q.unit.dot(g.unit);
  out.grad_query = input_gradient(encoder, bn, q, g.unit);
  out.grad_gallery = input_gradient(encoder, bn, g, q.unit);
  return out;
}

Matrix saliency_map(const Image& gradient) {
  Matrix m = Matrix::Zero(gradient.height, gradient.width);
  for (int y = 0; y < gradient.height; ++y) {
    for (int x = 0; x < gradient.width; ++x) {
      double v = 0.0;
      for (int c = 0; c < Image::channels; ++c) v = std::max(v, std::abs(gradient.at(c, y, x)));
      m(y, x) = v;
    }
  }
  if (m.size() == 0) return m;
  const double lo = m.minCoeff();
  const double hi = m.maxCoeff();
  if (!(hi > lo)) return Matrix::Zero(m.rows(), m.cols());
  return (m.array() - lo) / (hi - lo);
}

SaliencyResult saliency_pair(const Encoder& encoder, const BnNeckState& bn, const Image& query,
                             const Image& gallery) {
  const SimilarityGradients g = similarity_gradients(encoder, bn, query, gallery);
  return {g.score, saliency_map(g.grad_query), saliency_map(g.grad_gallery)};
}

namespace {

Image heat_overlay(const Image& image, const Matrix& map) {
  Image out(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double v = map(y, x);
      const double heat[3] = {std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0),
                              std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0),
                              std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0)};
      for (int c = 0; c < Image::channels; ++c) out.at(c, y, x) = 0.5 * image.at(c, y, x) + 0.5 * heat[c];
    }
  }
  return out;
}

}  // namespace

void write_saliency(const fs::path& dir, const SaliencyResult& result, const Image& query, const Image& gallery) {
  fs::create_directories(dir);
  write_png(dir / "query_saliency.png", heat_overlay(query, result.query_map));
  write_png(dir / "gallery_saliency.png", heat_overlay(gallery, result.gallery_map));
  write_npy(dir / "query_saliency.npy", result.query_map);
  write_npy(dir / "gallery_saliency.npy", result.gallery_map);
  const json summary = {{"similarity", result.score},
                        {"query_map", "query_saliency.npy"},
                        {"gallery_map", "gallery_saliency.npy"},
                        {"height", result.query_map.rows()},
                        {"width", result.query_map.cols()}};
  std::ofstream out(dir / "saliency.json");
  if (!out) throw IoError("cannot write " + (dir / "saliency.json").string());
  out << summary.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// .npy

void write_npy(const fs::path& path, const Matrix& m) {
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + std::to_string(m.rows()) + ", " +
                       std::to_string(m.cols()) + "), }";
  const std::size_t preamble = 10;
  while ((preamble + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out << header;
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw IoError("failed writing " + path.string());
}

Matrix read_npy(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path.string());
  char magic[10];
  in.read(magic, 10);
  if (!in || std::memcmp(magic, "\x93NUMPY\x01\x00", 8) != 0) throw ParseError(path.string() + " is not a .npy v1 file");
  const std::size_t len = static_cast<unsigned char>(magic[8]) | (static_cast<unsigned char>(magic[9]) << 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));

  static const std::regex shape_re(R"('shape':\s*\((\d+),\s*(\d+)\))");
  std::smatch match;
  if (header.find("'<f8'") == std::string::npos || header.find("False") == std::string::npos ||
      !std::regex_search(header, match, shape_re)) {
    throw ParseError(path.string() + ": only 2-D little-endian float64 C-order arrays are supported");
  }
  Matrix m(std::stol(match[1]), std::stol(match[2]));
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw ParseError(path.string() + " is truncated");
  return m;
}

}  // namespace ssbver
