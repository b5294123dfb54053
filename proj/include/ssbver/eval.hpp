#pragma once

#include "ssbver/backbone.hpp"
#include "ssbver/datamodel.hpp"
#include "ssbver/reid_head.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ssbver {

/// Junk filter applied to the gallery of each query.
enum class Protocol {
  none,          // nothing excluded
  cross_camera,  // gallery entries sharing identity AND camera with the query are junk
};

std::string to_string(Protocol protocol);
Protocol protocol_from_string(const std::string& name);  // ConfigError

/// Backbone features -> eval-mode BN neck -> L2 normalization.
EmbeddingMatrix extract_embeddings(const Encoder& encoder, const BnNeckState& bn, std::span<const Image> images);
EmbeddingMatrix extract_embeddings(const Encoder& encoder, const BnNeckState& bn,
                                   const std::vector<ImageSample>& samples);

/// Euclidean distances, queries x gallery.
Matrix pairwise_distances(const Matrix& queries, const Matrix& gallery);

struct RetrievalLabels {
  std::vector<int> identities;
  std::vector<int> cameras;

  int size() const { return static_cast<int>(identities.size()); }
};

struct RankedResult {
  int query_index = 0;
  std::vector<int> order;      // non-junk gallery indices, ascending distance, ties by index
  std::vector<bool> relevant;  // relevance flag per entry of `order`
  std::vector<bool> junk;      // per gallery index

  int match_count() const;
};

RankedResult rank_gallery(int query_index, std::span<const double> distances, int query_identity,
                          int query_camera, const RetrievalLabels& gallery, Protocol protocol);

/// (1/|matches|) * sum over match ranks r of (matches within top r) / r.
/// Throws NoMatchError when the filtered ranking holds no match.
double average_precision(const RankedResult& ranked);

/// True when a match occurs in the first k entries.
bool hit_at(const RankedResult& ranked, int k);

struct RetrievalMetrics {
  Protocol protocol = Protocol::cross_camera;
  double mean_ap = 0.0;
  std::map<int, double> cmc;
  int n_query = 0;
  int n_gallery = 0;
  std::vector<double> average_precisions;
};

/// mAP and CMC@k for every k in `ks`. Queries without a valid match are a hard
/// error: a single NoMatchError lists all of them.
RetrievalMetrics evaluate_retrieval(const Matrix& distances, const RetrievalLabels& queries,
                                    const RetrievalLabels& gallery, Protocol protocol,
                                    const std::vector<int>& ks = {1, 5, 10});

double mean_ap(const Matrix& distances, const RetrievalLabels& queries, const RetrievalLabels& gallery,
               Protocol protocol);
double cmc(const Matrix& distances, const RetrievalLabels& queries, const RetrievalLabels& gallery, int k,
           Protocol protocol);

/// {"protocol", "mAP", "cmc": {"1": .., "5": ..}, "n_query", "n_gallery"}
nlohmann::json to_json(const RetrievalMetrics& metrics);

struct DistanceReport {
  std::vector<double> positive;
  std::vector<double> negative;
  double mean_positive = 0.0;
  double mean_negative = 0.0;
  double range_max = 2.0;
  std::vector<long> positive_hist;
  std::vector<long> negative_hist;

  int bins() const { return static_cast<int>(positive_hist.size()); }
};

/// Classifies every unordered pair as positive or negative and histograms the
/// L2 distances over [0, 2]. Throws DegenerateError with fewer than two
/// samples or a single identity.
DistanceReport distance_report(const EmbeddingMatrix& embeddings, const std::vector<int>& labels, int bins = 64);

/// distances.csv (bin_left,bin_right,pos_count,neg_count) and distance_summary.json.
void write_distance_report(const std::filesystem::path& dir, const DistanceReport& report);

struct SimilarityGradients {
  double score = 0.0;  // dot product of normalized teacher embeddings
  Image grad_query;
  Image grad_gallery;
};

/// Gradient of the similarity score w.r.t. both input images.
SimilarityGradients similarity_gradients(const Encoder& encoder, const BnNeckState& bn, const Image& query,
                                         const Image& gallery);

/// H x W map: max over channels of |grad|, min-max normalized to [0,1]. A
/// constant map normalizes to zero.
Matrix saliency_map(const Image& gradient);

struct SaliencyResult {
  double score = 0.0;
  Matrix query_map;
  Matrix gallery_map;
};

SaliencyResult saliency_pair(const Encoder& encoder, const BnNeckState& bn, const Image& query,
                             const Image& gallery);

/// Writes {query,gallery}_saliency.png heat overlays, raw maps as .npy and
/// saliency.json with the score.
void write_saliency(const std::filesystem::path& dir, const SaliencyResult& result, const Image& query,
                    const Image& gallery);

/// NumPy .npy (format 1.0, little-endian float64, C order).
void write_npy(const std::filesystem::path& path, const Matrix& m);
Matrix read_npy(const std::filesystem::path& path);

}  // namespace ssbver
