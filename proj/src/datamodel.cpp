#include "ssbver/datamodel.hpp"

#include "ssbver/errors.hpp"

#include <map>
#include <set>
#include <string>

namespace ssbver {

void ImageSample::validate() const {
  if (pixels.height < kMinImageExtent || pixels.width < kMinImageExtent) {
    throw DataError("image " + source_path + " is " + std::to_string(pixels.height) + "x" +
                    std::to_string(pixels.width) + ", minimum is 32x32");
  }
  if (pixels.data.size() != static_cast<std::size_t>(Image::channels) * pixels.plane()) {
    throw DataError("image " + source_path + " has inconsistent storage size");
  }
  for (double v : pixels.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("pixel value outside [0,1] in " + source_path);
  }
  if (identity < 0 || camera < 0) throw DataError("negative identity or camera in " + source_path);
}

std::vector<int> Batch::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.identity);
  return out;
}

void validate_batch(const Batch& batch) {
  const auto [p, k] = batch.layout;
  if (p < 1 || k < 2) {
    throw BatchLayoutError("P=" + std::to_string(p) + ", K=" + std::to_string(k) +
                           "; need P >= 1 and K >= 2 so every anchor has a positive");
  }
  if (static_cast<int>(batch.samples.size()) != p * k) {
    throw BatchLayoutError("batch holds " + std::to_string(batch.samples.size()) + " samples, expected P*K=" +
                           std::to_string(p * k));
  }
  std::map<int, int> counts;
  for (const auto& s : batch.samples) ++counts[s.identity];
  for (const auto& [id, n] : counts) {
    if (n != k) {
      throw IdentityCountError("identity " + std::to_string(id) + " has " + std::to_string(n) +
                               " instances, expected K=" + std::to_string(k));
    }
  }
  if (static_cast<int>(counts.size()) != p) {
    throw IdentityCountError("batch holds " + std::to_string(counts.size()) + " identities, expected P=" +
                             std::to_string(p));
  }
}

Batch make_batch(std::vector<ImageSample> samples, PkLayout layout) {
  Batch batch{std::move(samples), layout};
  validate_batch(batch);
  return batch;
}

std::vector<int> positive_indices(const std::vector<int>& labels, int anchor) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    if (i != anchor && labels[i] == labels[anchor]) out.push_back(i);
  }
  return out;
}

std::vector<int> negative_indices(const std::vector<int>& labels, int anchor) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    if (labels[i] != labels[anchor]) out.push_back(i);
  }
  return out;
}

EmbeddingMatrix l2_normalized(const Matrix& features) {
  EmbeddingMatrix out{features, true};
  for (Eigen::Index i = 0; i < out.rows.rows(); ++i) {
    const double n = out.rows.row(i).norm();
    if (n > 0.0) out.rows.row(i) /= n;
  }
  return out;
}

}  // namespace ssbver
