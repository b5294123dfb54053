#pragma once

#include "ssbver/tensor.hpp"

#include <string>
#include <vector>

namespace ssbver {

inline constexpr int kMinImageExtent = 32;

/// One labeled vehicle image.
struct ImageSample {
  Image pixels;
  int identity = 0;  // dense class index for training samples
  int camera = 0;
  std::string source_path;

  /// Throws DataError when pixels fall outside [0,1], the image is smaller
  /// than 32x32, or labels are negative.
  void validate() const;
};

struct PkLayout {
  int identities = 0;  // P
  int instances = 0;   // K

  int batch_size() const { return identities * instances; }
};

/// P identities with exactly K instances each. Construct through make_batch
/// so the layout is checked once, up front.
struct Batch {
  std::vector<ImageSample> samples;
  PkLayout layout;

  std::vector<int> labels() const;
};

/// Ok iff the batch has P*K samples, P distinct identities, exactly K each,
/// and K >= 2. Throws BatchLayoutError or IdentityCountError otherwise.
void validate_batch(const Batch& batch);

Batch make_batch(std::vector<ImageSample> samples, PkLayout layout);

/// Indices sharing the anchor's label (excluding the anchor itself).
std::vector<int> positive_indices(const std::vector<int>& labels, int anchor);
std::vector<int> negative_indices(const std::vector<int>& labels, int anchor);

/// N x d embedding rows. When `normalized` is set, every row has unit L2 norm.
struct EmbeddingMatrix {
  Matrix rows;
  bool normalized = false;

  int count() const { return static_cast<int>(rows.rows()); }
  int dim() const { return static_cast<int>(rows.cols()); }
};

EmbeddingMatrix l2_normalized(const Matrix& features);

}  // namespace ssbver
