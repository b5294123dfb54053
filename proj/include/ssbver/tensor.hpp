#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ssbver {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Planar RGB image with values in [0,1]. Storage is channel-major (CHW).
struct Image {
  static constexpr int channels = 3;

  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(channels) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[c * plane() + static_cast<std::size_t>(y) * width + x];
  }

  bool operator==(const Image&) const = default;
};

/// Named, shaped array of reals. Parameter sets, gradients, optimizer moments
/// and checkpoint payloads all use this representation.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> s, double fill = 0.0);

  std::size_t size() const { return values.size(); }
  int rows() const { return shape.empty() ? 1 : shape.front(); }
  int cols() const { return static_cast<int>(values.size() / static_cast<std::size_t>(rows())); }

  MatrixMap matrix() { return MatrixMap(values.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(values.data(), rows(), cols()); }

  bool operator==(const Tensor&) const = default;
};

using ParamList = std::vector<Tensor>;

std::size_t element_count(const ParamList& params);

/// Zero-filled copy with identical names and shapes.
ParamList zeros_like(const ParamList& params);

void fill_zero(ParamList& params);

bool same_shapes(const ParamList& a, const ParamList& b);

/// Appends copies of `src` to `dst`, prefixing names.
void append_prefixed(ParamList& dst, const ParamList& src, const std::string& prefix);

}  // namespace ssbver
