#pragma once

#include "ssbver/rng.hpp"
#include "ssbver/tensor.hpp"

#include <cstdint>
#include <vector>

namespace ssbver::nn {

/// Activations of one image: channels x (height*width).
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix::Zero(c, h * w)) {}
};

FeatureMap from_image(const Image& image);
Image to_image(const FeatureMap& map);

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  int output_extent(int input_extent) const { return (input_extent + 2 * padding - kernel) / stride + 1; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

Matrix im2col(const FeatureMap& input, const ConvSpec& spec);
FeatureMap col2im(const Matrix& cols, const ConvSpec& spec, int in_height, int in_width);

/// weight: [out, in, k, k]; bias: [out].
FeatureMap conv2d(const FeatureMap& input, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

/// Accumulates into d_weight/d_bias. Returns the input gradient when requested,
/// otherwise an empty map.
FeatureMap conv2d_backward(const FeatureMap& input, const FeatureMap& d_output, const Tensor& weight,
                           const ConvSpec& spec, Tensor& d_weight, Tensor& d_bias, bool need_input_grad);

void relu_inplace(Matrix& x);
/// Zeroes gradient entries where the forward output was not positive.
void relu_backward_inplace(Matrix& grad, const Matrix& output);

/// X: N x in, W: [out, in], b: [out]. Returns N x out.
Matrix linear(const Matrix& x, const Tensor& weight, const Tensor& bias);
Matrix linear_backward(const Matrix& x, const Matrix& d_y, const Tensor& weight, Tensor& d_weight,
                       Tensor& d_bias);

Matrix gelu(const Matrix& x);
/// Elementwise d gelu / dx evaluated at x, multiplied into grad.
Matrix gelu_backward(const Matrix& x, const Matrix& grad);

/// He-normal initialization for ReLU stacks; biases zero.
void init_he_normal(Tensor& weight, int fan_in, Rng& rng);
void init_lecun_normal(Tensor& weight, int fan_in, Rng& rng);

/// Fully connected stack: n_hidden GELU layers of width `hidden`, then a plain
/// linear map to out_dim.
class Mlp {
 public:
  struct Trace {
    std::vector<Matrix> inputs;        // input of each linear layer
    std::vector<Matrix> preactivation;  // output of each hidden linear layer
  };

  Mlp() = default;
  Mlp(int in_dim, int hidden, int n_hidden, int out_dim, std::uint64_t seed);

  int in_dim() const { return in_dim_; }
  int hidden() const { return hidden_; }
  int n_hidden() const { return n_hidden_; }
  int out_dim() const { return out_dim_; }

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Trace& trace) const;
  /// Accumulates parameter gradients into `grads` (same layout as parameters())
  /// and returns the input gradient.
  Matrix backward(const Trace& trace, const Matrix& d_y, ParamList& grads) const;

  ParamList& parameters() { return params_; }
  const ParamList& parameters() const { return params_; }

 private:
  int in_dim_ = 0;
  int hidden_ = 0;
  int n_hidden_ = 0;
  int out_dim_ = 0;
  ParamList params_;  // fc{i}.weight, fc{i}.bias for i in [0, n_hidden]
};

}  // namespace ssbver::nn
