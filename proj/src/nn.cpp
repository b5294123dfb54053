#include "ssbver/nn.hpp"

#include "ssbver/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace ssbver::nn {

FeatureMap from_image(const Image& image) {
  FeatureMap map(Image::channels, image.height, image.width);
  std::copy(image.data.begin(), image.data.end(), map.data.data());
  return map;
}

Image to_image(const FeatureMap& map) {
  Image image(map.height, map.width);
  std::copy(map.data.data(), map.data.data() + map.data.size(), image.data.begin());
  return image;
}

Matrix im2col(const FeatureMap& input, const ConvSpec& spec) {
  const int out_h = spec.output_extent(input.height);
  const int out_w = spec.output_extent(input.width);
  const int k = spec.kernel;
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(input.channels) * k * k, out_h * out_w);
  for (int c = 0; c < input.channels; ++c) {
    const double* plane = input.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec.stride - spec.padding + ky;
          if (iy < 0 || iy >= input.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec.stride - spec.padding + kx;
            if (ix < 0 || ix >= input.width) continue;
            row[oy * out_w + ox] = plane[iy * input.width + ix];
          }
        }
      }
    }
  }
  return cols;
}

FeatureMap col2im(const Matrix& cols, const ConvSpec& spec, int in_height, int in_width) {
  const int out_h = spec.output_extent(in_height);
  const int out_w = spec.output_extent(in_width);
  const int k = spec.kernel;
  FeatureMap out(spec.in_channels, in_height, in_width);
  for (int c = 0; c < spec.in_channels; ++c) {
    double* plane = out.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec.stride - spec.padding + ky;
          if (iy < 0 || iy >= in_height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec.stride - spec.padding + kx;
            if (ix < 0 || ix >= in_width) continue;
            plane[iy * in_width + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
  return out;
}

FeatureMap conv2d(const FeatureMap& input, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  if (input.channels != spec.in_channels) {
    throw ShapeMismatchError("conv expects " + std::to_string(spec.in_channels) + " channels, got " +
                             std::to_string(input.channels));
  }
  const ConstMatrixMap w(weight.values.data(), spec.out_channels,
                         static_cast<Eigen::Index>(spec.in_channels) * spec.kernel * spec.kernel);
  FeatureMap out;
  out.channels = spec.out_channels;
  out.height = spec.output_extent(input.height);
  out.width = spec.output_extent(input.width);
  out.data.noalias() = w * im2col(input, spec);
  for (int o = 0; o < spec.out_channels; ++o) out.data.row(o).array() += bias.values[o];
  return out;
}

FeatureMap conv2d_backward(const FeatureMap& input, const FeatureMap& d_output, const Tensor& weight,
                           const ConvSpec& spec, Tensor& d_weight, Tensor& d_bias, bool need_input_grad) {
  const Eigen::Index fan = static_cast<Eigen::Index>(spec.in_channels) * spec.kernel * spec.kernel;
  const ConstMatrixMap w(weight.values.data(), spec.out_channels, fan);
  MatrixMap dw(d_weight.values.data(), spec.out_channels, fan);
  const Matrix cols = im2col(input, spec);
  dw.noalias() += d_output.data * cols.transpose();
  for (int o = 0; o < spec.out_channels; ++o) d_bias.values[o] += d_output.data.row(o).sum();
  if (!need_input_grad) return {};
  const Matrix d_cols = w.transpose() * d_output.data;
  return col2im(d_cols, spec, input.height, input.width);
}

void relu_inplace(Matrix& x) { x = x.cwiseMax(0.0); }

void relu_backward_inplace(Matrix& grad, const Matrix& output) {
  grad = (output.array() > 0.0).select(grad, 0.0);
}

Matrix linear(const Matrix& x, const Tensor& weight, const Tensor& bias) {
  const auto w = weight.matrix();
  if (x.cols() != w.cols()) {
    throw ShapeMismatchError("linear expects " + std::to_string(w.cols()) + " inputs, got " +
                             std::to_string(x.cols()));
  }
  Matrix y = x * w.transpose();
  y.rowwise() += Eigen::Map<const RowVector>(bias.values.data(), static_cast<Eigen::Index>(bias.size()));
  return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& d_y, const Tensor& weight, Tensor& d_weight,
                       Tensor& d_bias) {
  d_weight.matrix().noalias() += d_y.transpose() * x;
  Eigen::Map<RowVector>(d_bias.values.data(), static_cast<Eigen::Index>(d_bias.size())) += d_y.colwise().sum();
  return d_y * weight.matrix();
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& grad) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const Matrix d = x.unaryExpr([inv_sqrt_2pi](double v) {
    return 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)) + v * std::exp(-0.5 * v * v) * inv_sqrt_2pi;
  });
  return grad.cwiseProduct(d);
}

void init_he_normal(Tensor& weight, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / fan_in);
  for (double& v : weight.values) v = rng.normal(0.0, std);
}

void init_lecun_normal(Tensor& weight, int fan_in, Rng& rng) {
  const double std = std::sqrt(1.0 / fan_in);
  for (double& v : weight.values) v = rng.normal(0.0, std);
}

Mlp::Mlp(int in_dim, int hidden, int n_hidden, int out_dim, std::uint64_t seed)
    : in_dim_(in_dim), hidden_(hidden), n_hidden_(n_hidden), out_dim_(out_dim) {
  if (in_dim < 1 || hidden < 1 || n_hidden < 0 || out_dim < 1) throw ConfigError("invalid MLP dimensions");
  Rng rng(seed);
  int fan_in = in_dim;
  for (int i = 0; i <= n_hidden; ++i) {
    const int fan_out = i == n_hidden ? out_dim : hidden;
    const std::string name = "fc" + std::to_string(i);
    Tensor w(name + ".weight", {fan_out, fan_in});
    init_lecun_normal(w, fan_in, rng);
    params_.push_back(std::move(w));
    params_.emplace_back(name + ".bias", std::vector<int>{fan_out});
    fan_in = fan_out;
  }
}

Matrix Mlp::forward(const Matrix& x) const {
  Matrix h = x;
  for (int i = 0; i <= n_hidden_; ++i) {
    h = linear(h, params_[2 * i], params_[2 * i + 1]);
    if (i < n_hidden_) h = gelu(h);
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x, Trace& trace) const {
  trace.inputs.clear();
  trace.preactivation.clear();
  Matrix h = x;
  for (int i = 0; i <= n_hidden_; ++i) {
    trace.inputs.push_back(h);
    h = linear(h, params_[2 * i], params_[2 * i + 1]);
    if (i < n_hidden_) {
      trace.preactivation.push_back(h);
      h = gelu(h);
    }
  }
  return h;
}

Matrix Mlp::backward(const Trace& trace, const Matrix& d_y, ParamList& grads) const {
  Matrix g = d_y;
  for (int i = n_hidden_; i >= 0; --i) {
    if (i < n_hidden_) g = gelu_backward(trace.preactivation[i], g);
    g = linear_backward(trace.inputs[i], g, params_[2 * i], grads[2 * i], grads[2 * i + 1]);
  }
  return g;
}

}  // namespace ssbver::nn
