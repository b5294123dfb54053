#pragma once

#include "ssbver/backbone.hpp"
#include "ssbver/nn.hpp"

#include <stdexcept>

namespace fixture {

/// One 3x3 conv, 3 -> 8 channels, with bias, followed by global average pooling.
class SingleConvEncoder final : public ssbver::Encoder {
 public:
  SingleConvEncoder() {
    params_.emplace_back("conv.weight", std::vector<int>{8, 3, 3, 3}, 0.01);
    params_.emplace_back("conv.bias", std::vector<int>{8}, 0.0);
  }

  int dim() const override { return 8; }
  nlohmann::json describe() const override { return {{"arch", "single_conv"}}; }
  ssbver::ParamList& parameters() override { return params_; }
  const ssbver::ParamList& parameters() const override { return params_; }

  ssbver::Matrix forward(std::span<const ssbver::Image> images) const override {
    ssbver::Matrix out(static_cast<long>(images.size()), 8);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto map = ssbver::nn::conv2d(ssbver::nn::from_image(images[i]), params_[0], params_[1], spec_);
      out.row(static_cast<long>(i)) = map.data.rowwise().mean().transpose();
    }
    return out;
  }
  ssbver::Matrix forward(std::span<const ssbver::Image> images,
                         std::unique_ptr<ssbver::EncoderTrace>& trace) const override {
    trace.reset();
    return forward(images);
  }
  std::vector<ssbver::Image> backward(const ssbver::EncoderTrace&, const ssbver::Matrix&, ssbver::ParamList*,
                                      bool) const override {
    throw std::logic_error("single-conv fixture is forward-only");
  }
  std::unique_ptr<ssbver::Encoder> clone() const override { return std::make_unique<SingleConvEncoder>(*this); }

 private:
  ssbver::nn::ConvSpec spec_{3, 8, 3, 1, 1};
  ssbver::ParamList params_;
};

}  // namespace fixture
