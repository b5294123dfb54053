#pragma once

#include "ssbver/nn.hpp"
#include "ssbver/tensor.hpp"

#include "json.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace ssbver {

/// Opaque per-call activations needed by Encoder::backward.
struct EncoderTrace {
  virtual ~EncoderTrace() = default;
};

/// Parametric image encoder: images -> N x d features. Parameter order is
/// stable for the lifetime of the encoder, which is what lets EMA and the
/// optimizer pair tensors by position.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual int dim() const = 0;
  /// Serializable description from which make_encoder rebuilds the architecture.
  virtual nlohmann::json describe() const = 0;

  virtual ParamList& parameters() = 0;
  virtual const ParamList& parameters() const = 0;

  virtual Matrix forward(std::span<const Image> images) const = 0;
  virtual Matrix forward(std::span<const Image> images, std::unique_ptr<EncoderTrace>& trace) const = 0;

  /// Accumulates parameter gradients into *grads (skipped when null) and
  /// returns per-image input gradients when need_input_grad is set.
  virtual std::vector<Image> backward(const EncoderTrace& trace, const Matrix& d_features, ParamList* grads,
                                      bool need_input_grad) const = 0;

  virtual std::unique_ptr<Encoder> clone() const = 0;
};

struct TinyEncoderConfig {
  int dim = 64;
  std::vector<int> widths{16, 32, 64, 64};
  int convs_per_stage = 1;  // first conv of a stage has stride 2, the rest stride 1
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TinyEncoderConfig& cfg);
void from_json(const nlohmann::json& j, TinyEncoderConfig& cfg);

/// Layer-by-layer weight + bias count of the tiny encoder.
std::size_t tiny_encoder_param_count(const TinyEncoderConfig& cfg);

/// Stack of 3x3 conv + ReLU stages, global average pooling, linear map to d.
class TinyEncoder final : public Encoder {
 public:
  explicit TinyEncoder(const TinyEncoderConfig& cfg);

  int dim() const override { return cfg_.dim; }
  nlohmann::json describe() const override;
  ParamList& parameters() override { return params_; }
  const ParamList& parameters() const override { return params_; }

  Matrix forward(std::span<const Image> images) const override;
  Matrix forward(std::span<const Image> images, std::unique_ptr<EncoderTrace>& trace) const override;
  std::vector<Image> backward(const EncoderTrace& trace, const Matrix& d_features, ParamList* grads,
                              bool need_input_grad) const override;
  std::unique_ptr<Encoder> clone() const override { return std::make_unique<TinyEncoder>(*this); }

  const TinyEncoderConfig& config() const { return cfg_; }

 private:
  struct ImageActivations;
  struct Trace;

  RowVector encode_one(const Image& image, ImageActivations* activations) const;

  TinyEncoderConfig cfg_;
  std::vector<nn::ConvSpec> convs_;
  ParamList params_;  // conv{i}.weight, conv{i}.bias ..., fc.weight, fc.bias
};

std::unique_ptr<Encoder> tiny_encoder(int dim, std::uint64_t seed);

/// Builds an encoder from describe() output. Only "tiny" is built in.
std::unique_ptr<Encoder> make_encoder(const nlohmann::json& description);

/// Encoder followed by its SSL projector; the unit that EMA averages.
struct Branch {
  std::unique_ptr<Encoder> encoder;
  nn::Mlp projector;

  Branch() = default;
  Branch(std::unique_ptr<Encoder> e, nn::Mlp p) : encoder(std::move(e)), projector(std::move(p)) {}
  Branch(const Branch& other);
  Branch& operator=(const Branch& other);
  Branch(Branch&&) noexcept = default;
  Branch& operator=(Branch&&) noexcept = default;
};

struct StudentTeacherPair {
  Branch student;
  Branch teacher;
  double momentum = 0.9995;

  /// Teacher starts as an exact copy of the student.
  static StudentTeacherPair from_student(Branch student, double momentum);
};

/// teacher <- momentum * teacher + (1 - momentum) * student, elementwise.
/// Throws ShapeMismatchError when the lists do not pair up.
void ema_update(ParamList& teacher, const ParamList& student, double momentum);

/// Updates backbone and projector of the teacher.
void ema_update(StudentTeacherPair& pair);

/// Iterations after which a frozen student and initial gap delta0 leave at most
/// `tolerance` gap: ceil(log(tolerance / delta0) / log(momentum)).
long ema_iterations_to_converge(double delta0, double tolerance, double momentum);

}  // namespace ssbver
