#include "ssbver/backbone.hpp"

#include "ssbver/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace ssbver {

void TinyEncoderConfig::validate() const {
  if (dim < 8) throw ConfigError("encoder dim must be >= 8 (got " + std::to_string(dim) + ")");
  if (widths.empty()) throw ConfigError("encoder needs at least one stage");
  for (int w : widths) {
    if (w < 1) throw ConfigError("encoder stage widths must be positive");
  }
  if (convs_per_stage < 1) throw ConfigError("convs_per_stage must be >= 1");
}

void to_json(nlohmann::json& j, const TinyEncoderConfig& cfg) {
  j = {{"arch", "tiny"}, {"dim", cfg.dim}, {"widths", cfg.widths}, {"convs_per_stage", cfg.convs_per_stage}};
}

void from_json(const nlohmann::json& j, TinyEncoderConfig& cfg) {
  cfg.dim = j.value("dim", cfg.dim);
  cfg.widths = j.value("widths", cfg.widths);
  cfg.convs_per_stage = j.value("convs_per_stage", cfg.convs_per_stage);
}

std::size_t tiny_encoder_param_count(const TinyEncoderConfig& cfg) {
  std::size_t count = 0;
  int in = 3;
  for (int width : cfg.widths) {
    for (int i = 0; i < cfg.convs_per_stage; ++i) {
      count += static_cast<std::size_t>(in) * 3 * 3 * width + width;
      in = width;
    }
  }
  count += static_cast<std::size_t>(in) * cfg.dim + cfg.dim;
  return count;
}

struct TinyEncoder::ImageActivations {
  std::vector<nn::FeatureMap> maps;  // maps[0] = input, maps[i+1] = relu(conv_i(maps[i]))
  RowVector pooled;
};

struct TinyEncoder::Trace final : EncoderTrace {
  std::vector<ImageActivations> images;
};

TinyEncoder::TinyEncoder(const TinyEncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  int in = 3;
  for (int width : cfg_.widths) {
    for (int i = 0; i < cfg_.convs_per_stage; ++i) {
      convs_.push_back({in, width, 3, i == 0 ? 2 : 1, 1});
      in = width;
    }
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const auto& spec = convs_[i];
    const std::string name = "conv" + std::to_string(i);
    Tensor w(name + ".weight", {spec.out_channels, spec.in_channels, 3, 3});
    nn::init_he_normal(w, spec.in_channels * 9, rng);
    params_.push_back(std::move(w));
    params_.emplace_back(name + ".bias", std::vector<int>{spec.out_channels});
  }
  Tensor fc("fc.weight", {cfg_.dim, in});
  nn::init_lecun_normal(fc, in, rng);
  params_.push_back(std::move(fc));
  params_.emplace_back("fc.bias", std::vector<int>{cfg_.dim});
}

nlohmann::json TinyEncoder::describe() const {
  nlohmann::json j = cfg_;
  return j;
}

RowVector TinyEncoder::encode_one(const Image& image, ImageActivations* activations) const {
  nn::FeatureMap map = nn::from_image(image);
  if (activations) activations->maps.push_back(map);
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    map = nn::conv2d(map, params_[2 * i], params_[2 * i + 1], convs_[i]);
    nn::relu_inplace(map.data);
    if (activations) activations->maps.push_back(map);
  }
  const RowVector pooled = map.data.rowwise().mean().transpose();
  const Tensor& fc_w = params_[params_.size() - 2];
  const Tensor& fc_b = params_.back();
  RowVector feature = pooled * fc_w.matrix().transpose();
  feature += Eigen::Map<const RowVector>(fc_b.values.data(), cfg_.dim);
  if (activations) activations->pooled = pooled;
  return feature;
}

Matrix TinyEncoder::forward(std::span<const Image> images) const {
  Matrix out(static_cast<Eigen::Index>(images.size()), cfg_.dim);
  for (std::size_t n = 0; n < images.size(); ++n) out.row(n) = encode_one(images[n], nullptr);
  return out;
}

Matrix TinyEncoder::forward(std::span<const Image> images, std::unique_ptr<EncoderTrace>& trace) const {
  auto t = std::make_unique<Trace>();
  t->images.resize(images.size());
  Matrix out(static_cast<Eigen::Index>(images.size()), cfg_.dim);
  for (std::size_t n = 0; n < images.size(); ++n) out.row(n) = encode_one(images[n], &t->images[n]);
  trace = std::move(t);
  return out;
}

std::vector<Image> TinyEncoder::backward(const EncoderTrace& trace_base, const Matrix& d_features,
                                         ParamList* grads, bool need_input_grad) const {
  const auto& trace = dynamic_cast<const Trace&>(trace_base);
  if (static_cast<std::size_t>(d_features.rows()) != trace.images.size() || d_features.cols() != cfg_.dim) {
    throw ShapeMismatchError("encoder backward: gradient shape does not match the traced forward");
  }
  ParamList scratch;
  if (!grads) {
    scratch = zeros_like(params_);
    grads = &scratch;
  }
  const std::size_t fc_index = params_.size() - 2;
  const Tensor& fc_w = params_[fc_index];

  std::vector<Image> input_grads;
  if (need_input_grad) input_grads.reserve(trace.images.size());

  for (std::size_t n = 0; n < trace.images.size(); ++n) {
    const auto& act = trace.images[n];
    const RowVector d_feat = d_features.row(static_cast<Eigen::Index>(n));
    (*grads)[fc_index].matrix().noalias() += d_feat.transpose() * act.pooled;
    Eigen::Map<RowVector>((*grads)[fc_index + 1].values.data(), cfg_.dim) += d_feat;
    const RowVector d_pooled = d_feat * fc_w.matrix();

    const auto& last = act.maps.back();
    nn::FeatureMap d_map(last.channels, last.height, last.width);
    const double inv_area = 1.0 / (static_cast<double>(last.height) * last.width);
    for (int c = 0; c < last.channels; ++c) d_map.data.row(c).setConstant(d_pooled[c] * inv_area);

    for (std::size_t i = convs_.size(); i-- > 0;) {
      nn::relu_backward_inplace(d_map.data, act.maps[i + 1].data);
      const bool want_input = i > 0 || need_input_grad;
      d_map = nn::conv2d_backward(act.maps[i], d_map, params_[2 * i], convs_[i], (*grads)[2 * i],
                                  (*grads)[2 * i + 1], want_input);
    }
    if (need_input_grad) input_grads.push_back(nn::to_image(d_map));
  }
  return input_grads;
}

std::unique_ptr<Encoder> tiny_encoder(int dim, std::uint64_t seed) {
  TinyEncoderConfig cfg;
  cfg.dim = dim;
  cfg.seed = seed;
  return std::make_unique<TinyEncoder>(cfg);
}

std::unique_ptr<Encoder> make_encoder(const nlohmann::json& description) {
  const std::string arch = description.value("arch", std::string("tiny"));
  if (arch != "tiny") throw ConfigError("unknown encoder arch '" + arch + "'");
  TinyEncoderConfig cfg = description.get<TinyEncoderConfig>();
  return std::make_unique<TinyEncoder>(cfg);
}

Branch::Branch(const Branch& other)
    : encoder(other.encoder ? other.encoder->clone() : nullptr), projector(other.projector) {}

Branch& Branch::operator=(const Branch& other) {
  if (this != &other) {
    encoder = other.encoder ? other.encoder->clone() : nullptr;
    projector = other.projector;
  }
  return *this;
}

StudentTeacherPair StudentTeacherPair::from_student(Branch student, double momentum) {
  if (momentum < 0.0 || momentum > 1.0) throw ConfigError("EMA momentum must lie in [0,1]");
  StudentTeacherPair pair;
  pair.teacher = student;
  pair.student = std::move(student);
  pair.momentum = momentum;
  return pair;
}

void ema_update(ParamList& teacher, const ParamList& student, double momentum) {
  if (!same_shapes(teacher, student)) throw ShapeMismatchError("student and teacher parameter shapes differ");
  const double keep = momentum;
  const double take = 1.0 - momentum;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    auto& t = teacher[i].values;
    const auto& s = student[i].values;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = keep * t[j] + take * s[j];
  }
}

void ema_update(StudentTeacherPair& pair) {
  ema_update(pair.teacher.encoder->parameters(), pair.student.encoder->parameters(), pair.momentum);
  ema_update(pair.teacher.projector.parameters(), pair.student.projector.parameters(), pair.momentum);
}

long ema_iterations_to_converge(double delta0, double tolerance, double momentum) {
  if (delta0 <= tolerance) return 0;
  if (momentum <= 0.0) return 1;
  if (momentum >= 1.0) return std::numeric_limits<long>::max();
  return static_cast<long>(std::ceil(std::log(tolerance / delta0) / std::log(momentum)));
}

}  // namespace ssbver
