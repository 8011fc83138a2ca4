#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "saliencytune/errors.hpp"
#include "saliencytune/tensor.hpp"

namespace saliencytune {

enum class LayerKind { conv2d, relu, maxpool2d, flatten, linear };

inline std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::linear: return "linear";
  }
  return "unknown";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "relu") return LayerKind::relu;
  if (s == "maxpool2d") return LayerKind::maxpool2d;
  if (s == "flatten") return LayerKind::flatten;
  if (s == "linear") return LayerKind::linear;
  throw InputError("unknown layer type '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   // input channels (conv2d) or features (linear)
  std::size_t out = 0;  // output channels (conv2d) or features (linear)
  std::size_t kernel = 0;
  std::size_t padding = 0;
  std::size_t window = 0;  // maxpool2d window, stride equals window

  // Filled in by Architecture.
  Shape3 input_shape{};
  Shape3 output_shape{};
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  std::size_t weight_count() const {
    switch (kind) {
      case LayerKind::conv2d: return out * in * kernel * kernel;
      case LayerKind::linear: return out * in;
      default: return 0;
    }
  }
  std::size_t bias_count() const {
    return kind == LayerKind::conv2d || kind == LayerKind::linear ? out : 0;
  }

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel = 3, std::size_t padding = 1) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in = in;
    l.out = out;
    l.kernel = kernel;
    l.padding = padding;
    return l;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec maxpool(std::size_t window = 2) {
    LayerSpec l;
    l.kind = LayerKind::maxpool2d;
    l.window = window;
    return l;
  }
  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
  }
  static LayerSpec linear(std::size_t in, std::size_t out) {
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.in = in;
    l.out = out;
    return l;
  }
};

// Per-channel input standardization applied at the start of every forward pass.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Immutable description of a sequential classifier: layer list, shapes and
// the layout of every parameter blob inside one flat parameter vector.
class Architecture {
 public:
  Architecture(Shape3 input_shape, std::vector<LayerSpec> layers, Normalization normalization = {})
      : input_shape_(input_shape), layers_(std::move(layers)), normalization_(std::move(normalization)) {
    if (layers_.empty()) throw InputError("architecture has no layers");
    if (!normalization_.mean.empty() &&
        (normalization_.mean.size() != input_shape_.channels || normalization_.stddev.size() != input_shape_.channels))
      throw InputError("normalization must provide one mean and stddev per input channel");
    Shape3 shape = input_shape_;
    std::size_t offset = 0;
    for (auto& layer : layers_) {
      layer.input_shape = shape;
      switch (layer.kind) {
        case LayerKind::conv2d:
          if (layer.in != shape.channels) throw InputError("conv2d input channels do not match previous layer");
          if (layer.kernel == 0 || shape.height + 2 * layer.padding < layer.kernel ||
              shape.width + 2 * layer.padding < layer.kernel)
            throw InputError("conv2d kernel does not fit its input");
          shape = {layer.out, shape.height + 2 * layer.padding - layer.kernel + 1,
                   shape.width + 2 * layer.padding - layer.kernel + 1};
          break;
        case LayerKind::relu: break;
        case LayerKind::maxpool2d:
          if (layer.window == 0 || shape.height < layer.window || shape.width < layer.window)
            throw InputError("maxpool2d window does not fit its input");
          shape = {shape.channels, shape.height / layer.window, shape.width / layer.window};
          break;
        case LayerKind::flatten: shape = {shape.size(), 1, 1}; break;
        case LayerKind::linear:
          if (shape.height != 1 || shape.width != 1 || shape.channels != layer.in)
            throw InputError("linear layer input size does not match previous layer");
          shape = {layer.out, 1, 1};
          break;
      }
      layer.output_shape = shape;
      layer.weight_offset = offset;
      offset += layer.weight_count();
      layer.bias_offset = offset;
      offset += layer.bias_count();
    }
    if (shape.height != 1 || shape.width != 1) throw InputError("architecture must end in a class-score vector");
    num_parameters_ = offset;
    num_classes_ = shape.channels;
  }

  const Shape3& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  const Normalization& normalization() const { return normalization_; }
  std::size_t num_parameters() const { return num_parameters_; }
  std::size_t num_classes() const { return num_classes_; }

  // A layer qualifies for Grad-CAM when it emits a spatial block of at least 2x2.
  bool is_spatial(std::size_t layer_id) const {
    if (layer_id >= layers_.size()) return false;
    const auto& s = layers_[layer_id].output_shape;
    return layers_[layer_id].kind != LayerKind::flatten && layers_[layer_id].kind != LayerKind::linear &&
           s.channels >= 1 && s.height >= 2 && s.width >= 2;
  }

  // Output of the last convolutional block: the last spatial layer before flattening.
  std::size_t default_explanation_layer() const {
    std::size_t last_conv = layers_.size();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].kind == LayerKind::flatten || layers_[i].kind == LayerKind::linear) break;
      if (layers_[i].kind == LayerKind::conv2d) last_conv = i;
    }
    if (last_conv == layers_.size()) throw InputError("architecture has no convolutional layer");
    std::size_t id = last_conv;
    while (id + 1 < layers_.size() && is_spatial(id + 1)) ++id;
    return id;
  }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) {
      nlohmann::json j{{"type", to_string(l.kind)}};
      if (l.kind == LayerKind::conv2d) {
        j["in"] = l.in;
        j["out"] = l.out;
        j["kernel"] = l.kernel;
        j["padding"] = l.padding;
      } else if (l.kind == LayerKind::linear) {
        j["in"] = l.in;
        j["out"] = l.out;
      } else if (l.kind == LayerKind::maxpool2d) {
        j["window"] = l.window;
      }
      layers.push_back(std::move(j));
    }
    nlohmann::json j{{"input_shape", {input_shape_.channels, input_shape_.height, input_shape_.width}},
                     {"layers", std::move(layers)}};
    if (!normalization_.mean.empty())
      j["normalization"] = {{"mean", normalization_.mean}, {"std", normalization_.stddev}};
    return j;
  }

  static Architecture from_json(const nlohmann::json& j) {
    const auto& shape = j.at("input_shape");
    Shape3 input{shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(), shape.at(2).get<std::size_t>()};
    std::vector<LayerSpec> layers;
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from_string(lj.at("type").get<std::string>());
      l.in = lj.value("in", std::size_t{0});
      l.out = lj.value("out", std::size_t{0});
      l.kernel = lj.value("kernel", std::size_t{0});
      l.padding = lj.value("padding", std::size_t{0});
      l.window = lj.value("window", std::size_t{0});
      layers.push_back(l);
    }
    Normalization norm;
    if (j.contains("normalization")) {
      norm.mean = j["normalization"].at("mean").get<std::vector<double>>();
      norm.stddev = j["normalization"].at("std").get<std::vector<double>>();
    }
    return Architecture(input, std::move(layers), std::move(norm));
  }

 private:
  Shape3 input_shape_;
  std::vector<LayerSpec> layers_;
  Normalization normalization_;
  std::size_t num_parameters_ = 0;
  std::size_t num_classes_ = 0;
};

// Intermediate outputs of one forward pass. outputs[0] is the normalized
// input; outputs[i + 1] is the output of layer i.
struct ForwardTrace {
  std::vector<Tensor> outputs;

  const Tensor& layer_output(std::size_t layer_id) const { return outputs.at(layer_id + 1); }
  const Tensor& logits() const { return outputs.back(); }
};

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - m);
  for (auto& v : p) v /= sum;
  return p;
}

struct ForwardResult {
  std::vector<double> probabilities;
  Tensor activations;  // output of the explanation layer
  std::size_t layer_id = 0;

  std::size_t predicted_class() const {
    return static_cast<std::size_t>(
        std::distance(probabilities.begin(), std::max_element(probabilities.begin(), probabilities.end())));
  }
};

namespace detail {

inline void conv_forward(const LayerSpec& l, std::span<const double> params, const Tensor& in, Tensor& out) {
  const auto W = params.subspan(l.weight_offset, l.weight_count());
  const auto B = params.subspan(l.bias_offset, l.bias_count());
  const auto oh = l.output_shape.height, ow = l.output_shape.width;
  const auto ih = in.height(), iw = in.width();
  const long pad = static_cast<long>(l.padding);
  for (std::size_t o = 0; o < l.out; ++o) {
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) out(o, y, x) = B[o];
    for (std::size_t i = 0; i < l.in; ++i) {
      for (std::size_t ky = 0; ky < l.kernel; ++ky) {
        for (std::size_t kx = 0; kx < l.kernel; ++kx) {
          const double w = W[((o * l.in + i) * l.kernel + ky) * l.kernel + kx];
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x1 = std::min<long>(static_cast<long>(ow), static_cast<long>(iw) - dx);
          for (std::size_t y = 0; y < oh; ++y) {
            const long sy = static_cast<long>(y) + dy;
            if (sy < 0 || sy >= static_cast<long>(ih)) continue;
            const double* src = &in(i, static_cast<std::size_t>(sy), 0);
            double* dst = &out(o, y, 0);
            for (std::size_t x = x0; x < x1; ++x) dst[x] += w * src[static_cast<long>(x) + dx];
          }
        }
      }
    }
  }
}

inline void conv_backward(const LayerSpec& l, std::span<const double> params, const Tensor& in, const Tensor& grad_out,
                          Tensor& grad_in, std::span<double> param_grad) {
  const auto W = params.subspan(l.weight_offset, l.weight_count());
  const bool want_params = !param_grad.empty();
  const auto oh = l.output_shape.height, ow = l.output_shape.width;
  const auto ih = in.height(), iw = in.width();
  const long pad = static_cast<long>(l.padding);
  for (std::size_t o = 0; o < l.out; ++o) {
    if (want_params) {
      double db = 0.0;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) db += grad_out(o, y, x);
      param_grad[l.bias_offset + o] += db;
    }
    for (std::size_t i = 0; i < l.in; ++i) {
      for (std::size_t ky = 0; ky < l.kernel; ++ky) {
        for (std::size_t kx = 0; kx < l.kernel; ++kx) {
          const std::size_t widx = ((o * l.in + i) * l.kernel + ky) * l.kernel + kx;
          const double w = W[widx];
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x1 = std::min<long>(static_cast<long>(ow), static_cast<long>(iw) - dx);
          double dw = 0.0;
          for (std::size_t y = 0; y < oh; ++y) {
            const long sy = static_cast<long>(y) + dy;
            if (sy < 0 || sy >= static_cast<long>(ih)) continue;
            const double* src = &in(i, static_cast<std::size_t>(sy), 0);
            double* gsrc = &grad_in(i, static_cast<std::size_t>(sy), 0);
            const double* g = &grad_out(o, y, 0);
            for (std::size_t x = x0; x < x1; ++x) {
              dw += g[x] * src[static_cast<long>(x) + dx];
              gsrc[static_cast<long>(x) + dx] += w * g[x];
            }
          }
          if (want_params) param_grad[l.weight_offset + widx] += dw;
        }
      }
    }
  }
}

inline void maxpool_forward(const LayerSpec& l, const Tensor& in, Tensor& out) {
  const auto s = l.window;
  for (std::size_t c = 0; c < out.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx) m = std::max(m, in(c, y * s + dy, x * s + dx));
        out(c, y, x) = m;
      }
}

// Gradient is routed to the first maximal element of each window in scan order.
inline void maxpool_backward(const LayerSpec& l, const Tensor& in, const Tensor& grad_out, Tensor& grad_in) {
  const auto s = l.window;
  for (std::size_t c = 0; c < grad_out.channels(); ++c)
    for (std::size_t y = 0; y < grad_out.height(); ++y)
      for (std::size_t x = 0; x < grad_out.width(); ++x) {
        std::size_t by = y * s, bx = x * s;
        double m = in(c, by, bx);
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx)
            if (in(c, y * s + dy, x * s + dx) > m) {
              m = in(c, y * s + dy, x * s + dx);
              by = y * s + dy;
              bx = x * s + dx;
            }
        grad_in(c, by, bx) += grad_out(c, y, x);
      }
}

inline void linear_forward(const LayerSpec& l, std::span<const double> params, const Tensor& in, Tensor& out) {
  const auto W = params.subspan(l.weight_offset, l.weight_count());
  const auto B = params.subspan(l.bias_offset, l.bias_count());
  const auto x = in.values();
  for (std::size_t o = 0; o < l.out; ++o) {
    double acc = B[o];
    const double* row = &W[o * l.in];
    for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * x[i];
    out[o] = acc;
  }
}

inline void linear_backward(const LayerSpec& l, std::span<const double> params, const Tensor& in, const Tensor& grad_out,
                            Tensor& grad_in, std::span<double> param_grad) {
  const auto W = params.subspan(l.weight_offset, l.weight_count());
  const auto x = in.values();
  for (std::size_t o = 0; o < l.out; ++o) {
    const double g = grad_out[o];
    if (g == 0.0) continue;
    const double* row = &W[o * l.in];
    for (std::size_t i = 0; i < l.in; ++i) grad_in[i] += row[i] * g;
    if (!param_grad.empty()) {
      double* grow = &param_grad[l.weight_offset + o * l.in];
      for (std::size_t i = 0; i < l.in; ++i) grow[i] += g * x[i];
      param_grad[l.bias_offset + o] += g;
    }
  }
}

}  // namespace detail

// A sequential convolutional classifier with a designated explanation layer.
// Images are channel-major tensors (C, H, W) with values in the model's raw
// pixel range; the declared normalization is applied inside forward().
class ClassifierModel {
 public:
  explicit ClassifierModel(Architecture arch)
      : ClassifierModel(std::make_shared<const Architecture>(std::move(arch))) {}
  explicit ClassifierModel(std::shared_ptr<const Architecture> arch)
      : arch_(std::move(arch)), params_(arch_->num_parameters(), 0.0),
        explanation_layer_(arch_->default_explanation_layer()) {}

  const Architecture& architecture() const { return *arch_; }
  std::shared_ptr<const Architecture> shared_architecture() const { return arch_; }
  std::size_t num_classes() const { return arch_->num_classes(); }
  const Shape3& input_shape() const { return arch_->input_shape(); }

  std::size_t explanation_layer() const { return explanation_layer_; }
  void set_explanation_layer(std::size_t layer_id) {
    if (!arch_->is_spatial(layer_id))
      throw InputError("layer " + std::to_string(layer_id) + " does not produce a spatial block of at least 2x2");
    explanation_layer_ = layer_id;
  }
  const Shape3& explanation_shape() const { return arch_->layer(explanation_layer_).output_shape; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  void set_parameters(std::vector<double> params) {
    if (params.size() != params_.size()) throw InputError("parameter count mismatch");
    params_ = std::move(params);
  }

  std::uint64_t training_step() const { return step_; }
  void set_training_step(std::uint64_t step) { step_ = step; }

  // He-normal weights, zero biases.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (const auto& l : arch_->layers()) {
      if (l.weight_count() == 0) continue;
      const double fan_in = l.kind == LayerKind::conv2d ? static_cast<double>(l.in * l.kernel * l.kernel)
                                                        : static_cast<double>(l.in);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (std::size_t i = 0; i < l.weight_count(); ++i) params_[l.weight_offset + i] = dist(rng);
      for (std::size_t i = 0; i < l.bias_count(); ++i) params_[l.bias_offset + i] = 0.0;
    }
  }

  ForwardTrace trace(const Tensor& image) const {
    if (image.shape() != arch_->input_shape())
      throw InputError("image shape " + to_string(image.shape()) + " does not match model input " +
                       to_string(arch_->input_shape()));
    ForwardTrace t;
    t.outputs.reserve(arch_->layers().size() + 1);
    if (!image.all_finite()) throw NumericError("non-finite input image");
    Tensor x = image;
    const auto& norm = arch_->normalization();
    if (!norm.mean.empty()) {
      const std::size_t plane = x.height() * x.width();
      for (std::size_t c = 0; c < x.channels(); ++c)
        for (std::size_t p = 0; p < plane; ++p) x[c * plane + p] = (x[c * plane + p] - norm.mean[c]) / norm.stddev[c];
    }
    t.outputs.push_back(std::move(x));
    for (const auto& l : arch_->layers()) {
      const Tensor& in = t.outputs.back();
      Tensor out(l.output_shape);
      switch (l.kind) {
        case LayerKind::conv2d: detail::conv_forward(l, params_, in, out); break;
        case LayerKind::relu:
          for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
          break;
        case LayerKind::maxpool2d: detail::maxpool_forward(l, in, out); break;
        case LayerKind::flatten: out = in.reshaped(l.output_shape); break;
        case LayerKind::linear: detail::linear_forward(l, params_, in, out); break;
      }
      if (!out.all_finite()) throw NumericError("non-finite activations in layer " + std::to_string(t.outputs.size() - 1));
      t.outputs.push_back(std::move(out));
    }
    return t;
  }

  ForwardResult forward(const Tensor& image) const {
    auto t = trace(image);
    return {softmax(t.logits().values()), t.layer_output(explanation_layer_), explanation_layer_};
  }

  // Pushes `grad` (w.r.t. the output of layer `top`) down through layers
  // top..bottom and returns the gradient w.r.t. the input of `bottom`.
  // Parameter gradients are accumulated into `param_grad` when it is non-empty.
  Tensor backpropagate(const ForwardTrace& t, std::size_t top, std::size_t bottom, Tensor grad,
                       std::span<double> param_grad = {}) const {
    if (!param_grad.empty() && param_grad.size() != params_.size())
      throw InputError("parameter gradient buffer has the wrong size");
    for (std::size_t li = top + 1; li-- > bottom;) {
      const auto& l = arch_->layer(li);
      const Tensor& in = t.outputs[li];
      Tensor grad_in(l.input_shape);
      switch (l.kind) {
        case LayerKind::conv2d: detail::conv_backward(l, params_, in, grad, grad_in, param_grad); break;
        case LayerKind::relu:
          for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = in[i] > 0.0 ? grad[i] : 0.0;
          break;
        case LayerKind::maxpool2d: detail::maxpool_backward(l, in, grad, grad_in); break;
        case LayerKind::flatten: grad_in = grad.reshaped(l.input_shape); break;
        case LayerKind::linear: detail::linear_backward(l, params_, in, grad, grad_in, param_grad); break;
      }
      grad = std::move(grad_in);
      if (li == 0) break;
    }
    return grad;
  }

  // d(class score c) / d(explanation activations) on this model, from an existing trace.
  Tensor class_score_gradient(const ForwardTrace& t, std::size_t class_index) const {
    if (class_index >= num_classes()) throw InputError("class index out of range");
    Tensor seed(t.logits().shape());
    seed[class_index] = 1.0;
    const std::size_t last = arch_->layers().size() - 1;
    if (explanation_layer_ == last) return seed;
    return backpropagate(t, last, explanation_layer_ + 1, std::move(seed));
  }

 private:
  std::shared_ptr<const Architecture> arch_;
  std::vector<double> params_;
  std::size_t explanation_layer_ = 0;
  std::uint64_t step_ = 0;
};

// Frozen deep copy of a model. Later updates to the source model never reach it.
class ModelSnapshot {
 public:
  explicit ModelSnapshot(const ClassifierModel& model)
      : model_(std::make_shared<const ClassifierModel>(model)), step_(model.training_step()) {
    for (double v : model.parameters())
      if (!std::isfinite(v)) throw InputError("cannot snapshot a model with non-finite parameters");
  }

  std::uint64_t created_at_step() const { return step_; }
  const ClassifierModel& model() const { return *model_; }
  ForwardResult forward(const Tensor& image) const { return model_->forward(image); }

 private:
  std::shared_ptr<const ClassifierModel> model_;
  std::uint64_t step_ = 0;
};

inline ModelSnapshot snapshot(const ClassifierModel& model) { return ModelSnapshot(model); }

// dy^c/dA^k evaluated on the frozen snapshot. The returned tensor is a plain
// value: it carries no dependency on any live model's parameters.
inline Tensor class_score_gradient(const ModelSnapshot& snap, const Tensor& image, std::size_t class_index) {
  const auto& m = snap.model();
  if (class_index >= m.num_classes()) throw InputError("class index out of range");
  return m.class_score_gradient(m.trace(image), class_index);
}

// 2 conv blocks (3x3 conv, ReLU, 2x2 max-pool) and one fully connected layer.
// A 32x32 input gives an 8x8 explanation layer.
inline Architecture reference_cnn_architecture(Shape3 input = {3, 32, 32}, std::size_t num_classes = 3,
                                               std::size_t channels1 = 8, std::size_t channels2 = 16) {
  std::vector<LayerSpec> layers{LayerSpec::conv(input.channels, channels1), LayerSpec::relu(), LayerSpec::maxpool(2),
                                LayerSpec::conv(channels1, channels2),      LayerSpec::relu(), LayerSpec::maxpool(2),
                                LayerSpec::flatten()};
  layers.push_back(LayerSpec::linear(channels2 * (input.height / 4) * (input.width / 4), num_classes));
  std::vector<double> mean(input.channels, 0.5), stddev(input.channels, 0.25);
  return Architecture(input, std::move(layers), {std::move(mean), std::move(stddev)});
}

inline ClassifierModel make_reference_cnn(std::uint64_t seed, Shape3 input = {3, 32, 32}, std::size_t num_classes = 3) {
  ClassifierModel m(reference_cnn_architecture(input, num_classes));
  m.initialize(seed);
  return m;
}

// VGG-style feature stack. `features` lists conv output widths with 0 marking
// a 2x2 max-pool (torchvision's "M"); `hidden` lists the classifier's hidden
// widths. Layer order and parameter layout match torchvision's VGG in eval
// mode, so exported weights load directly. torchvision's adaptive average
// pool is not modelled; it is the identity when the final feature map is
// already 7x7 (224x224 inputs).
inline Architecture vgg_architecture(const std::vector<std::size_t>& features, const std::vector<std::size_t>& hidden,
                                     Shape3 input, std::size_t num_classes, Normalization normalization = {}) {
  std::vector<LayerSpec> layers;
  Shape3 shape = input;
  for (auto width : features) {
    if (width == 0) {
      layers.push_back(LayerSpec::maxpool(2));
      shape.height /= 2;
      shape.width /= 2;
    } else {
      layers.push_back(LayerSpec::conv(shape.channels, width));
      layers.push_back(LayerSpec::relu());
      shape.channels = width;
    }
  }
  layers.push_back(LayerSpec::flatten());
  std::size_t in = shape.size();
  for (auto h : hidden) {
    layers.push_back(LayerSpec::linear(in, h));
    layers.push_back(LayerSpec::relu());
    in = h;
  }
  layers.push_back(LayerSpec::linear(in, num_classes));
  return Architecture(input, std::move(layers), std::move(normalization));
}

inline Architecture vgg16_architecture(std::size_t num_classes) {
  const std::vector<std::size_t> cfg{64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};
  return vgg_architecture(cfg, {4096, 4096}, {3, 224, 224}, num_classes,
                          {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}});
}

}  // namespace saliencytune
