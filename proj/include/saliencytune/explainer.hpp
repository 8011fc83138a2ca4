#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "saliencytune/errors.hpp"
#include "saliencytune/tensor.hpp"

namespace saliencytune {

// Per-channel Grad-CAM weights. Always plain values: they never carry a
// gradient dependency on the model that produced them.
struct ChannelWeights {
  std::vector<double> weights;
  std::size_t class_index = 0;
  static constexpr bool detached = true;
};

struct SaliencyMap {
  RealGrid values;
  std::size_t class_index = 0;
  bool normalized = false;
  bool degenerate = false;  // set by normalize() for an all-zero map
};

enum class MaskOrigin { model, feedback, ground_truth };

struct ExplanationMask {
  BinaryGrid values;
  MaskOrigin origin = MaskOrigin::model;

  ExplanationMask() = default;
  explicit ExplanationMask(BinaryGrid v, MaskOrigin o = MaskOrigin::model) : values(std::move(v)), origin(o) {
    for (auto p : values)
      if (p > 1) throw InputError("explanation mask entries must be 0 or 1");
  }
  std::size_t height() const { return values.height(); }
  std::size_t width() const { return values.width(); }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto p : values) n += p;
    return n;
  }
};

struct SoftMask {
  RealGrid values;
  double threshold = 0.5;
  double temperature = 0.05;
};

// a_k = mean over (i, j) of d y^c / d A^k_ij.
inline ChannelWeights channel_weights(const Tensor& gradient, std::size_t class_index = 0) {
  const std::size_t z = gradient.height() * gradient.width();
  if (z == 0) throw InputError("gradient has empty spatial dimensions");
  ChannelWeights w{std::vector<double>(gradient.channels(), 0.0), class_index};
  for (std::size_t k = 0; k < gradient.channels(); ++k) {
    double sum = 0.0;
    for (double g : gradient.channel(k)) sum += g;
    if (!std::isfinite(sum)) throw InputError("gradient is not finite");
    w.weights[k] = sum / static_cast<double>(z);
  }
  return w;
}

// ReLU of the weighted channel sum.
inline SaliencyMap saliency(const Tensor& activations, const ChannelWeights& weights) {
  if (weights.weights.size() != activations.channels())
    throw InputError("channel weights length " + std::to_string(weights.weights.size()) +
                     " does not match activation channels " + std::to_string(activations.channels()));
  const std::size_t h = activations.height(), w = activations.width();
  RealGrid pre(h, w, 0.0);
  for (std::size_t k = 0; k < activations.channels(); ++k) {
    const double a = weights.weights[k];
    const auto ch = activations.channel(k);
    for (std::size_t p = 0; p < h * w; ++p) pre[p] += a * ch[p];
  }
  for (auto& v : pre) v = v > 0.0 ? v : 0.0;
  return {std::move(pre), weights.class_index};
}

inline SaliencyMap normalize(SaliencyMap map) {
  double m = 0.0;
  for (double v : map.values) m = std::max(m, v);
  if (m > 0.0) {
    for (auto& v : map.values) v /= m;
    map.degenerate = false;
  } else {
    map.degenerate = true;
  }
  map.normalized = true;
  return map;
}

inline void check_threshold(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw InputError("threshold must lie in [0, 1]");
}

// 1 where the normalized saliency is strictly greater than t.
inline ExplanationMask hard_threshold(const SaliencyMap& map, double t) {
  check_threshold(t);
  BinaryGrid out(map.values.height(), map.values.width(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = map.values[i] > t ? 1 : 0;
  return ExplanationMask(std::move(out), MaskOrigin::model);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Differentiable stand-in for hard_threshold: sigmoid((value - t) / tau).
inline SoftMask soft_threshold(const SaliencyMap& map, double t, double tau) {
  check_threshold(t);
  if (!(tau > 0.0)) throw InputError("soft threshold temperature must be positive");
  RealGrid out(map.values.height(), map.values.width(), 0.0);
  // Clamped so entries stay strictly inside (0, 1) even when the sigmoid saturates.
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(sigmoid((map.values[i] - t) / tau), lo, hi);
  return {std::move(out), t, tau};
}

namespace detail {
// Source index range [first, last) of the block that maps onto target cell i.
inline std::pair<std::size_t, std::size_t> block_range(std::size_t i, std::size_t source, std::size_t target) {
  const std::size_t first = i * source / target;
  const std::size_t last = std::max((i + 1) * source / target, first + 1);
  return {first, last};
}
}  // namespace detail

// Resamples a mask. Shrinking uses block-majority voting (ties count as 1);
// enlarging is nearest-neighbour.
inline ExplanationMask align_resolution(const ExplanationMask& mask, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || mask.height() == 0 || mask.width() == 0)
    throw InputError("mask resolutions must be at least 1x1");
  if (mask.height() == height && mask.width() == width) return mask;
  BinaryGrid out(height, width, 0);
  for (std::size_t ty = 0; ty < height; ++ty) {
    const auto [y0, y1] = detail::block_range(ty, mask.height(), height);
    for (std::size_t tx = 0; tx < width; ++tx) {
      const auto [x0, x1] = detail::block_range(tx, mask.width(), width);
      std::size_t ones = 0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) ones += mask.values(y, x);
      out(ty, tx) = 2 * ones >= (y1 - y0) * (x1 - x0) ? 1 : 0;
    }
  }
  return ExplanationMask(std::move(out), mask.origin);
}

// Nearest-neighbour enlargement of a real map for display.
inline RealGrid upsample_nearest(const RealGrid& map, std::size_t height, std::size_t width) {
  RealGrid out(height, width, 0.0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out(y, x) = map(y * map.height() / height, x * map.width() / width);
  return out;
}

// Forward pass of activations -> saliency -> normalized map -> soft mask with
// its vector-Jacobian product back to the activations. Channel weights are
// constants of this computation.
class ExplanationPath {
 public:
  ExplanationPath(const Tensor& activations, ChannelWeights weights, double threshold, double temperature)
      : activations_(activations), weights_(std::move(weights)) {
    raw_ = saliency(activations_, weights_);
    max_ = 0.0;
    argmax_ = 0;
    for (std::size_t i = 0; i < raw_.values.size(); ++i)
      if (raw_.values[i] > max_) {
        max_ = raw_.values[i];
        argmax_ = i;
      }
    normalized_ = normalize(raw_);
    soft_ = soft_threshold(normalized_, threshold, temperature);
  }

  const ChannelWeights& weights() const { return weights_; }
  const SaliencyMap& raw() const { return raw_; }
  const SaliencyMap& normalized() const { return normalized_; }
  const SoftMask& soft() const { return soft_; }
  bool degenerate() const { return normalized_.degenerate; }
  ExplanationMask hard(double t) const { return hard_threshold(normalized_, t); }

  // Gradient w.r.t. the activations given the gradient w.r.t. the soft mask.
  // A degenerate map has zero gradient everywhere.
  Tensor backward(const RealGrid& grad_soft) const {
    if (!grad_soft.same_resolution(soft_.values)) throw InputError("soft-mask gradient has the wrong resolution");
    Tensor grad(activations_.shape(), 0.0);
    if (degenerate()) return grad;
    const std::size_t n = grad_soft.size();
    const double tau = soft_.temperature;
    std::vector<double> g_norm(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = soft_.values[i];
      g_norm[i] = grad_soft[i] * p * (1.0 - p) / tau;
    }
    // normalized = raw / max(raw)
    std::vector<double> g_raw(n);
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g_raw[i] = g_norm[i] / max_;
      dot += g_norm[i] * raw_.values[i];
    }
    g_raw[argmax_] -= dot / (max_ * max_);
    // raw = relu(sum_k w_k A_k)
    for (std::size_t i = 0; i < n; ++i)
      if (raw_.values[i] <= 0.0) g_raw[i] = 0.0;
    for (std::size_t k = 0; k < activations_.channels(); ++k) {
      const double w = weights_.weights[k];
      for (std::size_t i = 0; i < n; ++i) grad[k * n + i] = w * g_raw[i];
    }
    return grad;
  }

 private:
  Tensor activations_;
  ChannelWeights weights_;
  SaliencyMap raw_;
  SaliencyMap normalized_;
  SoftMask soft_;
  double max_ = 0.0;
  std::size_t argmax_ = 0;
};

}  // namespace saliencytune
