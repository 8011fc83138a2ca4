#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "saliencytune/errors.hpp"
#include "saliencytune/explainer.hpp"

namespace saliencytune {

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kJaccardSmoothing = 1e-6;

struct LossBreakdown {
  double l_cls = 0.0;
  double l_exp = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
};

inline std::size_t one_hot_index(std::span<const double> label) {
  std::size_t hot = label.size();
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] == 1.0) {
      if (hot != label.size()) throw InputError("label has more than one hot entry");
      hot = i;
    } else if (label[i] != 0.0) {
      throw InputError("label is not one-hot");
    }
  }
  if (hot == label.size()) throw InputError("label has no hot entry");
  return hot;
}

inline std::vector<double> one_hot(std::size_t index, std::size_t size) {
  if (index >= size) throw InputError("class index out of range");
  std::vector<double> v(size, 0.0);
  v[index] = 1.0;
  return v;
}

// Categorical cross-entropy -sum_i label_i * log(p_i), with p clamped to [1e-12, 1].
inline double classification_loss(std::span<const double> probabilities, std::span<const double> label) {
  if (probabilities.size() != label.size()) throw InputError("probabilities and label differ in length");
  const std::size_t hot = one_hot_index(label);
  return -std::log(std::clamp(probabilities[hot], kLogClamp, 1.0));
}

inline double classification_loss(std::span<const double> probabilities, std::size_t label) {
  if (label >= probabilities.size()) throw InputError("class index out of range");
  return -std::log(std::clamp(probabilities[label], kLogClamp, 1.0));
}

// d(cross-entropy)/d(logits) for softmax probabilities. Zero when the clamp is active.
inline std::vector<double> classification_loss_logit_gradient(std::span<const double> probabilities,
                                                              std::size_t label) {
  if (label >= probabilities.size()) throw InputError("class index out of range");
  std::vector<double> g(probabilities.size(), 0.0);
  if (probabilities[label] < kLogClamp) return g;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = probabilities[i] - (i == label ? 1.0 : 0.0);
  return g;
}

// |A and B| / |A or B|; two empty masks are identical (1.0).
inline double jaccard_index(const ExplanationMask& a, const ExplanationMask& b) {
  if (!a.values.same_resolution(b.values)) throw InputError("jaccard_index: mask resolutions differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    inter += a.values[i] & b.values[i];
    uni += a.values[i] | b.values[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// (sum min(p, g) + s) / (sum max(p, g) + s).
inline double soft_jaccard(const SoftMask& pred, const ExplanationMask& truth) {
  if (!pred.values.same_resolution(truth.values)) throw InputError("soft_jaccard: mask resolutions differ");
  double num = kJaccardSmoothing, den = kJaccardSmoothing;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double p = pred.values[i], g = truth.values[i];
    num += std::min(p, g);
    den += std::max(p, g);
  }
  return num / den;
}

// d(soft_jaccard)/d(pred).
inline RealGrid soft_jaccard_gradient(const SoftMask& pred, const ExplanationMask& truth) {
  if (!pred.values.same_resolution(truth.values)) throw InputError("soft_jaccard: mask resolutions differ");
  double num = kJaccardSmoothing, den = kJaccardSmoothing;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double p = pred.values[i], g = truth.values[i];
    num += std::min(p, g);
    den += std::max(p, g);
  }
  RealGrid grad(pred.values.height(), pred.values.width(), 0.0);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double p = pred.values[i], g = truth.values[i];
    const double dnum = p < g ? 1.0 : 0.0;
    const double dden = p > g ? 1.0 : 0.0;
    grad[i] = dnum / den - num * dden / (den * den);
  }
  return grad;
}

// 1 - soft Jaccard. Minimising it maximises overlap with the corrected mask.
inline double explanation_loss(const SoftMask& pred, const ExplanationMask& truth) {
  return 1.0 - soft_jaccard(pred, truth);
}

// Penalty used when the saliency map is identically zero.
inline constexpr double kDegenerateExplanationLoss = 1.0;

inline LossBreakdown combined_loss(double l_cls, double l_exp, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  return {l_cls, l_exp, (1.0 - lambda) * l_cls + lambda * l_exp, lambda};
}

}  // namespace saliencytune
