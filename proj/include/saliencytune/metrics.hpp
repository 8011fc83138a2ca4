#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "saliencytune/dataset.hpp"
#include "saliencytune/errors.hpp"
#include "saliencytune/gradcam.hpp"
#include "saliencytune/losses.hpp"
#include "saliencytune/model.hpp"

namespace saliencytune {

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> per_class_sensitivity;  // absent for classes with no members
  double avg_sensitivity = 0.0;
  double avg_jaccard = 0.0;
  double jaccard_sd = 0.0;  // population standard deviation
  std::size_t n_samples = 0;
  std::size_t n_jaccard = 0;  // samples that carried a ground-truth mask
  double threshold_used = 0.5;

  nlohmann::json to_json() const {
    nlohmann::json sens = nlohmann::json::object();
    for (std::size_t c = 0; c < class_names.size(); ++c)
      sens[class_names[c]] = per_class_sensitivity[c] ? nlohmann::json(*per_class_sensitivity[c]) : nlohmann::json();
    return {{"accuracy", accuracy},         {"per_class_sensitivity", sens}, {"avg_sensitivity", avg_sensitivity},
            {"avg_jaccard", avg_jaccard},   {"jaccard_sd", jaccard_sd},     {"jaccard_sd_kind", "population"},
            {"n_samples", n_samples},       {"n_jaccard", n_jaccard},       {"threshold_used", threshold_used},
            {"jaccard_resolution", "explanation-layer"}};
  }
};

// Aggregates per-sample outcomes. `jaccards[i]` is empty for samples without a ground-truth mask.
inline MetricsReport compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                     std::span<const std::optional<double>> jaccards,
                                     const std::vector<std::string>& class_names, double threshold) {
  if (predictions.empty()) throw InputError("cannot compute metrics over an empty sample set");
  if (predictions.size() != labels.size() || predictions.size() != jaccards.size())
    throw InputError("metrics inputs differ in length");
  const std::size_t k = class_names.size();
  std::vector<std::size_t> members(k, 0), hits(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i] >= k) throw InputError("label out of range");
    ++members[labels[i]];
    if (predictions[i] == labels[i]) {
      ++hits[labels[i]];
      ++correct;
    }
  }
  MetricsReport r;
  r.class_names = class_names;
  r.n_samples = predictions.size();
  r.threshold_used = threshold;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_samples);
  r.per_class_sensitivity.resize(k);
  double sens_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (members[c] == 0) continue;
    r.per_class_sensitivity[c] = static_cast<double>(hits[c]) / static_cast<double>(members[c]);
    sens_sum += *r.per_class_sensitivity[c];
    ++present;
  }
  r.avg_sensitivity = present ? sens_sum / static_cast<double>(present) : 0.0;
  double sum = 0.0;
  for (const auto& j : jaccards)
    if (j) {
      sum += *j;
      ++r.n_jaccard;
    }
  if (r.n_jaccard > 0) {
    r.avg_jaccard = sum / static_cast<double>(r.n_jaccard);
    double sq = 0.0;
    for (const auto& j : jaccards)
      if (j) sq += (*j - r.avg_jaccard) * (*j - r.avg_jaccard);
    r.jaccard_sd = std::sqrt(sq / static_cast<double>(r.n_jaccard));
  }
  return r;
}

// Hard explanation mask for the predicted class, compared at explanation-layer
// resolution with the majority-downsampled ground truth.
inline std::optional<double> explanation_jaccard(const Explanation& e, const ImageSample& sample, double threshold) {
  if (!sample.gt_mask) return std::nullopt;
  const auto hard = e.path.hard(threshold);
  const auto truth = align_resolution(*sample.gt_mask, hard.height(), hard.width());
  return jaccard_index(hard, truth);
}

struct SampleOutcome {
  std::size_t predicted = 0;
  std::optional<double> jaccard;
};

inline SampleOutcome evaluate_sample(const ClassifierModel& model, const ImageSample& sample, double threshold) {
  const auto e = explain(model, sample.image, std::nullopt, threshold);
  return {e.predicted_class, explanation_jaccard(e, sample, threshold)};
}

inline MetricsReport evaluate(const ClassifierModel& model, std::span<const ImageSample> samples, double threshold,
                              const std::vector<std::string>& class_names = default_class_names()) {
  if (samples.empty()) throw InputError("cannot evaluate on an empty sample set");
  check_threshold(threshold);
  std::vector<std::size_t> predictions, labels;
  std::vector<std::optional<double>> jaccards;
  for (const auto& s : samples) {
    const auto o = evaluate_sample(model, s, threshold);
    predictions.push_back(o.predicted);
    labels.push_back(s.label);
    jaccards.push_back(o.jaccard);
  }
  return compute_metrics(predictions, labels, jaccards, class_names, threshold);
}

}  // namespace saliencytune
