#pragma once

#include <optional>
#include <vector>

#include "saliencytune/explainer.hpp"
#include "saliencytune/model.hpp"

namespace saliencytune {

struct Explanation {
  std::vector<double> probabilities;
  std::size_t predicted_class = 0;
  ExplanationPath path;
};

// Prediction plus Grad-CAM for `class_index` (default: the predicted class)
// on an unchanging model. One trace serves both the class-score gradient and
// the activations, which is equivalent to the snapshot route while the model
// is not being updated.
inline Explanation explain(const ClassifierModel& model, const Tensor& image,
                           std::optional<std::size_t> class_index = std::nullopt, double threshold = 0.5,
                           double temperature = 0.05) {
  const auto t = model.trace(image);
  auto probs = softmax(t.logits().values());
  const auto predicted = static_cast<std::size_t>(
      std::distance(probs.begin(), std::max_element(probs.begin(), probs.end())));
  const std::size_t c = class_index.value_or(predicted);
  auto weights = channel_weights(model.class_score_gradient(t, c), c);
  ExplanationPath path(t.layer_output(model.explanation_layer()), std::move(weights), threshold, temperature);
  return {std::move(probs), predicted, std::move(path)};
}

}  // namespace saliencytune
