#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "saliencytune/dataset.hpp"
#include "saliencytune/errors.hpp"
#include "saliencytune/explainer.hpp"
#include "saliencytune/losses.hpp"
#include "saliencytune/metrics.hpp"
#include "saliencytune/model.hpp"

namespace saliencytune {

enum class SelectionCriterion { val_avg_jaccard, val_accuracy, composite };
enum class OptimizerKind { sgd, adam };

inline std::string to_string(SelectionCriterion c) {
  switch (c) {
    case SelectionCriterion::val_avg_jaccard: return "val_avg_jaccard";
    case SelectionCriterion::val_accuracy: return "val_accuracy";
    case SelectionCriterion::composite: return "composite";
  }
  return "composite";
}

inline SelectionCriterion selection_from_string(const std::string& s) {
  if (s == "val_avg_jaccard") return SelectionCriterion::val_avg_jaccard;
  if (s == "val_accuracy") return SelectionCriterion::val_accuracy;
  if (s == "composite") return SelectionCriterion::composite;
  throw ConfigError("unknown selection criterion '" + s + "'");
}

struct TrainingConfig {
  double lambda = 0.3;
  double learning_rate = 0.003;
  std::size_t epochs = 10;
  double threshold = 0.5;
  double temperature = 0.05;
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
  SelectionCriterion selection = SelectionCriterion::composite;
  double clip_norm = 5.0;  // global gradient-norm clip; 0 disables
  OptimizerKind optimizer = OptimizerKind::sgd;
  bool shuffle = true;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (clip_norm < 0.0) throw ConfigError("clip norm must be nonnegative");
  }

  nlohmann::json to_json() const {
    return {{"lambda", lambda},
            {"learning_rate", learning_rate},
            {"epochs", epochs},
            {"threshold", threshold},
            {"temperature", temperature},
            {"seed", seed},
            {"batch_size", batch_size},
            {"selection_criterion", to_string(selection)},
            {"clip_norm", clip_norm},
            {"optimizer", optimizer == OptimizerKind::sgd ? "sgd" : "adam"},
            {"shuffle", shuffle}};
  }

  // Applies the keys present in `j` on top of this config.
  void merge(const nlohmann::json& j) {
    try {
      if (j.contains("lambda")) lambda = j["lambda"].get<double>();
      if (j.contains("learning_rate")) learning_rate = j["learning_rate"].get<double>();
      if (j.contains("epochs")) epochs = j["epochs"].get<std::size_t>();
      if (j.contains("threshold")) threshold = j["threshold"].get<double>();
      if (j.contains("temperature")) temperature = j["temperature"].get<double>();
      if (j.contains("seed")) seed = j["seed"].get<std::uint64_t>();
      if (j.contains("batch_size")) batch_size = j["batch_size"].get<std::size_t>();
      if (j.contains("selection_criterion")) selection = selection_from_string(j["selection_criterion"]);
      if (j.contains("clip_norm")) clip_norm = j["clip_norm"].get<double>();
      if (j.contains("optimizer")) {
        const auto o = j["optimizer"].get<std::string>();
        if (o == "sgd")
          optimizer = OptimizerKind::sgd;
        else if (o == "adam")
          optimizer = OptimizerKind::adam;
        else
          throw ConfigError("unknown optimizer '" + o + "'");
      }
      if (j.contains("shuffle")) shuffle = j["shuffle"].get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad training config: ") + e.what());
    }
    validate();
  }
};

// theta <- theta - lr * g by default; Adam is opt-in.
class Optimizer {
 public:
  explicit Optimizer(const TrainingConfig& config) : kind_(config.optimizer), lr_(config.learning_rate) {}

  // Returns the L2 norm of the applied update.
  double apply(std::span<double> params, std::span<const double> grad) {
    double norm = 0.0;
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double d = lr_ * grad[i];
        params[i] -= d;
        norm += d * d;
      }
      return std::sqrt(norm);
    }
    if (m_.size() != params.size()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    ++t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_)), c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1 - b2) * grad[i] * grad[i];
      const double d = lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
      params[i] -= d;
      norm += d * d;
    }
    return std::sqrt(norm);
  }

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

struct StepLog {
  std::uint64_t step = 0;
  std::string sample_id;
  LossBreakdown loss;
  std::size_t predicted_class = 0;
  std::optional<std::size_t> label;
  std::optional<double> hard_jaccard;  // hard mask vs feedback mask, when a mask was used
  double gradient_norm = 0.0;
  double update_norm = 0.0;
  bool clipped = false;
  bool degenerate = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "val"
  MetricsReport metrics;
  double l_cls = 0.0;
  double l_exp = 0.0;
  double l_total = 0.0;
};

struct TrainingHistory {
  std::vector<StepLog> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_criterion = 0.0;
  std::size_t mask_reads = 0;  // feedback masks consumed by training steps
  std::size_t clipped_steps = 0;
  std::size_t degenerate_steps = 0;
};

// lambda for one sample: a label-only correction trains classification only,
// a mask-only correction trains the explanation only.
inline double effective_lambda(const FeedbackRecord& fb, const TrainingConfig& config) {
  if (!fb.corrected_label) return 1.0;
  if (!fb.corrected_mask) return 0.0;
  return config.lambda;
}

struct SampleGradient {
  LossBreakdown loss;
  std::vector<double> gradient;  // empty when not requested
  std::size_t predicted_class = 0;
  std::optional<double> hard_jaccard;
  bool degenerate = false;
  bool mask_used = false;
};

// Combined loss of one sample on the live model and, optionally, dL/dtheta.
// `weights` are constants (from a snapshot); they are required whenever the
// explanation term is active.
inline SampleGradient sample_loss_and_gradient(const ClassifierModel& live, const ImageSample& sample,
                                               const FeedbackRecord& feedback, const ChannelWeights* weights,
                                               const TrainingConfig& config, bool want_gradient = true) {
  feedback.validate();
  const double lambda = effective_lambda(feedback, config);
  const auto trace = live.trace(sample.image);
  const auto probs = softmax(trace.logits().values());
  SampleGradient out;
  out.predicted_class = static_cast<std::size_t>(
      std::distance(probs.begin(), std::max_element(probs.begin(), probs.end())));

  const std::size_t k = live.explanation_layer();
  const std::size_t last = live.architecture().layers().size() - 1;
  Tensor grad_activation(live.explanation_shape(), 0.0);

  double l_exp = 0.0;
  if (lambda > 0.0) {
    if (weights == nullptr) throw InputError("channel weights are required when the explanation loss is active");
    const auto& mask = *feedback.corrected_mask;
    out.mask_used = true;
    ExplanationPath path(trace.layer_output(k), *weights, config.threshold, config.temperature);
    const auto truth = align_resolution(mask, path.soft().values.height(), path.soft().values.width());
    out.hard_jaccard = jaccard_index(path.hard(config.threshold), truth);
    if (path.degenerate()) {
      out.degenerate = true;
      l_exp = kDegenerateExplanationLoss;
    } else {
      l_exp = explanation_loss(path.soft(), truth);
      if (want_gradient) {
        auto g = soft_jaccard_gradient(path.soft(), truth);
        for (auto& v : g) v *= -lambda;
        grad_activation = path.backward(g);
      }
    }
  }

  double l_cls = 0.0;
  std::vector<double> g_logits(probs.size(), 0.0);
  if (feedback.corrected_label) {
    l_cls = classification_loss(probs, *feedback.corrected_label);
    if (lambda < 1.0) {
      g_logits = classification_loss_logit_gradient(probs, *feedback.corrected_label);
      for (auto& v : g_logits) v *= (1.0 - lambda);
    }
  }
  out.loss = combined_loss(l_cls, l_exp, lambda);
  if (!std::isfinite(out.loss.l_total)) throw NumericError("non-finite loss for sample '" + sample.id + "'");
  if (!want_gradient) return out;

  out.gradient.assign(live.parameters().size(), 0.0);
  Tensor g(trace.logits().shape(), std::move(g_logits));
  if (k < last) g = live.backpropagate(trace, last, k + 1, std::move(g), out.gradient);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad_activation[i];
  live.backpropagate(trace, k, 0, std::move(g), out.gradient);
  return out;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// One update over a batch: snapshot the model, take Grad-CAM channel weights
// from the snapshot, evaluate the combined loss on the live model, and apply
// one optimizer step with the batch-mean gradient.
inline std::vector<StepLog> finetune_batch(ClassifierModel& model, std::span<const FeedbackExample* const> batch,
                                           const TrainingConfig& config, Optimizer& optimizer,
                                           std::size_t* mask_reads = nullptr) {
  config.validate();
  if (batch.empty()) return {};
  const ModelSnapshot snap = snapshot(model);
  std::vector<double> total(model.parameters().size(), 0.0);
  std::vector<StepLog> logs;
  for (const FeedbackExample* ex : batch) {
    ex->feedback.validate();
    const double lambda = effective_lambda(ex->feedback, config);
    std::optional<ChannelWeights> weights;
    if (lambda > 0.0) {
      const std::size_t c = ex->feedback.corrected_label ? *ex->feedback.corrected_label
                                                         : snap.forward(ex->sample.image).predicted_class();
      weights = channel_weights(class_score_gradient(snap, ex->sample.image, c), c);
    }
    auto r = sample_loss_and_gradient(model, ex->sample, ex->feedback, weights ? &*weights : nullptr, config);
    if (r.mask_used && mask_reads) ++*mask_reads;
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += r.gradient[i];
    StepLog log;
    log.sample_id = ex->sample.id;
    log.loss = r.loss;
    log.predicted_class = r.predicted_class;
    log.label = ex->feedback.corrected_label;
    log.hard_jaccard = r.hard_jaccard;
    log.degenerate = r.degenerate;
    if (r.degenerate) spdlog::debug("degenerate saliency for '{}'; explanation loss fixed at 1", ex->sample.id);
    logs.push_back(std::move(log));
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (auto& v : total) {
    v *= scale;
    if (!std::isfinite(v)) throw NumericError("non-finite gradient; update skipped");
  }
  const double norm = l2_norm(total);
  bool clipped = false;
  if (config.clip_norm > 0.0 && norm > config.clip_norm) {
    const double f = config.clip_norm / norm;
    for (auto& v : total) v *= f;
    clipped = true;
  }
  const double update = optimizer.apply(model.parameters(), total);
  model.set_training_step(model.training_step() + 1);
  for (auto& log : logs) {
    log.step = model.training_step();
    log.gradient_norm = norm;
    log.update_norm = update;
    log.clipped = clipped;
  }
  return logs;
}

inline StepLog finetune_step(ClassifierModel& model, const ImageSample& sample, const FeedbackRecord& feedback,
                             const TrainingConfig& config, Optimizer& optimizer, std::size_t* mask_reads = nullptr) {
  const FeedbackExample ex{sample, feedback};
  const FeedbackExample* batch[] = {&ex};
  return finetune_batch(model, batch, config, optimizer, mask_reads).front();
}

inline StepLog finetune_step(ClassifierModel& model, const ImageSample& sample, const FeedbackRecord& feedback,
                             const TrainingConfig& config) {
  Optimizer opt(config);
  return finetune_step(model, sample, feedback, config, opt);
}

// Metrics plus mean losses of a model on labelled samples, using their ground
// truth as feedback. l_exp is reported for masked samples whatever lambda is.
inline EpochRecord evaluate_split(const ClassifierModel& model, std::span<const ImageSample> samples,
                                  const TrainingConfig& config, std::size_t epoch, const std::string& split_name,
                                  const std::vector<std::string>& class_names = default_class_names()) {
  if (samples.empty()) throw InputError("cannot evaluate on an empty sample set");
  std::vector<std::size_t> predictions, labels;
  std::vector<std::optional<double>> jaccards;
  double l_cls = 0.0, l_exp = 0.0, l_total = 0.0;
  for (const auto& s : samples) {
    const auto e = explain(model, s.image, std::nullopt, config.threshold, config.temperature);
    predictions.push_back(e.predicted_class);
    labels.push_back(s.label);
    jaccards.push_back(explanation_jaccard(e, s, config.threshold));
    double exp_loss = 0.0;
    if (s.gt_mask) {
      const auto& path = e.predicted_class == s.label
                             ? e.path
                             : explain(model, s.image, s.label, config.threshold, config.temperature).path;
      const auto truth = align_resolution(*s.gt_mask, path.soft().values.height(), path.soft().values.width());
      exp_loss = path.degenerate() ? kDegenerateExplanationLoss : explanation_loss(path.soft(), truth);
    }
    const double lambda = s.gt_mask ? config.lambda : 0.0;
    const auto b = combined_loss(classification_loss(e.probabilities, s.label), exp_loss, lambda);
    l_cls += b.l_cls;
    l_exp += b.l_exp;
    l_total += b.l_total;
  }
  const auto n = static_cast<double>(samples.size());
  return {epoch, split_name, compute_metrics(predictions, labels, jaccards, class_names, config.threshold),
          l_cls / n, l_exp / n, l_total / n};
}

inline double selection_value(const MetricsReport& m, const TrainingConfig& config) {
  switch (config.selection) {
    case SelectionCriterion::val_avg_jaccard: return m.avg_jaccard;
    case SelectionCriterion::val_accuracy: return m.accuracy;
    case SelectionCriterion::composite: return config.lambda > 0.0 ? m.avg_jaccard : m.accuracy;
  }
  return m.accuracy;
}

struct FinetuneResult {
  ClassifierModel best;
  ClassifierModel final_model;
  TrainingHistory history;
};

inline void check_disjoint(std::span<const FeedbackExample> feedback, std::span<const ImageSample> validation) {
  std::set<std::string> val_ids;
  for (const auto& s : validation) val_ids.insert(s.original_id());
  for (const auto& ex : feedback)
    if (val_ids.count(ex.sample.original_id()))
      throw InputError("sample '" + ex.sample.original_id() + "' appears in both feedback and validation sets");
}

// Epoch loop over the feedback set. Epoch 0 is the incoming model; the
// returned `best` maximises the selection criterion on validation (earliest
// epoch wins ties).
inline FinetuneResult finetune(const ClassifierModel& model, std::span<const FeedbackExample> feedback,
                               std::span<const ImageSample> validation, const TrainingConfig& config,
                               const std::vector<std::string>& class_names = default_class_names()) {
  config.validate();
  if (feedback.empty()) throw InputError("feedback set is empty");
  check_disjoint(feedback, validation);
  FinetuneResult result{model, model, {}};
  auto& history = result.history;
  auto& live = result.final_model;

  auto record_val = [&](std::size_t epoch) {
    if (validation.empty()) return;
    history.epochs.push_back(evaluate_split(live, validation, config, epoch, "val", class_names));
    const double v = selection_value(history.epochs.back().metrics, config);
    if (epoch == 0 || v > history.best_criterion) {
      history.best_criterion = v;
      history.best_epoch = epoch;
      result.best = live;
    }
  };
  record_val(0);

  Optimizer optimizer(config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(feedback.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    std::vector<StepLog> epoch_logs;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<const FeedbackExample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
        batch.push_back(&feedback[order[i]]);
      auto logs = finetune_batch(live, batch, config, optimizer, &history.mask_reads);
      for (auto& l : logs) {
        history.clipped_steps += l.clipped;
        history.degenerate_steps += l.degenerate;
        epoch_logs.push_back(l);
      }
    }
    // Training-split summary from the step logs.
    std::vector<std::size_t> predictions, labels;
    std::vector<std::optional<double>> jaccards;
    double l_cls = 0.0, l_exp = 0.0, l_total = 0.0;
    for (std::size_t i = 0; i < epoch_logs.size(); ++i) {
      const auto& l = epoch_logs[i];
      predictions.push_back(l.predicted_class);
      labels.push_back(l.label.value_or(l.predicted_class));
      jaccards.push_back(l.hard_jaccard);
      l_cls += l.loss.l_cls;
      l_exp += l.loss.l_exp;
      l_total += l.loss.l_total;
    }
    const auto n = static_cast<double>(epoch_logs.size());
    history.epochs.push_back({epoch, "train",
                              compute_metrics(predictions, labels, jaccards, class_names, config.threshold),
                              l_cls / n, l_exp / n, l_total / n});
    history.steps.insert(history.steps.end(), epoch_logs.begin(), epoch_logs.end());
    record_val(epoch);
  }
  if (validation.empty()) result.best = live;
  if (history.clipped_steps > 0)
    spdlog::debug("gradient clipping at norm {} was applied on {} steps", config.clip_norm, history.clipped_steps);
  return result;
}

struct SliceResult {
  std::size_t slice_index = 0;
  ClassifierModel checkpoint;
  MetricsReport test_metrics;
  EpochRecord test_record;
  TrainingHistory history;
};

// Fine-tunes on each slice in turn, starting every slice from the previous
// slice's best checkpoint. Earlier slices are not revisited.
inline std::vector<SliceResult> sliced_finetune(const ClassifierModel& model,
                                                std::span<const std::vector<FeedbackExample>> slices,
                                                std::span<const ImageSample> validation,
                                                std::span<const ImageSample> test, const TrainingConfig& config,
                                                const std::vector<std::string>& class_names = default_class_names()) {
  for (std::size_t a = 0; a < slices.size(); ++a) {
    std::set<std::string> ids;
    for (const auto& ex : slices[a]) ids.insert(ex.sample.id);
    for (std::size_t b = a + 1; b < slices.size(); ++b)
      for (const auto& ex : slices[b])
        if (ids.count(ex.sample.id)) throw InputError("slices are not pairwise disjoint");
  }
  std::vector<SliceResult> out;
  ClassifierModel current = model;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (slices[i].empty()) {
      spdlog::warn("slice {} is empty; skipped", i);
      continue;
    }
    auto r = finetune(current, slices[i], validation, config, class_names);
    current = r.best;
    SliceResult s{i, current, {}, {}, std::move(r.history)};
    if (!test.empty()) {
      s.test_record = evaluate_split(current, test, config, s.history.best_epoch, "test", class_names);
      s.test_metrics = s.test_record.metrics;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace saliencytune
