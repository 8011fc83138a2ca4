#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <spdlog/spdlog.h>

#include "saliencytune/errors.hpp"
#include "saliencytune/explainer.hpp"
#include "saliencytune/tensor.hpp"

namespace saliencytune {

// Class names of the skin-lesion simulation. Other datasets may supply their own list.
inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names{"MEL", "NV", "BKL"};
  return names;
}

inline std::size_t class_index(const std::vector<std::string>& names, const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InputError("unknown class label '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

// Attribute masks whose union is the explanation ground truth.
inline const std::vector<std::string>& attribute_names() {
  static const std::vector<std::string> names{"pigment_network", "negative_network", "streaks", "milia_like_cyst",
                                              "globules"};
  return names;
}

struct ImageSample {
  std::string id;
  Tensor image;  // (C, H, W), values in [0, 1]
  std::size_t label = 0;
  std::optional<ExplanationMask> gt_mask;  // image resolution
  std::optional<std::string> duplicate_of;

  const std::string& original_id() const { return duplicate_of ? *duplicate_of : id; }
};

enum class FeedbackSource { simulated, human };

inline std::string to_string(FeedbackSource s) { return s == FeedbackSource::simulated ? "simulated" : "human"; }

struct FeedbackRecord {
  std::string sample_id;
  std::optional<std::size_t> corrected_label;
  std::optional<ExplanationMask> corrected_mask;  // image resolution
  FeedbackSource source = FeedbackSource::simulated;
  std::int64_t created_at = 0;  // unix seconds

  bool has_correction() const { return corrected_label.has_value() || corrected_mask.has_value(); }
  void validate() const {
    if (!has_correction()) throw InputError("feedback for '" + sample_id + "' carries neither a label nor a mask");
  }
};

// A sample paired with the correction a user gave for it.
struct FeedbackExample {
  ImageSample sample;
  FeedbackRecord feedback;
};

struct SliceSchedule {
  std::vector<std::vector<std::string>> slices;

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s;
    for (const auto& slice : slices) s.push_back(slice.size());
    return s;
  }
};

inline std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

// Pixelwise OR.
inline ExplanationMask union_masks(std::span<const ExplanationMask> masks) {
  if (masks.empty()) throw InputError("union_masks needs at least one mask");
  BinaryGrid out = masks.front().values;
  for (const auto& m : masks.subspan(1)) {
    if (!m.values.same_resolution(out)) throw InputError("union_masks: mask resolutions differ");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] |= m.values[i];
  }
  return ExplanationMask(std::move(out), MaskOrigin::ground_truth);
}

inline std::vector<std::size_t> class_counts(std::span<const ImageSample> samples, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& s : samples) {
    if (s.label >= num_classes) throw InputError("sample '" + s.id + "' has an out-of-range label");
    ++counts[s.label];
  }
  return counts;
}

// Raises every class to the majority count by appending random copies
// (with replacement) of that class's originals. Originals keep their order.
inline std::vector<ImageSample> balance_by_upsampling(std::vector<ImageSample> samples, std::uint64_t seed,
                                                      std::size_t num_classes = 3) {
  std::vector<std::vector<std::size_t>> originals(num_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label >= num_classes) throw InputError("sample '" + samples[i].id + "' has an out-of-range label");
    if (!samples[i].duplicate_of) originals[samples[i].label].push_back(i);
  }
  const auto counts = class_counts(samples, num_classes);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (originals[c].empty()) throw InputError("balance_by_upsampling needs at least one original per class");
  const std::size_t target = *std::max_element(counts.begin(), counts.end());
  std::mt19937_64 rng(seed);
  const std::size_t n_before = samples.size();
  samples.reserve(num_classes * target);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::uniform_int_distribution<std::size_t> pick(0, originals[c].size() - 1);
    for (std::size_t k = counts[c]; k < target; ++k) {
      ImageSample copy = samples[originals[c][pick(rng)]];
      copy.duplicate_of = copy.id;
      copy.id = copy.id + "#dup" + std::to_string(samples.size() - n_before);
      samples.push_back(std::move(copy));
    }
  }
  return samples;
}

struct SplitFractions {
  double finetune = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

enum class SplitMode {
  leakage_safe,  // split originals, then upsample only the fine-tune pool
  fidelity,      // upsample everything, then split (copies may cross splits)
};

struct DatasetSplit {
  std::vector<ImageSample> pool;
  std::vector<ImageSample> validation;
  std::vector<ImageSample> test;
};

namespace detail {
inline DatasetSplit partition(std::vector<ImageSample> samples, const SplitFractions& f, std::uint64_t seed) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(samples.size());
  const auto n_test = static_cast<std::size_t>(std::llround(n * f.test));
  const auto n_val = static_cast<std::size_t>(std::llround(n * f.validation));
  DatasetSplit out;
  for (std::size_t r = 0; r < order.size(); ++r) {
    auto& s = samples[order[r]];
    if (r < n_test)
      out.test.push_back(std::move(s));
    else if (r < n_test + n_val)
      out.validation.push_back(std::move(s));
    else
      out.pool.push_back(std::move(s));
  }
  return out;
}
}  // namespace detail

inline DatasetSplit split(std::vector<ImageSample> samples, const SplitFractions& fractions, std::uint64_t seed,
                          SplitMode mode = SplitMode::leakage_safe, bool balance = true, std::size_t num_classes = 3) {
  const double sum = fractions.finetune + fractions.validation + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9 || fractions.finetune < 0 || fractions.validation < 0 || fractions.test < 0)
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  if (mode == SplitMode::fidelity) {
    if (balance) samples = balance_by_upsampling(std::move(samples), seed, num_classes);
    return detail::partition(std::move(samples), fractions, seed);
  }
  std::erase_if(samples, [](const ImageSample& s) { return s.duplicate_of.has_value(); });
  auto out = detail::partition(std::move(samples), fractions, seed);
  for (const auto* part : {&out.pool, &out.validation, &out.test}) {
    const auto counts = class_counts(*part, num_classes);
    for (std::size_t c = 0; c < num_classes; ++c)
      if (counts[c] == 0) spdlog::warn("split: class {} is absent from a split of {} samples", c, part->size());
  }
  if (balance) {
    const auto counts = class_counts(out.pool, num_classes);
    if (std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }))
      out.pool = balance_by_upsampling(std::move(out.pool), seed, num_classes);
    else
      spdlog::warn("split: fine-tune pool lacks a class; skipping upsampling");
  }
  return out;
}

// Random disjoint slices of near-equal size; the first (size % n) slices get one extra element.
inline SliceSchedule make_slices(std::span<const std::string> pool_ids, std::size_t n_slices, std::uint64_t seed) {
  if (n_slices == 0) throw InputError("number of slices must be positive");
  if (n_slices > pool_ids.size()) throw InputError("more slices than pool samples");
  std::vector<std::string> ids(pool_ids.begin(), pool_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  SliceSchedule schedule;
  const std::size_t base = ids.size() / n_slices, extra = ids.size() % n_slices;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < n_slices; ++s) {
    const std::size_t len = base + (s < extra ? 1 : 0);
    schedule.slices.emplace_back(ids.begin() + static_cast<long>(pos), ids.begin() + static_cast<long>(pos + len));
    pos += len;
  }
  return schedule;
}

inline SliceSchedule make_slices(std::span<const ImageSample> pool, std::size_t n_slices, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const auto& s : pool) ids.push_back(s.id);
  return make_slices(std::span<const std::string>(ids), n_slices, seed);
}

// Ground truth stands in for the user: the true label and the attribute-union mask.
inline FeedbackRecord simulate_feedback(const ImageSample& sample, std::int64_t created_at = unix_now()) {
  FeedbackRecord r;
  r.sample_id = sample.id;
  r.corrected_label = sample.label;
  if (sample.gt_mask) {
    r.corrected_mask = *sample.gt_mask;
    r.corrected_mask->origin = MaskOrigin::feedback;
  }
  r.source = FeedbackSource::simulated;
  r.created_at = created_at;
  return r;
}

inline std::vector<FeedbackExample> simulate_feedback(std::span<const ImageSample> samples,
                                                      std::int64_t created_at = unix_now()) {
  std::vector<FeedbackExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s, simulate_feedback(s, created_at)});
  return out;
}

// Texture of the class marker at absolute pixel (y, x): 1 = bright, 0 = dark.
inline int marker_texture(std::size_t label, std::size_t y, std::size_t x) {
  switch (label % 3) {
    case 0: return static_cast<int>((x + y) % 2);  // checkerboard
    case 1: return static_cast<int>((y / 2) % 2);  // horizontal stripes
    default: return static_cast<int>((x / 2) % 2); // vertical stripes
  }
}

inline constexpr std::size_t kSyntheticSize = 32;
inline constexpr std::size_t kSyntheticMinMarker = 7;
inline constexpr std::size_t kSyntheticMaxMarker = 12;

// 32x32 RGB images on a noisy background with one square marker whose
// texture alone determines the class. gt_mask is the marker's square.
inline std::vector<ImageSample> generate_synthetic_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 30) throw InputError("synthetic dataset needs at least 30 samples");
  constexpr std::size_t S = kSyntheticSize;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> background(0.3, 0.7);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::uniform_int_distribution<std::size_t> side_dist(kSyntheticMinMarker, kSyntheticMaxMarker);
  std::vector<ImageSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ImageSample s;
    s.id = "syn" + std::to_string(seed) + "_" + std::to_string(i);
    s.label = i % 3;
    s.image = Tensor({3, S, S});
    const double tint[3] = {1.0 + jitter(rng), 0.85 + jitter(rng), 0.8 + jitter(rng)};
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double v = background(rng);
        for (std::size_t c = 0; c < 3; ++c) s.image(c, y, x) = std::clamp(v * tint[c], 0.0, 1.0);
      }
    const std::size_t side = side_dist(rng);
    std::uniform_int_distribution<std::size_t> pos(0, S - side);
    const std::size_t top = pos(rng), left = pos(rng);
    BinaryGrid mask(S, S, 0);
    for (std::size_t y = top; y < top + side; ++y)
      for (std::size_t x = left; x < left + side; ++x) {
        const double v = (marker_texture(s.label, y, x) ? 0.9 : 0.1) + jitter(rng);
        for (std::size_t c = 0; c < 3; ++c) s.image(c, y, x) = std::clamp(v, 0.0, 1.0);
        mask(y, x) = 1;
      }
    s.gt_mask = ExplanationMask(std::move(mask), MaskOrigin::ground_truth);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace saliencytune
