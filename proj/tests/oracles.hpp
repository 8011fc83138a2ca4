#pragma once

// Brute-force reference implementations and generators shared by the unit
// tests and the acceptance binary. Nothing here calls the library's own
// versions of the quantity being checked.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "saliencytune/dataset.hpp"
#include "saliencytune/explainer.hpp"
#include "saliencytune/model.hpp"
#include "saliencytune/tensor.hpp"

namespace oracle {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t index(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

inline std::vector<std::uint8_t> random_bits(Rng& rng, std::size_t n, double p = 0.5) {
  std::vector<std::uint8_t> out(n);
  std::bernoulli_distribution d(p);
  for (auto& v : out) v = d(rng) ? 1 : 0;
  return out;
}

inline saliencytune::ExplanationMask mask_from_bits(std::size_t h, std::size_t w, const std::vector<std::uint8_t>& bits) {
  saliencytune::BinaryGrid g(h, w, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) g[i] = bits[i];
  return saliencytune::ExplanationMask(std::move(g));
}

inline saliencytune::ExplanationMask random_mask(Rng& rng, std::size_t h, std::size_t w, double p = 0.5) {
  return mask_from_bits(h, w, random_bits(rng, h * w, p));
}

inline saliencytune::Tensor random_image(Rng& rng, saliencytune::Shape3 shape) {
  saliencytune::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng);
  return t;
}

// |A and B| / |A or B| by counting; 1 when both are empty.
inline double jaccard(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::vector<std::uint8_t> bits_of(const saliencytune::ExplanationMask& m) {
  std::vector<std::uint8_t> out;
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x) out.push_back(m.values(y, x));
  return out;
}

inline std::vector<std::uint8_t> union_any(const std::vector<std::vector<std::uint8_t>>& masks) {
  std::vector<std::uint8_t> out(masks.front().size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    bool any = false;
    for (const auto& m : masks) any = any || m[i] != 0;
    out[i] = any ? 1 : 0;
  }
  return out;
}

// Majority vote over equal blocks of a mask whose size is a multiple of the target.
inline std::vector<std::uint8_t> block_majority(const std::vector<std::uint8_t>& src, std::size_t sh, std::size_t sw,
                                                std::size_t th, std::size_t tw) {
  const std::size_t bh = sh / th, bw = sw / tw;
  std::vector<std::uint8_t> out(th * tw, 0);
  for (std::size_t ty = 0; ty < th; ++ty)
    for (std::size_t tx = 0; tx < tw; ++tx) {
      std::size_t ones = 0;
      for (std::size_t dy = 0; dy < bh; ++dy)
        for (std::size_t dx = 0; dx < bw; ++dx) ones += src[(ty * bh + dy) * sw + tx * bw + dx];
      const double frac = static_cast<double>(ones) / static_cast<double>(bh * bw);
      out[ty * tw + tx] = frac >= 0.5 ? 1 : 0;
    }
  return out;
}

inline double cross_entropy(std::span<const double> probs, std::size_t label) {
  return -std::log(std::max(probs[label], 1e-12));
}

struct Confusion {
  double accuracy = 0.0;
  std::vector<std::optional<double>> sensitivity;
  double avg_sensitivity = 0.0;
  double avg_jaccard = 0.0;
  double jaccard_sd = 0.0;
};

inline Confusion confusion(std::span<const std::size_t> pred, std::span<const std::size_t> label,
                           std::span<const std::optional<double>> jac, std::size_t k) {
  std::vector<std::vector<std::size_t>> cm(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++cm[label[i]][pred[i]];
  Confusion c;
  std::size_t diag = 0;
  for (std::size_t i = 0; i < k; ++i) diag += cm[i][i];
  c.accuracy = static_cast<double>(diag) / static_cast<double>(pred.size());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t row = 0;
    for (std::size_t j = 0; j < k; ++j) row += cm[i][j];
    if (row == 0) {
      c.sensitivity.push_back(std::nullopt);
      continue;
    }
    c.sensitivity.push_back(static_cast<double>(cm[i][i]) / static_cast<double>(row));
    sum += *c.sensitivity.back();
    ++present;
  }
  c.avg_sensitivity = present ? sum / static_cast<double>(present) : 0.0;
  std::vector<double> js;
  for (const auto& j : jac)
    if (j) js.push_back(*j);
  if (!js.empty()) {
    double m = 0.0;
    for (double v : js) m += v;
    m /= static_cast<double>(js.size());
    double var = 0.0;
    for (double v : js) var += (v - m) * (v - m);
    c.avg_jaccard = m;
    c.jaccard_sd = std::sqrt(var / static_cast<double>(js.size()));
  }
  return c;
}

// Central differences of f along every coordinate in `coords` of x.
inline std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                              std::vector<double> x, std::span<const std::size_t> coords, double h) {
  std::vector<double> out;
  for (auto i : coords) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Naive evaluation of layers [first, end) of `m` starting from `x`.
inline saliencytune::Tensor forward_from(const saliencytune::ClassifierModel& m, std::size_t first,
                                         saliencytune::Tensor x) {
  using saliencytune::LayerKind;
  using saliencytune::Tensor;
  const auto p = m.parameters();
  const auto& layers = m.architecture().layers();
  for (std::size_t li = first; li < layers.size(); ++li) {
    const auto& l = layers[li];
    Tensor y(l.output_shape);
    switch (l.kind) {
      case LayerKind::conv2d:
        for (std::size_t o = 0; o < l.out; ++o)
          for (std::size_t yy = 0; yy < y.height(); ++yy)
            for (std::size_t xx = 0; xx < y.width(); ++xx) {
              double acc = p[l.bias_offset + o];
              for (std::size_t i = 0; i < l.in; ++i)
                for (std::size_t ky = 0; ky < l.kernel; ++ky)
                  for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                    const long sy = static_cast<long>(yy + ky) - static_cast<long>(l.padding);
                    const long sx = static_cast<long>(xx + kx) - static_cast<long>(l.padding);
                    if (sy < 0 || sx < 0 || sy >= static_cast<long>(x.height()) || sx >= static_cast<long>(x.width()))
                      continue;
                    acc += p[l.weight_offset + ((o * l.in + i) * l.kernel + ky) * l.kernel + kx] *
                           x(i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                  }
              y(o, yy, xx) = acc;
            }
        break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::max(0.0, x[i]);
        break;
      case LayerKind::maxpool2d:
        for (std::size_t c = 0; c < y.channels(); ++c)
          for (std::size_t yy = 0; yy < y.height(); ++yy)
            for (std::size_t xx = 0; xx < y.width(); ++xx) {
              double best = x(c, yy * l.window, xx * l.window);
              for (std::size_t dy = 0; dy < l.window; ++dy)
                for (std::size_t dx = 0; dx < l.window; ++dx)
                  best = std::max(best, x(c, yy * l.window + dy, xx * l.window + dx));
              y(c, yy, xx) = best;
            }
        break;
      case LayerKind::flatten:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i];
        break;
      case LayerKind::linear:
        for (std::size_t o = 0; o < l.out; ++o) {
          double acc = p[l.bias_offset + o];
          for (std::size_t i = 0; i < l.in; ++i) acc += p[l.weight_offset + o * l.in + i] * x[i];
          y[o] = acc;
        }
        break;
    }
    x = std::move(y);
  }
  return x;
}

inline saliencytune::Tensor standardize(const saliencytune::ClassifierModel& m, saliencytune::Tensor x) {
  const auto& n = m.architecture().normalization();
  if (n.mean.empty()) return x;
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < x.height(); ++y)
      for (std::size_t w = 0; w < x.width(); ++w) x(c, y, w) = (x(c, y, w) - n.mean[c]) / n.stddev[c];
  return x;
}

inline std::vector<double> logits(const saliencytune::ClassifierModel& m, const saliencytune::Tensor& image) {
  const auto out = forward_from(m, 0, standardize(m, image));
  return {out.values().begin(), out.values().end()};
}

inline std::vector<std::size_t> sample_coordinates(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(n, k));
  return all;
}

}  // namespace oracle
