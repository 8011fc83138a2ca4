#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "saliencytune/errors.hpp"
#include "saliencytune/explainer.hpp"
#include "saliencytune/tensor.hpp"

namespace saliencytune {

// 8-bit BGR/gray Mat -> (C, H, W) RGB tensor in [0, 1].
inline Tensor tensor_from_mat(const cv::Mat& mat) {
  if (mat.empty()) throw InputError("empty image");
  cv::Mat rgb;
  if (mat.channels() == 1)
    cv::cvtColor(mat, rgb, cv::COLOR_GRAY2RGB);
  else if (mat.channels() == 4)
    cv::cvtColor(mat, rgb, cv::COLOR_BGRA2RGB);
  else
    cv::cvtColor(mat, rgb, cv::COLOR_BGR2RGB);
  if (rgb.depth() != CV_8U) rgb.convertTo(rgb, CV_8U);
  const auto h = static_cast<std::size_t>(rgb.rows), w = static_cast<std::size_t>(rgb.cols);
  Tensor t({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    const auto* row = rgb.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) t(c, y, x) = row[x][static_cast<int>(c)] / 255.0;
  }
  return t;
}

inline cv::Mat mat_from_tensor(const Tensor& t) {
  const int h = static_cast<int>(t.height()), w = static_cast<int>(t.width());
  cv::Mat out(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const std::size_t src = t.channels() == 1 ? 0 : static_cast<std::size_t>(c);
        const double v = std::clamp(t(src, static_cast<std::size_t>(y), static_cast<std::size_t>(x)), 0.0, 1.0);
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  }
  return out;
}

// Bilinear resize of an image tensor.
inline Tensor resize_image(const Tensor& t, std::size_t height, std::size_t width) {
  if (t.height() == height && t.width() == width) return t;
  Tensor out({t.channels(), height, width});
  for (std::size_t c = 0; c < t.channels(); ++c) {
    cv::Mat plane(static_cast<int>(t.height()), static_cast<int>(t.width()), CV_64F,
                  const_cast<double*>(t.channel(c).data()));
    cv::Mat resized;
    cv::resize(plane, resized, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_LINEAR);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out(c, y, x) = resized.at<double>(static_cast<int>(y), static_cast<int>(x));
  }
  return out;
}

inline std::string encode_png(const cv::Mat& mat) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", mat, buf)) throw ResourceError("PNG encoding failed");
  return {buf.begin(), buf.end()};
}

inline cv::Mat decode_image_bytes(const std::string& bytes, int flags = cv::IMREAD_COLOR) {
  if (bytes.empty()) throw InputError("empty image data");
  const std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  cv::Mat m;
  try {
    m = cv::imdecode(buf, flags);
  } catch (const cv::Exception&) {
    m.release();
  }
  if (m.empty()) throw InputError("image data could not be decoded");
  return m;
}

inline cv::Mat mat_from_mask(const ExplanationMask& mask) {
  cv::Mat out(static_cast<int>(mask.height()), static_cast<int>(mask.width()), CV_8UC1);
  for (std::size_t y = 0; y < mask.height(); ++y)
    for (std::size_t x = 0; x < mask.width(); ++x)
      out.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) = mask.values(y, x) ? 255 : 0;
  return out;
}

// 8-bit PNG with 0 = background and 255 = marked.
inline std::string encode_mask_png(const ExplanationMask& mask) { return encode_png(mat_from_mask(mask)); }

// Strict decode: every pixel must be 0 or 255.
inline ExplanationMask decode_mask_png(const std::string& bytes, MaskOrigin origin = MaskOrigin::feedback) {
  const cv::Mat m = decode_image_bytes(bytes, cv::IMREAD_GRAYSCALE);
  BinaryGrid g(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols), 0);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto v = m.at<std::uint8_t>(y, x);
      if (v != 0 && v != 255) throw InputError("mask is not binary (pixel values must be 0 or 255)");
      g(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = v ? 1 : 0;
    }
  return ExplanationMask(std::move(g), origin);
}

// Lenient read of a dataset mask file: anything >= 128 counts as marked. Resized nearest-neighbour.
inline ExplanationMask mask_from_mat(const cv::Mat& gray, std::size_t height, std::size_t width,
                                     MaskOrigin origin = MaskOrigin::ground_truth) {
  cv::Mat m = gray;
  if (m.channels() != 1) cv::cvtColor(gray, m, cv::COLOR_BGR2GRAY);
  if (static_cast<std::size_t>(m.rows) != height || static_cast<std::size_t>(m.cols) != width)
    cv::resize(m, m, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_NEAREST);
  BinaryGrid g(height, width, 0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      g(y, x) = m.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) >= 128 ? 1 : 0;
  return ExplanationMask(std::move(g), origin);
}

// Grey-level rendering of a normalized saliency map, enlarged nearest-neighbour.
inline std::string encode_saliency_png(const RealGrid& normalized, std::size_t height, std::size_t width) {
  const auto big = upsample_nearest(normalized, height, width);
  cv::Mat out(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      out.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) =
          static_cast<std::uint8_t>(std::lround(std::clamp(big(y, x), 0.0, 1.0) * 255.0));
  return encode_png(out);
}

inline std::string base64_encode(const std::string& in) {
  std::string out(4 * ((in.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(in.data()), static_cast<int>(in.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string base64_decode(const std::string& in) {
  std::string clean;
  for (char ch : in)
    if (!std::isspace(static_cast<unsigned char>(ch))) clean.push_back(ch);
  if (clean.size() % 4 != 0) throw InputError("invalid base64 length");
  std::string out(3 * clean.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw InputError("invalid base64 data");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace saliencytune
