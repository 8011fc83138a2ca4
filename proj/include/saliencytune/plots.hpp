#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "saliencytune/report.hpp"

namespace saliencytune {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline void render_line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& y_label,
                             const std::filesystem::path& png) {
  constexpr int W = 720, H = 480, left = 70, right = 170, top = 40, bottom = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  double xmin = 1e300, xmax = -1e300, ymin = 0.0, ymax = 1.0;
  for (const auto& s : series) {
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  const int pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * pw)); };
  auto py = [&](double y) { return top + ph - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * ph)); };
  const cv::Scalar axis(0, 0, 0), grid(220, 220, 220);
  for (int i = 0; i <= 5; ++i) {
    const double y = ymin + (ymax - ymin) * i / 5.0;
    cv::line(img, {left, py(y)}, {left + pw, py(y)}, grid, 1);
    cv::putText(img, fmt::format("{:.2f}", y), {8, py(y) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
  }
  for (double x = std::ceil(xmin); x <= xmax; x += std::max(1.0, std::ceil((xmax - xmin) / 10.0)))
    cv::putText(img, fmt::format("{:.0f}", x), {px(x) - 4, top + ph + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1,
                cv::LINE_AA);
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, axis, 1);
  cv::putText(img, title, {left, top - 14}, cv::FONT_HERSHEY_SIMPLEX, 0.6, axis, 1, cv::LINE_AA);
  cv::putText(img, "slice", {left + pw / 2 - 16, H - 16}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis, 1, cv::LINE_AA);
  cv::putText(img, y_label, {left + 4, top + 16}, cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1, cv::LINE_AA);
  const cv::Scalar palette[] = {{200, 80, 30}, {40, 40, 220}, {40, 160, 40}, {160, 40, 160}, {20, 140, 200}};
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const auto color = palette[i % std::size(palette)];
    std::vector<cv::Point> pts;
    for (std::size_t k = 0; k < s.x.size(); ++k) pts.emplace_back(px(s.x[k]), py(s.y[k]));
    if (pts.size() > 1) cv::polylines(img, pts, false, color, 2, cv::LINE_AA);
    for (const auto& p : pts) cv::circle(img, p, 3, color, cv::FILLED, cv::LINE_AA);
    const int ly = top + 20 + static_cast<int>(i) * 22;
    cv::line(img, {left + pw + 14, ly - 4}, {left + pw + 40, ly - 4}, color, 2);
    cv::putText(img, s.name, {left + pw + 46, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis, 1, cv::LINE_AA);
  }
  if (!cv::imwrite(png.string(), img)) throw ResourceError("cannot write plot " + png.string());
}

}  // namespace detail

// Renders accuracy-vs-slice and Jaccard-vs-slice from a curves.csv, one line
// per loss mode. Next to each PNG a <name>.csv holds the exact plotted values.
// Returns the written PNG paths; an empty CSV writes nothing.
inline std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& curves_csv,
                                                     const std::filesystem::path& out_dir) {
  const auto table = parse_csv(read_file(curves_csv));
  if (table.rows.empty()) {
    spdlog::warn("emit_plots: {} has no data rows; nothing plotted", curves_csv.string());
    return {};
  }
  const auto mode_col = table.column("loss_mode"), slice_col = table.column("slice");
  std::vector<std::filesystem::path> written;
  const std::pair<const char*, const char*> metrics[] = {{"accuracy", "accuracy_vs_slice"},
                                                         {"avg_jaccard", "jaccard_vs_slice"}};
  for (const auto& [metric, stem] : metrics) {
    const auto value_col = table.column(metric);
    std::vector<PlotSeries> series;
    std::string data = "loss_mode,slice,value\n";
    for (const auto& row : table.rows) {
      auto it = std::find_if(series.begin(), series.end(), [&](const PlotSeries& s) { return s.name == row[mode_col]; });
      if (it == series.end()) {
        series.push_back({row[mode_col], {}, {}});
        it = series.end() - 1;
      }
      it->x.push_back(std::stod(row[slice_col]));
      it->y.push_back(std::stod(row[value_col]));
      data += row[mode_col] + "," + row[slice_col] + "," + row[value_col] + "\n";
    }
    std::filesystem::create_directories(out_dir);
    write_file_atomic(out_dir / (std::string(stem) + ".csv"), data);
    const auto png = out_dir / (std::string(stem) + ".png");
    detail::render_line_plot(series, std::string(metric) + " vs slice", metric, png);
    written.push_back(png);
  }
  return written;
}

}  // namespace saliencytune
