#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <spdlog/spdlog.h>

#include "saliencytune/dataset.hpp"
#include "saliencytune/errors.hpp"
#include "saliencytune/image_io.hpp"

namespace saliencytune {

namespace fs = std::filesystem;

struct LabelRow {
  std::string id;
  std::string label;
};

// labels.csv with a header naming at least the columns id and label.
inline std::vector<LabelRow> read_labels_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + " is empty");
  auto split_row = [](const std::string& row) {
    std::vector<std::string> cells;
    std::stringstream ss(row);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      cells.push_back(cell);
    }
    return cells;
  };
  const auto header = split_row(line);
  const auto id_col = std::find(header.begin(), header.end(), "id");
  const auto label_col = std::find(header.begin(), header.end(), "label");
  if (id_col == header.end() || label_col == header.end())
    throw InputError(path.string() + " must have columns id and label");
  const auto ic = static_cast<std::size_t>(id_col - header.begin());
  const auto lc = static_cast<std::size_t>(label_col - header.begin());
  std::vector<LabelRow> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_row(line);
    if (cells.size() <= std::max(ic, lc)) throw InputError("malformed row in " + path.string() + ": " + line);
    rows.push_back({cells[ic], cells[lc]});
  }
  return rows;
}

struct LoadOptions {
  std::optional<Shape3> resize_to;  // model input; images bilinear, masks nearest
  std::vector<std::string> class_names = default_class_names();
};

// Reads images/<id>.jpg (or .png), masks/<id>_attribute_<name>.png and labels.csv.
// A missing attribute file counts as an empty attribute; an unreadable image
// drops that sample.
inline std::vector<ImageSample> load_dataset(const fs::path& root, const LoadOptions& options = {}) {
  const auto rows = read_labels_csv(root / "labels.csv");
  std::vector<ImageSample> samples;
  for (const auto& row : rows) {
    fs::path image_path = root / "images" / (row.id + ".jpg");
    if (!fs::exists(image_path) && fs::exists(root / "images" / (row.id + ".png")))
      image_path = root / "images" / (row.id + ".png");
    const cv::Mat mat = cv::imread(image_path.string(), cv::IMREAD_COLOR);
    if (mat.empty()) {
      spdlog::error("load_dataset: cannot read image {}; sample skipped", image_path.string());
      continue;
    }
    ImageSample s;
    s.id = row.id;
    s.label = class_index(options.class_names, row.label);
    s.image = tensor_from_mat(mat);
    if (options.resize_to) s.image = resize_image(s.image, options.resize_to->height, options.resize_to->width);
    const std::size_t h = s.image.height(), w = s.image.width();
    std::vector<ExplanationMask> attributes;
    for (const auto& name : attribute_names()) {
      const auto mask_path = root / "masks" / (row.id + "_attribute_" + name + ".png");
      const cv::Mat m = fs::exists(mask_path) ? cv::imread(mask_path.string(), cv::IMREAD_GRAYSCALE) : cv::Mat();
      if (m.empty()) {
        spdlog::warn("load_dataset: attribute mask {} missing for '{}'; treated as empty", name, row.id);
        attributes.emplace_back(BinaryGrid(h, w, 0), MaskOrigin::ground_truth);
      } else {
        attributes.push_back(mask_from_mat(m, h, w));
      }
    }
    s.gt_mask = union_masks(attributes);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw InputError("dataset at " + root.string() + " contains no readable samples");
  return samples;
}

// Writes samples in the layout load_dataset reads. The ground-truth mask goes
// into the first attribute file; the remaining attribute files are empty.
inline void write_dataset(std::span<const ImageSample> samples, const fs::path& root,
                          const std::vector<std::string>& class_names = default_class_names()) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream labels(root / "labels.csv");
  labels << "id,label\n";
  for (const auto& s : samples) {
    labels << s.id << ',' << class_names.at(s.label) << '\n';
    if (!cv::imwrite((root / "images" / (s.id + ".jpg")).string(), mat_from_tensor(s.image),
                     {cv::IMWRITE_JPEG_QUALITY, 95}))
      throw ResourceError("cannot write image for " + s.id);
    const ExplanationMask empty(BinaryGrid(s.image.height(), s.image.width(), 0));
    for (std::size_t a = 0; a < attribute_names().size(); ++a) {
      const auto& m = (a == 0 && s.gt_mask) ? *s.gt_mask : empty;
      cv::imwrite((root / "masks" / (s.id + "_attribute_" + attribute_names()[a] + ".png")).string(),
                  mat_from_mask(m));
    }
  }
}

}  // namespace saliencytune
