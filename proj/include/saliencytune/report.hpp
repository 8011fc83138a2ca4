#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "saliencytune/errors.hpp"
#include "saliencytune/metrics.hpp"
#include "saliencytune/trainer.hpp"

namespace saliencytune {

inline std::string format_real(double v) { return fmt::format("{:.6f}", v); }

inline std::vector<std::string> history_columns(const std::vector<std::string>& class_names = default_class_names()) {
  std::vector<std::string> cols{"epoch", "split", "accuracy"};
  for (const auto& c : class_names) cols.push_back("sens_" + c);
  for (const char* c : {"avg_sensitivity", "avg_jaccard", "jaccard_sd", "l_cls", "l_exp", "l_total"}) cols.push_back(c);
  return cols;
}

inline std::string join(const std::vector<std::string>& cells, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out.push_back(sep);
    out += cells[i];
  }
  return out;
}

// Cells in history_columns() order. Absent sensitivities are left blank;
// `with_total` = false blanks l_total (used where no lambda applies).
inline std::vector<std::string> history_cells(const EpochRecord& r, bool with_total = true) {
  std::vector<std::string> cells{std::to_string(r.epoch), r.split, format_real(r.metrics.accuracy)};
  for (const auto& s : r.metrics.per_class_sensitivity) cells.push_back(s ? format_real(*s) : "");
  cells.push_back(format_real(r.metrics.avg_sensitivity));
  cells.push_back(format_real(r.metrics.avg_jaccard));
  cells.push_back(format_real(r.metrics.jaccard_sd));
  cells.push_back(format_real(r.l_cls));
  cells.push_back(format_real(r.l_exp));
  cells.push_back(with_total ? format_real(r.l_total) : "");
  return cells;
}

inline std::string history_csv(const TrainingHistory& h,
                               const std::vector<std::string>& class_names = default_class_names()) {
  std::string out = join(history_columns(class_names)) + "\n";
  for (const auto& r : h.epochs) out += join(history_cells(r)) + "\n";
  return out;
}

// Writes via a temporary file and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ResourceError("cannot write " + tmp);
    out << content;
    if (!out) throw ResourceError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

// Plain comma-separated values without quoting, as written by this library.
inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::stringstream ss(text);
  std::string line;
  bool first = true;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      cells.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw InputError("CSV row has " + std::to_string(cells.size()) + " cells");
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

}  // namespace saliencytune
