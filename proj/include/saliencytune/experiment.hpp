#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "saliencytune/checkpoint.hpp"
#include "saliencytune/dataset.hpp"
#include "saliencytune/dataset_io.hpp"
#include "saliencytune/errors.hpp"
#include "saliencytune/model.hpp"
#include "saliencytune/plots.hpp"
#include "saliencytune/report.hpp"
#include "saliencytune/trainer.hpp"

namespace saliencytune {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LossMode { cls, exp, combined };
enum class ExperimentMode { full, sliced };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::cls: return "cls";
    case LossMode::exp: return "exp";
    case LossMode::combined: return "combined";
  }
  return "combined";
}

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "cls") return LossMode::cls;
  if (s == "exp") return LossMode::exp;
  if (s == "combined") return LossMode::combined;
  throw ConfigError("unknown loss mode '" + s + "' (expected cls, exp or combined)");
}

inline std::vector<LossMode> parse_loss_list(const std::string& list) {
  std::vector<LossMode> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto pos = std::min(list.find(',', start), list.size());
    const auto item = list.substr(start, pos - start);
    if (!item.empty()) {
      const auto m = loss_mode_from_string(item);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    start = pos + 1;
  }
  return out;
}

inline std::string to_string(ExperimentMode m) { return m == ExperimentMode::full ? "full" : "sliced"; }

inline ExperimentMode experiment_mode_from_string(const std::string& s) {
  if (s == "full") return ExperimentMode::full;
  if (s == "sliced") return ExperimentMode::sliced;
  throw ConfigError("unknown mode '" + s + "' (expected full or sliced)");
}

struct PretrainConfig {
  std::size_t n = 600;  // synthetic pretraining set size
  std::size_t epochs = 3;
  double learning_rate = 0.01;
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset_path;
  std::size_t synthetic_n = 600;
  std::uint64_t seed = 1;
  ExperimentMode mode = ExperimentMode::full;
  std::vector<LossMode> losses{LossMode::cls, LossMode::exp, LossMode::combined};
  TrainingConfig training;
  bool fidelity_split = false;
  SplitFractions fractions;
  std::size_t slices = 10;
  std::optional<std::filesystem::path> checkpoint;
  PretrainConfig pretrain;
  std::filesystem::path out_dir;
  bool plots = true;

  void validate() const {
    if (losses.empty()) throw ConfigError("at least one loss mode must be selected");
    if (!dataset_path && synthetic_n < 30) throw ConfigError("synthetic dataset needs at least 30 samples");
    if (mode == ExperimentMode::sliced && slices == 0) throw ConfigError("number of slices must be positive");
    if (pretrain.epochs > 0 && !(pretrain.learning_rate > 0.0)) throw ConfigError("pretrain learning rate must be positive");
    training.validate();
  }

  double lambda_for(LossMode m) const {
    switch (m) {
      case LossMode::cls: return 0.0;
      case LossMode::exp: return 1.0;
      case LossMode::combined: return training.lambda;
    }
    return training.lambda;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    if (dataset_path)
      j["dataset"] = {{"path", dataset_path->string()}};
    else
      j["dataset"] = {{"synthetic", {{"n", synthetic_n}, {"seed", seed}}}};
    j["seed"] = seed;
    j["mode"] = to_string(mode);
    j["losses"] = nlohmann::json::array();
    for (auto m : losses) j["losses"].push_back(to_string(m));
    j["training"] = training.to_json();
    j["fidelity_split"] = fidelity_split;
    j["split"] = {{"finetune", fractions.finetune}, {"validation", fractions.validation}, {"test", fractions.test}};
    j["slices"] = slices;
    if (checkpoint) j["checkpoint"] = checkpoint->string();
    j["pretrain"] = {{"n", pretrain.n}, {"epochs", pretrain.epochs}, {"learning_rate", pretrain.learning_rate}};
    j["out"] = out_dir.string();
    j["plots"] = plots;
    return j;
  }

  // Keys present in `j` override the current values.
  void merge(const nlohmann::json& j) {
    static const std::set<std::string> known{"dataset", "seed",  "mode",       "losses",   "training", "fidelity_split",
                                             "split",   "slices", "checkpoint", "pretrain", "out",      "plots"};
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    for (const auto& [key, _] : j.items())
      if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    try {
      if (j.contains("seed")) seed = j["seed"].get<std::uint64_t>();
      if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        if (d.contains("path")) {
          dataset_path = d["path"].get<std::string>();
        } else if (d.contains("synthetic")) {
          dataset_path.reset();
          const auto& s = d["synthetic"];
          if (s.contains("n")) synthetic_n = s["n"].get<std::size_t>();
          if (s.contains("seed")) seed = s["seed"].get<std::uint64_t>();
        } else {
          throw ConfigError("dataset must contain 'path' or 'synthetic'");
        }
      }
      if (j.contains("mode")) mode = experiment_mode_from_string(j["mode"].get<std::string>());
      if (j.contains("losses")) {
        losses.clear();
        for (const auto& m : j["losses"]) {
          const auto lm = loss_mode_from_string(m.get<std::string>());
          if (std::find(losses.begin(), losses.end(), lm) == losses.end()) losses.push_back(lm);
        }
      }
      if (j.contains("training")) training.merge(j["training"]);
      if (j.contains("fidelity_split")) fidelity_split = j["fidelity_split"].get<bool>();
      if (j.contains("split")) {
        const auto& s = j["split"];
        fractions.finetune = s.value("finetune", fractions.finetune);
        fractions.validation = s.value("validation", fractions.validation);
        fractions.test = s.value("test", fractions.test);
      }
      if (j.contains("slices")) slices = j["slices"].get<std::size_t>();
      if (j.contains("checkpoint")) checkpoint = j["checkpoint"].get<std::string>();
      if (j.contains("pretrain")) {
        const auto& p = j["pretrain"];
        pretrain.n = p.value("n", pretrain.n);
        pretrain.epochs = p.value("epochs", pretrain.epochs);
        pretrain.learning_rate = p.value("learning_rate", pretrain.learning_rate);
      }
      if (j.contains("out")) out_dir = j["out"].get<std::string>();
      if (j.contains("plots")) plots = j["plots"].get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.merge(j);
    c.validate();
    return c;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    } catch (const InputError& e) {
      throw ConfigError(e.what());
    }
    return from_json(j);
  }
};

inline std::filesystem::path resolve_out_dir(const ExperimentConfig& config) {
  if (!config.out_dir.empty()) return config.out_dir;
  if (const char* env = std::getenv("SALIENCYTUNE_OUT"); env && *env) return env;
  return "saliencytune-out";
}

struct ExperimentData {
  DatasetSplit split;
  std::optional<std::vector<ImageSample>> pretrain_set;  // synthetic runs pretrain on a separate draw
};

inline ExperimentData load_experiment_data(const ExperimentConfig& config, const std::optional<Shape3>& input) {
  std::vector<ImageSample> samples;
  ExperimentData data;
  if (config.dataset_path) {
    try {
      LoadOptions options;
      options.resize_to = input.value_or(Shape3{3, kSyntheticSize, kSyntheticSize});
      samples = load_dataset(*config.dataset_path, options);
    } catch (const std::exception& e) {
      throw DatasetError(std::string("dataset load failed: ") + e.what());
    }
  } else {
    samples = generate_synthetic_dataset(config.synthetic_n, config.seed);
    if (!config.checkpoint && config.pretrain.epochs > 0)
      data.pretrain_set = generate_synthetic_dataset(config.pretrain.n, config.seed + 98);
  }
  const auto split_mode = config.fidelity_split ? SplitMode::fidelity : SplitMode::leakage_safe;
  data.split = split(std::move(samples), config.fractions, config.seed, split_mode);
  if (data.split.pool.empty() || data.split.test.empty())
    throw DatasetError("dataset too small: fine-tune pool or test split is empty");
  return data;
}

// Baseline model: the given checkpoint, or a reference CNN trained with the
// classification loss only.
inline ClassifierModel baseline_model(const ExperimentConfig& config, const ExperimentData& data) {
  if (config.checkpoint) return load_checkpoint(*config.checkpoint);
  const auto& first = data.split.pool.front().image;
  auto model = make_reference_cnn(config.seed, first.shape());
  if (config.pretrain.epochs == 0) return model;
  TrainingConfig pc = config.training;
  pc.lambda = 0.0;
  pc.learning_rate = config.pretrain.learning_rate;
  pc.epochs = config.pretrain.epochs;
  const auto& source = data.pretrain_set ? *data.pretrain_set : data.split.pool;
  const auto feedback = simulate_feedback(source, 0);
  spdlog::info("pretraining reference CNN on {} samples for {} epochs", source.size(), pc.epochs);
  auto r = finetune(model, feedback, std::span<const ImageSample>{}, pc);
  r.final_model.set_training_step(0);
  return r.final_model;
}

struct ExperimentSummary {
  std::filesystem::path out_dir;
  std::vector<std::filesystem::path> files;
  MetricsReport baseline;
  std::vector<std::pair<LossMode, MetricsReport>> final_metrics;  // test metrics per loss mode
};

namespace detail {

inline std::string iso_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

inline std::string result_row(const std::string& mode, const std::string& lambda, const EpochRecord& r,
                              bool with_total = true) {
  auto cells = history_cells(r, with_total);
  cells.insert(cells.begin(), lambda);
  cells.insert(cells.begin(), mode);
  return join(cells) + "\n";
}

}  // namespace detail

// Runs every requested loss mode and writes results.csv (plus curves.csv in
// sliced mode), per-mode histories and metrics, checkpoints and plots.
// Throws ConfigError, DatasetError or the library errors.
inline ExperimentSummary execute_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto started = detail::iso_now();
  ExperimentSummary summary;
  const auto out = resolve_out_dir(config);
  summary.out_dir = out;
  std::filesystem::create_directories(out);
  const auto& names = default_class_names();

  std::optional<Shape3> input;
  std::optional<ClassifierModel> loaded;
  if (config.checkpoint) {
    loaded = load_checkpoint(*config.checkpoint);
    input = loaded->input_shape();
  }
  const auto data = load_experiment_data(config, input);
  const auto base = loaded ? *loaded : baseline_model(config, data);
  spdlog::info("split: pool {} / validation {} / test {}", data.split.pool.size(), data.split.validation.size(),
               data.split.test.size());

  auto written = [&](const std::filesystem::path& p) { summary.files.push_back(p); };
  save_checkpoint(base, out / "checkpoints" / "baseline.ckpt");
  written(out / "checkpoints" / "baseline.ckpt");

  const auto base_record = evaluate_split(base, data.split.test, config.training, 0, "test", names);
  summary.baseline = base_record.metrics;
  auto header = history_columns(names);
  header.insert(header.begin(), "lambda");
  header.insert(header.begin(), "loss_mode");
  std::string results = join(header) + "\n" + detail::result_row("baseline", "", base_record, false);
  auto curve_header = header;
  curve_header.insert(curve_header.begin() + 2, "slice");
  std::string curves = join(curve_header) + "\n";
  nlohmann::json baseline_json = base_record.metrics.to_json();
  write_file_atomic(out / "metrics_baseline.json", baseline_json.dump(2) + "\n");
  written(out / "metrics_baseline.json");

  const auto pool_feedback = simulate_feedback(data.split.pool, 0);
  for (const auto mode : config.losses) {
    TrainingConfig tc = config.training;
    tc.lambda = config.lambda_for(mode);
    const auto name = to_string(mode);
    const auto lambda_cell = format_real(tc.lambda);
    spdlog::info("loss mode {} (lambda {})", name, tc.lambda);
    nlohmann::json metrics_json;
    if (config.mode == ExperimentMode::full) {
      auto r = finetune(base, pool_feedback, data.split.validation, tc, names);
      const auto test = evaluate_split(r.best, data.split.test, tc, r.history.best_epoch, "test", names);
      results += detail::result_row(name, lambda_cell, test);
      write_file_atomic(out / fmt::format("history_{}.csv", name), history_csv(r.history, names));
      written(out / fmt::format("history_{}.csv", name));
      const auto ckpt = out / "checkpoints" / fmt::format("{}.ckpt", name);
      save_checkpoint(r.best, ckpt);
      written(ckpt);
      metrics_json = {{"loss_mode", name},
                      {"lambda", tc.lambda},
                      {"best_epoch", r.history.best_epoch},
                      {"test", test.metrics.to_json()}};
      summary.final_metrics.emplace_back(mode, test.metrics);
    } else {
      const auto schedule = make_slices(data.split.pool, config.slices, config.seed);
      std::map<std::string, const FeedbackExample*> by_id;
      for (const auto& ex : pool_feedback) by_id[ex.sample.id] = &ex;
      std::vector<std::vector<FeedbackExample>> slices;
      for (const auto& ids : schedule.slices) {
        auto& s = slices.emplace_back();
        for (const auto& id : ids) s.push_back(*by_id.at(id));
      }
      const auto results_per_slice =
          sliced_finetune(base, slices, data.split.validation, data.split.test, tc, names);
      metrics_json = {{"loss_mode", name}, {"lambda", tc.lambda}, {"slices", nlohmann::json::array()}};
      for (const auto& s : results_per_slice) {
        auto cells = history_cells(s.test_record);
        cells.insert(cells.begin(), std::to_string(s.slice_index + 1));
        cells.insert(cells.begin(), lambda_cell);
        cells.insert(cells.begin(), name);
        curves += join(cells) + "\n";
        const auto hist = out / fmt::format("history_{}_slice{}.csv", name, s.slice_index + 1);
        write_file_atomic(hist, history_csv(s.history, names));
        written(hist);
        metrics_json["slices"].push_back({{"slice", s.slice_index + 1},
                                          {"best_epoch", s.history.best_epoch},
                                          {"test", s.test_metrics.to_json()}});
      }
      if (results_per_slice.empty()) throw InputError("no slice produced a result");
      const auto& last = results_per_slice.back();
      results += detail::result_row(name, lambda_cell, last.test_record);
      const auto ckpt = out / "checkpoints" / fmt::format("{}.ckpt", name);
      save_checkpoint(last.checkpoint, ckpt);
      written(ckpt);
      summary.final_metrics.emplace_back(mode, last.test_metrics);
    }
    const auto mpath = out / fmt::format("metrics_{}.json", name);
    write_file_atomic(mpath, metrics_json.dump(2) + "\n");
    written(mpath);
  }

  write_file_atomic(out / "results.csv", results);
  written(out / "results.csv");
  if (config.mode == ExperimentMode::sliced) {
    write_file_atomic(out / "curves.csv", curves);
    written(out / "curves.csv");
    if (config.plots)
      for (const auto& p : emit_plots(out / "curves.csv", out)) written(p);
  }

  nlohmann::json manifest{{"started_at", started},
                          {"finished_at", detail::iso_now()},
                          {"config", config.to_json()},
                          {"files", nlohmann::json::array()}};
  manifest["config"]["out"] = out.string();
  for (const auto& f : summary.files) manifest["files"].push_back(std::filesystem::relative(f, out).string());
  write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitBadConfig = 2;
inline constexpr int kExitDatasetError = 3;

// execute_experiment with errors mapped to process exit codes.
inline int run_experiment(const ExperimentConfig& config, ExperimentSummary* summary = nullptr) {
  try {
    auto s = execute_experiment(config);
    if (summary) *summary = std::move(s);
    return kExitOk;
  } catch (const ConfigError& e) {
    spdlog::error("invalid configuration: {}", e.what());
    return kExitBadConfig;
  } catch (const DatasetError& e) {
    spdlog::error("{}", e.what());
    return kExitDatasetError;
  } catch (const std::exception& e) {
    spdlog::error("experiment failed: {}", e.what());
    return kExitFailure;
  }
}

}  // namespace saliencytune
