#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "saliencytune/checkpoint.hpp"
#include "saliencytune/dataset_io.hpp"
#include "saliencytune/experiment.hpp"
#include "saliencytune/plots.hpp"
#include "saliencytune/service.hpp"

using namespace saliencytune;

namespace {

struct RunFlags {
  std::string config;
  std::string dataset;
  std::optional<std::size_t> synthetic;
  std::string mode;
  std::optional<std::size_t> slices;
  std::string losses;
  std::optional<double> lambda;
  std::optional<double> lr;
  std::optional<double> threshold;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  bool fidelity_split = false;
  std::string out;
  std::string checkpoint;
  bool no_plots = false;
};

ExperimentConfig build_config(const RunFlags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(f.config);
  if (!f.dataset.empty()) c.dataset_path = f.dataset;
  if (f.synthetic) {
    c.dataset_path.reset();
    c.synthetic_n = *f.synthetic;
  }
  if (!f.mode.empty()) c.mode = experiment_mode_from_string(f.mode);
  if (f.slices) c.slices = *f.slices;
  if (!f.losses.empty()) c.losses = parse_loss_list(f.losses);
  if (f.lambda) c.training.lambda = *f.lambda;
  if (f.lr) c.training.learning_rate = *f.lr;
  if (f.threshold) c.training.threshold = *f.threshold;
  if (f.epochs) c.training.epochs = *f.epochs;
  if (f.seed) {
    c.seed = *f.seed;
    c.training.seed = *f.seed;
  }
  if (f.fidelity_split) c.fidelity_split = true;
  if (!f.out.empty()) c.out_dir = f.out;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (f.no_plots) c.plots = false;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fine-tune a self-explaining CNN from label and explanation feedback"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  RunFlags rf;
  auto* run = app.add_subcommand("run", "Run the full-pool or sliced experiment");
  run->add_option("--config", rf.config, "JSON experiment config")->check(CLI::ExistingFile);
  auto* ds = run->add_option("--dataset", rf.dataset, "ISIC-format dataset directory");
  auto* syn = run->add_option("--synthetic", rf.synthetic, "Use N synthetic marker images");
  ds->excludes(syn);
  run->add_option("--mode", rf.mode, "full or sliced")->check(CLI::IsMember({"full", "sliced"}));
  run->add_option("--slices", rf.slices, "Number of feedback slices (sliced mode)");
  run->add_option("--losses", rf.losses, "Comma-separated subset of cls,exp,combined");
  run->add_option("--lambda", rf.lambda, "Weight of the explanation loss in combined mode");
  run->add_option("--lr", rf.lr, "Learning rate");
  run->add_option("--threshold", rf.threshold, "Saliency threshold");
  run->add_option("--epochs", rf.epochs, "Epochs per fine-tuning run");
  run->add_option("--seed", rf.seed, "Seed for data, splits and training");
  run->add_flag("--fidelity-split", rf.fidelity_split, "Upsample before splitting");
  run->add_option("--out", rf.out, "Output directory (default $SALIENCYTUNE_OUT)");
  run->add_option("--checkpoint", rf.checkpoint, "Start from this checkpoint instead of pretraining");
  run->add_flag("--no-plots", rf.no_plots, "Skip PNG plots in sliced mode");

  std::string curves, plot_out;
  auto* plot = app.add_subcommand("plot", "Render accuracy and Jaccard curves from curves.csv");
  plot->add_option("curves", curves, "curves.csv")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "Output directory (default: next to curves.csv)");

  std::size_t synth_n = 600;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic marker dataset in ISIC layout");
  synth->add_option("-n,--count", synth_n, "Number of images");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--out", synth_out, "Dataset directory")->required();

  ExperimentConfig pre_cfg;
  std::string pre_dataset, pre_out;
  std::size_t pre_n = 600;
  auto* pretrain = app.add_subcommand("pretrain", "Train the reference CNN with the classification loss");
  pretrain->add_option("--dataset", pre_dataset, "ISIC-format dataset directory (default: synthetic)");
  pretrain->add_option("--synthetic", pre_n, "Synthetic set size");
  pretrain->add_option("--epochs", pre_cfg.pretrain.epochs, "Epochs");
  pretrain->add_option("--lr", pre_cfg.pretrain.learning_rate, "Learning rate");
  pretrain->add_option("--seed", pre_cfg.seed, "Seed");
  pretrain->add_option("--out", pre_out, "Checkpoint path")->required();

  ServiceOptions so;
  auto* serve = app.add_subcommand("serve", "Run the feedback HTTP service");
  serve->add_option("--port", so.port, "Port (default $SALIENCYTUNE_PORT or 8080)");
  serve->add_option("--data-dir", so.data_dir, "State directory (default $SALIENCYTUNE_DATA_DIR)");
  serve->add_option("--dataset", so.dataset, "ISIC-format dataset to serve (default: synthetic)");
  serve->add_option("--synthetic", so.synthetic_n, "Synthetic sample count when no dataset is given");
  serve->add_option("--checkpoint", so.checkpoint, "Initial checkpoint (default: pretrained reference CNN)");
  serve->add_option("--host", so.host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitBadConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*run) {
      ExperimentConfig config;
      try {
        config = build_config(rf);
      } catch (const ConfigError& e) {
        spdlog::error("invalid configuration: {}", e.what());
        return kExitBadConfig;
      }
      ExperimentSummary summary;
      const int code = run_experiment(config, &summary);
      if (code == kExitOk) std::cout << (summary.out_dir / "results.csv").string() << "\n";
      return code;
    }
    if (*plot) {
      const auto dir = plot_out.empty() ? std::filesystem::path(curves).parent_path() : std::filesystem::path(plot_out);
      for (const auto& p : emit_plots(curves, dir)) std::cout << p.string() << "\n";
      return 0;
    }
    if (*synth) {
      if (synth_n < 30) {
        spdlog::error("--count must be at least 30");
        return kExitBadConfig;
      }
      write_dataset(generate_synthetic_dataset(synth_n, synth_seed), synth_out);
      std::cout << synth_out << "\n";
      return 0;
    }
    if (*pretrain) {
      if (pre_dataset.empty()) {
        pre_cfg.synthetic_n = pre_n;
        pre_cfg.pretrain.n = pre_n;
      } else {
        pre_cfg.dataset_path = pre_dataset;
      }
      ExperimentData data;
      try {
        pre_cfg.validate();
        data = load_experiment_data(pre_cfg, std::nullopt);
      } catch (const ConfigError& e) {
        spdlog::error("invalid configuration: {}", e.what());
        return kExitBadConfig;
      } catch (const DatasetError& e) {
        spdlog::error("{}", e.what());
        return kExitDatasetError;
      }
      const auto model = baseline_model(pre_cfg, data);
      save_checkpoint(model, pre_out);
      const auto m = evaluate(model, data.split.test, pre_cfg.training.threshold);
      std::cout << pre_out << " test accuracy " << format_real(m.accuracy) << " avg_jaccard "
                << format_real(m.avg_jaccard) << "\n";
      return 0;
    }
    if (*serve) return run_service(so);
  } catch (const ConfigError& e) {
    spdlog::error("invalid configuration: {}", e.what());
    return kExitBadConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return 0;
}
