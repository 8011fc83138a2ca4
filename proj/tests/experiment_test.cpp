#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "saliencytune/experiment.hpp"

using namespace saliencytune;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           (std::string("saliencytune_exp_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig c;
  c.synthetic_n = 60;
  c.seed = 5;
  c.training.seed = 5;
  c.training.epochs = 1;
  c.pretrain.n = 60;
  c.pretrain.epochs = 1;
  c.out_dir = out;
  return c;
}

std::vector<std::string> column(const CsvTable& t, const std::string& name) {
  std::vector<std::string> out;
  for (const auto& r : t.rows) out.push_back(r[t.column(name)]);
  return out;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Experiment, FullModeWritesBaselineAndOneRowPerLoss) {
  TempDir dir;
  const auto config = small_config(dir.path);
  ExperimentSummary summary;
  ASSERT_EQ(run_experiment(config, &summary), kExitOk);
  const auto results = parse_csv(read_file(dir.path / "results.csv"));
  EXPECT_EQ(column(results, "loss_mode"), (std::vector<std::string>{"baseline", "cls", "exp", "combined"}));
  EXPECT_EQ(column(results, "lambda"), (std::vector<std::string>{"", "0.000000", "1.000000", "0.300000"}));
  EXPECT_EQ(results.rows[0][results.column("l_total")], "");
  EXPECT_FALSE(fs::exists(dir.path / "curves.csv"));
  for (const char* f : {"manifest.json", "metrics_baseline.json", "metrics_cls.json", "metrics_exp.json",
                        "metrics_combined.json", "history_cls.csv", "checkpoints/baseline.ckpt",
                        "checkpoints/combined.ckpt"})
    EXPECT_TRUE(fs::exists(dir.path / f)) << f;

  // Reported test metrics agree with re-evaluating the saved checkpoints.
  const auto data = load_experiment_data(config, std::nullopt);
  const std::pair<const char*, std::size_t> rows[] = {{"baseline", 0}, {"combined", 3}};
  for (const auto& [name, row] : rows) {
    const auto m = evaluate(load_checkpoint(dir.path / "checkpoints" / (std::string(name) + ".ckpt")), data.split.test,
                            config.training.threshold);
    EXPECT_EQ(results.rows[row][results.column("accuracy")], format_real(m.accuracy)) << name;
    EXPECT_EQ(results.rows[row][results.column("avg_jaccard")], format_real(m.avg_jaccard)) << name;
  }
  ASSERT_EQ(summary.final_metrics.size(), 3u);
  EXPECT_EQ(format_real(summary.baseline.accuracy), results.rows[0][results.column("accuracy")]);

  const auto manifest = nlohmann::json::parse(read_file(dir.path / "manifest.json"));
  EXPECT_EQ(manifest["config"]["mode"], "full");
  for (const auto& f : manifest["files"]) EXPECT_TRUE(fs::exists(dir.path / f.get<std::string>())) << f;
}

TEST(Experiment, SlicedModeWritesOneCurvePointPerSlice) {
  TempDir dir;
  auto config = small_config(dir.path);
  config.mode = ExperimentMode::sliced;
  config.slices = 10;
  config.losses = {LossMode::cls, LossMode::combined};
  ASSERT_EQ(run_experiment(config), kExitOk);
  const auto curves = parse_csv(read_file(dir.path / "curves.csv"));
  ASSERT_EQ(curves.rows.size(), 20u);
  const auto modes = column(curves, "loss_mode"), slices = column(curves, "slice");
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(modes[i], i < 10 ? "cls" : "combined");
    EXPECT_EQ(slices[i], std::to_string(i % 10 + 1));
  }
  // The final row per mode is the last slice.
  const auto results = parse_csv(read_file(dir.path / "results.csv"));
  ASSERT_EQ(results.rows.size(), 3u);
  for (std::size_t m = 0; m < 2; ++m)
    for (const char* col : {"accuracy", "avg_jaccard", "avg_sensitivity"})
      EXPECT_EQ(results.rows[m + 1][results.column(col)], curves.rows[m * 10 + 9][curves.column(col)]);
  for (const char* f : {"accuracy_vs_slice.png", "jaccard_vs_slice.png", "accuracy_vs_slice.csv",
                        "history_combined_slice10.csv"})
    EXPECT_TRUE(fs::exists(dir.path / f)) << f;
}

TEST(Experiment, RepeatedRunsAreByteIdentical) {
  TempDir a, b;
  auto ca = small_config(a.path / "run");
  ca.mode = ExperimentMode::sliced;
  ca.slices = 3;
  auto cb = ca;
  cb.out_dir = b.path / "run";
  ASSERT_EQ(run_experiment(ca), kExitOk);
  ASSERT_EQ(run_experiment(cb), kExitOk);
  EXPECT_EQ(read_file(ca.out_dir / "results.csv"), read_file(cb.out_dir / "results.csv"));
  EXPECT_EQ(read_file(ca.out_dir / "curves.csv"), read_file(cb.out_dir / "curves.csv"));
  EXPECT_EQ(read_file(ca.out_dir / "checkpoints" / "exp.ckpt"), read_file(cb.out_dir / "checkpoints" / "exp.ckpt"));
}

TEST(Experiment, ErrorsMapToExitCodes) {
  TempDir dir;
  auto bad = small_config(dir.path);
  bad.losses.clear();
  EXPECT_EQ(run_experiment(bad), kExitBadConfig);
  bad = small_config(dir.path);
  bad.training.lambda = 1.5;
  EXPECT_EQ(run_experiment(bad), kExitBadConfig);
  auto missing = small_config(dir.path);
  missing.dataset_path = dir.path / "does_not_exist";
  EXPECT_EQ(run_experiment(missing), kExitDatasetError);
  auto tiny = small_config(dir.path);
  tiny.dataset_path = fs::path(FIXTURE_DIR) / "isic_mini";
  EXPECT_EQ(run_experiment(tiny), kExitDatasetError);
}

TEST(Experiment, OutputDirectoryFallsBackToEnvironment) {
  ExperimentConfig c;
  ::setenv("SALIENCYTUNE_OUT", "/tmp/from_env", 1);
  EXPECT_EQ(resolve_out_dir(c), fs::path("/tmp/from_env"));
  c.out_dir = "explicit";
  EXPECT_EQ(resolve_out_dir(c), fs::path("explicit"));
  ::unsetenv("SALIENCYTUNE_OUT");
  EXPECT_EQ(resolve_out_dir(ExperimentConfig{}), fs::path("saliencytune-out"));
}

TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig c;
  c.mode = ExperimentMode::sliced;
  c.slices = 7;
  c.losses = {LossMode::exp};
  c.training.lambda = 0.6;
  c.training.epochs = 4;
  c.pretrain.epochs = 2;
  c.fidelity_split = true;
  c.out_dir = "x";
  const auto back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(ExperimentConfig, UnknownKeysAndBadValuesAreConfigErrors) {
  EXPECT_THROW(ExperimentConfig::from_json({{"sliecs", 3}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"mode", "partial"}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"losses", {"cls", "ce"}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"slices", "ten"}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"dataset", {{"url", "x"}}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"mode", "sliced"}, {"slices", 0}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"training", {{"lambda", -0.1}}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::array()), ConfigError);
  TempDir dir;
  std::ofstream(dir.path / "bad.json") << "{not json";
  EXPECT_THROW(ExperimentConfig::from_file(dir.path / "bad.json"), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_file(dir.path / "absent.json"), ConfigError);
}

TEST(ExperimentConfig, LossListParsing) {
  EXPECT_EQ(parse_loss_list("exp,cls,exp"), (std::vector<LossMode>{LossMode::exp, LossMode::cls}));
  EXPECT_THROW(parse_loss_list("cls,total"), ConfigError);
  ExperimentConfig c;
  c.training.lambda = 0.4;
  EXPECT_EQ(c.lambda_for(LossMode::cls), 0.0);
  EXPECT_EQ(c.lambda_for(LossMode::exp), 1.0);
  EXPECT_EQ(c.lambda_for(LossMode::combined), 0.4);
}

TEST(Plots, SidecarHoldsPlottedValues) {
  TempDir dir;
  std::ofstream(dir.path / "curves.csv") << "loss_mode,lambda,slice,accuracy,avg_jaccard\n"
                                            "cls,0.000000,1,0.500000,0.100000\n"
                                            "cls,0.000000,2,0.600000,0.200000\n"
                                            "exp,1.000000,1,0.400000,0.300000\n";
  const auto pngs = emit_plots(dir.path / "curves.csv", dir.path / "plots");
  ASSERT_EQ(pngs.size(), 2u);
  for (const auto& p : pngs) {
    const auto img = cv::imread(p.string());
    EXPECT_EQ(img.cols, 720);
    EXPECT_EQ(img.rows, 480);
  }
  EXPECT_EQ(read_file(dir.path / "plots" / "jaccard_vs_slice.csv"),
            "loss_mode,slice,value\ncls,1,0.100000\ncls,2,0.200000\nexp,1,0.300000\n");
}

TEST(Plots, HeaderOnlyCsvWritesNothing) {
  TempDir dir;
  std::ofstream(dir.path / "curves.csv") << "loss_mode,lambda,slice,accuracy,avg_jaccard\n";
  EXPECT_TRUE(emit_plots(dir.path / "curves.csv", dir.path / "plots").empty());
  EXPECT_FALSE(fs::exists(dir.path / "plots"));
}

TEST(Cli, RunSynthAndPlot) {
  TempDir dir;
  std::ofstream(dir.path / "config.json") << R"({"pretrain": {"n": 60, "epochs": 1}})";
  const auto cfg = (dir.path / "config.json").string();
  EXPECT_EQ(run_cli("run --config " + cfg + " --synthetic 60 --epochs 1 --losses cls --mode sliced --slices 2 --out " +
                    (dir.path / "out").string()),
            0);
  EXPECT_EQ(parse_csv(read_file(dir.path / "out" / "curves.csv")).rows.size(), 2u);
  EXPECT_EQ(run_cli("plot " + (dir.path / "out" / "curves.csv").string() + " --out " + (dir.path / "p").string()), 0);
  EXPECT_TRUE(fs::exists(dir.path / "p" / "accuracy_vs_slice.png"));
  EXPECT_EQ(run_cli("synth -n 30 --seed 2 --out " + (dir.path / "ds").string()), 0);
  EXPECT_EQ(load_dataset(dir.path / "ds").size(), 30u);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const auto out = " --out " + (dir.path / "out").string();
  EXPECT_EQ(run_cli("run --mode partial" + out), kExitBadConfig);
  EXPECT_EQ(run_cli("run --lambda 2" + out), kExitBadConfig);
  EXPECT_EQ(run_cli("run --losses cls,nope" + out), kExitBadConfig);
  EXPECT_EQ(run_cli("run --synthetic 10" + out), kExitBadConfig);
  EXPECT_EQ(run_cli("run --dataset " + (dir.path / "missing").string() + out), kExitDatasetError);
  EXPECT_EQ(run_cli("frobnicate"), kExitBadConfig);
  EXPECT_EQ(run_cli("--help"), 0);
}
