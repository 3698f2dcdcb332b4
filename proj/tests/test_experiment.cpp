#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "freekd/experiment.hpp"

using namespace freekd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// small enough to train in well under a second per stage
ExperimentConfig micro_config(const std::string& out_dir) {
  ExperimentConfig c;
  c.height = c.width = 16;
  c.classes = 3;
  c.train_count = 8;
  c.val_count = 4;
  c.data_seed = 11;
  c.teacher_width = 4;
  c.student_width = 2;
  c.level = 2;
  c.principles = 2;
  c.prompt_epochs = 1;
  c.prompt_lr = 0.005;
  c.mu = 1.0;
  c.distill_epochs = 1;
  c.distill_lr = 0.02;
  c.teacher_epochs = 1;
  c.teacher_lr = 0.05;
  c.batch = 4;
  c.seeds = {5};
  c.out_dir = out_dir;
  return c;
}

}  // namespace

TEST_CASE("config defaults validate and round-trip through json") {
  ExperimentConfig c;
  c.validate();
  ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("unknown config keys are rejected") {
  nlohmann::json j = {{"height", 32}, {"wdith", 32}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("invalid config values are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"level", 0}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"height", 60}}), ConfigError);  // not 8*2^3
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"mu", -1.0}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"transform", "fft"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"band_subset", "mid"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"wavelet", "sym4"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"seeds", nlohmann::json::array()}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"height", "lots"}}), ConfigError);
}

TEST_CASE("ablate grid is the documented 12 variants") {
  auto grid = ablate_grid();
  REQUIRE(grid.size() == 12);
  int fp = 0, nofp = 0;
  for (const auto& v : grid) {
    if (v.mask_mode) ++fp;
    else ++nofp;
  }
  CHECK(fp == 9);   // {dwt,dct,dft} x {low,high,all}
  CHECK(nofp == 3); // dwt x {low,high,all}
  CHECK(grid[0].name == "dwt_fp_low");
  CHECK(grid.back().name == "dwt_nofp_all");
}

TEST_CASE("gen-data manifest is idempotent for the same seed") {
  const std::string dir = (fs::temp_directory_path() / "freekd_exp_gen").string();
  fs::remove_all(dir);
  auto cfg = micro_config(dir);
  run_gen_data(cfg, /*dump_images=*/false);
  const std::string first = slurp(cfg.manifest_path());
  run_gen_data(cfg, false);
  CHECK(slurp(cfg.manifest_path()) == first);
  CHECK(first.find("\"checksum\"") != std::string::npos);
  CHECK(first.find("\"config\"") != std::string::npos);

  auto other = cfg;
  other.data_seed = 12;
  run_gen_data(other, false);
  CHECK(slurp(other.manifest_path()) != first);
  fs::remove_all(dir);
}

TEST_CASE("pipeline runners produce artifacts that reproduce bit-exactly") {
  const std::string dir = (fs::temp_directory_path() / "freekd_exp_pipe").string();
  fs::remove_all(dir);
  auto cfg = micro_config(dir);
  const uint64_t seed = cfg.seeds[0];

  // distill before teacher: missing artifact
  CHECK_THROWS_AS(run_distill(cfg, seed, "freekd"), StateError);

  run_train_teacher(cfg, seed);
  CHECK(fs::exists(cfg.teacher_ckpt(seed)));
  CHECK(fs::exists(cfg.teacher_metrics(seed)));

  run_train_prompt(cfg, seed);
  CHECK(fs::exists(cfg.prompt_ckpt(seed)));

  run_distill(cfg, seed, "freekd");
  CHECK(fs::exists(cfg.student_ckpt("freekd", seed)));
  const std::string metrics1 = slurp(cfg.student_metrics("freekd", seed));
  CHECK(metrics1.find("# config:") == 0);
  CHECK(metrics1.find("epoch,seed,variant,task_loss,distill_loss,miou") != std::string::npos);

  // identical config + seed reproduces the metrics CSV byte for byte
  run_distill(cfg, seed, "freekd");
  CHECK(slurp(cfg.student_metrics("freekd", seed)) == metrics1);

  // baseline variant forces mu=0/masks off and needs no prompt
  run_distill(cfg, seed, "baseline");
  CHECK(fs::exists(cfg.student_metrics("baseline", seed)));

  // eval runs on the produced checkpoint
  CHECK(run_eval(cfg, cfg.student_ckpt("freekd", seed)) == 0);

  // mask dump writes per-band, per-principle images
  run_dump_masks(cfg, seed, 0);
  const fs::path mask_dir = fs::path(dir) / ("masks-seed" + std::to_string(seed));
  size_t masks = 0, bands = 0;
  for (const auto& e : fs::directory_iterator(mask_dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("mask_", 0) == 0) ++masks;
    if (name.rfind("band_", 0) == 0) ++bands;
  }
  CHECK(masks == 7 * 2);  // level 2 -> 7 bands, T=2 principles
  CHECK(bands == 7);

  // checkpoints embed the resolved config and seed
  Checkpoint ck = Checkpoint::load(cfg.student_ckpt("freekd", seed));
  CHECK(ck.meta.at("seed").get<uint64_t>() == seed);
  CHECK(ck.meta.at("config") == cfg.to_json());

  fs::remove_all(dir);
}

TEST_CASE("ablate emits seeds x 12 rows plus a mean/std summary block") {
  const std::string dir = (fs::temp_directory_path() / "freekd_exp_ablate").string();
  fs::remove_all(dir);
  auto cfg = micro_config(dir);
  cfg.seeds = {5, 6};

  std::vector<AblateCell> cells;
  run_ablate(cfg, &cells);
  CHECK(cells.size() == 2 * 12);

  const std::string summary = slurp(cfg.summary_path());
  std::istringstream ss(summary);
  std::string line;
  int data_rows = 0, summary_rows = 0;
  bool in_summary = false;
  while (std::getline(ss, line)) {
    if (line.rfind("# mean/std", 0) == 0) {
      in_summary = true;
      continue;
    }
    if (line.empty() || line[0] == '#' || line.rfind("variant,", 0) == 0) continue;
    (in_summary ? summary_rows : data_rows)++;
  }
  CHECK(data_rows == 2 * 12);
  CHECK(summary_rows == 12);
  fs::remove_all(dir);
}
