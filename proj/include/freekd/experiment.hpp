#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "freekd/distill.hpp"

// Experiment driver: a strict flat-JSON config, file naming under one output
// directory, runners behind each CLI subcommand, and the ablation grid.
// Every artifact embeds the fully resolved config and seed, and identical
// (config, seed) pairs reproduce outputs byte for byte.

namespace freekd {

struct ExperimentConfig {
  // dataset
  int64_t height = 64, width = 64;
  int classes = 4;
  int train_count = 2000, val_count = 500;
  uint64_t data_seed = 7;
  // models
  int64_t teacher_width = 32, student_width = 8;
  // transform
  std::string transform = "dwt";
  std::string wavelet = "haar";
  int level = 3;
  // stage 1
  int64_t principles = 2;
  double lambda = 1.0;
  int prompt_epochs = 2;
  double prompt_lr = 0.01;
  // stage 2
  double mu = 5.0;
  std::string band_subset = "all";
  bool mask_mode = true;
  int distill_epochs = 10;
  double distill_lr = 0.08;
  // teacher
  int teacher_epochs = 10;
  double teacher_lr = 0.08;
  // shared
  double weight_decay = 1e-4;
  int batch = 8;
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::string out_dir = "out";

  // Rejects unknown keys and invalid values.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;

  Transform make_transform() const;
  DistillConfig make_distill_config() const;
  PromptTrainConfig make_prompt_config() const;

  // artifact paths, all under out_dir
  std::string manifest_path() const;
  std::string teacher_ckpt(uint64_t seed) const;
  std::string teacher_metrics(uint64_t seed) const;
  std::string prompt_ckpt(uint64_t seed) const;
  std::string prompt_metrics(uint64_t seed) const;
  std::string student_ckpt(const std::string& variant, uint64_t seed) const;
  std::string student_metrics(const std::string& variant, uint64_t seed) const;
  std::string summary_path() const;
};

// datasets are regenerated from the config, never stored
std::vector<SceneSample> make_train_split(const ExperimentConfig& cfg);
std::vector<SceneSample> make_val_split(const ExperimentConfig& cfg);

void write_metrics_csv(const std::string& path, const ExperimentConfig& cfg, uint64_t seed,
                       const std::string& variant, const std::vector<EpochRow>& rows);

// One ablation cell; `prompt_transform` names the transform whose stage-1
// prompt the cell consumes (only used when mask_mode is on).
struct AblateVariant {
  std::string name;
  std::string transform;
  bool mask_mode = false;
  std::string band_subset = "all";
};

// The 12-cell grid: mask-on {dwt,dct,dft} x {low,high,all} plus mask-off dwt
// x {low,high,all}.
std::vector<AblateVariant> ablate_grid();

struct AblateCell {
  std::string variant;
  uint64_t seed = 0;
  double miou = 0.0;
};

// runners; return value is the process exit code
int run_gen_data(const ExperimentConfig& cfg, bool dump_images);
int run_train_teacher(const ExperimentConfig& cfg, uint64_t seed);
int run_train_prompt(const ExperimentConfig& cfg, uint64_t seed);
int run_distill(const ExperimentConfig& cfg, uint64_t seed, const std::string& variant);
int run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path);
int run_ablate(const ExperimentConfig& cfg, std::vector<AblateCell>* cells_out = nullptr);
int run_dump_masks(const ExperimentConfig& cfg, uint64_t seed, int sample_index);
int run_check(uint64_t seed);

// distill with teacher/prompt loaded from their artifact files; used by
// run_distill and run_ablate. Returns the epoch rows it also writes to CSV.
std::vector<EpochRow> run_distill_variant(const ExperimentConfig& cfg, uint64_t seed,
                                          const std::string& variant_name,
                                          const std::optional<AblateVariant>& overrides);

}  // namespace freekd
