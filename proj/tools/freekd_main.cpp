#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "freekd/experiment.hpp"
#include "freekd/kernels.hpp"

// Experiment driver. Subcommands cover the whole pipeline: data manifest,
// teacher pretraining, stage-1 prompt training, stage-2 distillation,
// evaluation, the ablation grid, mask dumps and the numeric self-check.

using namespace freekd;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out_dir;
};

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg =
      opts.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed) cfg.seeds = {*opts.seed};
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file (defaults apply if omitted)");
  cmd->add_option("--seed", opts.seed, "override the config seed list with a single seed");
  cmd->add_option("--out", opts.out_dir, "output directory override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frequency-domain knowledge distillation toolkit"};
  app.require_subcommand(1);

  bool serial = false;
  app.add_flag("--serial", serial, "force the serial kernel backend");

  CommonOpts gen_opts, teacher_opts, prompt_opts, distill_opts, eval_opts, ablate_opts,
      masks_opts;
  bool dump_images = false;
  std::string variant = "freekd";
  std::string ckpt_path;
  int sample_index = 0;
  uint64_t check_seed = 1;

  auto* gen = app.add_subcommand("gen-data", "write the dataset manifest");
  add_common(gen, gen_opts);
  gen->add_flag("--dump-images", dump_images, "also write PPM/PGM image pairs");

  auto* teacher = app.add_subcommand("train-teacher", "pretrain the teacher network");
  add_common(teacher, teacher_opts);

  auto* prompt = app.add_subcommand("train-prompt", "stage 1: train the frequency prompt");
  add_common(prompt, prompt_opts);

  auto* distill = app.add_subcommand("distill", "stage 2: train the student with FreeKD");
  add_common(distill, distill_opts);
  distill->add_option("--variant", variant,
                      "variant label; 'baseline' forces mu=0 with masks off");

  auto* eval = app.add_subcommand("eval", "print val mIoU for a checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--ckpt", ckpt_path, "checkpoint to evaluate")->required();

  auto* ablate = app.add_subcommand("ablate", "run the mask/band/transform variant grid");
  add_common(ablate, ablate_opts);

  auto* masks = app.add_subcommand("dump-masks", "write per-band, per-principle mask images");
  add_common(masks, masks_opts);
  masks->add_option("--sample", sample_index, "val-split sample index");

  auto* check = app.add_subcommand("check", "run the numeric oracle suites");
  check->add_option("--seed", check_seed, "seed for the randomized suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (serial) kernels::set_backend(kernels::Backend::Serial);

  try {
    if (gen->parsed()) return run_gen_data(resolve_config(gen_opts), dump_images);
    if (teacher->parsed()) {
      const auto cfg = resolve_config(teacher_opts);
      for (uint64_t s : cfg.seeds)
        if (int rc = run_train_teacher(cfg, s)) return rc;
      return 0;
    }
    if (prompt->parsed()) {
      const auto cfg = resolve_config(prompt_opts);
      for (uint64_t s : cfg.seeds)
        if (int rc = run_train_prompt(cfg, s)) return rc;
      return 0;
    }
    if (distill->parsed()) {
      const auto cfg = resolve_config(distill_opts);
      for (uint64_t s : cfg.seeds)
        if (int rc = run_distill(cfg, s, variant)) return rc;
      return 0;
    }
    if (eval->parsed()) return run_eval(resolve_config(eval_opts), ckpt_path);
    if (ablate->parsed()) return run_ablate(resolve_config(ablate_opts));
    if (masks->parsed()) {
      const auto cfg = resolve_config(masks_opts);
      return run_dump_masks(cfg, cfg.seeds.front(), sample_index);
    }
    if (check->parsed()) return run_check(check_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
