#include "freekd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "freekd/checks.hpp"

namespace freekd {

namespace {

namespace fs = std::filesystem;

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

uint64_t fnv1a(uint64_t h, const void* data, size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path))
    throw StateError("missing artifact '" + path + "'; " + hint);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "height",        "width",         "classes",       "train_count",   "val_count",
      "data_seed",     "teacher_width", "student_width", "transform",     "wavelet",
      "level",         "principles",    "lambda",        "prompt_epochs", "prompt_lr",
      "mu",            "band_subset",   "mask_mode",     "distill_epochs", "distill_lr",
      "teacher_epochs", "teacher_lr",   "weight_decay",  "batch",         "seeds",
      "out_dir"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");

  ExperimentConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.classes = j.value("classes", c.classes);
    c.train_count = j.value("train_count", c.train_count);
    c.val_count = j.value("val_count", c.val_count);
    c.data_seed = j.value("data_seed", c.data_seed);
    c.teacher_width = j.value("teacher_width", c.teacher_width);
    c.student_width = j.value("student_width", c.student_width);
    c.transform = j.value("transform", c.transform);
    c.wavelet = j.value("wavelet", c.wavelet);
    c.level = j.value("level", c.level);
    c.principles = j.value("principles", c.principles);
    c.lambda = j.value("lambda", c.lambda);
    c.prompt_epochs = j.value("prompt_epochs", c.prompt_epochs);
    c.prompt_lr = j.value("prompt_lr", c.prompt_lr);
    c.mu = j.value("mu", c.mu);
    c.band_subset = j.value("band_subset", c.band_subset);
    c.mask_mode = j.value("mask_mode", c.mask_mode);
    c.distill_epochs = j.value("distill_epochs", c.distill_epochs);
    c.distill_lr = j.value("distill_lr", c.distill_lr);
    c.teacher_epochs = j.value("teacher_epochs", c.teacher_epochs);
    c.teacher_lr = j.value("teacher_lr", c.teacher_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch = j.value("batch", c.batch);
    c.seeds = j.value("seeds", c.seeds);
    c.out_dir = j.value("out_dir", c.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
  return nlohmann::json{
      {"height", height},     {"width", width},
      {"classes", classes},   {"train_count", train_count},
      {"val_count", val_count}, {"data_seed", data_seed},
      {"teacher_width", teacher_width}, {"student_width", student_width},
      {"transform", transform}, {"wavelet", wavelet},
      {"level", level},       {"principles", principles},
      {"lambda", lambda},     {"prompt_epochs", prompt_epochs},
      {"prompt_lr", prompt_lr}, {"mu", mu},
      {"band_subset", band_subset}, {"mask_mode", mask_mode},
      {"distill_epochs", distill_epochs}, {"distill_lr", distill_lr},
      {"teacher_epochs", teacher_epochs}, {"teacher_lr", teacher_lr},
      {"weight_decay", weight_decay}, {"batch", batch},
      {"seeds", seeds},       {"out_dir", out_dir}};
}

void ExperimentConfig::validate() const {
  const int64_t mult = int64_t{1} << level;
  if (level < 1 || level > 6) throw ConfigError("level must be in 1..6");
  if (height < 8 || width < 8 || height % mult != 0 || width % mult != 0)
    throw ConfigError("height/width must be >= 8 and multiples of 2^level");
  if (classes < 2 || classes > 16) throw ConfigError("classes must be in 2..16");
  if (train_count < 1 || val_count < 1) throw ConfigError("split counts must be positive");
  if (teacher_width < 1 || student_width < 1) throw ConfigError("widths must be positive");
  if (principles < 1) throw ConfigError("principles (T) must be >= 1");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (mu < 0.0) throw ConfigError("mu must be >= 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (prompt_epochs < 0 || distill_epochs < 1 || teacher_epochs < 1)
    throw ConfigError("epoch counts out of range");
  if (teacher_lr <= 0.0 || distill_lr <= 0.0 || prompt_lr <= 0.0)
    throw ConfigError("learning rates must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (seeds.empty()) throw ConfigError("need at least one seed");
  if (out_dir.empty()) throw ConfigError("out_dir must be set");
  transform_from_name(transform);
  band_subset_from_name(band_subset);
  Wavelet::by_name(wavelet);
}

Transform ExperimentConfig::make_transform() const {
  return Transform{transform_from_name(transform), wavelet, level};
}

DistillConfig ExperimentConfig::make_distill_config() const {
  DistillConfig d;
  d.mu = mu;
  d.band_subset = band_subset_from_name(band_subset);
  d.transform = make_transform();
  d.mask_mode = mask_mode;
  d.epochs = distill_epochs;
  d.lr = distill_lr;
  d.weight_decay = weight_decay;
  d.batch = batch;
  return d;
}

PromptTrainConfig ExperimentConfig::make_prompt_config() const {
  PromptTrainConfig p;
  p.lambda = lambda;
  p.principles = principles;
  p.epochs = prompt_epochs;
  p.lr = prompt_lr;
  p.weight_decay = 0.0;
  p.batch = batch;
  return p;
}

std::string ExperimentConfig::manifest_path() const {
  return (fs::path(out_dir) / "dataset-manifest.json").string();
}
std::string ExperimentConfig::teacher_ckpt(uint64_t seed) const {
  return (fs::path(out_dir) / ("teacher-seed" + std::to_string(seed) + ".fkd")).string();
}
std::string ExperimentConfig::teacher_metrics(uint64_t seed) const {
  return (fs::path(out_dir) / ("metrics-teacher-seed" + std::to_string(seed) + ".csv")).string();
}
std::string ExperimentConfig::prompt_ckpt(uint64_t seed) const {
  return (fs::path(out_dir) / ("prompt-" + transform + "-seed" + std::to_string(seed) + ".fkd"))
      .string();
}
std::string ExperimentConfig::prompt_metrics(uint64_t seed) const {
  return (fs::path(out_dir) /
          ("metrics-prompt-" + transform + "-seed" + std::to_string(seed) + ".csv"))
      .string();
}
std::string ExperimentConfig::student_ckpt(const std::string& variant, uint64_t seed) const {
  return (fs::path(out_dir) / ("student-" + variant + "-seed" + std::to_string(seed) + ".fkd"))
      .string();
}
std::string ExperimentConfig::student_metrics(const std::string& variant, uint64_t seed) const {
  return (fs::path(out_dir) / ("metrics-" + variant + "-seed" + std::to_string(seed) + ".csv"))
      .string();
}
std::string ExperimentConfig::summary_path() const {
  return (fs::path(out_dir) / "summary.csv").string();
}

std::vector<SceneSample> make_train_split(const ExperimentConfig& cfg) {
  return generate(Rng::derive(cfg.data_seed, "train-split"), cfg.train_count, cfg.height,
                  cfg.width, cfg.classes);
}

std::vector<SceneSample> make_val_split(const ExperimentConfig& cfg) {
  return generate(Rng::derive(cfg.data_seed, "val-split"), cfg.val_count, cfg.height, cfg.width,
                  cfg.classes);
}

void write_metrics_csv(const std::string& path, const ExperimentConfig& cfg, uint64_t seed,
                       const std::string& variant, const std::vector<EpochRow>& rows) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "# config: " << cfg.to_json().dump() << "\n";
  f << "# seed: " << seed << "\n";
  f << "epoch,seed,variant,task_loss,distill_loss,miou\n";
  for (const auto& r : rows)
    f << r.epoch << "," << seed << "," << variant << "," << g17(r.task_loss) << ","
      << g17(r.distill_loss) << "," << g17(r.val_miou) << "\n";
  if (!f) throw IoError("write failed for '" + path + "'");
}

std::vector<AblateVariant> ablate_grid() {
  std::vector<AblateVariant> grid;
  for (const char* tf : {"dwt", "dct", "dft"})
    for (const char* subset : {"low", "high", "all"})
      grid.push_back({std::string(tf) + "_fp_" + subset, tf, true, subset});
  for (const char* subset : {"low", "high", "all"})
    grid.push_back({std::string("dwt_nofp_") + subset, "dwt", false, subset});
  return grid;
}

int run_gen_data(const ExperimentConfig& cfg, bool dump_images) {
  auto train = make_train_split(cfg);
  auto val = make_val_split(cfg);

  auto checksum = [](const std::vector<SceneSample>& split) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& s : split) {
      h = fnv1a(h, s.image.data(), static_cast<size_t>(s.image.numel()) * sizeof(double));
      h = fnv1a(h, s.label.v.data(), s.label.v.size() * sizeof(int32_t));
    }
    return h;
  };

  nlohmann::json manifest;
  manifest["config"] = cfg.to_json();
  manifest["train"] = {{"count", train.size()}, {"checksum", hex64(checksum(train))}};
  manifest["val"] = {{"count", val.size()}, {"checksum", hex64(checksum(val))}};

  fs::create_directories(cfg.out_dir);
  std::ofstream f(cfg.manifest_path(), std::ios::trunc);
  if (!f) throw IoError("cannot write '" + cfg.manifest_path() + "'");
  f << manifest.dump(2) << "\n";

  if (dump_images) {
    const std::string comment = "seed " + std::to_string(cfg.data_seed);
    dump_dataset(train, (fs::path(cfg.out_dir) / "dataset" / "train").string(), comment);
    dump_dataset(val, (fs::path(cfg.out_dir) / "dataset" / "val").string(), comment);
  }
  std::printf("wrote %s (train %zu, val %zu)\n", cfg.manifest_path().c_str(), train.size(),
              val.size());
  return 0;
}

int run_train_teacher(const ExperimentConfig& cfg, uint64_t seed) {
  auto train = make_train_split(cfg);
  auto val = make_val_split(cfg);
  SegNet teacher = SegNet::create(cfg.teacher_width, cfg.classes, Rng::derive(seed, "teacher-init"));
  auto rows = train_teacher(teacher, train, val, cfg.teacher_epochs, cfg.teacher_lr,
                            cfg.weight_decay, cfg.batch, seed);

  fs::create_directories(cfg.out_dir);
  Checkpoint ck = teacher.to_checkpoint();
  ck.meta["config"] = cfg.to_json();
  ck.meta["seed"] = seed;
  ck.save(cfg.teacher_ckpt(seed));
  write_metrics_csv(cfg.teacher_metrics(seed), cfg, seed, "teacher", rows);
  std::printf("teacher seed %llu: val mIoU %.4f -> %s\n",
              static_cast<unsigned long long>(seed), rows.back().val_miou,
              cfg.teacher_ckpt(seed).c_str());
  return 0;
}

int run_train_prompt(const ExperimentConfig& cfg, uint64_t seed) {
  require_file(cfg.teacher_ckpt(seed), "run train-teacher first");
  SegNet teacher = SegNet::from_checkpoint(Checkpoint::load(cfg.teacher_ckpt(seed)));
  auto train = make_train_split(cfg);

  auto out = train_prompt(teacher, train, cfg.make_transform(), cfg.make_prompt_config(), seed);
  nlohmann::json extra = {{"config", cfg.to_json()},
                          {"seed", seed},
                          {"transform", cfg.transform},
                          {"wavelet", cfg.wavelet},
                          {"level", cfg.level},
                          {"initial_dissimilarity", out.initial_dissimilarity},
                          {"final_dissimilarity", out.final_dissimilarity}};
  fs::create_directories(cfg.out_dir);
  out.prompt.save(cfg.prompt_ckpt(seed), extra);
  write_metrics_csv(cfg.prompt_metrics(seed), cfg, seed, "prompt", out.rows);
  std::printf("prompt seed %llu: dissimilarity %.4f -> %.4f, %s\n",
              static_cast<unsigned long long>(seed), out.initial_dissimilarity,
              out.final_dissimilarity, cfg.prompt_ckpt(seed).c_str());
  return 0;
}

std::vector<EpochRow> run_distill_variant(const ExperimentConfig& cfg, uint64_t seed,
                                          const std::string& variant_name,
                                          const std::optional<AblateVariant>& overrides) {
  ExperimentConfig eff = cfg;
  if (overrides) {
    eff.transform = overrides->transform;
    eff.mask_mode = overrides->mask_mode;
    eff.band_subset = overrides->band_subset;
  }
  if (variant_name == "baseline") {
    eff.mu = 0.0;
    eff.mask_mode = false;
  }

  require_file(eff.teacher_ckpt(seed), "run train-teacher first");
  SegNet teacher = SegNet::from_checkpoint(Checkpoint::load(eff.teacher_ckpt(seed)));

  FrequencyPrompt prompt;
  const bool needs_prompt = eff.mask_mode && eff.mu > 0.0;
  if (needs_prompt) {
    require_file(eff.prompt_ckpt(seed), "run train-prompt first");
    prompt = FrequencyPrompt::load(eff.prompt_ckpt(seed));
  }

  auto train = make_train_split(eff);
  auto val = make_val_split(eff);
  SegNet student = SegNet::create(eff.student_width, eff.classes, Rng::derive(seed, "student-init"));
  auto out = distill_train(teacher, student, needs_prompt ? &prompt : nullptr, train, val,
                           eff.make_distill_config(), seed);

  fs::create_directories(eff.out_dir);
  Checkpoint ck = student.to_checkpoint();
  ck.meta["config"] = eff.to_json();
  ck.meta["seed"] = seed;
  ck.meta["variant"] = variant_name;
  ck.save(eff.student_ckpt(variant_name, seed));
  write_metrics_csv(eff.student_metrics(variant_name, seed), eff, seed, variant_name, out.rows);
  return out.rows;
}

int run_distill(const ExperimentConfig& cfg, uint64_t seed, const std::string& variant) {
  auto rows = run_distill_variant(cfg, seed, variant, std::nullopt);
  std::printf("%s seed %llu: val mIoU %.4f -> %s\n", variant.c_str(),
              static_cast<unsigned long long>(seed), rows.back().val_miou,
              cfg.student_ckpt(variant, seed).c_str());
  return 0;
}

int run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path) {
  require_file(ckpt_path, "nothing to evaluate");
  SegNet net = SegNet::from_checkpoint(Checkpoint::load(ckpt_path));
  auto val = make_val_split(cfg);
  const double m = evaluate_miou(net, val);
  std::printf("%s: val mIoU %s\n", ckpt_path.c_str(), g17(m).c_str());
  return 0;
}

int run_ablate(const ExperimentConfig& cfg, std::vector<AblateCell>* cells_out) {
  const auto grid = ablate_grid();
  std::vector<AblateCell> cells;

  for (uint64_t seed : cfg.seeds) {
    if (!fs::exists(cfg.teacher_ckpt(seed))) run_train_teacher(cfg, seed);
    // stage-1 prompts per transform used by mask-on cells
    std::set<std::string> prompt_transforms;
    for (const auto& v : grid)
      if (v.mask_mode) prompt_transforms.insert(v.transform);
    for (const auto& tf : prompt_transforms) {
      ExperimentConfig pc = cfg;
      pc.transform = tf;
      if (!fs::exists(pc.prompt_ckpt(seed))) run_train_prompt(pc, seed);
    }
    for (const auto& v : grid) {
      auto rows = run_distill_variant(cfg, seed, v.name, v);
      cells.push_back({v.name, seed, rows.back().val_miou});
      std::printf("ablate %-14s seed %llu: val mIoU %.4f\n", v.name.c_str(),
                  static_cast<unsigned long long>(seed), rows.back().val_miou);
    }
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream f(cfg.summary_path(), std::ios::trunc);
  if (!f) throw IoError("cannot write '" + cfg.summary_path() + "'");
  f << "# config: " << cfg.to_json().dump() << "\n";
  f << "variant,seed,miou\n";
  for (const auto& v : grid)
    for (const auto& c : cells)
      if (c.variant == v.name) f << c.variant << "," << c.seed << "," << g17(c.miou) << "\n";
  f << "# mean/std over seeds\n";
  f << "variant,mean_miou,std_miou\n";
  for (const auto& v : grid) {
    double mean = 0.0, sq = 0.0;
    int64_t n = 0;
    for (const auto& c : cells)
      if (c.variant == v.name) {
        mean += c.miou;
        ++n;
      }
    mean /= static_cast<double>(n);
    for (const auto& c : cells)
      if (c.variant == v.name) sq += (c.miou - mean) * (c.miou - mean);
    const double sd = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
    f << v.name << "," << g17(mean) << "," << g17(sd) << "\n";
  }
  std::printf("wrote %s (%zu cells)\n", cfg.summary_path().c_str(), cells.size());
  if (cells_out) *cells_out = std::move(cells);
  return 0;
}

int run_dump_masks(const ExperimentConfig& cfg, uint64_t seed, int sample_index) {
  require_file(cfg.teacher_ckpt(seed), "run train-teacher first");
  require_file(cfg.prompt_ckpt(seed), "run train-prompt first");
  SegNet teacher = SegNet::from_checkpoint(Checkpoint::load(cfg.teacher_ckpt(seed)));
  FrequencyPrompt prompt = FrequencyPrompt::load(cfg.prompt_ckpt(seed));

  auto val = make_val_split(cfg);
  if (sample_index < 0 || sample_index >= static_cast<int>(val.size()))
    throw ConfigError("sample index out of range for the val split");

  NoGradScope no_grad;
  Tensor x = stack_images(val, {sample_index});
  BandSet bands =
      cfg.make_transform().forward(teacher.tap_from_next(teacher.backbone_to_tap_next(x)));
  MaskSet masks = compute_masks(bands, prompt);

  const std::string dir =
      (fs::path(cfg.out_dir) / ("masks-seed" + std::to_string(seed))).string();
  const std::string comment =
      "config: " + cfg.to_json().dump() + " seed: " + std::to_string(seed);
  auto mask_paths = dump_masks_pgm(masks, bands, dir, "mask", comment);
  auto band_paths = dump_bands_pgm(bands, dir, "band", comment);
  std::printf("wrote %zu mask and %zu band images under %s\n", mask_paths.size(),
              band_paths.size(), dir.c_str());
  return 0;
}

int run_check(uint64_t seed) {
  const auto results = run_all_checks(seed);
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%s  %s (%s)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    if (!r.pass) ++failed;
  }
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}

}  // namespace freekd
