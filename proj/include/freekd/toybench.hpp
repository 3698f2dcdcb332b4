#pragma once

#include <string>
#include <vector>

#include "freekd/checkpoint.hpp"
#include "freekd/diffcore.hpp"

// Desk-scale dense-prediction benchmark: procedural scenes whose foreground
// classes are told apart by high-frequency texture (stripes / checkers) over
// a smooth low-frequency background, plus an encoder-decoder SegNet in two
// widths. Everything is a pure function of integer seeds.

namespace freekd {

struct SceneSample {
  Tensor image;    // [3,H,W] in [0,1]
  LabelMap label;  // [H,W], 0 = background
  uint64_t seed = 0;
};

// Same seed, same arguments -> bit-identical samples on any platform.
std::vector<SceneSample> generate(uint64_t seed, int count, int64_t h, int64_t w, int classes);

struct Conv2dLayer {
  Tensor w, b;
  int64_t stride = 1, pad = 1;

  static Conv2dLayer create(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad,
                            Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  void collect_params(std::vector<Tensor>& out) const;
};

// Encoder-decoder segmentation net. Two tap points are exposed for
// distillation: `tap` is the final decoder feature at full resolution and
// `tap_next` the preceding (one stage deeper, half resolution) decoder
// feature used for the cross-layer attention.
struct SegNet {
  int64_t width = 0;
  int64_t classes = 0;
  Conv2dLayer enc1, enc2, enc3, dec1, dec2, head;

  static SegNet create(int64_t width, int64_t classes, uint64_t seed);

  struct Taps {
    Tensor tap;       // [N, width, H, W]
    Tensor tap_next;  // [N, width, H/2, W/2]
    Tensor logits;    // [N, classes, H, W]
  };

  // Split forward so stage 1 can substitute the tap feature.
  Tensor backbone_to_tap_next(const Tensor& x) const;
  Tensor tap_from_next(const Tensor& tap_next) const;
  Tensor logits_from_tap(const Tensor& tap) const;
  Taps forward(const Tensor& x) const;

  std::vector<Tensor> parameters();
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  // Snapshot/restore of the raw weight values (stage 1 reverts the teacher).
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);

  Checkpoint to_checkpoint() const;
  static SegNet from_checkpoint(const Checkpoint& ck);
};

// Mean over classes present in truth of intersection-over-union.
// ValueError when a label id is outside [0, classes).
double miou(const LabelMap& pred, const LabelMap& truth, int classes);

LabelMap argmax_labels(const Tensor& logits);

Tensor stack_images(const std::vector<SceneSample>& data, const std::vector<int64_t>& idx);
LabelMap stack_labels(const std::vector<SceneSample>& data, const std::vector<int64_t>& idx);

// Mean per-image mIoU over a split.
double evaluate_miou(const SegNet& net, const std::vector<SceneSample>& data, int batch = 16);

struct EpochRow {
  int epoch = 0;
  double task_loss = 0.0;
  double distill_loss = 0.0;
  double val_miou = 0.0;
};

// Plain cross-entropy training; the shared trainer behind train_teacher and
// the mu=0 distillation baseline. shuffle_seed names the batch-order stream.
std::vector<EpochRow> train_segnet_ce(SegNet& net, const std::vector<SceneSample>& train,
                                      const std::vector<SceneSample>& val, int epochs, double lr,
                                      double weight_decay, int batch, uint64_t shuffle_seed);

std::vector<EpochRow> train_teacher(SegNet& teacher, const std::vector<SceneSample>& train,
                                    const std::vector<SceneSample>& val, int epochs, double lr,
                                    double weight_decay, int batch, uint64_t seed);

// Optional dataset dump as PPM/PGM pairs for inspection.
void dump_dataset(const std::vector<SceneSample>& data, const std::string& dir,
                  const std::string& comment = "");

}  // namespace freekd
