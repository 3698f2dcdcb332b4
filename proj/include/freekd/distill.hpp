#pragma once

#include <optional>
#include <string>
#include <vector>

#include "freekd/prompt.hpp"

// Stage 2: the student is trained with task loss plus the gated, masked
// band-space L1 loss. Channel gates come from cross-layer relational
// attention on both networks (student features first projected into teacher
// channels); masks come from the frozen stage-1 prompt and are constants
// here.

namespace freekd {

// 1x1 projection mapping student channels into teacher channels.
struct Projection {
  Conv2dLayer conv;

  static Projection create(int64_t student_c, int64_t teacher_c, uint64_t seed);
  static Projection identity(int64_t channels);
  Tensor operator()(const Tensor& x) const { return conv(x); }
  std::vector<Tensor> parameters();
};

// Row-wise two-layer MLP (C -> C/r -> 1) with final sigmoid over the
// relational attention matrix; emits one gate per channel.
struct GateMLP {
  Tensor w1, b1, w2, b2;

  static GateMLP create(int64_t channels, int64_t reduction, uint64_t seed);
  Tensor operator()(const Tensor& attention) const;  // [N,C,C] -> [N,C]
  std::vector<Tensor> parameters();
};

// A = row-softmax(psi(F) F^T) per sample over flattened spatial dims; the
// deeper feature is resized (nearest) to F's extents first.
Tensor relational_attention(const Tensor& f, const Tensor& f_next);

Tensor gate(const Tensor& attention, const GateMLP& mlp);

struct GateWeights {
  Tensor teacher;   // [N,C]
  Tensor student;   // [N,C]
  Tensor combined;  // teacher ⊛ student
};

enum class BandSubset { low, high, all };

BandSubset band_subset_from_name(const std::string& name);
std::string band_subset_name(BandSubset s);

// Per selected band: omega[c] * || mask ⊛ (a_k - b_k) ||_1, normalized by the
// band element count, then averaged over the selected bands. `masks` may be
// null (mask term = 1) and `omega` undefined (gate = 1). When a band carries
// stacked re/im channels the gate vector applies to both halves.
Tensor freekd_loss(const BandSet& teacher_bands, const BandSet& student_bands,
                   const MaskSet* masks, const Tensor& omega, BandSubset subset);

// L_student = L_task + mu * L_FreeKD.
Tensor total_loss(const Tensor& task_loss, const Tensor& distill_loss, double mu);

struct DistillConfig {
  double mu = 5.0;
  BandSubset band_subset = BandSubset::all;
  Transform transform;
  bool mask_mode = true;
  int epochs = 8;
  double lr = 0.05;
  double weight_decay = 1e-4;
  int batch = 8;
  int64_t gate_reduction = 4;
};

struct DistillOutcome {
  std::vector<EpochRow> rows;
};

// Trains `student` in place. The teacher is frozen (its tap features are
// precomputed once per sample); mask_mode=on requires a trained prompt. With
// mu = 0 this reduces to the plain cross-entropy baseline, bit-exactly.
DistillOutcome distill_train(const SegNet& teacher, SegNet& student,
                             const FrequencyPrompt* prompt,
                             const std::vector<SceneSample>& train,
                             const std::vector<SceneSample>& val, const DistillConfig& cfg,
                             uint64_t seed);

}  // namespace freekd
