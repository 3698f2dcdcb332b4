#pragma once

#include <optional>
#include <string>
#include <vector>

#include "freekd/freqxform.hpp"
#include "freekd/toybench.hpp"

// Stage 1: a learnable prompt of shape [bands, principles, channels] is
// multiplied against each flattened teacher band to produce spatial
// pixel-of-interest masks. The masked bands are resynthesized and sent back
// through the teacher head; task loss plus a pairwise soft-Jaccard
// dissimilarity penalty trains the prompt (jointly with the teacher, whose
// weights are restored afterwards).

namespace freekd {

struct FrequencyPrompt {
  Tensor params;  // [B, T, C]
  bool trained = false;

  int64_t bands() const { return params.dim(0); }
  int64_t principles() const { return params.dim(1); }
  int64_t channels() const { return params.dim(2); }

  // Zero init: sigmoid gates start at 0.5, so with T=2 the masked
  // reconstruction equals the original feature.
  static FrequencyPrompt zeros(int64_t bands, int64_t principles, int64_t channels);
  static FrequencyPrompt zeros_for(const BandSet& b, int64_t principles);

  void save(const std::string& path, const nlohmann::json& extra_meta = {}) const;
  static FrequencyPrompt load(const std::string& path);
};

struct MaskSet {
  // Per band, in band order: logits [N, T, Hb*Wb].
  std::vector<std::pair<std::string, Tensor>> logits;

  bool has(const std::string& label) const;
  const Tensor& logits_for(const std::string& label) const;  // StructureError
};

// M = P x R with R the [C, Hb*Wb] flattening of the band, per sample.
Tensor compute_mask_logits(const Tensor& prompt_band, const Tensor& band);

MaskSet compute_masks(const BandSet& bands, const FrequencyPrompt& prompt);

// sum_i sigmoid(M_i), the spatial gate shared by all channels: [N,1,Hb,Wb].
Tensor aggregate_mask(const Tensor& logits, int64_t hb, int64_t wb);

// R_hat = (sum_i sigmoid(M_i)) ⊛ R.
Tensor apply_masks(const Tensor& band, const Tensor& logits);

// Masks every band and resynthesizes; band count must match the prompt.
Tensor masked_reconstruct(const BandSet& bands, const FrequencyPrompt& prompt,
                          const Transform& transform);

// (sum min + eps) / (sum max + eps), eps = 1e-8; 1 iff m == n.
Tensor soft_jaccard(const Tensor& m, const Tensor& n);

// Mean over bands and samples of (1/T^2) sum_ij J(sigma(M_i), sigma(M_j)),
// diagonal included; bounded to [1/T, 1].
Tensor dissimilarity_loss(const MaskSet& masks);

struct PromptTrainConfig {
  double lambda = 1.0;  // dissimilarity weight
  int64_t principles = 2;
  int epochs = 2;
  double lr = 0.02;
  double weight_decay = 0.0;
  int batch = 8;
  bool keep_teacher_weights = false;
};

struct PromptTrainOutcome {
  FrequencyPrompt prompt;
  std::vector<EpochRow> rows;       // task_loss = finetune CE, distill_loss = dissimilarity
  double initial_dissimilarity = 0.0;
  double final_dissimilarity = 0.0;
};

// Minimizes finetune CE + lambda * dissimilarity over prompt and teacher
// jointly; restores the teacher snapshot unless keep_teacher_weights.
PromptTrainOutcome train_prompt(SegNet& teacher, const std::vector<SceneSample>& train,
                                const Transform& transform, const PromptTrainConfig& cfg,
                                uint64_t seed);

// Per-band, per-principle mask images for one sample.
std::vector<std::string> dump_masks_pgm(const MaskSet& masks, const BandSet& bands,
                                        const std::string& dir, const std::string& prefix,
                                        const std::string& comment = "");

}  // namespace freekd
