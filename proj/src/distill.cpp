#include "freekd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace freekd {

Projection Projection::create(int64_t student_c, int64_t teacher_c, uint64_t seed) {
  Rng rng(Rng::derive(seed, "projection-init"));
  Projection p;
  p.conv = Conv2dLayer::create(student_c, teacher_c, 1, 1, 0, rng);
  return p;
}

Projection Projection::identity(int64_t channels) {
  Projection p;
  std::vector<double> w(static_cast<size_t>(channels * channels), 0.0);
  for (int64_t c = 0; c < channels; ++c) w[static_cast<size_t>(c * channels + c)] = 1.0;
  p.conv.w = Tensor::from_data({channels, channels, 1, 1}, std::move(w));
  p.conv.b = Tensor::zeros({channels});
  p.conv.w.set_requires_grad(true);
  p.conv.b.set_requires_grad(true);
  p.conv.stride = 1;
  p.conv.pad = 0;
  return p;
}

std::vector<Tensor> Projection::parameters() { return {conv.w, conv.b}; }

GateMLP GateMLP::create(int64_t channels, int64_t reduction, uint64_t seed) {
  if (channels < 1 || reduction < 1) throw ConfigError("GateMLP: bad extents");
  const int64_t hidden = std::max<int64_t>(1, channels / reduction);
  Rng rng(Rng::derive(seed, "gate-init"));
  GateMLP g;
  const double b1 = std::sqrt(6.0 / static_cast<double>(channels + hidden));
  const double b2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
  g.w1 = Tensor::uniform({channels, hidden}, rng, -b1, b1);
  g.b1 = Tensor::zeros({1, hidden});
  g.w2 = Tensor::uniform({hidden, 1}, rng, -b2, b2);
  g.b2 = Tensor::zeros({1, 1});
  for (Tensor* t : {&g.w1, &g.b1, &g.w2, &g.b2}) t->set_requires_grad(true);
  return g;
}

Tensor GateMLP::operator()(const Tensor& attention) const {
  if (attention.rank() != 3 || attention.dim(1) != attention.dim(2))
    throw DimensionError("gate: attention must be [N,C,C]");
  if (attention.dim(2) != w1.dim(0))
    throw DimensionError("gate: MLP input width " + std::to_string(w1.dim(0)) +
                         " does not match attention " + shape_str(attention.shape()));
  const int64_t N = attention.dim(0), C = attention.dim(1);
  Tensor rows = reshape(attention, {N * C, C});
  Tensor h = relu(add(matmul(rows, w1), b1));
  Tensor o = add(matmul(h, w2), b2);
  return reshape(sigmoid(o), {N, C});
}

std::vector<Tensor> GateMLP::parameters() { return {w1, b1, w2, b2}; }

Tensor relational_attention(const Tensor& f, const Tensor& f_next) {
  if (f.rank() != 4 || f_next.rank() != 4)
    throw DimensionError("relational_attention: expects [N,C,H,W] features");
  if (f.dim(0) != f_next.dim(0) || f.dim(1) != f_next.dim(1))
    throw DimensionError("relational_attention: channel extents differ: " +
                         shape_str(f.shape()) + " vs " + shape_str(f_next.shape()));
  const int64_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  Tensor psi = resize_nearest(f_next, f.dim(2), f.dim(3));
  Tensor x = reshape(f, {N, C, HW});
  Tensor xn = reshape(psi, {N, C, HW});
  return softmax_lastdim(bmm(xn, x, /*trans_b=*/true));  // [N,C,C]
}

Tensor gate(const Tensor& attention, const GateMLP& mlp) { return mlp(attention); }

BandSubset band_subset_from_name(const std::string& name) {
  if (name == "low") return BandSubset::low;
  if (name == "high") return BandSubset::high;
  if (name == "all") return BandSubset::all;
  throw ConfigError("unknown band subset '" + name + "' (available: low, high, all)");
}

std::string band_subset_name(BandSubset s) {
  switch (s) {
    case BandSubset::low: return "low";
    case BandSubset::high: return "high";
    case BandSubset::all: return "all";
  }
  return "all";
}

namespace {

bool band_selected(const std::string& label, BandSubset subset) {
  switch (subset) {
    case BandSubset::low: return is_low_band(label);
    case BandSubset::high: return !is_low_band(label);
    case BandSubset::all: return true;
  }
  return true;
}

}  // namespace

Tensor freekd_loss(const BandSet& teacher_bands, const BandSet& student_bands,
                   const MaskSet* masks, const Tensor& omega, BandSubset subset) {
  if (teacher_bands.level != student_bands.level ||
      teacher_bands.bands.size() != student_bands.bands.size())
    throw DimensionError("freekd_loss: band structures differ");

  Tensor acc;
  int64_t selected = 0;
  for (size_t k = 0; k < teacher_bands.bands.size(); ++k) {
    const auto& [label, a] = teacher_bands.bands[k];
    const auto& b = student_bands.band(label);
    if (a.shape() != b.shape())
      throw DimensionError("freekd_loss: band '" + label + "' extents differ: " +
                           shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (!band_selected(label, subset)) continue;

    Tensor diff = sub(a, b);
    if (masks) {
      const Tensor& logits = masks->logits_for(label);
      diff = mul_spatial(diff, aggregate_mask(logits, a.dim(2), a.dim(3)));
    }
    Tensor term = abs(diff);
    if (omega.defined()) {
      Tensor g = omega;
      if (a.dim(1) == 2 * omega.dim(1)) g = concat(omega, omega, 1);  // stacked re/im planes
      if (g.dim(1) != a.dim(1))
        throw DimensionError("freekd_loss: gate width does not match band channels");
      term = mul_channel(term, g);
    }
    Tensor band_loss = scale(sum(term), 1.0 / static_cast<double>(a.numel()));
    acc = acc.defined() ? add(acc, band_loss) : band_loss;
    ++selected;
  }
  if (selected == 0) throw StructureError("freekd_loss: band subset selected no bands");
  return scale(acc, 1.0 / static_cast<double>(selected));
}

Tensor total_loss(const Tensor& task_loss, const Tensor& distill_loss, double mu) {
  if (mu < 0.0) throw ConfigError("total_loss: mu must be >= 0");
  return add(task_loss, scale(distill_loss, mu));
}

DistillOutcome distill_train(const SegNet& teacher, SegNet& student,
                             const FrequencyPrompt* prompt,
                             const std::vector<SceneSample>& train,
                             const std::vector<SceneSample>& val, const DistillConfig& cfg,
                             uint64_t seed) {
  if (train.empty()) throw ConfigError("distill_train: empty training split");
  if (cfg.mu < 0.0) throw ConfigError("distill_train: mu must be >= 0");
  if (cfg.mask_mode && (prompt == nullptr || !prompt->trained))
    throw ConfigError("distill_train: mask_mode=on requires a trained prompt");

  // mu = 0 disables the distillation machinery entirely; the run is then the
  // plain cross-entropy baseline on the same shuffle stream.
  if (cfg.mu == 0.0) {
    DistillOutcome out;
    out.rows = train_segnet_ce(student, train, val, cfg.epochs, cfg.lr, cfg.weight_decay,
                               cfg.batch, Rng::derive(seed, "distill-shuffle"));
    return out;
  }

  // Teacher is frozen: cache per-sample tap features once.
  std::vector<Tensor> cache_tap, cache_next;
  cache_tap.reserve(train.size());
  cache_next.reserve(train.size());
  {
    NoGradScope no_grad;
    const int64_t n = static_cast<int64_t>(train.size());
    const int64_t chunk = std::max<int64_t>(1, cfg.batch);
    for (int64_t start = 0; start < n; start += chunk) {
      std::vector<int64_t> idx;
      for (int64_t i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
      Tensor tap_next = teacher.backbone_to_tap_next(stack_images(train, idx));
      Tensor tap = teacher.tap_from_next(tap_next);
      for (size_t b = 0; b < idx.size(); ++b) {
        cache_tap.push_back(narrow(tap, 0, static_cast<int64_t>(b), 1));
        cache_next.push_back(narrow(tap_next, 0, static_cast<int64_t>(b), 1));
      }
    }
  }

  const int64_t teacher_c = teacher.width;
  Projection phi = Projection::create(student.width, teacher_c, Rng::derive(seed, "phi"));
  GateMLP gate_t = GateMLP::create(teacher_c, cfg.gate_reduction, Rng::derive(seed, "gate-teacher"));
  GateMLP gate_s = GateMLP::create(teacher_c, cfg.gate_reduction, Rng::derive(seed, "gate-student"));

  std::vector<Tensor> params = student.parameters();
  for (auto& p : phi.parameters()) params.push_back(p);
  for (auto& p : gate_t.parameters()) params.push_back(p);
  for (auto& p : gate_s.parameters()) params.push_back(p);

  auto assemble = [](const std::vector<Tensor>& cache, const std::vector<int64_t>& idx) {
    Tensor out = cache[static_cast<size_t>(idx[0])];
    for (size_t b = 1; b < idx.size(); ++b)
      out = concat(out, cache[static_cast<size_t>(idx[b])], 0);
    return out;
  };

  Rng shuffle(Rng::derive(seed, "distill-shuffle"));
  const int64_t n = static_cast<int64_t>(train.size());
  DistillOutcome out;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle.below(i + 1))]);

    double task_acc = 0.0, kd_acc = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch) {
      std::vector<int64_t> idx(order.begin() + start,
                               order.begin() + std::min(n, start + cfg.batch));
      Tensor x = stack_images(train, idx);
      LabelMap y = stack_labels(train, idx);

      // teacher-side quantities for this batch; constants on the tape
      Tensor t_tap, t_next, attn_t;
      BandSet t_bands;
      std::optional<MaskSet> batch_masks;
      {
        NoGradScope no_grad;
        t_tap = assemble(cache_tap, idx);
        t_next = assemble(cache_next, idx);
        attn_t = relational_attention(t_tap, t_next);
        t_bands = cfg.transform.forward(t_tap);
        if (cfg.mask_mode) batch_masks = compute_masks(t_bands, *prompt);
      }

      try {
        GradTape tape;
        Tensor task, kd;
        {
          TapeScope scope(tape);
          SegNet::Taps taps = student.forward(x);
          task = cross_entropy_logits(taps.logits, y);

          Tensor s_tap = phi(taps.tap);
          Tensor s_next = phi(taps.tap_next);
          BandSet s_bands = cfg.transform.forward(s_tap);

          GateWeights gates;
          gates.teacher = gate_t(attn_t);
          gates.student = gate_s(relational_attention(s_tap, s_next));
          gates.combined = mul(gates.teacher, gates.student);

          kd = freekd_loss(t_bands, s_bands, batch_masks ? &*batch_masks : nullptr,
                           gates.combined, cfg.band_subset);
          tape.backward(total_loss(task, kd, cfg.mu));
        }
        sgd_step(params, cfg.lr, cfg.weight_decay);
        task_acc += task.item();
        kd_acc += kd.item();
      } catch (const NumericError& e) {
        throw TrainingError(std::string("distill_train: diverged (") + e.what() + ")");
      }
      ++batches;
    }

    EpochRow row;
    row.epoch = epoch;
    row.task_loss = task_acc / static_cast<double>(batches);
    row.distill_loss = kd_acc / static_cast<double>(batches);
    row.val_miou = evaluate_miou(student, val);
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace freekd
