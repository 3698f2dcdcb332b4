#include "freekd/toybench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "freekd/image_io.hpp"

namespace freekd {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Texture families cycle over the foreground classes: vertical stripes,
// horizontal stripes, checkerboard. Cell sizes of 1-3 pixels keep the class
// signal in the high-frequency bands.
bool texture_on(int pattern, int64_t x, int64_t y, int64_t cell) {
  switch (pattern) {
    case 0: return (x / cell) % 2 == 0;
    case 1: return (y / cell) % 2 == 0;
    default: return ((x / cell) + (y / cell)) % 2 == 0;
  }
}

}  // namespace

std::vector<SceneSample> generate(uint64_t seed, int count, int64_t h, int64_t w, int classes) {
  if (h < 8 || w < 8) throw DimensionError("generate: extents must be at least 8");
  if (classes < 2) throw DimensionError("generate: need at least 2 classes");
  if (count < 0) throw DimensionError("generate: negative count");

  std::vector<SceneSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int s = 0; s < count; ++s) {
    const uint64_t sample_seed = Rng::derive(seed, "scene-" + std::to_string(s));
    Rng rng(sample_seed);

    std::vector<double> img(static_cast<size_t>(3 * h * w));
    LabelMap lab;
    lab.n = 1;
    lab.h = h;
    lab.w = w;
    lab.v.assign(static_cast<size_t>(h * w), 0);

    // smooth background gradient per channel
    for (int64_t c = 0; c < 3; ++c) {
      const double base = rng.uniform(0.15, 0.45);
      const double gx = rng.uniform(-0.35, 0.35);
      const double gy = rng.uniform(-0.35, 0.35);
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          img[static_cast<size_t>((c * h + y) * w + x)] =
              clamp01(base + gx * static_cast<double>(x) / static_cast<double>(w) +
                      gy * static_cast<double>(y) / static_cast<double>(h));
    }

    // textured shapes; later shapes overwrite earlier ones
    const int64_t nshapes = 2 + rng.below(3);
    for (int64_t sh = 0; sh < nshapes; ++sh) {
      const int32_t cls = static_cast<int32_t>(1 + rng.below(classes - 1));
      const int pattern = (cls - 1) % 3;
      const bool disk = rng.coin(0.5);
      const int64_t min_half = std::max<int64_t>(2, h / 8);
      const int64_t half = min_half + rng.below(std::max<int64_t>(1, h / 8));
      const int64_t cy = half + rng.below(std::max<int64_t>(1, h - 2 * half));
      const int64_t cx = half + rng.below(std::max<int64_t>(1, w - 2 * half));
      const int64_t cell = 1 + rng.below(3);
      const double hi = rng.uniform(0.65, 0.95);
      const double lo = rng.uniform(0.05, 0.35);
      double tint[3];
      for (double& t : tint) t = rng.uniform(0.7, 1.0);

      for (int64_t y = cy - half; y <= cy + half; ++y)
        for (int64_t x = cx - half; x <= cx + half; ++x) {
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          const int64_t dy = y - cy, dx = x - cx;
          if (disk && dy * dy + dx * dx > half * half) continue;
          const double v = texture_on(pattern, x, y, cell) ? hi : lo;
          for (int64_t c = 0; c < 3; ++c)
            img[static_cast<size_t>((c * h + y) * w + x)] = clamp01(v * tint[c]);
          lab.v[static_cast<size_t>(y * w + x)] = cls;
        }
    }

    // pixel noise on top of everything
    for (auto& v : img) v = clamp01(v + rng.uniform(-0.05, 0.05));

    SceneSample sample;
    sample.image = Tensor::from_data({3, h, w}, std::move(img));
    sample.label = std::move(lab);
    sample.seed = sample_seed;
    out.push_back(std::move(sample));
  }
  return out;
}

Conv2dLayer Conv2dLayer::create(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad,
                                Rng& rng) {
  Conv2dLayer l;
  const double fan_in = static_cast<double>(cin * k * k);
  const double fan_out = static_cast<double>(cout * k * k);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  l.w = Tensor::uniform({cout, cin, k, k}, rng, -bound, bound);
  l.b = Tensor::zeros({cout});
  l.w.set_requires_grad(true);
  l.b.set_requires_grad(true);
  l.stride = stride;
  l.pad = pad;
  return l;
}

void Conv2dLayer::collect_params(std::vector<Tensor>& out) const {
  out.push_back(w);
  out.push_back(b);
}

SegNet SegNet::create(int64_t width, int64_t classes, uint64_t seed) {
  if (width < 1 || classes < 2) throw ConfigError("SegNet: bad width/classes");
  Rng rng(Rng::derive(seed, "segnet-init"));
  SegNet n;
  n.width = width;
  n.classes = classes;
  n.enc1 = Conv2dLayer::create(3, width, 3, 1, 1, rng);
  n.enc2 = Conv2dLayer::create(width, 2 * width, 3, 1, 1, rng);
  n.enc3 = Conv2dLayer::create(2 * width, 2 * width, 3, 1, 1, rng);
  n.dec1 = Conv2dLayer::create(2 * width, width, 3, 1, 1, rng);
  n.dec2 = Conv2dLayer::create(width, width, 3, 1, 1, rng);
  n.head = Conv2dLayer::create(width, classes, 1, 1, 0, rng);
  return n;
}

Tensor SegNet::backbone_to_tap_next(const Tensor& x) const {
  // downsampling is a nearest resize followed by a stride-1 conv so the
  // geometry works for any even extent
  Tensor h1 = relu(enc1(x));                                       // [N,w,H,W]
  Tensor h2 = relu(enc2(resize_nearest(h1, x.dim(2) / 2, x.dim(3) / 2)));  // [N,2w,H/2,W/2]
  Tensor h3 = relu(enc3(resize_nearest(h2, x.dim(2) / 4, x.dim(3) / 4)));  // [N,2w,H/4,W/4]
  Tensor u1 = resize_nearest(h3, h3.dim(2) * 2, h3.dim(3) * 2);    // H/2
  return relu(dec1(u1));                                           // [N,w,H/2,W/2]
}

Tensor SegNet::tap_from_next(const Tensor& tap_next) const {
  Tensor u2 = resize_nearest(tap_next, tap_next.dim(2) * 2, tap_next.dim(3) * 2);
  return relu(dec2(u2));  // [N,w,H,W]
}

Tensor SegNet::logits_from_tap(const Tensor& tap) const { return head(tap); }

SegNet::Taps SegNet::forward(const Tensor& x) const {
  Taps t;
  t.tap_next = backbone_to_tap_next(x);
  t.tap = tap_from_next(t.tap_next);
  t.logits = logits_from_tap(t.tap);
  return t;
}

std::vector<Tensor> SegNet::parameters() {
  std::vector<Tensor> out;
  for (const auto* l : {&enc1, &enc2, &enc3, &dec1, &dec2, &head}) l->collect_params(out);
  return out;
}

std::vector<std::pair<std::string, Tensor>> SegNet::named_parameters() {
  const char* names[] = {"enc1", "enc2", "enc3", "dec1", "dec2", "head"};
  const Conv2dLayer* layers[] = {&enc1, &enc2, &enc3, &dec1, &dec2, &head};
  std::vector<std::pair<std::string, Tensor>> out;
  for (int i = 0; i < 6; ++i) {
    out.emplace_back(std::string(names[i]) + ".w", layers[i]->w);
    out.emplace_back(std::string(names[i]) + ".b", layers[i]->b);
  }
  return out;
}

std::vector<std::vector<double>> SegNet::snapshot() const {
  std::vector<std::vector<double>> snap;
  for (const auto* l : {&enc1, &enc2, &enc3, &dec1, &dec2, &head}) {
    snap.push_back(l->w.values());
    snap.push_back(l->b.values());
  }
  return snap;
}

void SegNet::restore(const std::vector<std::vector<double>>& snap) {
  size_t i = 0;
  for (auto* l : {&enc1, &enc2, &enc3, &dec1, &dec2, &head}) {
    l->w.values() = snap.at(i++);
    l->b.values() = snap.at(i++);
    l->w.zero_grad();
    l->b.zero_grad();
  }
}

Checkpoint SegNet::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["kind"] = "segnet";
  ck.meta["width"] = width;
  ck.meta["classes"] = classes;
  SegNet* self = const_cast<SegNet*>(this);
  for (const auto& [name, t] : self->named_parameters()) ck.add(name, t);
  return ck;
}

SegNet SegNet::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "segnet")
    throw StructureError("checkpoint does not hold a segnet");
  SegNet n = SegNet::create(ck.meta.at("width").get<int64_t>(),
                            ck.meta.at("classes").get<int64_t>(), 0);
  for (auto& [name, t] : n.named_parameters()) {
    Tensor loaded = ck.get(name);
    if (loaded.shape() != t.shape())
      throw StructureError("checkpoint tensor '" + name + "' has unexpected shape");
    t.values() = loaded.values();
  }
  return n;
}

double miou(const LabelMap& pred, const LabelMap& truth, int classes) {
  if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w)
    throw DimensionError("miou: label map extents differ");
  for (int32_t v : pred.v)
    if (v < 0 || v >= classes) throw ValueError("miou: prediction label out of range");
  for (int32_t v : truth.v)
    if (v < 0 || v >= classes) throw ValueError("miou: truth label out of range");

  double acc = 0.0;
  int present = 0;
  for (int32_t c = 0; c < classes; ++c) {
    int64_t inter = 0, uni = 0;
    bool in_truth = false;
    for (size_t i = 0; i < truth.v.size(); ++i) {
      const bool p = pred.v[i] == c;
      const bool t = truth.v[i] == c;
      in_truth = in_truth || t;
      inter += (p && t) ? 1 : 0;
      uni += (p || t) ? 1 : 0;
    }
    if (!in_truth) continue;
    ++present;
    acc += static_cast<double>(inter) / static_cast<double>(uni);
  }
  return present == 0 ? 0.0 : acc / static_cast<double>(present);
}

LabelMap argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw DimensionError("argmax_labels: expects [N,K,H,W]");
  const int64_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  LabelMap out;
  out.n = N;
  out.h = H;
  out.w = W;
  out.v.assign(static_cast<size_t>(N * H * W), 0);
  const double* p = logits.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < H * W; ++i) {
      int32_t best = 0;
      double bv = p[(n * K) * H * W + i];
      for (int64_t k = 1; k < K; ++k) {
        const double v = p[(n * K + k) * H * W + i];
        if (v > bv) {  // ties keep the lowest class id
          bv = v;
          best = static_cast<int32_t>(k);
        }
      }
      out.v[static_cast<size_t>(n * H * W + i)] = best;
    }
  return out;
}

Tensor stack_images(const std::vector<SceneSample>& data, const std::vector<int64_t>& idx) {
  if (idx.empty()) throw DimensionError("stack_images: empty batch");
  const Tensor& first = data[static_cast<size_t>(idx[0])].image;
  const int64_t C = first.dim(0), H = first.dim(1), W = first.dim(2);
  std::vector<double> buf(static_cast<size_t>(static_cast<int64_t>(idx.size()) * C * H * W));
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& img = data[static_cast<size_t>(idx[b])].image.values();
    std::copy(img.begin(), img.end(), buf.begin() + static_cast<int64_t>(b) * C * H * W);
  }
  return Tensor::from_data({static_cast<int64_t>(idx.size()), C, H, W}, std::move(buf));
}

LabelMap stack_labels(const std::vector<SceneSample>& data, const std::vector<int64_t>& idx) {
  const LabelMap& first = data[static_cast<size_t>(idx[0])].label;
  LabelMap out;
  out.n = static_cast<int64_t>(idx.size());
  out.h = first.h;
  out.w = first.w;
  out.v.resize(static_cast<size_t>(out.n * out.h * out.w));
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& l = data[static_cast<size_t>(idx[b])].label.v;
    std::copy(l.begin(), l.end(), out.v.begin() + static_cast<int64_t>(b) * out.h * out.w);
  }
  return out;
}

double evaluate_miou(const SegNet& net, const std::vector<SceneSample>& data, int batch) {
  if (data.empty()) return 0.0;
  NoGradScope no_grad;
  double acc = 0.0;
  const int64_t n = static_cast<int64_t>(data.size());
  for (int64_t start = 0; start < n; start += batch) {
    std::vector<int64_t> idx;
    for (int64_t i = start; i < std::min(n, start + batch); ++i) idx.push_back(i);
    Tensor logits = net.forward(stack_images(data, idx)).logits;
    LabelMap pred = argmax_labels(logits);
    for (size_t b = 0; b < idx.size(); ++b) {
      LabelMap p1{1, pred.h, pred.w, {}}, t1{1, pred.h, pred.w, {}};
      const int64_t hw = pred.h * pred.w;
      p1.v.assign(pred.v.begin() + static_cast<int64_t>(b) * hw,
                  pred.v.begin() + static_cast<int64_t>(b + 1) * hw);
      t1.v = data[static_cast<size_t>(idx[b])].label.v;
      acc += miou(p1, t1, static_cast<int>(net.classes));
    }
  }
  return acc / static_cast<double>(n);
}

std::vector<EpochRow> train_segnet_ce(SegNet& net, const std::vector<SceneSample>& train,
                                      const std::vector<SceneSample>& val, int epochs, double lr,
                                      double weight_decay, int batch, uint64_t shuffle_seed) {
  if (train.empty()) throw ConfigError("train_segnet_ce: empty training split");
  auto params = net.parameters();
  Rng shuffle(shuffle_seed);
  std::vector<EpochRow> rows;
  const int64_t n = static_cast<int64_t>(train.size());

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle.below(i + 1))]);

    double loss_acc = 0.0;
    int64_t steps = 0;
    for (int64_t start = 0; start < n; start += batch) {
      std::vector<int64_t> idx(order.begin() + start,
                               order.begin() + std::min(n, start + batch));
      Tensor x = stack_images(train, idx);
      LabelMap y = stack_labels(train, idx);
      GradTape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = cross_entropy_logits(net.forward(x).logits, y);
        tape.backward(loss);
      }
      if (!std::isfinite(loss.item())) throw TrainingError("train_segnet_ce: loss diverged");
      sgd_step(params, lr, weight_decay);
      loss_acc += loss.item();
      ++steps;
    }
    EpochRow row;
    row.epoch = epoch;
    row.task_loss = loss_acc / static_cast<double>(steps);
    row.distill_loss = 0.0;
    row.val_miou = evaluate_miou(net, val);
    rows.push_back(row);
  }
  return rows;
}

std::vector<EpochRow> train_teacher(SegNet& teacher, const std::vector<SceneSample>& train,
                                    const std::vector<SceneSample>& val, int epochs, double lr,
                                    double weight_decay, int batch, uint64_t seed) {
  return train_segnet_ce(teacher, train, val, epochs, lr, weight_decay, batch,
                         Rng::derive(seed, "teacher-shuffle"));
}

void dump_dataset(const std::vector<SceneSample>& data, const std::string& dir,
                  const std::string& comment) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const int64_t h = s.label.h, w = s.label.w;
    std::vector<uint8_t> rgb(static_cast<size_t>(3 * h * w));
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t c = 0; c < 3; ++c)
          rgb[static_cast<size_t>((y * w + x) * 3 + c)] = static_cast<uint8_t>(
              std::clamp(s.image.values()[static_cast<size_t>((c * h + y) * w + x)] * 255.0, 0.0, 255.0));
    std::vector<uint8_t> gray(static_cast<size_t>(h * w));
    for (size_t p = 0; p < gray.size(); ++p)
      gray[p] = static_cast<uint8_t>(std::min<int64_t>(255, s.label.v[p] * 60));
    const auto base = std::filesystem::path(dir) / ("sample_" + std::to_string(i));
    write_ppm(base.string() + ".ppm", w, h, rgb, comment);
    write_pgm(base.string() + "_label.pgm", w, h, gray, comment);
  }
}

}  // namespace freekd
