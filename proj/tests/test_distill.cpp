#include <doctest.h>

#include <cmath>

#include "freekd/distill.hpp"
#include "oracles.hpp"

using namespace freekd;

namespace {

Transform haar_l(int level) { return Transform{TransformKind::dwt, "haar", level}; }

// single-band band sets sharing a label, for hand-value checks
BandSet one_band(const Tensor& t) {
  BandSet b;
  b.level = 1;
  b.pad = {t.dim(2), t.dim(3), t.dim(2), t.dim(3)};
  b.bands.emplace_back("HH1", t);
  return b;
}

}  // namespace

TEST_CASE("relational attention: zero features give uniform rows, C=1 gives [[1]]") {
  Tensor f = Tensor::zeros({2, 3, 4, 4});
  Tensor a = relational_attention(f, Tensor::zeros({2, 3, 2, 2}));
  CHECK(a.shape() == Shape{2, 3, 3});
  for (double v : a.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor f1 = Tensor::full({1, 1, 2, 2}, 0.7);
  Tensor a1 = relational_attention(f1, f1);
  CHECK(a1.shape() == Shape{1, 1, 1});
  CHECK(a1.item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("relational attention equals row-softmax of the channel Gram matrix when F_next = F") {
  Rng rng(3);
  const int64_t C = 4, H = 3, W = 5;
  Tensor f = oracle::rand_tensor(rng, {1, C, H, W});
  Tensor a = relational_attention(f, f);

  // dense oracle: G = X X^T over flattened spatial dims, then row softmax
  const double* x = f.data();
  std::vector<double> g(static_cast<size_t>(C * C), 0.0);
  for (int64_t i = 0; i < C; ++i)
    for (int64_t j = 0; j < C; ++j)
      for (int64_t p = 0; p < H * W; ++p)
        g[static_cast<size_t>(i * C + j)] += x[i * H * W + p] * x[j * H * W + p];
  for (int64_t i = 0; i < C; ++i) {
    double mx = g[static_cast<size_t>(i * C)];
    for (int64_t j = 1; j < C; ++j) mx = std::max(mx, g[static_cast<size_t>(i * C + j)]);
    double den = 0.0;
    for (int64_t j = 0; j < C; ++j) den += std::exp(g[static_cast<size_t>(i * C + j)] - mx);
    for (int64_t j = 0; j < C; ++j)
      CHECK(a.values()[static_cast<size_t>(i * C + j)] ==
            doctest::Approx(std::exp(g[static_cast<size_t>(i * C + j)] - mx) / den).epsilon(1e-10));
  }

  CHECK_THROWS_AS(relational_attention(f, Tensor::zeros({1, 2, 3, 5})), DimensionError);
}

TEST_CASE("gate: zero-initialized final layer emits 0.5 everywhere") {
  GateMLP mlp = GateMLP::create(4, 4, 11);
  for (auto& v : mlp.w2.values()) v = 0.0;
  for (auto& v : mlp.b2.values()) v = 0.0;
  Rng rng(13);
  Tensor a = softmax_lastdim(oracle::rand_tensor(rng, {2, 4, 4}));
  Tensor w = gate(a, mlp);
  CHECK(w.shape() == Shape{2, 4});
  for (double v : w.values()) CHECK(v == 0.5);
}

TEST_CASE("gate is row-wise: permuting attention rows permutes the gates") {
  Rng rng(17);
  GateMLP mlp = GateMLP::create(3, 2, 19);
  Tensor a = oracle::rand_tensor(rng, {1, 3, 3});
  Tensor w = gate(a, mlp);

  const int64_t perm[3] = {2, 0, 1};
  std::vector<double> pv(9);
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 3; ++c)
      pv[static_cast<size_t>(r * 3 + c)] = a.values()[static_cast<size_t>(perm[r] * 3 + c)];
  Tensor wp = gate(Tensor::from_data({1, 3, 3}, std::move(pv)), mlp);
  for (int64_t r = 0; r < 3; ++r)
    CHECK(wp.values()[static_cast<size_t>(r)] == w.values()[static_cast<size_t>(perm[r])]);
}

TEST_CASE("gate gradients match finite differences") {
  Rng rng(23);
  GateMLP mlp = GateMLP::create(4, 2, 29);
  Tensor f = oracle::rand_tensor(rng, {1, 4, 4, 4});
  Tensor fn = oracle::rand_tensor(rng, {1, 4, 2, 2});
  const double err = oracle::grad_check(mlp.parameters(), [&]() {
    return sum(mul(gate(relational_attention(f, fn), mlp),
                   gate(relational_attention(f, fn), mlp)));
  });
  CHECK(err <= 1e-4);
}

TEST_CASE("freekd_loss hand values") {
  // identical bands -> 0 regardless of masks/gates
  Rng rng(31);
  Tensor t = oracle::rand_tensor(rng, {1, 2, 2, 2});
  CHECK(freekd_loss(one_band(t), one_band(t), nullptr, Tensor(), BandSubset::all).item() == 0.0);

  // single band, single channel, a=[1], b=[0], mask=1 (via logits sum), omega=1 -> 1.0
  Tensor a = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor b = Tensor::from_data({1, 1, 1, 1}, {0.0});
  Tensor omega = Tensor::full({1, 1}, 1.0);
  CHECK(freekd_loss(one_band(a), one_band(b), nullptr, omega, BandSubset::all).item() == 1.0);

  // doubling omega doubles the loss
  Tensor t2 = oracle::rand_tensor(rng, {1, 2, 2, 2});
  Tensor s2 = oracle::rand_tensor(rng, {1, 2, 2, 2});
  Tensor g1 = oracle::rand_tensor(rng, {1, 2}, 0.1, 0.9);
  const double l1v = freekd_loss(one_band(t2), one_band(s2), nullptr, g1, BandSubset::all).item();
  const double l2v =
      freekd_loss(one_band(t2), one_band(s2), nullptr, scale(g1, 2.0), BandSubset::all).item();
  CHECK(l2v == doctest::Approx(2.0 * l1v).epsilon(1e-12));
}

TEST_CASE("freekd_loss is invariant to band ordering") {
  Rng rng(37);
  Tensor x = oracle::rand_tensor(rng, {1, 2, 8, 8});
  Tensor y = oracle::rand_tensor(rng, {1, 2, 8, 8});
  BandSet tb = dwt2d(x, Wavelet::haar(), 2);
  BandSet sb = dwt2d(y, Wavelet::haar(), 2);
  const double before = freekd_loss(tb, sb, nullptr, Tensor(), BandSubset::all).item();
  std::reverse(tb.bands.begin(), tb.bands.end());
  const double after = freekd_loss(tb, sb, nullptr, Tensor(), BandSubset::all).item();
  CHECK(before == after);
}

TEST_CASE("freekd_loss with masks/gates off matches the flat L1 oracle") {
  Rng rng(41);
  Tensor x = oracle::rand_tensor(rng, {2, 3, 12, 12});
  Tensor y = oracle::rand_tensor(rng, {2, 3, 12, 12});
  BandSet tb = dwt2d(x, Wavelet::haar(), 2);
  BandSet sb = dwt2d(y, Wavelet::haar(), 2);
  const double got = freekd_loss(tb, sb, nullptr, Tensor(), BandSubset::all).item();

  double want = 0.0;
  for (size_t k = 0; k < tb.bands.size(); ++k) {
    const auto& a = tb.bands[k].second.values();
    const auto& b = sb.band(tb.bands[k].first).values();
    double l1 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) l1 += std::fabs(a[i] - b[i]);
    want += l1 / static_cast<double>(a.size());
  }
  want /= static_cast<double>(tb.bands.size());
  CHECK(std::fabs(got - want) <= 1e-10);
}

TEST_CASE("band subsets select the right bands") {
  Rng rng(43);
  Tensor x = oracle::rand_tensor(rng, {1, 1, 8, 8});
  Tensor y = oracle::rand_tensor(rng, {1, 1, 8, 8});
  BandSet tb = dwt2d(x, Wavelet::haar(), 2);
  BandSet sb = dwt2d(y, Wavelet::haar(), 2);

  // low = only LL2; high = the six detail bands; all = weighted mix of both
  double ll = 0.0;
  {
    const auto& a = tb.band("LL2").values();
    const auto& b = sb.band("LL2").values();
    for (size_t i = 0; i < a.size(); ++i) ll += std::fabs(a[i] - b[i]);
    ll /= static_cast<double>(a.size());
  }
  CHECK(freekd_loss(tb, sb, nullptr, Tensor(), BandSubset::low).item() ==
        doctest::Approx(ll).epsilon(1e-12));

  const double high = freekd_loss(tb, sb, nullptr, Tensor(), BandSubset::high).item();
  const double all = freekd_loss(tb, sb, nullptr, Tensor(), BandSubset::all).item();
  CHECK(all == doctest::Approx((ll + 6.0 * high) / 7.0).epsilon(1e-9));
}

TEST_CASE("stage-2 detachment: distill loss has zero gradient w.r.t. prompt params") {
  SegNet teacher = SegNet::create(4, 3, 501);
  auto data = generate(502, 2, 8, 8, 3);
  Tensor x = stack_images(data, {0, 1});
  const Transform tf = haar_l(1);

  FrequencyPrompt prompt;
  {
    NoGradScope ng;
    BandSet probe = tf.forward(teacher.tap_from_next(teacher.backbone_to_tap_next(x)));
    prompt = FrequencyPrompt::zeros_for(probe, 2);
  }
  Rng rng(47);
  for (auto& v : prompt.params.values()) v = rng.uniform(-0.5, 0.5);
  prompt.params.set_requires_grad(true);
  prompt.params.zero_grad();

  SegNet student = SegNet::create(2, 3, 503);
  Projection phi = Projection::create(2, 4, 504);

  GradTape tape;
  {
    TapeScope scope(tape);
    BandSet t_bands;
    std::optional<MaskSet> masks;
    {
      NoGradScope ng;
      Tensor tap = teacher.tap_from_next(teacher.backbone_to_tap_next(x));
      t_bands = tf.forward(tap);
      masks = compute_masks(t_bands, prompt);
    }
    SegNet::Taps taps = student.forward(x);
    BandSet s_bands = tf.forward(phi(taps.tap));
    Tensor loss = freekd_loss(t_bands, s_bands, &*masks, Tensor(), BandSubset::all);
    CHECK(loss.item() > 0.0);
    tape.backward(loss);
  }
  CHECK_FALSE(prompt.params.has_grad());  // never touched by the tape

  // student received gradients
  bool any = false;
  for (auto& p : student.parameters())
    if (p.has_grad())
      for (double g : p.grad())
        if (g != 0.0) any = true;
  CHECK(any);
}

TEST_CASE("freekd_loss student-side gradients match finite differences") {
  SegNet teacher = SegNet::create(4, 3, 511);
  SegNet student = SegNet::create(2, 3, 512);
  Projection phi = Projection::create(2, 4, 513);
  GateMLP gate_t = GateMLP::create(4, 2, 514);
  GateMLP gate_s = GateMLP::create(4, 2, 515);
  // zero-init biases put relu pre-activations exactly on the kink, where
  // central differences and subgradients legitimately disagree; nudge all
  // biases off it for the check
  Rng brng(517);
  for (auto& p : student.parameters())
    if (p.rank() == 1)
      for (auto& v : p.values()) v = brng.uniform(0.01, 0.1);
  for (auto& v : phi.conv.b.values()) v = brng.uniform(0.01, 0.1);
  auto data = generate(516, 2, 8, 8, 3);
  Tensor x = stack_images(data, {0, 1});
  const Transform tf = haar_l(1);

  BandSet t_bands;
  Tensor attn_t;
  {
    NoGradScope ng;
    Tensor tap_next = teacher.backbone_to_tap_next(x);
    Tensor tap = teacher.tap_from_next(tap_next);
    t_bands = tf.forward(tap);
    attn_t = relational_attention(tap, tap_next);
  }

  std::vector<Tensor> params = student.parameters();
  for (auto& p : phi.parameters()) params.push_back(p);
  for (auto& p : gate_s.parameters()) params.push_back(p);
  for (auto& p : gate_t.parameters()) params.push_back(p);

  const double err = oracle::grad_check(params, [&]() {
    SegNet::Taps taps = student.forward(x);
    Tensor s_tap = phi(taps.tap);
    Tensor s_next = phi(taps.tap_next);
    BandSet s_bands = tf.forward(s_tap);
    Tensor omega = mul(gate(attn_t, gate_t), gate(relational_attention(s_tap, s_next), gate_s));
    return freekd_loss(t_bands, s_bands, nullptr, omega, BandSubset::all);
  });
  CHECK(err <= 1e-4);
}

TEST_CASE("total_loss combinations") {
  Tensor task = Tensor::from_data({1}, {2.0});
  Tensor kd = Tensor::from_data({1}, {0.3});
  CHECK(total_loss(task, kd, 0.0).item() == 2.0);
  CHECK(total_loss(task, kd, 10.0).item() == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(total_loss(task, kd, 5.0).item() == doctest::Approx(3.5).epsilon(1e-15));
}

TEST_CASE("self-distillation fixpoint: identical nets and identity projection give zero loss") {
  SegNet teacher = SegNet::create(4, 3, 521);
  SegNet student = SegNet::create(4, 3, 522);
  student.restore(teacher.snapshot());
  Projection phi = Projection::identity(4);
  auto data = generate(523, 2, 8, 8, 3);
  Tensor x = stack_images(data, {0, 1});
  const Transform tf = haar_l(1);

  NoGradScope ng;
  Tensor t_tap = teacher.tap_from_next(teacher.backbone_to_tap_next(x));
  Tensor s_tap = phi(student.tap_from_next(student.backbone_to_tap_next(x)));
  BandSet tb = tf.forward(t_tap);
  BandSet sb = tf.forward(s_tap);
  CHECK(freekd_loss(tb, sb, nullptr, Tensor(), BandSubset::all).item() == 0.0);
}

TEST_CASE("mu=0 distill run equals the plain baseline trainer bit-exactly") {
  SegNet teacher = SegNet::create(4, 3, 531);
  auto train = generate(532, 8, 16, 16, 3);
  auto val = generate(533, 4, 16, 16, 3);

  const uint64_t seed = 534;
  SegNet s1 = SegNet::create(2, 3, Rng::derive(seed, "student-init"));
  SegNet s2 = SegNet::create(2, 3, Rng::derive(seed, "student-init"));

  DistillConfig cfg;
  cfg.mu = 0.0;
  cfg.epochs = 2;
  cfg.lr = 0.02;
  cfg.weight_decay = 1e-4;
  cfg.batch = 4;
  cfg.transform = haar_l(2);
  cfg.mask_mode = false;

  auto kd_rows = distill_train(teacher, s1, nullptr, train, val, cfg, seed).rows;
  auto base_rows = train_segnet_ce(s2, train, val, cfg.epochs, cfg.lr, cfg.weight_decay,
                                   cfg.batch, Rng::derive(seed, "distill-shuffle"));

  REQUIRE(kd_rows.size() == base_rows.size());
  for (size_t i = 0; i < kd_rows.size(); ++i) {
    CHECK(kd_rows[i].task_loss == base_rows[i].task_loss);
    CHECK(kd_rows[i].val_miou == base_rows[i].val_miou);
  }
  CHECK(s1.snapshot() == s2.snapshot());
}

TEST_CASE("mask_mode=on without a trained prompt is a config error") {
  SegNet teacher = SegNet::create(4, 3, 541);
  SegNet student = SegNet::create(2, 3, 542);
  auto data = generate(543, 4, 16, 16, 3);
  DistillConfig cfg;
  cfg.mask_mode = true;
  cfg.transform = haar_l(1);
  CHECK_THROWS_AS(distill_train(teacher, student, nullptr, data, data, cfg, 544), ConfigError);

  FrequencyPrompt untrained = FrequencyPrompt::zeros(4, 2, 4);
  CHECK_THROWS_AS(distill_train(teacher, student, &untrained, data, data, cfg, 544), ConfigError);
}

TEST_CASE("distill_train with masks and dft transform runs end to end") {
  SegNet teacher = SegNet::create(4, 3, 551);
  auto train = generate(552, 6, 16, 16, 3);
  auto val = generate(553, 3, 16, 16, 3);

  PromptTrainConfig pcfg;
  pcfg.epochs = 1;
  pcfg.lr = 0.005;
  pcfg.batch = 3;
  const Transform tf{TransformKind::dft, "haar", 1};
  auto pout = train_prompt(teacher, train, tf, pcfg, 554);

  SegNet student = SegNet::create(2, 3, 555);
  DistillConfig cfg;
  cfg.mu = 1.0;
  cfg.epochs = 1;
  cfg.lr = 0.01;
  cfg.batch = 3;
  cfg.transform = tf;
  cfg.mask_mode = true;
  auto out = distill_train(teacher, student, &pout.prompt, train, val, cfg, 556);
  CHECK(out.rows.size() == 1);
  CHECK(out.rows[0].distill_loss > 0.0);
}
