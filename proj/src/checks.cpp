#include "freekd/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "freekd/distill.hpp"

// The oracle suites behind the `check` subcommand and the acceptance gate.
// Everything here verifies the library against independent references:
// finite differences, direct summation, hand identities. Sampling for the
// kinked ops (abs, min/max, L1) keeps operands away from ties so central
// differences see a one-branch function.

namespace freekd {

namespace {

Tensor rand_t(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(s), rng, lo, hi);
}

// Uniform values whose magnitude stays in [margin, span]; sign random.
Tensor rand_away_from_zero(Rng& rng, Shape s, double margin, double span) {
  auto n = numel_of(s);
  std::vector<double> d(static_cast<size_t>(n));
  for (auto& v : d) {
    const double mag = rng.uniform(margin, span);
    v = rng.coin(0.5) ? mag : -mag;
  }
  return Tensor::from_data(std::move(s), std::move(d));
}

double fd_grad_check(std::vector<Tensor> params, const std::function<Tensor()>& forward,
                     double h = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor loss = forward();
    tape.backward(loss);
  }
  double worst = 0.0;
  NoGradScope no_grad;
  for (auto& p : params) {
    const auto& g = p.grad();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double fp = forward().item();
      p.data()[i] = orig - h;
      const double fm = forward().item();
      p.data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double got = g[static_cast<size_t>(i)];
      const double denom = std::max({std::fabs(fd), std::fabs(got), 1e-6});
      worst = std::max(worst, std::fabs(fd - got) / denom);
    }
  }
  return worst;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

std::vector<CheckResult> reconstruction_checks(uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(Rng::derive(seed, "reconstruction"));

  double worst_pr = 0.0, worst_energy = 0.0, worst_dct = 0.0, worst_dft = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t h = 8 + rng.below(57);  // 8..64
    const int64_t w = 8 + rng.below(57);
    const int level = 1 + static_cast<int>(rng.below(3));
    const Wavelet& wav = rng.coin(0.5) ? Wavelet::haar() : Wavelet::db2();
    Tensor x = rand_t(rng, {1, 2, h, w});

    BandSet b = dwt2d(x, wav, level);
    Tensor r = idwt2d(b, wav);
    double pr = 0.0, ex = 0.0, eb = 0.0;
    for (size_t i = 0; i < x.values().size(); ++i) {
      pr = std::max(pr, std::fabs(x.values()[i] - r.values()[i]));
      ex += x.values()[i] * x.values()[i];
    }
    for (const auto& [label, t] : b.bands)
      for (double v : t.values()) eb += v * v;
    worst_pr = std::max(worst_pr, pr);
    worst_energy = std::max(worst_energy, std::fabs(eb - ex) / ex);

    // the alternative transforms share the invariants
    if (trial % 10 == 0) {
      Tensor rd = idct2d(dct2d(x, level));
      Tensor rf = idft2d(dft2d(x, level));
      for (size_t i = 0; i < x.values().size(); ++i) {
        worst_dct = std::max(worst_dct, std::fabs(x.values()[i] - rd.values()[i]));
        worst_dft = std::max(worst_dft, std::fabs(x.values()[i] - rf.values()[i]));
      }
    }
  }

  out.push_back({"dwt perfect reconstruction <= 1e-8 (100 trials, shapes 8..64, levels 1..3)",
                 worst_pr <= 1e-8, "max |x - idwt(dwt(x))| = " + fmt(worst_pr)});
  out.push_back({"dwt energy conservation <= 1e-9 relative",
                 worst_energy <= 1e-9, "max relative energy error = " + fmt(worst_energy)});
  out.push_back({"dct round-trip <= 1e-8", worst_dct <= 1e-8, "max error = " + fmt(worst_dct)});
  out.push_back({"dft round-trip <= 1e-8", worst_dft <= 1e-8, "max error = " + fmt(worst_dft)});
  return out;
}

std::vector<CheckResult> gradient_checks(uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(Rng::derive(seed, "gradients"));
  constexpr int kTrials = 20;
  constexpr double kTol = 1e-4;

  auto run = [&](const std::string& name, const std::function<double(Rng&)>& one_trial) {
    double worst = 0.0;
    for (int t = 0; t < kTrials; ++t) worst = std::max(worst, one_trial(rng));
    out.push_back({"grad: " + name, worst <= kTol, "max relative error = " + fmt(worst)});
  };

  run("add/sub/mul/div", [](Rng& r) {
    Tensor a = rand_t(r, {3, 4}, 0.3, 1.5);
    Tensor b = rand_t(r, {1, 4}, 0.3, 1.5);
    return fd_grad_check({a, b}, [&]() { return sum(div(mul(add(a, b), sub(a, b)), b)); });
  });
  run("minimum/maximum", [](Rng& r) {
    // keep operands apart so no tie sits inside the probe interval
    Tensor a = rand_t(r, {12}, 0.0, 1.0);
    Tensor b = add_scalar(rand_t(r, {12}, 0.0, 1.0), 1.5);
    if (r.coin(0.5)) std::swap(a, b);
    return fd_grad_check({a, b}, [&]() { return sum(add(minimum(a, b), maximum(a, b))); });
  });
  run("sigmoid/relu/abs/scale", [](Rng& r) {
    Tensor a = rand_away_from_zero(r, {3, 5}, 0.05, 2.0);
    return fd_grad_check(
        {a}, [&]() { return sum(add(sigmoid(a), add(relu(a), add(abs(a), scale(a, -1.3))))); });
  });
  run("mul_spatial/mul_channel", [](Rng& r) {
    Tensor x = rand_t(r, {2, 3, 2, 2});
    Tensor m = rand_t(r, {2, 1, 2, 2}, 0.1, 0.9);
    Tensor g = rand_t(r, {2, 3}, 0.1, 0.9);
    return fd_grad_check({x, m, g},
                         [&]() { return sum(mul_channel(mul_spatial(mul(x, x), m), g)); });
  });
  run("matmul", [](Rng& r) {
    Tensor a = rand_t(r, {4, 5});
    Tensor b = rand_t(r, {5, 3});
    return fd_grad_check({a, b}, [&]() { return sum(mul(matmul(a, b), matmul(a, b))); });
  });
  run("bmm", [](Rng& r) {
    Tensor a = rand_t(r, {1, 2, 3});
    Tensor b = rand_t(r, {3, 3, 2});
    return fd_grad_check({a, b}, [&]() { return sum(mul(bmm(a, b), bmm(a, b))); });
  });
  run("softmax_lastdim", [](Rng& r) {
    Tensor x = rand_t(r, {3, 5});
    Tensor w = rand_t(r, {3, 5});
    return fd_grad_check({x}, [&]() { return sum(mul(softmax_lastdim(x), w)); });
  });
  run("conv2d", [](Rng& r) {
    Tensor x = rand_t(r, {1, 2, 5, 5});
    Tensor w = rand_t(r, {2, 2, 3, 3});
    Tensor b = rand_t(r, {2});
    Tensor tgt = rand_t(r, {1, 2, 5, 5});
    return fd_grad_check({x, w, b}, [&]() {
      Tensor y = conv2d(x, w, b, 1, 1);
      return sum(mul(sub(y, tgt), sub(y, tgt)));
    });
  });
  run("reductions (sum/mean/sum_axis)", [](Rng& r) {
    Tensor x = rand_t(r, {2, 3, 4});
    return fd_grad_check(
        {x}, [&]() { return add(mean(mul(x, x)), sum(mul(sum_axis(x, 1), sum_axis(x, 1)))); });
  });
  run("l1_distance", [](Rng& r) {
    Tensor a = rand_t(r, {10});
    Tensor b = add(a, rand_away_from_zero(r, {10}, 0.1, 0.8));
    return fd_grad_check({a, b}, [&]() { return l1_distance(a, b); });
  });
  run("structural (reshape/narrow/concat/resize)", [](Rng& r) {
    Tensor x = rand_t(r, {1, 2, 4, 4});
    return fd_grad_check({x}, [&]() {
      Tensor up = resize_nearest(x, 8, 8);
      Tensor down = resize_nearest(up, 2, 2);
      Tensor c = concat(narrow(down, 1, 0, 1), narrow(down, 1, 1, 1), 1);
      return sum(mul(reshape(c, {2, 4}), reshape(c, {2, 4})));
    });
  });
  run("cross_entropy_logits", [](Rng& r) {
    Tensor l = rand_t(r, {2, 3, 2, 2});
    LabelMap y{2, 2, 2, {}};
    for (int i = 0; i < 8; ++i) y.v.push_back(static_cast<int32_t>(r.below(3)));
    return fd_grad_check({l}, [&]() { return cross_entropy_logits(l, y); });
  });
  run("dwt2d adjoint", [](Rng& r) {
    Tensor x = rand_t(r, {1, 1, 6, 6});
    const Wavelet& w = r.coin(0.5) ? Wavelet::haar() : Wavelet::db2();
    return fd_grad_check({x}, [&]() {
      BandSet b = dwt2d(x, w, 2);
      Tensor acc;
      for (const auto& [label, t] : b.bands) {
        Tensor term = sum(mul(t, t));
        acc = acc.defined() ? add(acc, term) : term;
      }
      return acc;
    });
  });
  run("idwt2d adjoint", [](Rng& r) {
    Tensor x = rand_t(r, {1, 1, 8, 8});
    Tensor wgt = rand_t(r, {1, 1, 8, 8});
    const Wavelet& w = r.coin(0.5) ? Wavelet::haar() : Wavelet::db2();
    return fd_grad_check({x}, [&]() { return sum(mul(idwt2d(dwt2d(x, w, 1), w), wgt)); });
  });
  run("dct2d/idct2d adjoint", [](Rng& r) {
    Tensor x = rand_t(r, {1, 1, 4, 4});
    return fd_grad_check({x}, [&]() {
      BandSet b = dct2d(x, 1);
      return add(sum(mul(b.band("HH1"), b.band("HH1"))), sum(mul(idct2d(b), x)));
    });
  });
  run("dft2d/idft2d adjoint", [](Rng& r) {
    Tensor x = rand_t(r, {1, 1, 4, 4});
    return fd_grad_check({x}, [&]() {
      BandSet b = dft2d(x, 1);
      return add(sum(mul(b.band("LL1"), b.band("LL1"))), sum(mul(idft2d(b), x)));
    });
  });
  run("soft_jaccard", [](Rng& r) {
    Tensor m = rand_t(r, {12}, 0.1, 0.45);
    Tensor n = rand_t(r, {12}, 0.55, 0.9);  // no ties between operands
    return fd_grad_check({m, n}, [&]() { return soft_jaccard(m, n); });
  });
  run("dissimilarity_loss", [](Rng& r) {
    Tensor logits = rand_t(r, {2, 2, 6}, -2.0, 2.0);
    return fd_grad_check({logits}, [&]() {
      MaskSet ms;
      ms.logits.emplace_back("HH1", logits);
      return dissimilarity_loss(ms);
    });
  });
  run("freekd_loss (masks and gates)", [](Rng& r) {
    Tensor a = rand_t(r, {1, 2, 4, 4});
    Tensor b = add(a, rand_away_from_zero(r, {1, 2, 4, 4}, 0.1, 0.6));
    Tensor logits = rand_t(r, {1, 2, 16}, -1.5, 1.5);
    Tensor omega = rand_t(r, {1, 2}, 0.2, 0.8);
    return fd_grad_check({b, logits, omega}, [&]() {
      BandSet tb, sb;
      tb.level = sb.level = 1;
      tb.bands.emplace_back("HH1", a);
      sb.bands.emplace_back("HH1", b);
      MaskSet ms;
      ms.logits.emplace_back("HH1", logits);
      return freekd_loss(tb, sb, &ms, omega, BandSubset::all);
    });
  });
  run("gate / relational_attention", [](Rng& r) {
    GateMLP mlp = GateMLP::create(3, 2, r.next_u64());
    Tensor f = rand_t(r, {1, 3, 4, 4});
    Tensor fn = rand_t(r, {1, 3, 2, 2});
    std::vector<Tensor> params = mlp.parameters();
    params.push_back(f);
    params.push_back(fn);
    return fd_grad_check(params, [&]() {
      Tensor w = gate(relational_attention(f, fn), mlp);
      return sum(mul(w, w));
    });
  });
  run("masked_reconstruct (prompt path)", [](Rng& r) {
    Tensor x = rand_t(r, {1, 2, 4, 4});
    Tensor params = rand_t(r, {4, 2, 2}, -0.5, 0.5);
    Tensor wgt = rand_t(r, {1, 2, 4, 4});
    return fd_grad_check({params, x}, [&]() {
      FrequencyPrompt p;
      p.params = params;
      BandSet b = dwt2d(x, Wavelet::haar(), 1);
      return sum(mul(masked_reconstruct(b, p, Transform{TransformKind::dwt, "haar", 1}), wgt));
    });
  });
  return out;
}

std::vector<CheckResult> loss_invariant_checks(uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(Rng::derive(seed, "loss-invariants"));

  {  // dissimilarity bounds and pinned values
    bool bounds_ok = true;
    double worst_lo = 1.0, worst_hi = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const int64_t T = 1 + rng.below(4);
      MaskSet ms;
      ms.logits.emplace_back("HH1", rand_t(rng, {2, T, 8}, -4.0, 4.0));
      const double v = dissimilarity_loss(ms).item();
      bounds_ok = bounds_ok && v >= 1.0 / static_cast<double>(T) - 1e-12 && v <= 1.0 + 1e-12;
      worst_lo = std::min(worst_lo, v);
      worst_hi = std::max(worst_hi, v);
    }
    out.push_back({"dissimilarity_loss in [1/T, 1] (50 random mask sets)", bounds_ok,
                   "observed range [" + fmt(worst_lo) + ", " + fmt(worst_hi) + "]"});

    MaskSet same;
    Tensor l = rand_t(rng, {1, 1, 6});
    same.logits.emplace_back("HH1", concat(l, l, 1));
    const double ident = dissimilarity_loss(same).item();
    out.push_back({"identical masks give dissimilarity 1.0 +/- 1e-9",
                   std::fabs(ident - 1.0) <= 1e-9, "value = " + fmt(ident)});

    MaskSet disjoint;
    disjoint.logits.emplace_back(
        "HH1", Tensor::from_data({1, 2, 2}, {60.0, -60.0, -60.0, 60.0}));
    const double dj = dissimilarity_loss(disjoint).item();
    out.push_back({"T=2 disjoint masks give dissimilarity 0.5 +/- 1e-6",
                   std::fabs(dj - 0.5) <= 1e-6, "value = " + fmt(dj)});
  }

  {  // freekd loss identities
    Tensor x = rand_t(rng, {1, 3, 8, 8});
    BandSet tb = dwt2d(x, Wavelet::haar(), 2);
    const double zero = freekd_loss(tb, tb, nullptr, Tensor(), BandSubset::all).item();
    out.push_back({"freekd_loss = 0 when phi(F_s) = F_t", zero == 0.0, "value = " + fmt(zero)});

    Tensor y = rand_t(rng, {1, 3, 8, 8});
    BandSet sb = dwt2d(y, Wavelet::haar(), 2);
    const double got = freekd_loss(tb, sb, nullptr, Tensor(), BandSubset::all).item();
    double want = 0.0;
    for (size_t k = 0; k < tb.bands.size(); ++k) {
      const auto& a = tb.bands[k].second.values();
      const auto& b = sb.bands[k].second.values();
      double l1 = 0.0;
      for (size_t i = 0; i < a.size(); ++i) l1 += std::fabs(a[i] - b[i]);
      want += l1 / static_cast<double>(a.size());
    }
    want /= static_cast<double>(tb.bands.size());
    out.push_back({"mask/gate-free freekd_loss matches the flat-L1 oracle <= 1e-10",
                   std::fabs(got - want) <= 1e-10, "difference = " + fmt(std::fabs(got - want))});
  }

  {  // stage-2 detachment (criterion 4)
    SegNet teacher = SegNet::create(4, 3, Rng::derive(seed, "det-teacher"));
    SegNet student = SegNet::create(2, 3, Rng::derive(seed, "det-student"));
    Projection phi = Projection::create(2, 4, Rng::derive(seed, "det-phi"));
    auto data = generate(Rng::derive(seed, "det-data"), 2, 8, 8, 3);
    Tensor x = stack_images(data, {0, 1});
    const Transform tf{TransformKind::dwt, "haar", 1};

    FrequencyPrompt prompt;
    {
      NoGradScope ng;
      prompt = FrequencyPrompt::zeros_for(
          tf.forward(teacher.tap_from_next(teacher.backbone_to_tap_next(x))), 2);
    }
    for (auto& v : prompt.params.values()) v = rng.uniform(-0.5, 0.5);
    prompt.params.set_requires_grad(true);
    prompt.params.zero_grad();

    GradTape tape;
    {
      TapeScope scope(tape);
      BandSet t_bands;
      MaskSet masks;
      {
        NoGradScope ng;
        t_bands = tf.forward(teacher.tap_from_next(teacher.backbone_to_tap_next(x)));
        masks = compute_masks(t_bands, prompt);
      }
      BandSet s_bands = tf.forward(phi(student.forward(x).tap));
      tape.backward(freekd_loss(t_bands, s_bands, &masks, Tensor(), BandSubset::all));
    }
    double prompt_grad_linf = 0.0;
    if (prompt.params.has_grad())
      for (double g : prompt.params.grad()) prompt_grad_linf = std::max(prompt_grad_linf, std::fabs(g));
    bool student_has_grad = false;
    for (auto& p : student.parameters())
      if (p.has_grad()) student_has_grad = true;
    out.push_back({"stage-2 masks detached: d(loss)/d(prompt) is identically zero",
                   prompt_grad_linf == 0.0 && student_has_grad,
                   "prompt grad Linf = " + fmt(prompt_grad_linf)});
  }

  return out;
}

std::vector<CheckResult> run_all_checks(uint64_t seed) {
  std::vector<CheckResult> all;
  for (auto& r : reconstruction_checks(seed)) all.push_back(std::move(r));
  for (auto& r : gradient_checks(seed)) all.push_back(std::move(r));
  for (auto& r : loss_invariant_checks(seed)) all.push_back(std::move(r));
  return all;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace freekd
