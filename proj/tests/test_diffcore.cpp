#include <doctest.h>

#include <cmath>

#include "freekd/diffcore.hpp"
#include "oracles.hpp"

using namespace freekd;

TEST_CASE("matmul identity and zero cases") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  Tensor r = matmul(eye, m);
  CHECK(r.values() == std::vector<double>{3, 4, 5, 6});

  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor z = Tensor::from_data({2, 1}, {0, 0});
  CHECK(matmul(a, z).item() == 0.0);
}

TEST_CASE("matmul forward matches naive triple loop, gradient matches finite differences") {
  Rng rng(11);
  Tensor a = oracle::rand_tensor(rng, {4, 5});
  Tensor b = oracle::rand_tensor(rng, {5, 3});
  Tensor c = matmul(a, b);
  auto ref = oracle::naive_matmul(a.values(), b.values(), 4, 5, 3);
  CHECK(oracle::max_abs_diff(c.values(), ref) < 1e-12);

  const double err = oracle::grad_check({a, b}, [&]() { return sum(mul(matmul(a, b), matmul(a, b))); });
  CHECK(err < 1e-6);
}

TEST_CASE("matmul shape mismatch") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(Tensor::zeros({1})).item() == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(3);
  Tensor x = oracle::rand_tensor(rng, {2, 3});
  Tensor ones = Tensor::full({2, 3}, 1.0);
  CHECK(mul(x, ones).values() == x.values());

  // abs subgradient: +1 at 2, -1 at -2, 0 at 0
  Tensor v = Tensor::from_data({3}, {2.0, -2.0, 0.0});
  v.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(abs(v)));
  }
  CHECK(v.grad() == std::vector<double>{1.0, -1.0, 0.0});
}

TEST_CASE("broadcast over leading-1 extents only") {
  Tensor big = Tensor::full({4, 3}, 2.0);
  Tensor row = Tensor::from_data({1, 3}, {1, 2, 3});
  Tensor r = add(big, row);
  CHECK(r.values()[0] == 3.0);
  CHECK(r.values()[5] == 5.0);

  Tensor bad = Tensor::zeros({4, 1});
  CHECK_THROWS_AS(add(big, bad), DimensionError);

  // broadcast gradient sums over the broadcast block
  row.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(add(big, row)));
  }
  CHECK(row.grad() == std::vector<double>{4.0, 4.0, 4.0});
}

TEST_CASE("elementwise gradient spot checks vs finite differences") {
  Rng rng(17);
  Tensor a = oracle::rand_tensor(rng, {3, 4}, 0.2, 1.5);
  Tensor b = oracle::rand_tensor(rng, {3, 4}, 0.2, 1.5);
  CHECK(oracle::grad_check({a, b}, [&]() { return sum(div(a, b)); }) < 1e-7);
  CHECK(oracle::grad_check({a, b}, [&]() { return sum(minimum(a, b)); }) < 1e-7);
  CHECK(oracle::grad_check({a, b}, [&]() { return sum(maximum(a, b)); }) < 1e-7);
  CHECK(oracle::grad_check({a}, [&]() { return sum(sigmoid(a)); }) < 1e-7);
  CHECK(oracle::grad_check({a}, [&]() { return mean(relu(sub(a, b))); }) < 1e-6);
  CHECK(oracle::grad_check({a}, [&]() { return sum(scale(a, -2.5)); }) < 1e-7);
}

TEST_CASE("softmax_lastdim") {
  Tensor u = softmax_lastdim(Tensor::zeros({3}));
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor s = softmax_lastdim(Tensor::from_data({2}, {1000.0, 0.0}));
  CHECK(s.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.values()[1] < 1e-300);
  for (double v : s.values()) CHECK(std::isfinite(v));

  Rng rng(5);
  Tensor x = oracle::rand_tensor(rng, {2, 6});
  Tensor y = softmax_lastdim(x);
  for (int64_t r = 0; r < 2; ++r) {
    double acc = 0.0;
    for (int64_t j = 0; j < 6; ++j) acc += y.values()[static_cast<size_t>(r * 6 + j)];
    CHECK(std::fabs(acc - 1.0) <= 1e-9);
  }
  Tensor w = oracle::rand_tensor(rng, {2, 6});
  const double err =
      oracle::grad_check({x}, [&]() { return sum(mul(softmax_lastdim(x), w)); });
  CHECK(err < 1e-6);
}

TEST_CASE("conv2d identity and zero kernels") {
  Rng rng(7);
  Tensor x = oracle::rand_tensor(rng, {1, 1, 4, 4});
  Tensor wid = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor y = conv2d(x, wid, Tensor(), 1, 0);
  CHECK(y.values() == x.values());

  Tensor wz = Tensor::zeros({2, 1, 3, 3});
  Tensor z = conv2d(x, wz, Tensor(), 1, 1);
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d forward matches naive loop; gradients match finite differences") {
  Rng rng(23);
  Tensor x = oracle::rand_tensor(rng, {1, 2, 6, 6});
  Tensor w = oracle::rand_tensor(rng, {3, 2, 3, 3});
  Tensor b = oracle::rand_tensor(rng, {3});
  Tensor y = conv2d(x, w, b, 1, 1);
  oracle::ConvSpec s{1, 2, 6, 6, 3, 3, 1, 1};
  auto ref = oracle::naive_conv2d(x.values(), w.values(), &b.values(), s);
  CHECK(oracle::max_abs_diff(y.values(), ref) < 1e-12);

  Tensor target = oracle::rand_tensor(rng, {1, 3, 6, 6});
  const double err = oracle::grad_check(
      {x, w, b}, [&]() { return l1_distance(conv2d(x, w, b, 1, 1), target); });
  CHECK(err < 1e-5);

  // strided case
  Tensor x2 = oracle::rand_tensor(rng, {1, 2, 7, 7});
  Tensor y2 = conv2d(x2, w, Tensor(), 2, 1);
  CHECK(y2.shape() == Shape{1, 3, 4, 4});
  oracle::ConvSpec s2{1, 2, 7, 7, 3, 3, 2, 1};
  auto ref2 = oracle::naive_conv2d(x2.values(), w.values(), nullptr, s2);
  CHECK(oracle::max_abs_diff(y2.values(), ref2) < 1e-12);
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x = Tensor::zeros({1, 1, 6, 6});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 1, 2, 2}), Tensor(), 1, 0), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 1, 3, 3}), Tensor(), 2, 0), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor(), 1, 1), DimensionError);
}

TEST_CASE("reduce ops") {
  Rng rng(29);
  Tensor x = oracle::rand_tensor(rng, {10});
  CHECK(l1_distance(x, x).item() == 0.0);

  Tensor a = Tensor::from_data({2}, {1.0, -2.0});
  Tensor b = Tensor::zeros({2});
  CHECK(l1_distance(a, b).item() == 3.0);

  // mean of 100 seeded uniforms matches direct summation bit-exactly
  Rng rng2(1234);
  Tensor u = Tensor::uniform({100}, rng2, 0.0, 1.0);
  double direct = 0.0;
  for (double v : u.values()) direct += v;
  CHECK(mean(u).item() == direct / 100.0);
}

TEST_CASE("sum_axis keeps the reduced dim") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor s = sum_axis(x, 1);
  CHECK(s.shape() == Shape{2, 1});
  CHECK(s.values() == std::vector<double>{6, 15});
  Rng rng(31);
  Tensor r = oracle::rand_tensor(rng, {2, 4, 3});
  CHECK(oracle::grad_check({r}, [&]() { return sum(mul(sum_axis(r, 1), sum_axis(r, 1))); }) < 1e-6);
}

TEST_CASE("mul_spatial and mul_channel broadcast helpers") {
  Rng rng(37);
  Tensor x = oracle::rand_tensor(rng, {2, 3, 2, 2});
  Tensor m = oracle::rand_tensor(rng, {2, 1, 2, 2}, 0.0, 1.0);
  Tensor g = oracle::rand_tensor(rng, {2, 3}, 0.0, 1.0);
  Tensor ym = mul_spatial(x, m);
  CHECK(ym.values()[0] == x.values()[0] * m.values()[0]);
  // channel 1 shares the sample-0 mask
  CHECK(ym.values()[4] == x.values()[4] * m.values()[0]);
  Tensor yg = mul_channel(x, g);
  CHECK(yg.values()[5] == x.values()[5] * g.values()[1]);

  CHECK(oracle::grad_check({x, m}, [&]() { return sum(mul_spatial(x, m)); }) < 1e-6);
  CHECK(oracle::grad_check({x, g}, [&]() { return sum(mul(mul_channel(x, g), mul_channel(x, g))); }) < 1e-6);
  CHECK_THROWS_AS(mul_spatial(x, Tensor::zeros({2, 2, 2, 2})), DimensionError);
  CHECK_THROWS_AS(mul_channel(x, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("bmm with batch broadcast and transpose") {
  Rng rng(41);
  Tensor a = oracle::rand_tensor(rng, {1, 2, 3});  // shared over batch
  Tensor b = oracle::rand_tensor(rng, {4, 3, 5});
  Tensor y = bmm(a, b);
  CHECK(y.shape() == Shape{4, 2, 5});
  // slice 2 equals plain matmul of a with b-slice 2
  auto ref = oracle::naive_matmul(
      a.values(),
      std::vector<double>(b.values().begin() + 2 * 15, b.values().begin() + 3 * 15), 2, 3, 5);
  std::vector<double> got(y.values().begin() + 2 * 10, y.values().begin() + 3 * 10);
  CHECK(oracle::max_abs_diff(got, ref) < 1e-12);

  Tensor c = oracle::rand_tensor(rng, {4, 5, 3});
  Tensor yt = bmm(a, c, /*trans_b=*/true);
  CHECK(yt.shape() == Shape{4, 2, 5});

  CHECK(oracle::grad_check({a, b}, [&]() { return sum(mul(bmm(a, b), bmm(a, b))); }) < 1e-6);
  CHECK(oracle::grad_check({a, c}, [&]() { return sum(mul(bmm(a, c, true), bmm(a, c, true))); }) < 1e-6);
}

TEST_CASE("resize_nearest up and down") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor up = resize_nearest(x, 4, 4);
  CHECK(up.values()[0] == 1.0);
  CHECK(up.values()[3] == 2.0);
  CHECK(up.values()[15] == 4.0);
  Tensor down = resize_nearest(up, 2, 2);
  CHECK(down.values() == x.values());

  Rng rng(43);
  Tensor r = oracle::rand_tensor(rng, {1, 2, 4, 4});
  CHECK(oracle::grad_check({r}, [&]() {
          return sum(mul(resize_nearest(r, 2, 2), resize_nearest(r, 2, 2)));
        }) < 1e-6);
}

TEST_CASE("cross_entropy_logits") {
  // uniform logits -> loss = log(K)
  Tensor logits = Tensor::zeros({1, 3, 2, 2});
  LabelMap labels{1, 2, 2, {0, 1, 2, 0}};
  CHECK(cross_entropy_logits(logits, labels).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  LabelMap bad{1, 2, 2, {0, 1, 3, 0}};
  CHECK_THROWS_AS(cross_entropy_logits(logits, bad), ValueError);

  Rng rng(47);
  Tensor l = oracle::rand_tensor(rng, {2, 3, 2, 2});
  LabelMap y{2, 2, 2, {0, 1, 2, 0, 1, 2, 0, 1}};
  CHECK(oracle::grad_check({l}, [&]() { return cross_entropy_logits(l, y); }) < 1e-6);
}

TEST_CASE("gradient accumulation across branches is exact") {
  Rng rng(53);
  Tensor x = oracle::rand_tensor(rng, {4});
  x.set_requires_grad(true);

  auto run = [&](bool both) {
    x.zero_grad();
    GradTape tape;
    TapeScope scope(tape);
    Tensor loss = both ? add(sum(sigmoid(x)), sum(relu(x))) : sum(sigmoid(x));
    tape.backward(loss);
    return x.grad();
  };

  auto g_sig = run(false);
  x.zero_grad();
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(relu(x)));
  }
  auto g_relu = x.grad();
  auto g_both = run(true);
  for (size_t i = 0; i < 4; ++i) CHECK(g_both[i] == g_sig[i] + g_relu[i]);
}

TEST_CASE("no grads recorded outside a tape or for constant inputs") {
  Rng rng(59);
  Tensor x = oracle::rand_tensor(rng, {3});
  x.set_requires_grad(true);
  Tensor y = sigmoid(x);  // no active tape
  CHECK_FALSE(y.requires_grad());

  GradTape tape;
  TapeScope scope(tape);
  Tensor c = oracle::rand_tensor(rng, {3});
  Tensor z = sigmoid(c);
  CHECK_FALSE(z.requires_grad());
  CHECK(tape.size() == 0);
}

TEST_CASE("sgd_step") {
  Tensor p = Tensor::from_data({1}, {1.0});
  p.set_requires_grad(true);
  p.grad()[0] = 1.0;
  std::vector<Tensor> params{p};
  sgd_step(params, 0.0, 0.0);
  CHECK(p.values()[0] == 1.0);

  p.grad()[0] = 1.0;
  sgd_step(params, 0.1, 0.0);
  CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-15));

  CHECK_THROWS_AS(sgd_step(params, 0.1, 0.0), StateError);  // grad was zeroed

  // quadratic bowl f(p)=p^2 from p=1: 50 steps of lr 0.1 contract by 0.8/step
  Tensor q = Tensor::from_data({1}, {1.0});
  q.set_requires_grad(true);
  std::vector<Tensor> qs{q};
  for (int i = 0; i < 50; ++i) {
    GradTape tape;
    {
      TapeScope scope(tape);
      tape.backward(mul(q, q));
    }
    sgd_step(qs, 0.1, 0.0);
  }
  CHECK(std::fabs(q.values()[0]) < 1e-4);
}

TEST_CASE("weight decay term") {
  Tensor p = Tensor::from_data({1}, {2.0});
  p.set_requires_grad(true);
  p.grad()[0] = 0.0;
  std::vector<Tensor> params{p};
  sgd_step(params, 0.5, 0.1);  // p -= 0.5 * (0 + 0.1*2) = 0.1
  CHECK(p.values()[0] == doctest::Approx(1.9).epsilon(1e-15));
}

TEST_CASE("non-finite values are a hard error") {
  Tensor a = Tensor::from_data({1}, {1e308});
  Tensor b = Tensor::from_data({1}, {1e308});
  CHECK_THROWS_AS(add(a, b), NumericError);
  Tensor z = Tensor::zeros({1});
  CHECK_THROWS_AS(div(a, z), NumericError);
}

TEST_CASE("forward determinism under a fixed seed") {
  auto make = [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = oracle::rand_tensor(rng, {2, 3, 8, 8});
    Tensor w = oracle::rand_tensor(rng, {4, 3, 3, 3});
    return conv2d(x, w, Tensor(), 1, 1).values();
  };
  CHECK(make(99) == make(99));
}
