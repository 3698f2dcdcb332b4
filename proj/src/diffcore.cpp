#include "freekd/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

#include "freekd/kernels.hpp"

namespace freekd {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

uint64_t Rng::derive(uint64_t seed, std::string_view tag) {
  // FNV-1a over the tag, then splitmix64 finalization.
  uint64_t h = 1469598103934665603ull ^ seed;
  for (char c : tag) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

Tensor make_tensor(Shape s, std::vector<double> d) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(s);
  impl->data = std::move(d);
  if (numel_of(impl->shape) != static_cast<int64_t>(impl->data.size()))
    throw DimensionError("tensor data length does not match shape " + shape_str(impl->shape));
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape s) {
  auto n = numel_of(s);
  return make_tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  auto n = numel_of(s);
  return make_tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::from_data(Shape s, std::vector<double> d) { return make_tensor(std::move(s), std::move(d)); }

Tensor Tensor::uniform(Shape s, Rng& rng, double lo, double hi) {
  auto n = numel_of(s);
  std::vector<double> d(static_cast<size_t>(n));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return make_tensor(std::move(s), std::move(d));
}

double Tensor::item() const {
  if (!impl_ || impl_->data.size() != 1)
    throw DimensionError("item() requires a single-element tensor");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (!impl_) throw StateError("grad() on undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad_checked() const {
  if (!impl_ || impl_->grad.empty()) throw StateError("tensor has no populated gradient");
  return impl_->grad;
}

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

namespace {

thread_local GradTape* g_active_tape = nullptr;

std::vector<double>& grad_of(const std::shared_ptr<TensorImpl>& t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

}  // namespace

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw DimensionError("backward() expects a scalar loss");
  loss.impl()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(GradTape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = prev_; }

namespace {

struct EwPlan {
  Shape out;
  int64_t n = 0;   // output numel
  int64_t na = 0;  // operand numels; index as i % na
  int64_t nb = 0;
};

bool leading_bcast(const Shape& small, const Shape& big) {
  size_t t = 0;
  while (t < small.size() && small[t] == 1) ++t;
  for (size_t i = t; i < small.size(); ++i)
    if (small[i] != big[i]) return false;
  return true;
}

EwPlan ew_plan(const Tensor& a, const Tensor& b, const char* opname) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    const int64_t n = a.numel();
    return {sa, n, n, n};
  }
  if (sa.size() == sb.size()) {
    if (leading_bcast(sa, sb)) return {sb, b.numel(), a.numel(), b.numel()};
    if (leading_bcast(sb, sa)) return {sa, a.numel(), a.numel(), b.numel()};
  }
  throw DimensionError(std::string(opname) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                       " are not broadcastable");
}

// fwd(av,bv) -> value; dfa/dfb(av,bv) -> partial wrt a / b.
template <class F, class Da, class Db>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* name, F fwd, Da dfa, Db dfb) {
  const EwPlan p = ew_plan(a, b, name);
  std::vector<double> out(static_cast<size_t>(p.n));
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t i = 0; i < p.n; ++i)
    out[static_cast<size_t>(i)] = fwd(pa[i % p.na], pb[i % p.nb]);
  Tensor y = make_tensor(p.out, std::move(out));
  check_finite(y.values(), name);

  GradTape* tape = GradTape::active();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto yi = y.impl();
    const bool need_a = a.requires_grad();
    const bool need_b = b.requires_grad();
    tape->record([ai, bi, yi, p, dfa, dfb, need_a, need_b, name]() {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      const double* pa = ai->data.data();
      const double* pb = bi->data.data();
      if (need_a) {
        auto& ga = grad_of(ai);
        for (int64_t i = 0; i < p.n; ++i)
          ga[static_cast<size_t>(i % p.na)] +=
              dfa(pa[i % p.na], pb[i % p.nb]) * gy[static_cast<size_t>(i)];
        check_finite(ga, name);
      }
      if (need_b) {
        auto& gb = grad_of(bi);
        for (int64_t i = 0; i < p.n; ++i)
          gb[static_cast<size_t>(i % p.nb)] +=
              dfb(pa[i % p.na], pb[i % p.nb]) * gy[static_cast<size_t>(i)];
        check_finite(gb, name);
      }
    });
  }
  return y;
}

template <class F, class Dx>
Tensor unary_ew(const Tensor& x, const char* name, F fwd, Dx dfx) {
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) out[static_cast<size_t>(i)] = fwd(px[i]);
  Tensor y = make_tensor(x.shape(), std::move(out));
  check_finite(y.values(), name);

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, dfx, name]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      const auto& gy = yi->grad;
      const double* px = xi->data.data();
      const double* py = yi->data.data();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += dfx(px[i], py[i]) * gy[i];
      check_finite(gx, name);
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

// Ties take the left operand; both subgradients at a tie go to the chosen side.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  auto sig = [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  return unary_ew(
      x, "sigmoid", sig,
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary_ew(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary_ew(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor scale(const Tensor& x, double s) {
  return unary_ew(
      x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary_ew(
      x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_spatial(const Tensor& x, const Tensor& m) {
  if (x.rank() != 4 || m.rank() != 4 || m.dim(1) != 1 || m.dim(0) != x.dim(0) ||
      m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3))
    throw DimensionError("mul_spatial: expected x [N,C,H,W] with mask [N,1,H,W], got " +
                         shape_str(x.shape()) + " and " + shape_str(m.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  const double* pm = m.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i)
        out[static_cast<size_t>((n * C + c) * HW + i)] =
            px[(n * C + c) * HW + i] * pm[n * HW + i];
  Tensor y = make_tensor(x.shape(), std::move(out));
  check_finite(y.values(), "mul_spatial");

  GradTape* tape = GradTape::active();
  if (tape && (x.requires_grad() || m.requires_grad())) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto mi = m.impl();
    auto yi = y.impl();
    const bool need_x = x.requires_grad(), need_m = m.requires_grad();
    tape->record([xi, mi, yi, N, C, HW, need_x, need_m]() {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      if (need_x) {
        auto& gx = grad_of(xi);
        const double* pm = mi->data.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < HW; ++i)
              gx[static_cast<size_t>((n * C + c) * HW + i)] +=
                  gy[static_cast<size_t>((n * C + c) * HW + i)] * pm[n * HW + i];
        check_finite(gx, "mul_spatial");
      }
      if (need_m) {
        auto& gm = grad_of(mi);
        const double* px = xi->data.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t i = 0; i < HW; ++i) {
            double acc = 0.0;
            for (int64_t c = 0; c < C; ++c)
              acc += gy[static_cast<size_t>((n * C + c) * HW + i)] * px[(n * C + c) * HW + i];
            gm[static_cast<size_t>(n * HW + i)] += acc;
          }
        check_finite(gm, "mul_spatial");
      }
    });
  }
  return y;
}

Tensor mul_channel(const Tensor& x, const Tensor& g) {
  if (x.rank() != 4 || g.rank() != 2 || g.dim(0) != x.dim(0) || g.dim(1) != x.dim(1))
    throw DimensionError("mul_channel: expected x [N,C,H,W] with gate [N,C], got " +
                         shape_str(x.shape()) + " and " + shape_str(g.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  const double* pg = g.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double gv = pg[n * C + c];
      for (int64_t i = 0; i < HW; ++i)
        out[static_cast<size_t>((n * C + c) * HW + i)] = px[(n * C + c) * HW + i] * gv;
    }
  Tensor y = make_tensor(x.shape(), std::move(out));
  check_finite(y.values(), "mul_channel");

  GradTape* tape = GradTape::active();
  if (tape && (x.requires_grad() || g.requires_grad())) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto gi = g.impl();
    auto yi = y.impl();
    const bool need_x = x.requires_grad(), need_g = g.requires_grad();
    tape->record([xi, gi, yi, N, C, HW, need_x, need_g]() {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      if (need_x) {
        auto& gx = grad_of(xi);
        const double* pg = gi->data.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const double gv = pg[n * C + c];
            for (int64_t i = 0; i < HW; ++i)
              gx[static_cast<size_t>((n * C + c) * HW + i)] +=
                  gy[static_cast<size_t>((n * C + c) * HW + i)] * gv;
          }
        check_finite(gx, "mul_channel");
      }
      if (need_g) {
        auto& gg = grad_of(gi);
        const double* px = xi->data.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int64_t i = 0; i < HW; ++i)
              acc += gy[static_cast<size_t>((n * C + c) * HW + i)] * px[(n * C + c) * HW + i];
            gg[static_cast<size_t>(n * C + c)] += acc;
          }
        check_finite(gg, "mul_channel");
      }
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  kernels::matmul_nn(a.data(), b.data(), out.data(), m, k, n);
  Tensor y = make_tensor({m, n}, std::move(out));
  check_finite(y.values(), "matmul");

  GradTape* tape = GradTape::active();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto yi = y.impl();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    tape->record([ai, bi, yi, m, k, n, need_a, need_b]() {
      if (yi->grad.empty()) return;
      const double* gy = yi->grad.data();
      if (need_a) {  // dA = dC * B^T
        std::vector<double> tmp(static_cast<size_t>(m * k));
        kernels::matmul_nt(gy, bi->data.data(), tmp.data(), m, n, k);
        auto& ga = grad_of(ai);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += tmp[i];
        check_finite(ga, "matmul");
      }
      if (need_b) {  // dB = A^T * dC
        std::vector<double> tmp(static_cast<size_t>(k * n));
        kernels::matmul_tn(ai->data.data(), gy, tmp.data(), k, m, n);
        auto& gb = grad_of(bi);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += tmp[i];
        check_finite(gb, "matmul");
      }
    });
  }
  return y;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw DimensionError("bmm: expects rank-3 operands");
  const int64_t ba = a.dim(0), bb = b.dim(0);
  const int64_t m = a.dim(1), k = a.dim(2);
  const int64_t kb = trans_b ? b.dim(2) : b.dim(1);
  const int64_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb || (ba != bb && ba != 1 && bb != 1))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int64_t batches = std::max(ba, bb);
  std::vector<double> out(static_cast<size_t>(batches * m * n));
  for (int64_t o = 0; o < batches; ++o) {
    const double* pa = a.data() + (o % ba) * m * k;
    const double* pb = b.data() + (o % bb) * (trans_b ? n * k : k * n);
    double* py = out.data() + o * m * n;
    if (trans_b)
      kernels::matmul_nt(pa, pb, py, m, k, n);
    else
      kernels::matmul_nn(pa, pb, py, m, k, n);
  }
  Tensor y = make_tensor({batches, m, n}, std::move(out));
  check_finite(y.values(), "bmm");

  GradTape* tape = GradTape::active();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto yi = y.impl();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    tape->record([ai, bi, yi, ba, bb, batches, m, k, n, trans_b, need_a, need_b]() {
      if (yi->grad.empty()) return;
      std::vector<double> tmp;
      for (int64_t o = 0; o < batches; ++o) {
        const double* gy = yi->grad.data() + o * m * n;
        const double* pa = ai->data.data() + (o % ba) * m * k;
        const double* pb = bi->data.data() + (o % bb) * (trans_b ? n * k : k * n);
        if (need_a) {
          tmp.assign(static_cast<size_t>(m * k), 0.0);
          if (trans_b)
            kernels::matmul_nn(gy, pb, tmp.data(), m, n, k);  // dA = dC * B
          else
            kernels::matmul_nt(gy, pb, tmp.data(), m, n, k);  // dA = dC * B^T
          auto& ga = grad_of(ai);
          double* dst = ga.data() + (o % ba) * m * k;
          for (int64_t i = 0; i < m * k; ++i) dst[i] += tmp[static_cast<size_t>(i)];
        }
        if (need_b) {
          auto& gb = grad_of(bi);
          if (trans_b) {  // dB = dC^T * A, shape [n,k]
            tmp.assign(static_cast<size_t>(n * k), 0.0);
            kernels::matmul_tn(gy, pa, tmp.data(), n, m, k);
            double* dst = gb.data() + (o % bb) * n * k;
            for (int64_t i = 0; i < n * k; ++i) dst[i] += tmp[static_cast<size_t>(i)];
          } else {  // dB = A^T * dC, shape [k,n]
            tmp.assign(static_cast<size_t>(k * n), 0.0);
            kernels::matmul_tn(pa, gy, tmp.data(), k, m, n);
            double* dst = gb.data() + (o % bb) * k * n;
            for (int64_t i = 0; i < k * n; ++i) dst[i] += tmp[static_cast<size_t>(i)];
          }
        }
      }
      if (need_a) check_finite(ai->grad, "bmm");
      if (need_b) check_finite(bi->grad, "bmm");
    });
  }
  return y;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
    throw DimensionError("softmax_lastdim: last extent must be >= 1");
  const int64_t cols = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / cols;
  std::vector<double> out(static_cast<size_t>(x.numel()));
  kernels::softmax_rows(x.data(), out.data(), rows, cols);
  Tensor y = make_tensor(x.shape(), std::move(out));
  check_finite(y.values(), "softmax_lastdim");

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, rows, cols]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      const auto& gy = yi->grad;
      const auto& s = yi->data;
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = r * cols;
        double dot = 0.0;
        for (int64_t j = 0; j < cols; ++j)
          dot += gy[static_cast<size_t>(base + j)] * s[static_cast<size_t>(base + j)];
        for (int64_t j = 0; j < cols; ++j)
          gx[static_cast<size_t>(base + j)] +=
              s[static_cast<size_t>(base + j)] * (gy[static_cast<size_t>(base + j)] - dot);
      }
      check_finite(gx, "softmax_lastdim");
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape s) {
  if (numel_of(s) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
  Tensor y = make_tensor(std::move(s), x.values());

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i];
    });
  }
  return y;
}

namespace {

struct AxisSplit {
  int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit sp;
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
  sp.extent = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace

Tensor narrow(const Tensor& x, int axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= x.rank()) throw DimensionError("narrow: axis out of range");
  const AxisSplit sp = split_at(x.shape(), axis);
  if (start < 0 || len < 1 || start + len > sp.extent)
    throw DimensionError("narrow: window out of range");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  std::vector<double> out(static_cast<size_t>(sp.outer * len * sp.inner));
  const double* px = x.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      for (int64_t i = 0; i < sp.inner; ++i)
        out[static_cast<size_t>((o * len + j) * sp.inner + i)] =
            px[(o * sp.extent + start + j) * sp.inner + i];
  Tensor y = make_tensor(std::move(out_shape), std::move(out));

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, sp, start, len]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      const auto& gy = yi->grad;
      for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t j = 0; j < len; ++j)
          for (int64_t i = 0; i < sp.inner; ++i)
            gx[static_cast<size_t>((o * sp.extent + start + j) * sp.inner + i)] +=
                gy[static_cast<size_t>((o * len + j) * sp.inner + i)];
    });
  }
  return y;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (axis < 0 || axis >= a.rank() || a.rank() != b.rank())
    throw DimensionError("concat: axis/rank mismatch");
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw DimensionError("concat: shapes " + shape_str(a.shape()) + " and " +
                           shape_str(b.shape()) + " differ off-axis");
  const AxisSplit sa = split_at(a.shape(), axis);
  const AxisSplit sb = split_at(b.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = sa.extent + sb.extent;
  std::vector<double> out(static_cast<size_t>(sa.outer * (sa.extent + sb.extent) * sa.inner));
  const double* pa = a.data();
  const double* pb = b.data();
  const int64_t ext = sa.extent + sb.extent;
  for (int64_t o = 0; o < sa.outer; ++o) {
    for (int64_t j = 0; j < sa.extent; ++j)
      for (int64_t i = 0; i < sa.inner; ++i)
        out[static_cast<size_t>((o * ext + j) * sa.inner + i)] =
            pa[(o * sa.extent + j) * sa.inner + i];
    for (int64_t j = 0; j < sb.extent; ++j)
      for (int64_t i = 0; i < sb.inner; ++i)
        out[static_cast<size_t>((o * ext + sa.extent + j) * sb.inner + i)] =
            pb[(o * sb.extent + j) * sb.inner + i];
  }
  Tensor y = make_tensor(std::move(out_shape), std::move(out));

  GradTape* tape = GradTape::active();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto yi = y.impl();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    tape->record([ai, bi, yi, sa, sb, ext, need_a, need_b]() {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      if (need_a) {
        auto& ga = grad_of(ai);
        for (int64_t o = 0; o < sa.outer; ++o)
          for (int64_t j = 0; j < sa.extent; ++j)
            for (int64_t i = 0; i < sa.inner; ++i)
              ga[static_cast<size_t>((o * sa.extent + j) * sa.inner + i)] +=
                  gy[static_cast<size_t>((o * ext + j) * sa.inner + i)];
      }
      if (need_b) {
        auto& gb = grad_of(bi);
        for (int64_t o = 0; o < sa.outer; ++o)
          for (int64_t j = 0; j < sb.extent; ++j)
            for (int64_t i = 0; i < sb.inner; ++i)
              gb[static_cast<size_t>((o * sb.extent + j) * sb.inner + i)] +=
                  gy[static_cast<size_t>((o * ext + sa.extent + j) * sb.inner + i)];
      }
    });
  }
  return y;
}

Tensor resize_nearest(const Tensor& x, int64_t out_h, int64_t out_w) {
  if (x.rank() != 4) throw DimensionError("resize_nearest: expects [N,C,H,W]");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_nearest: invalid output extents");
  const int64_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<double> out(static_cast<size_t>(planes * out_h * out_w));
  const double* px = x.data();
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < out_h; ++i) {
      const int64_t si = i * H / out_h;
      for (int64_t j = 0; j < out_w; ++j) {
        const int64_t sj = j * W / out_w;
        out[static_cast<size_t>((p * out_h + i) * out_w + j)] = px[(p * H + si) * W + sj];
      }
    }
  Tensor y = make_tensor({x.dim(0), x.dim(1), out_h, out_w}, std::move(out));

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, planes, H, W, out_h, out_w]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      const auto& gy = yi->grad;
      for (int64_t p = 0; p < planes; ++p)
        for (int64_t i = 0; i < out_h; ++i) {
          const int64_t si = i * H / out_h;
          for (int64_t j = 0; j < out_w; ++j) {
            const int64_t sj = j * W / out_w;
            gx[static_cast<size_t>((p * H + si) * W + sj)] +=
                gy[static_cast<size_t>((p * out_h + i) * out_w + j)];
          }
        }
      check_finite(gx, "resize_nearest");
    });
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw DimensionError("conv2d: expects x [N,C,H,W] and w [Co,C,k,k]");
  if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    throw DimensionError("conv2d: kernel must be square with odd extent");
  if (x.dim(1) != w.dim(1))
    throw DimensionError("conv2d: channel mismatch between input " + shape_str(x.shape()) +
                         " and weight " + shape_str(w.shape()));
  if (pad < 0 || stride < 1) throw DimensionError("conv2d: invalid stride/pad");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0)))
    throw DimensionError("conv2d: bias extent must equal output channels");

  kernels::ConvDims d;
  d.n = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  d.pad = pad;
  if ((d.h + 2 * pad - d.k) % stride != 0 || (d.w + 2 * pad - d.k) % stride != 0)
    throw DimensionError("conv2d: non-integral output extent");
  d.ho = (d.h + 2 * pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * pad - d.k) / stride + 1;
  if (d.ho < 1 || d.wo < 1) throw DimensionError("conv2d: empty output");

  std::vector<double> out(static_cast<size_t>(d.n * d.cout * d.ho * d.wo));
  kernels::conv2d_fwd(x.data(), w.data(), bias.defined() ? bias.data() : nullptr, out.data(), d);
  Tensor y = make_tensor({d.n, d.cout, d.ho, d.wo}, std::move(out));
  check_finite(y.values(), "conv2d");

  GradTape* tape = GradTape::active();
  const bool need_x = x.requires_grad();
  const bool need_w = w.requires_grad();
  const bool need_b = bias.defined() && bias.requires_grad();
  if (tape && (need_x || need_w || need_b)) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    auto yi = y.impl();
    tape->record([xi, wi, bi, yi, d, need_x, need_w, need_b]() {
      if (yi->grad.empty()) return;
      const double* gy = yi->grad.data();
      if (need_x) {
        std::vector<double> tmp(xi->data.size());
        kernels::conv2d_bwd_dx(gy, wi->data.data(), tmp.data(), d);
        auto& gx = grad_of(xi);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
        check_finite(gx, "conv2d");
      }
      if (need_w) {
        std::vector<double> tmp(wi->data.size());
        kernels::conv2d_bwd_dw(gy, xi->data.data(), tmp.data(), d);
        auto& gw = grad_of(wi);
        for (size_t i = 0; i < gw.size(); ++i) gw[i] += tmp[i];
        check_finite(gw, "conv2d");
      }
      if (need_b && bi) {
        std::vector<double> tmp(bi->data.size());
        kernels::conv2d_bwd_db(gy, tmp.data(), d);
        auto& gb = grad_of(bi);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += tmp[i];
        check_finite(gb, "conv2d");
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  Tensor y = make_tensor({1}, {kernels::reduce_sum(x.data(), x.numel())});
  check_finite(y.values(), "sum");

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi]() {
      if (yi->grad.empty()) return;
      const double g = yi->grad[0];
      auto& gx = grad_of(xi);
      for (auto& v : gx) v += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor y = make_tensor({1}, {kernels::reduce_sum(x.data(), x.numel()) * inv});
  check_finite(y.values(), "mean");

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, inv]() {
      if (yi->grad.empty()) return;
      const double g = yi->grad[0] * inv;
      auto& gx = grad_of(xi);
      for (auto& v : gx) v += g;
    });
  }
  return y;
}

Tensor sum_axis(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw DimensionError("sum_axis: axis out of range");
  const auto& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t extent = s[static_cast<size_t>(axis)];
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = 1;

  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  const double* px = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t a = 0; a < extent; ++a)
      for (int64_t i = 0; i < inner; ++i)
        out[static_cast<size_t>(o * inner + i)] += px[(o * extent + a) * inner + i];
  Tensor y = make_tensor(std::move(out_shape), std::move(out));
  check_finite(y.values(), "sum_axis");

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, outer, extent, inner]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      const auto& gy = yi->grad;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t a = 0; a < extent; ++a)
          for (int64_t i = 0; i < inner; ++i)
            gx[static_cast<size_t>((o * extent + a) * inner + i)] +=
                gy[static_cast<size_t>(o * inner + i)];
    });
  }
  return y;
}

Tensor l1_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("l1_distance: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor y = make_tensor({1}, {kernels::reduce_abs_diff(a.data(), b.data(), a.numel())});
  check_finite(y.values(), "l1_distance");

  GradTape* tape = GradTape::active();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    y.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto yi = y.impl();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    tape->record([ai, bi, yi, need_a, need_b]() {
      if (yi->grad.empty()) return;
      const double g = yi->grad[0];
      const auto& da = ai->data;
      const auto& db = bi->data;
      double* ga = need_a ? grad_of(ai).data() : nullptr;
      double* gb = need_b ? grad_of(bi).data() : nullptr;
      for (size_t i = 0; i < da.size(); ++i) {
        const double diff = da[i] - db[i];
        const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        if (ga) ga[i] += sgn * g;
        if (gb) gb[i] -= sgn * g;
      }
    });
  }
  return y;
}

Tensor cross_entropy_logits(const Tensor& logits, const LabelMap& labels) {
  if (logits.rank() != 4)
    throw DimensionError("cross_entropy_logits: expects logits [N,K,H,W]");
  const int64_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (labels.n != N || labels.h != H || labels.w != W)
    throw DimensionError("cross_entropy_logits: label map extents do not match logits");
  const int64_t HW = H * W;
  const double inv = 1.0 / static_cast<double>(N * HW);
  const double* pl = logits.data();

  double total = 0.0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      const int32_t lab = labels.v[static_cast<size_t>(n * HW + i)];
      if (lab < 0 || lab >= K) throw ValueError("cross_entropy_logits: label id out of range");
      double mx = pl[(n * K) * HW + i];
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, pl[(n * K + k) * HW + i]);
      double denom = 0.0;
      for (int64_t k = 0; k < K; ++k) denom += std::exp(pl[(n * K + k) * HW + i] - mx);
      total += std::log(denom) + mx - pl[(n * K + lab) * HW + i];
    }
  Tensor y = make_tensor({1}, {total * inv});
  check_finite(y.values(), "cross_entropy_logits");

  GradTape* tape = GradTape::active();
  if (tape && logits.requires_grad()) {
    y.set_requires_grad(true);
    auto li = logits.impl();
    auto yi = y.impl();
    auto labs = labels.v;
    tape->record([li, yi, labs, N, K, HW, inv]() {
      if (yi->grad.empty()) return;
      const double g = yi->grad[0] * inv;
      auto& gl = grad_of(li);
      const double* pl = li->data.data();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < HW; ++i) {
          const int32_t lab = labs[static_cast<size_t>(n * HW + i)];
          double mx = pl[(n * K) * HW + i];
          for (int64_t k = 1; k < K; ++k) mx = std::max(mx, pl[(n * K + k) * HW + i]);
          double denom = 0.0;
          for (int64_t k = 0; k < K; ++k) denom += std::exp(pl[(n * K + k) * HW + i] - mx);
          for (int64_t k = 0; k < K; ++k) {
            const double p = std::exp(pl[(n * K + k) * HW + i] - mx) / denom;
            gl[static_cast<size_t>((n * K + k) * HW + i)] += (p - (k == lab ? 1.0 : 0.0)) * g;
          }
        }
      check_finite(gl, "cross_entropy_logits");
    });
  }
  return y;
}

void sgd_step(std::vector<Tensor>& params, double lr, double weight_decay) {
  for (auto& p : params)
    if (!p.has_grad()) throw StateError("sgd_step: parameter has no populated gradient");
  for (auto& p : params) {
    auto& data = p.values();
    const auto& g = p.impl()->grad;
    for (size_t i = 0; i < data.size(); ++i)
      data[i] -= lr * (g[i] + weight_decay * data[i]);
    check_finite(data, "sgd_step");
    p.zero_grad();
  }
}

}  // namespace freekd
