#include "freekd/freqxform.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "freekd/image_io.hpp"
#include "freekd/kernels.hpp"

namespace freekd {

const Wavelet& Wavelet::haar() {
  static const double s = 1.0 / std::numbers::sqrt2;
  static const Wavelet w{"haar", {s, s}, {s, -s}, {s, s}, {s, -s}};
  return w;
}

const Wavelet& Wavelet::db2() {
  // Orthonormal 4-tap pair; the high-pass is the quadrature mirror of the
  // low-pass, and synthesis equals analysis.
  static const Wavelet w = [] {
    const double r3 = std::sqrt(3.0);
    const double d = 4.0 * std::numbers::sqrt2;
    std::vector<double> lo = {(1 + r3) / d, (3 + r3) / d, (3 - r3) / d, (1 - r3) / d};
    std::vector<double> hi(4);
    for (int t = 0; t < 4; ++t) hi[static_cast<size_t>(t)] = (t % 2 ? -1.0 : 1.0) * lo[static_cast<size_t>(3 - t)];
    return Wavelet{"db2", lo, hi, lo, hi};
  }();
  return w;
}

const Wavelet& Wavelet::by_name(const std::string& name) {
  if (name == "haar") return haar();
  if (name == "db2") return db2();
  throw ConfigError("unknown wavelet '" + name + "' (available: haar, db2)");
}

bool is_low_band(const std::string& label) { return label.rfind("LL", 0) == 0; }

std::vector<std::string> BandSet::labels(int level) {
  std::vector<std::string> out;
  out.push_back("LL" + std::to_string(level));
  for (int k = level; k >= 1; --k) {
    out.push_back("HL" + std::to_string(k));
    out.push_back("LH" + std::to_string(k));
    out.push_back("HH" + std::to_string(k));
  }
  return out;
}

bool BandSet::has(const std::string& label) const {
  for (const auto& [l, t] : bands)
    if (l == label) return true;
  return false;
}

const Tensor& BandSet::band(const std::string& label) const {
  for (const auto& [l, t] : bands)
    if (l == label) return t;
  throw StructureError("band set has no band labeled '" + label + "'");
}

namespace {

std::vector<double>& grad_of(const std::shared_ptr<TensorImpl>& t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

// out[:, :, r0:r0+rh, c0:c0+cw] taken from x; differentiable.
Tensor slice_rect(const Tensor& x, int64_t r0, int64_t rh, int64_t c0, int64_t cw) {
  const int64_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<double> out(static_cast<size_t>(planes * rh * cw));
  const double* px = x.data();
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < rh; ++i)
      for (int64_t j = 0; j < cw; ++j)
        out[static_cast<size_t>((p * rh + i) * cw + j)] = px[(p * H + r0 + i) * W + c0 + j];
  Tensor y = make_tensor({x.dim(0), x.dim(1), rh, cw}, std::move(out));

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, planes, H, W, r0, rh, c0, cw]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      const auto& gy = yi->grad;
      for (int64_t p = 0; p < planes; ++p)
        for (int64_t i = 0; i < rh; ++i)
          for (int64_t j = 0; j < cw; ++j)
            gx[static_cast<size_t>((p * H + r0 + i) * W + c0 + j)] +=
                gy[static_cast<size_t>((p * rh + i) * cw + j)];
    });
  }
  return y;
}

// Places x into an H x W zero plane at (r0, c0); adjoint of slice_rect.
Tensor embed_rect(const Tensor& x, int64_t H, int64_t W, int64_t r0, int64_t c0) {
  const int64_t planes = x.dim(0) * x.dim(1), rh = x.dim(2), cw = x.dim(3);
  std::vector<double> out(static_cast<size_t>(planes * H * W), 0.0);
  const double* px = x.data();
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < rh; ++i)
      for (int64_t j = 0; j < cw; ++j)
        out[static_cast<size_t>((p * H + r0 + i) * W + c0 + j)] = px[(p * rh + i) * cw + j];
  Tensor y = make_tensor({x.dim(0), x.dim(1), H, W}, std::move(out));

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, planes, H, W, r0, rh, c0, cw]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      const auto& gy = yi->grad;
      for (int64_t p = 0; p < planes; ++p)
        for (int64_t i = 0; i < rh; ++i)
          for (int64_t j = 0; j < cw; ++j)
            gx[static_cast<size_t>((p * rh + i) * cw + j)] +=
                gy[static_cast<size_t>((p * H + r0 + i) * W + c0 + j)];
    });
  }
  return y;
}

Tensor pad_to(const Tensor& x, int64_t H, int64_t W) {
  if (x.dim(2) == H && x.dim(3) == W) return x;
  return embed_rect(x, H, W, 0, 0);
}

Tensor crop_to(const Tensor& x, int64_t H, int64_t W) {
  if (x.dim(2) == H && x.dim(3) == W) return x;
  return slice_rect(x, 0, H, 0, W);
}

const std::vector<double>& zeros_like(const TensorImpl& t, std::vector<double>& scratch) {
  scratch.assign(t.data.size(), 0.0);
  return scratch;
}

// One analysis level: rows then columns, yielding LL/HL/LH/HH at half extents.
// A single tape node covers all four outputs; its backward applies the
// adjoint (the same filter arrays run through the synthesis kernels).
std::array<Tensor, 4> dwt_level(const Tensor& x, const Wavelet& w) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t planes = N * C, Wh = W / 2, Hh = H / 2;
  const auto& alo = w.analysis_low;
  const auto& ahi = w.analysis_high;
  const int64_t taps = static_cast<int64_t>(alo.size());

  std::vector<double> rlo(static_cast<size_t>(planes * H * Wh));
  std::vector<double> rhi(rlo.size());
  kernels::dwt_rows(x.data(), rlo.data(), rhi.data(), planes, H, W, alo.data(), ahi.data(), taps);

  std::vector<double> ll(static_cast<size_t>(planes * Hh * Wh)), hl(ll.size()), lh(ll.size()), hh(ll.size());
  kernels::dwt_cols(rlo.data(), ll.data(), hl.data(), planes, H, Wh, alo.data(), ahi.data(), taps);
  kernels::dwt_cols(rhi.data(), lh.data(), hh.data(), planes, H, Wh, alo.data(), ahi.data(), taps);

  const Shape bs{N, C, Hh, Wh};
  std::array<Tensor, 4> out = {make_tensor(bs, std::move(ll)), make_tensor(bs, std::move(hl)),
                               make_tensor(bs, std::move(lh)), make_tensor(bs, std::move(hh))};
  for (const auto& t : out) check_finite(t.values(), "dwt2d");

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    auto xi = x.impl();
    std::array<std::shared_ptr<TensorImpl>, 4> oi;
    for (int i = 0; i < 4; ++i) {
      out[static_cast<size_t>(i)].set_requires_grad(true);
      oi[static_cast<size_t>(i)] = out[static_cast<size_t>(i)].impl();
    }
    tape->record([xi, oi, planes, H, W, Hh, Wh, alo, ahi, taps]() {
      bool any = false;
      for (const auto& o : oi) any = any || !o->grad.empty();
      if (!any) return;
      std::vector<double> z;
      auto gptr = [&](int i) -> const double* {
        return oi[static_cast<size_t>(i)]->grad.empty()
                   ? zeros_like(*oi[static_cast<size_t>(i)], z).data()
                   : oi[static_cast<size_t>(i)]->grad.data();
      };
      // adjoint: synthesize columns then rows with the analysis filters
      std::vector<double> glo(static_cast<size_t>(planes * H * Wh));
      std::vector<double> ghi(glo.size());
      {
        // zeros_like scratch is reused; fetch one grad pointer at a time
        std::vector<double> gll(gptr(0), gptr(0) + planes * Hh * Wh);
        std::vector<double> ghl(gptr(1), gptr(1) + planes * Hh * Wh);
        std::vector<double> glh(gptr(2), gptr(2) + planes * Hh * Wh);
        std::vector<double> ghh(gptr(3), gptr(3) + planes * Hh * Wh);
        kernels::idwt_cols(gll.data(), ghl.data(), glo.data(), planes, H, Wh, alo.data(), ahi.data(), taps);
        kernels::idwt_cols(glh.data(), ghh.data(), ghi.data(), planes, H, Wh, alo.data(), ahi.data(), taps);
      }
      std::vector<double> gx(static_cast<size_t>(planes * H * W));
      kernels::idwt_rows(glo.data(), ghi.data(), gx.data(), planes, H, W, alo.data(), ahi.data(), taps);
      auto& acc = grad_of(xi);
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += gx[i];
      check_finite(acc, "dwt2d");
    });
  }
  return out;
}

// One synthesis level; backward runs the analysis kernels with the synthesis
// filters (the adjoint of this map).
Tensor idwt_level(const Tensor& ll, const Tensor& hl, const Tensor& lh, const Tensor& hh,
                  const Wavelet& w) {
  const int64_t N = ll.dim(0), C = ll.dim(1), Hh = ll.dim(2), Wh = ll.dim(3);
  const int64_t planes = N * C, H = Hh * 2, W = Wh * 2;
  const auto& slo = w.synthesis_low;
  const auto& shi = w.synthesis_high;
  const int64_t taps = static_cast<int64_t>(slo.size());

  std::vector<double> rlo(static_cast<size_t>(planes * H * Wh));
  std::vector<double> rhi(rlo.size());
  kernels::idwt_cols(ll.data(), hl.data(), rlo.data(), planes, H, Wh, slo.data(), shi.data(), taps);
  kernels::idwt_cols(lh.data(), hh.data(), rhi.data(), planes, H, Wh, slo.data(), shi.data(), taps);

  std::vector<double> xv(static_cast<size_t>(planes * H * W));
  kernels::idwt_rows(rlo.data(), rhi.data(), xv.data(), planes, H, W, slo.data(), shi.data(), taps);
  Tensor x = make_tensor({N, C, H, W}, std::move(xv));
  check_finite(x.values(), "idwt2d");

  GradTape* tape = GradTape::active();
  const bool rg = ll.requires_grad() || hl.requires_grad() || lh.requires_grad() || hh.requires_grad();
  if (tape && rg) {
    x.set_requires_grad(true);
    std::array<std::shared_ptr<TensorImpl>, 4> bi = {ll.impl(), hl.impl(), lh.impl(), hh.impl()};
    std::array<bool, 4> need = {ll.requires_grad(), hl.requires_grad(), lh.requires_grad(),
                                hh.requires_grad()};
    auto xi = x.impl();
    tape->record([bi, need, xi, planes, H, W, Hh, Wh, slo, shi, taps]() {
      if (xi->grad.empty()) return;
      std::vector<double> glo(static_cast<size_t>(planes * H * Wh));
      std::vector<double> ghi(glo.size());
      kernels::dwt_rows(xi->grad.data(), glo.data(), ghi.data(), planes, H, W, slo.data(), shi.data(), taps);
      std::vector<double> gll(static_cast<size_t>(planes * Hh * Wh)), ghl(gll.size()), glh(gll.size()), ghh(gll.size());
      kernels::dwt_cols(glo.data(), gll.data(), ghl.data(), planes, H, Wh, slo.data(), shi.data(), taps);
      kernels::dwt_cols(ghi.data(), glh.data(), ghh.data(), planes, H, Wh, slo.data(), shi.data(), taps);
      const std::array<const std::vector<double>*, 4> gs = {&gll, &ghl, &glh, &ghh};
      for (int i = 0; i < 4; ++i) {
        if (!need[static_cast<size_t>(i)]) continue;
        auto& acc = grad_of(bi[static_cast<size_t>(i)]);
        const auto& g = *gs[static_cast<size_t>(i)];
        for (size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
        check_finite(acc, "idwt2d");
      }
    });
  }
  return x;
}

void validate_transform_input(const Tensor& x, int level, const char* what) {
  if (!x.defined() || x.rank() != 4 || x.numel() == 0)
    throw DimensionError(std::string(what) + ": expects a non-empty [N,C,H,W] input");
  if (level < 1) throw DimensionError(std::string(what) + ": level must be >= 1");
}

struct DyadicRect {
  int64_t r0, rh, c0, cw;
};

// Rectangle layout mirroring the nested wavelet quadrants on a full
// coefficient plane: LLl top-left, then per level the vertical / horizontal /
// diagonal detail blocks.
DyadicRect rect_for(const std::string& label, int level, int64_t H, int64_t W) {
  const int64_t hl = H >> level, wl = W >> level;
  if (is_low_band(label)) return {0, hl, 0, wl};
  const int k = std::stoi(label.substr(2));
  const int64_t hk = H >> k, wk = W >> k;
  if (label.rfind("HL", 0) == 0) return {hk, hk, 0, wk};
  if (label.rfind("LH", 0) == 0) return {0, hk, wk, wk};
  return {hk, hk, wk, wk};  // HH
}

// Orthonormal DCT-II basis for extent n.
std::vector<double> dct_matrix(int64_t n) {
  std::vector<double> d(static_cast<size_t>(n * n));
  const double c0 = std::sqrt(1.0 / static_cast<double>(n));
  const double ck = std::sqrt(2.0 / static_cast<double>(n));
  for (int64_t k = 0; k < n; ++k)
    for (int64_t j = 0; j < n; ++j)
      d[static_cast<size_t>(k * n + j)] =
          (k == 0 ? c0 : ck) *
          std::cos(std::numbers::pi * (2.0 * static_cast<double>(j) + 1.0) * static_cast<double>(k) /
                   (2.0 * static_cast<double>(n)));
  return d;
}

void dct_planes(const double* x, double* y, int64_t planes, int64_t H, int64_t W,
                const std::vector<double>& dh, const std::vector<double>& dw, bool inverse) {
  std::vector<double> tmp(static_cast<size_t>(H * W));
  for (int64_t p = 0; p < planes; ++p) {
    const double* in = x + p * H * W;
    double* out = y + p * H * W;
    if (!inverse) {
      kernels::matmul_nn(dh.data(), in, tmp.data(), H, H, W);
      kernels::matmul_nt(tmp.data(), dw.data(), out, H, W, W);
    } else {
      kernels::matmul_tn(dh.data(), in, tmp.data(), H, H, W);
      kernels::matmul_nn(tmp.data(), dw.data(), out, H, W, W);
    }
  }
}

// Full-plane orthonormal 2-D DCT as a single differentiable op; the adjoint
// is the inverse transform.
Tensor dct_plane_op(const Tensor& x, bool inverse) {
  const int64_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto dh = dct_matrix(H);
  const auto dw = dct_matrix(W);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  dct_planes(x.data(), out.data(), planes, H, W, dh, dw, inverse);
  Tensor y = make_tensor(x.shape(), std::move(out));
  check_finite(y.values(), inverse ? "idct2d" : "dct2d");

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, planes, H, W, dh, dw, inverse]() {
      if (yi->grad.empty()) return;
      std::vector<double> g(yi->grad.size());
      dct_planes(yi->grad.data(), g.data(), planes, H, W, dh, dw, !inverse);
      auto& gx = grad_of(xi);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      check_finite(gx, "dct2d");
    });
  }
  return y;
}

struct FourierBasis {
  std::vector<double> ch, sh, cw, sw;
  int64_t H, W;
};

FourierBasis dft_basis(int64_t H, int64_t W) {
  auto fill = [](int64_t n, std::vector<double>& c, std::vector<double>& s) {
    c.resize(static_cast<size_t>(n * n));
    s.resize(static_cast<size_t>(n * n));
    const double norm = 1.0 / std::sqrt(static_cast<double>(n));
    for (int64_t k = 0; k < n; ++k)
      for (int64_t j = 0; j < n; ++j) {
        const double th = 2.0 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(j) /
                          static_cast<double>(n);
        c[static_cast<size_t>(k * n + j)] = std::cos(th) * norm;
        s[static_cast<size_t>(k * n + j)] = std::sin(th) * norm;
      }
  };
  FourierBasis b;
  b.H = H;
  b.W = W;
  fill(H, b.ch, b.sh);
  fill(W, b.cw, b.sw);
  return b;
}

// x (real plane) -> unitary DFT (re, im planes).
void dft_plane_fwd(const double* x, double* re, double* im, const FourierBasis& b) {
  const int64_t H = b.H, W = b.W;
  std::vector<double> tr(static_cast<size_t>(H * W)), ti(tr.size()), t2(tr.size());
  kernels::matmul_nn(b.ch.data(), x, tr.data(), H, H, W);
  kernels::matmul_nn(b.sh.data(), x, ti.data(), H, H, W);
  for (auto& v : ti) v = -v;
  // (tr + i*ti) * (Cw - i*Sw); Cw/Sw are symmetric
  kernels::matmul_nn(tr.data(), b.cw.data(), re, H, W, W);
  kernels::matmul_nn(ti.data(), b.sw.data(), t2.data(), H, W, W);
  for (int64_t i = 0; i < H * W; ++i) re[i] += t2[static_cast<size_t>(i)];
  kernels::matmul_nn(ti.data(), b.cw.data(), im, H, W, W);
  kernels::matmul_nn(tr.data(), b.sw.data(), t2.data(), H, W, W);
  for (int64_t i = 0; i < H * W; ++i) im[i] -= t2[static_cast<size_t>(i)];
}

// (re, im) -> real part of the unitary inverse.
void dft_plane_inv(const double* re, const double* im, double* x, const FourierBasis& b) {
  const int64_t H = b.H, W = b.W;
  std::vector<double> zr(static_cast<size_t>(H * W)), zi(zr.size()), t2(zr.size());
  // (Ch + i*Sh) * (re + i*im)
  kernels::matmul_nn(b.ch.data(), re, zr.data(), H, H, W);
  kernels::matmul_nn(b.sh.data(), im, t2.data(), H, H, W);
  for (int64_t i = 0; i < H * W; ++i) zr[static_cast<size_t>(i)] -= t2[static_cast<size_t>(i)];
  kernels::matmul_nn(b.ch.data(), im, zi.data(), H, H, W);
  kernels::matmul_nn(b.sh.data(), re, t2.data(), H, H, W);
  for (int64_t i = 0; i < H * W; ++i) zi[static_cast<size_t>(i)] += t2[static_cast<size_t>(i)];
  // real part of (zr + i*zi) * (Cw + i*Sw)
  kernels::matmul_nn(zr.data(), b.cw.data(), x, H, W, W);
  kernels::matmul_nn(zi.data(), b.sw.data(), t2.data(), H, W, W);
  for (int64_t i = 0; i < H * W; ++i) x[i] -= t2[static_cast<size_t>(i)];
}

// x:[N,C,H,W] -> [N,2C,H,W] with re planes first, im planes second; unitary,
// so the adjoint is the inverse map.
Tensor dft_op(const Tensor& x) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto basis = dft_basis(H, W);
  std::vector<double> out(static_cast<size_t>(2 * x.numel()));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* in = x.data() + (n * C + c) * H * W;
      double* re = out.data() + ((n * 2 * C) + c) * H * W;
      double* im = out.data() + ((n * 2 * C) + C + c) * H * W;
      dft_plane_fwd(in, re, im, basis);
    }
  Tensor y = make_tensor({N, 2 * C, H, W}, std::move(out));
  check_finite(y.values(), "dft2d");

  GradTape* tape = GradTape::active();
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.impl();
    auto yi = y.impl();
    tape->record([xi, yi, N, C, H, W, basis]() {
      if (yi->grad.empty()) return;
      auto& gx = grad_of(xi);
      std::vector<double> g(static_cast<size_t>(H * W));
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const double* gre = yi->grad.data() + ((n * 2 * C) + c) * H * W;
          const double* gim = yi->grad.data() + ((n * 2 * C) + C + c) * H * W;
          dft_plane_inv(gre, gim, g.data(), basis);
          double* dst = gx.data() + (n * C + c) * H * W;
          for (int64_t i = 0; i < H * W; ++i) dst[i] += g[static_cast<size_t>(i)];
        }
      check_finite(gx, "dft2d");
    });
  }
  return y;
}

// [N,2C,H,W] -> [N,C,H,W]; adjoint is the forward map.
Tensor idft_op(const Tensor& y) {
  if (y.dim(1) % 2 != 0) throw DimensionError("idft2d: expects stacked re/im channels");
  const int64_t N = y.dim(0), C = y.dim(1) / 2, H = y.dim(2), W = y.dim(3);
  const auto basis = dft_basis(H, W);
  std::vector<double> out(static_cast<size_t>(N * C * H * W));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* re = y.data() + ((n * 2 * C) + c) * H * W;
      const double* im = y.data() + ((n * 2 * C) + C + c) * H * W;
      dft_plane_inv(re, im, out.data() + (n * C + c) * H * W, basis);
    }
  Tensor x = make_tensor({N, C, H, W}, std::move(out));
  check_finite(x.values(), "idft2d");

  GradTape* tape = GradTape::active();
  if (tape && y.requires_grad()) {
    x.set_requires_grad(true);
    auto yi = y.impl();
    auto xi = x.impl();
    tape->record([yi, xi, N, C, H, W, basis]() {
      if (xi->grad.empty()) return;
      auto& gy = grad_of(yi);
      std::vector<double> gre(static_cast<size_t>(H * W)), gim(gre.size());
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          dft_plane_fwd(xi->grad.data() + (n * C + c) * H * W, gre.data(), gim.data(), basis);
          double* dre = gy.data() + ((n * 2 * C) + c) * H * W;
          double* dim = gy.data() + ((n * 2 * C) + C + c) * H * W;
          for (int64_t i = 0; i < H * W; ++i) {
            dre[i] += gre[static_cast<size_t>(i)];
            dim[i] += gim[static_cast<size_t>(i)];
          }
        }
      check_finite(gy, "idft2d");
    });
  }
  return x;
}

BandSet partition_plane(const Tensor& plane, int level, const PadRecord& pad) {
  BandSet out;
  out.level = level;
  out.pad = pad;
  const int64_t H = plane.dim(2), W = plane.dim(3);
  for (const auto& label : BandSet::labels(level)) {
    const auto r = rect_for(label, level, H, W);
    out.bands.emplace_back(label, slice_rect(plane, r.r0, r.rh, r.c0, r.cw));
  }
  return out;
}

Tensor assemble_plane(const BandSet& b, int64_t channels) {
  const int64_t H = b.pad.padded_h, W = b.pad.padded_w;
  Tensor plane;
  for (const auto& label : BandSet::labels(b.level)) {
    const auto r = rect_for(label, b.level, H, W);
    Tensor piece = embed_rect(b.band(label), H, W, r.r0, r.c0);
    plane = plane.defined() ? add(plane, piece) : piece;
  }
  if (plane.dim(1) != channels)
    throw StructureError("assemble_plane: unexpected channel extent");
  return plane;
}

void validate_bandset(const BandSet& b, const char* what) {
  if (b.level < 1) throw StructureError(std::string(what) + ": invalid level");
  for (const auto& label : BandSet::labels(b.level))
    if (!b.has(label)) throw StructureError(std::string(what) + ": missing band '" + label + "'");
}

}  // namespace

BandSet dwt2d(const Tensor& x, const Wavelet& w, int level) {
  validate_transform_input(x, level, "dwt2d");
  const int64_t mult = int64_t{1} << level;
  PadRecord pad{x.dim(2), x.dim(3), round_up(x.dim(2), mult), round_up(x.dim(3), mult)};
  Tensor cur = pad_to(x, pad.padded_h, pad.padded_w);

  BandSet out;
  out.level = level;
  out.pad = pad;
  std::vector<std::pair<std::string, Tensor>> details;
  for (int k = 1; k <= level; ++k) {
    auto [ll, hl, lh, hh] = dwt_level(cur, w);
    const std::string ks = std::to_string(k);
    details.emplace_back("HL" + ks, hl);
    details.emplace_back("LH" + ks, lh);
    details.emplace_back("HH" + ks, hh);
    cur = ll;
  }
  out.bands.emplace_back("LL" + std::to_string(level), cur);
  for (int k = level; k >= 1; --k)
    for (int j = 0; j < 3; ++j)
      out.bands.push_back(details[static_cast<size_t>(3 * (k - 1) + j)]);
  return out;
}

Tensor idwt2d(const BandSet& b, const Wavelet& w) {
  validate_bandset(b, "idwt2d");
  Tensor cur = b.band("LL" + std::to_string(b.level));
  for (int k = b.level; k >= 1; --k) {
    const std::string ks = std::to_string(k);
    cur = idwt_level(cur, b.band("HL" + ks), b.band("LH" + ks), b.band("HH" + ks), w);
  }
  return crop_to(cur, b.pad.orig_h, b.pad.orig_w);
}

BandSet dct2d(const Tensor& x, int level) {
  validate_transform_input(x, level, "dct2d");
  const int64_t mult = int64_t{1} << level;
  PadRecord pad{x.dim(2), x.dim(3), round_up(x.dim(2), mult), round_up(x.dim(3), mult)};
  Tensor plane = dct_plane_op(pad_to(x, pad.padded_h, pad.padded_w), /*inverse=*/false);
  return partition_plane(plane, level, pad);
}

Tensor idct2d(const BandSet& b) {
  validate_bandset(b, "idct2d");
  const Tensor plane = assemble_plane(b, b.band(BandSet::labels(b.level)[0]).dim(1));
  return crop_to(dct_plane_op(plane, /*inverse=*/true), b.pad.orig_h, b.pad.orig_w);
}

BandSet dft2d(const Tensor& x, int level) {
  validate_transform_input(x, level, "dft2d");
  const int64_t mult = int64_t{1} << level;
  PadRecord pad{x.dim(2), x.dim(3), round_up(x.dim(2), mult), round_up(x.dim(3), mult)};
  Tensor plane = dft_op(pad_to(x, pad.padded_h, pad.padded_w));
  return partition_plane(plane, level, pad);
}

Tensor idft2d(const BandSet& b) {
  validate_bandset(b, "idft2d");
  const Tensor plane = assemble_plane(b, b.band(BandSet::labels(b.level)[0]).dim(1));
  return crop_to(idft_op(plane), b.pad.orig_h, b.pad.orig_w);
}

TransformKind transform_from_name(const std::string& name) {
  if (name == "dwt") return TransformKind::dwt;
  if (name == "dct") return TransformKind::dct;
  if (name == "dft") return TransformKind::dft;
  throw ConfigError("unknown transform '" + name + "' (available: dwt, dct, dft)");
}

std::string transform_name(TransformKind k) {
  switch (k) {
    case TransformKind::dwt: return "dwt";
    case TransformKind::dct: return "dct";
    case TransformKind::dft: return "dft";
  }
  return "dwt";
}

BandSet Transform::forward(const Tensor& x) const {
  switch (kind) {
    case TransformKind::dwt: return dwt2d(x, Wavelet::by_name(wavelet), level);
    case TransformKind::dct: return dct2d(x, level);
    case TransformKind::dft: return dft2d(x, level);
  }
  throw ConfigError("bad transform kind");
}

Tensor Transform::inverse(const BandSet& b) const {
  switch (kind) {
    case TransformKind::dwt: return idwt2d(b, Wavelet::by_name(wavelet));
    case TransformKind::dct: return idct2d(b);
    case TransformKind::dft: return idft2d(b);
  }
  throw ConfigError("bad transform kind");
}

std::vector<std::string> dump_bands_pgm(const BandSet& b, const std::string& dir,
                                        const std::string& prefix, const std::string& comment) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (const auto& [label, t] : b.bands) {
    const int64_t C = t.dim(1), H = t.dim(2), W = t.dim(3);
    std::vector<double> plane(static_cast<size_t>(H * W), 0.0);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < H * W; ++i)
        plane[static_cast<size_t>(i)] += t.data()[c * H * W + i] / static_cast<double>(C);
    const std::string path = (std::filesystem::path(dir) / (prefix + "_" + label + ".pgm")).string();
    write_pgm(path, W, H, normalize_to_bytes(plane.data(), H * W), comment);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace freekd
