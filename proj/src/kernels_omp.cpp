#include "freekd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

// OpenMP backend. Work is split so every output element (or reduction chunk)
// is owned by one thread and accumulated in the same order as the serial
// reference, so results are bit-identical for any thread count.

namespace freekd::kernels::par {

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    // k-outer / j-inner vectorizes over the output row while keeping the
    // per-element accumulation order identical to the reference.
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void conv2d_fwd(const double* x, const double* w, const double* bias, double* y, const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t co = 0; co < d.cout; ++co)
      for (int64_t ho = 0; ho < d.ho; ++ho) {
        double* yrow = y + ((n * d.cout + co) * d.ho + ho) * d.wo;
        const double bv = bias ? bias[co] : 0.0;
        for (int64_t wo = 0; wo < d.wo; ++wo) yrow[wo] = bv;
        for (int64_t c = 0; c < d.cin; ++c)
          for (int64_t kh = 0; kh < d.k; ++kh) {
            const int64_t hi = ho * d.stride + kh - d.pad;
            if (hi < 0 || hi >= d.h) continue;
            const double* xrow = x + ((n * d.cin + c) * d.h + hi) * d.w;
            const double* wrow = w + ((co * d.cin + c) * d.k + kh) * d.k;
            for (int64_t kw = 0; kw < d.k; ++kw) {
              const int64_t w0 = kw - d.pad;
              const double wv = wrow[kw];
              for (int64_t wo = 0; wo < d.wo; ++wo) {
                const int64_t wi = wo * d.stride + w0;
                if (wi < 0 || wi >= d.w) continue;
                yrow[wo] += xrow[wi] * wv;
              }
            }
          }
      }
}

void conv2d_bwd_dx(const double* dy, const double* w, double* dx, const ConvDims& d) {
  if (d.stride == 1) {
    // full-correlation form: rows of dx accumulate contributions in the same
    // (co, kh, kw) order as the gather reference, vectorized over wi
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < d.n; ++n)
      for (int64_t c = 0; c < d.cin; ++c) {
        double* plane = dx + (n * d.cin + c) * d.h * d.w;
        for (int64_t i = 0; i < d.h * d.w; ++i) plane[i] = 0.0;
        for (int64_t co = 0; co < d.cout; ++co)
          for (int64_t kh = 0; kh < d.k; ++kh)
            for (int64_t kw = 0; kw < d.k; ++kw) {
              const double wv = w[((co * d.cin + c) * d.k + kh) * d.k + kw];
              for (int64_t hi = 0; hi < d.h; ++hi) {
                const int64_t ho = hi + d.pad - kh;
                if (ho < 0 || ho >= d.ho) continue;
                const double* dyrow = dy + ((n * d.cout + co) * d.ho + ho) * d.wo;
                double* dxrow = plane + hi * d.w;
                const int64_t wo_off = d.pad - kw;
                const int64_t lo = std::max<int64_t>(0, -wo_off);
                const int64_t hi_w = std::min(d.w, d.wo - wo_off);
                for (int64_t wi = lo; wi < hi_w; ++wi) dxrow[wi] += dyrow[wi + wo_off] * wv;
              }
            }
      }
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t c = 0; c < d.cin; ++c)
      for (int64_t hi = 0; hi < d.h; ++hi)
        for (int64_t wi = 0; wi < d.w; ++wi) {
          double acc = 0.0;
          for (int64_t co = 0; co < d.cout; ++co)
            for (int64_t kh = 0; kh < d.k; ++kh) {
              const int64_t hn = hi + d.pad - kh;
              if (hn < 0 || hn % d.stride != 0) continue;
              const int64_t ho = hn / d.stride;
              if (ho >= d.ho) continue;
              for (int64_t kw = 0; kw < d.k; ++kw) {
                const int64_t wn = wi + d.pad - kw;
                if (wn < 0 || wn % d.stride != 0) continue;
                const int64_t wo = wn / d.stride;
                if (wo >= d.wo) continue;
                acc += dy[((n * d.cout + co) * d.ho + ho) * d.wo + wo] *
                       w[((co * d.cin + c) * d.k + kh) * d.k + kw];
              }
            }
          dx[((n * d.cin + c) * d.h + hi) * d.w + wi] = acc;
        }
}

void conv2d_bwd_dw(const double* dy, const double* x, double* dw, const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < d.cout; ++co)
    for (int64_t c = 0; c < d.cin; ++c)
      for (int64_t kh = 0; kh < d.k; ++kh)
        for (int64_t kw = 0; kw < d.k; ++kw) {
          double acc = 0.0;
          for (int64_t n = 0; n < d.n; ++n)
            for (int64_t ho = 0; ho < d.ho; ++ho) {
              const int64_t hi = ho * d.stride + kh - d.pad;
              if (hi < 0 || hi >= d.h) continue;
              for (int64_t wo = 0; wo < d.wo; ++wo) {
                const int64_t wi = wo * d.stride + kw - d.pad;
                if (wi < 0 || wi >= d.w) continue;
                acc += dy[((n * d.cout + co) * d.ho + ho) * d.wo + wo] *
                       x[((n * d.cin + c) * d.h + hi) * d.w + wi];
              }
            }
          dw[((co * d.cin + c) * d.k + kh) * d.k + kw] = acc;
        }
}

void conv2d_bwd_db(const double* dy, double* db, const ConvDims& d) {
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < d.cout; ++co) {
    double acc = 0.0;
    for (int64_t n = 0; n < d.n; ++n)
      for (int64_t ho = 0; ho < d.ho; ++ho)
        for (int64_t wo = 0; wo < d.wo; ++wo)
          acc += dy[((n * d.cout + co) * d.ho + ho) * d.wo + wo];
    db[co] = acc;
  }
}

double reduce_sum(const double* x, int64_t n) {
  const int64_t chunks = (n + kReduceChunk - 1) / kReduceChunk;
  std::vector<double> partial(static_cast<size_t>(chunks), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < chunks; ++c) {
    const int64_t lo = c * kReduceChunk;
    const int64_t hi = std::min(n, lo + kReduceChunk);
    double acc = 0.0;
    for (int64_t i = lo; i < hi; ++i) acc += x[i];
    partial[static_cast<size_t>(c)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

double reduce_abs_diff(const double* a, const double* b, int64_t n) {
  const int64_t chunks = (n + kReduceChunk - 1) / kReduceChunk;
  std::vector<double> partial(static_cast<size_t>(chunks), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < chunks; ++c) {
    const int64_t lo = c * kReduceChunk;
    const int64_t hi = std::min(n, lo + kReduceChunk);
    double acc = 0.0;
    for (int64_t i = lo; i < hi; ++i) acc += std::fabs(a[i] - b[i]);
    partial[static_cast<size_t>(c)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

void dwt_rows(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps) {
  const int64_t wh = w / 2;
#pragma omp parallel for schedule(static)
  for (int64_t pr = 0; pr < planes * h; ++pr) {
    const double* row = x + pr * w;
    double* lrow = lo + pr * wh;
    double* hrow = hi + pr * wh;
    for (int64_t j = 0; j < wh; ++j) {
      double al = 0.0, ah = 0.0;
      for (int64_t t = 0; t < taps; ++t) {
        const double v = row[(2 * j + t) % w];
        al += flo[t] * v;
        ah += fhi[t] * v;
      }
      lrow[j] = al;
      hrow[j] = ah;
    }
  }
}

void dwt_cols(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps) {
  const int64_t hh = h / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < hh; ++i) {
      const double* plane = x + p * h * w;
      double* lrow = lo + (p * hh + i) * w;
      double* hrow = hi + (p * hh + i) * w;
      for (int64_t j = 0; j < w; ++j) {
        lrow[j] = 0.0;
        hrow[j] = 0.0;
      }
      for (int64_t t = 0; t < taps; ++t) {
        const double* src = plane + ((2 * i + t) % h) * w;
        const double cl = flo[t], ch = fhi[t];
        for (int64_t j = 0; j < w; ++j) {
          lrow[j] += cl * src[j];
          hrow[j] += ch * src[j];
        }
      }
    }
}

void idwt_rows(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps) {
  const int64_t wh = w / 2;
#pragma omp parallel for schedule(static)
  for (int64_t pr = 0; pr < planes * h; ++pr) {
    const double* lrow = lo + pr * wh;
    const double* hrow = hi + pr * wh;
    double* row = x + pr * w;
    for (int64_t m = 0; m < w; ++m) {
      double acc = 0.0;
      for (int64_t t = 0; t < taps; ++t) {
        const int64_t r = ((m - t) % w + w) % w;
        if (r % 2 != 0) continue;
        const int64_t j = r / 2;
        acc += lrow[j] * flo[t] + hrow[j] * fhi[t];
      }
      row[m] = acc;
    }
  }
}

void idwt_cols(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps) {
  const int64_t hh = h / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t m = 0; m < h; ++m) {
      const double* lp = lo + p * hh * w;
      const double* hp = hi + p * hh * w;
      double* row = x + (p * h + m) * w;
      for (int64_t j = 0; j < w; ++j) row[j] = 0.0;
      for (int64_t t = 0; t < taps; ++t) {
        const int64_t r = ((m - t) % h + h) % h;
        if (r % 2 != 0) continue;
        const double* lrow = lp + (r / 2) * w;
        const double* hrow = hp + (r / 2) * w;
        const double cl = flo[t], ch = fhi[t];
        for (int64_t j = 0; j < w; ++j) row[j] += lrow[j] * cl + hrow[j] * ch;
      }
    }
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = x + r * cols;
    double* out = y + r * cols;
    double mx = in[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      denom += out[j];
    }
    for (int64_t j = 0; j < cols; ++j) out[j] /= denom;
  }
}

}  // namespace freekd::kernels::par
