#include "freekd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

// Reference implementations: the plainest loops that define the expected
// floating-point evaluation order. The OpenMP backend must reproduce these
// bit-for-bit.

namespace freekd::kernels::serial {

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

// c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void conv2d_fwd(const double* x, const double* w, const double* bias, double* y, const ConvDims& d) {
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t co = 0; co < d.cout; ++co)
      for (int64_t ho = 0; ho < d.ho; ++ho)
        for (int64_t wo = 0; wo < d.wo; ++wo) {
          double acc = bias ? bias[co] : 0.0;
          for (int64_t c = 0; c < d.cin; ++c)
            for (int64_t kh = 0; kh < d.k; ++kh) {
              const int64_t hi = ho * d.stride + kh - d.pad;
              if (hi < 0 || hi >= d.h) continue;
              for (int64_t kw = 0; kw < d.k; ++kw) {
                const int64_t wi = wo * d.stride + kw - d.pad;
                if (wi < 0 || wi >= d.w) continue;
                acc += x[((n * d.cin + c) * d.h + hi) * d.w + wi] *
                       w[((co * d.cin + c) * d.k + kh) * d.k + kw];
              }
            }
          y[((n * d.cout + co) * d.ho + ho) * d.wo + wo] = acc;
        }
}

void conv2d_bwd_dx(const double* dy, const double* w, double* dx, const ConvDims& d) {
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

// Analysis along rows: each output row i of lo/hi has w/2 coefficients,
// lo[j] = sum_t flo[t] * x[i, (2j+t) mod w].
void dwt_rows(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps) {
  const int64_t wh = w / 2;
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
  for (int64_t p = 0; p < planes; ++p) {
    const double* plane = x + p * h * w;
    double* lp = lo + p * hh * w;
    double* hp = hi + p * hh * w;
    for (int64_t i = 0; i < hh; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double al = 0.0, ah = 0.0;
        for (int64_t t = 0; t < taps; ++t) {
          const double v = plane[((2 * i + t) % h) * w + j];
          al += flo[t] * v;
          ah += fhi[t] * v;
        }
        lp[i * w + j] = al;
        hp[i * w + j] = ah;
      }
  }
}

// Synthesis along rows: x[i, m] = sum over (j,t) with (2j+t) mod w == m of
// lo[j]*flo[t] + hi[j]*fhi[t]. Gather form, t ascending, keeps it exact and
// race-free.
void idwt_rows(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps) {
  const int64_t wh = w / 2;
  for (int64_t pr = 0; pr < planes * h; ++pr) {
    const double* lrow = lo + pr * wh;
    const double* hrow = hi + pr * wh;
    double* row = x + pr * w;
    for (int64_t m = 0; m < w; ++m) {
      double acc = 0.0;
      for (int64_t t = 0; t < taps; ++t) {
        // need (2j + t) ≡ m (mod w): solvable only when t and m share parity
        // once w is even; j = ((m - t) mod w) / 2.
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
  for (int64_t p = 0; p < planes; ++p) {
    const double* lp = lo + p * hh * w;
    const double* hp = hi + p * hh * w;
    double* plane = x + p * h * w;
    for (int64_t m = 0; m < h; ++m)
      for (int64_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int64_t t = 0; t < taps; ++t) {
          const int64_t r = ((m - t) % h + h) % h;
          if (r % 2 != 0) continue;
          const int64_t i = r / 2;
          acc += lp[i * w + j] * flo[t] + hp[i * w + j] * fhi[t];
        }
        plane[m * w + j] = acc;
      }
  }
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
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

}  // namespace freekd::kernels::serial
