#pragma once

#include <cstdint>

// Low-level numeric loops. Each kernel exists twice: a serial reference in
// kernels::serial and an OpenMP version in kernels::par. The parallel
// versions partition work so that every output element (or fixed-size
// reduction chunk) is produced by exactly one thread with the same inner
// summation order as the serial code, so the two backends are bit-identical
// for any thread count. Tests assert that equality; the dispatcher below
// picks the backend at runtime.

namespace freekd::kernels {

enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);
bool openmp_compiled();

// Reduction chunk size. Both backends sum each chunk serially and then sum
// the per-chunk partials in index order.
inline constexpr int64_t kReduceChunk = 4096;

struct ConvDims {
  int64_t n, cin, h, w;     // input
  int64_t cout, k;          // square kernel
  int64_t stride, pad;
  int64_t ho, wo;           // output spatial extents
};

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

void conv2d_fwd(const double* x, const double* w, const double* bias, double* y, const ConvDims& d);
void conv2d_bwd_dx(const double* dy, const double* w, double* dx, const ConvDims& d);
void conv2d_bwd_dw(const double* dy, const double* x, double* dw, const ConvDims& d);
void conv2d_bwd_db(const double* dy, double* db, const ConvDims& d);

double reduce_sum(const double* x, int64_t n);
double reduce_abs_diff(const double* a, const double* b, int64_t n);

// One analysis/synthesis level over a batch of contiguous planes, circular
// boundary handling. Plane extents must be even.
void dwt_rows(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps);
void dwt_cols(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps);
void idwt_rows(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps);
void idwt_cols(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps);

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);

}  // namespace serial

namespace par {

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

void conv2d_fwd(const double* x, const double* w, const double* bias, double* y, const ConvDims& d);
void conv2d_bwd_dx(const double* dy, const double* w, double* dx, const ConvDims& d);
void conv2d_bwd_dw(const double* dy, const double* x, double* dw, const ConvDims& d);
void conv2d_bwd_db(const double* dy, double* db, const ConvDims& d);

double reduce_sum(const double* x, int64_t n);
double reduce_abs_diff(const double* a, const double* b, int64_t n);

void dwt_rows(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps);
void dwt_cols(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps);
void idwt_rows(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps);
void idwt_cols(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps);

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);

}  // namespace par

// Dispatchers.
void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void conv2d_fwd(const double* x, const double* w, const double* bias, double* y, const ConvDims& d);
void conv2d_bwd_dx(const double* dy, const double* w, double* dx, const ConvDims& d);
void conv2d_bwd_dw(const double* dy, const double* x, double* dw, const ConvDims& d);
void conv2d_bwd_db(const double* dy, double* db, const ConvDims& d);
double reduce_sum(const double* x, int64_t n);
double reduce_abs_diff(const double* a, const double* b, int64_t n);
void dwt_rows(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps);
void dwt_cols(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps);
void idwt_rows(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps);
void idwt_cols(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps);
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);

}  // namespace freekd::kernels
