#include "freekd/kernels.hpp"

namespace freekd::kernels {

namespace {
Backend g_backend =
#ifdef _OPENMP
    Backend::OpenMP;
#else
    Backend::Serial;
#endif
}  // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

bool openmp_compiled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

#define FREEKD_DISPATCH(fn, ...)                          \
  if (g_backend == Backend::OpenMP) {                     \
    return par::fn(__VA_ARGS__);                          \
  }                                                       \
  return serial::fn(__VA_ARGS__)

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  FREEKD_DISPATCH(matmul_nn, a, b, c, m, k, n);
}
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  FREEKD_DISPATCH(matmul_nt, a, b, c, m, k, n);
}
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  FREEKD_DISPATCH(matmul_tn, a, b, c, m, k, n);
}
void conv2d_fwd(const double* x, const double* w, const double* bias, double* y, const ConvDims& d) {
  FREEKD_DISPATCH(conv2d_fwd, x, w, bias, y, d);
}
void conv2d_bwd_dx(const double* dy, const double* w, double* dx, const ConvDims& d) {
  FREEKD_DISPATCH(conv2d_bwd_dx, dy, w, dx, d);
}
void conv2d_bwd_dw(const double* dy, const double* x, double* dw, const ConvDims& d) {
  FREEKD_DISPATCH(conv2d_bwd_dw, dy, x, dw, d);
}
void conv2d_bwd_db(const double* dy, double* db, const ConvDims& d) {
  FREEKD_DISPATCH(conv2d_bwd_db, dy, db, d);
}
double reduce_sum(const double* x, int64_t n) { FREEKD_DISPATCH(reduce_sum, x, n); }
double reduce_abs_diff(const double* a, const double* b, int64_t n) {
  FREEKD_DISPATCH(reduce_abs_diff, a, b, n);
}
void dwt_rows(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps) {
  FREEKD_DISPATCH(dwt_rows, x, lo, hi, planes, h, w, flo, fhi, taps);
}
void dwt_cols(const double* x, double* lo, double* hi, int64_t planes, int64_t h, int64_t w,
              const double* flo, const double* fhi, int64_t taps) {
  FREEKD_DISPATCH(dwt_cols, x, lo, hi, planes, h, w, flo, fhi, taps);
}
void idwt_rows(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps) {
  FREEKD_DISPATCH(idwt_rows, lo, hi, x, planes, h, w, flo, fhi, taps);
}
void idwt_cols(const double* lo, const double* hi, double* x, int64_t planes, int64_t h, int64_t w,
               const double* flo, const double* fhi, int64_t taps) {
  FREEKD_DISPATCH(idwt_cols, lo, hi, x, planes, h, w, flo, fhi, taps);
}
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
  FREEKD_DISPATCH(softmax_rows, x, y, rows, cols);
}

#undef FREEKD_DISPATCH

}  // namespace freekd::kernels
