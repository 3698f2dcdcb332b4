#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "freekd/common.hpp"
#include "freekd/kernels.hpp"

// Times the serial reference against the OpenMP backend for the heavy
// kernels and confirms bit-identical outputs while at it.

using namespace freekd;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> rand_vec(Rng& rng, int64_t n) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <class F>
double time_best_of(int reps, F&& fn) {
  double best = 1e100;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void report(const char* name, double serial_s, double omp_s, bool identical, double gflop) {
  std::printf("%-28s serial %8.3f ms  omp %8.3f ms  speedup %5.2fx  %7.2f GF/s  %s\n", name,
              serial_s * 1e3, omp_s * 1e3, serial_s / omp_s, gflop / omp_s,
              identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("kernel benchmark (OpenMP %s)\n", kernels::openmp_compiled() ? "on" : "off");
  Rng rng(7);

  {  // matmul 384^3
    const int64_t n = 384;
    auto a = rand_vec(rng, n * n);
    auto b = rand_vec(rng, n * n);
    std::vector<double> c1(static_cast<size_t>(n * n)), c2(c1);
    const double s = time_best_of(3, [&] { kernels::serial::matmul_nn(a.data(), b.data(), c1.data(), n, n, n); });
    const double p = time_best_of(3, [&] { kernels::par::matmul_nn(a.data(), b.data(), c2.data(), n, n, n); });
    report("matmul 384x384x384", s, p, c1 == c2, 2.0 * n * n * n / 1e9);
  }

  {  // conv2d forward + backward, a teacher-sized layer
    kernels::ConvDims d{8, 32, 32, 32, 32, 3, 1, 1, 32, 32};
    auto x = rand_vec(rng, d.n * d.cin * d.h * d.w);
    auto w = rand_vec(rng, d.cout * d.cin * d.k * d.k);
    auto bias = rand_vec(rng, d.cout);
    auto dy = rand_vec(rng, d.n * d.cout * d.ho * d.wo);
    std::vector<double> y1(static_cast<size_t>(d.n * d.cout * d.ho * d.wo)), y2(y1);
    const double flop = 2.0 * d.n * d.cout * d.ho * d.wo * d.cin * d.k * d.k / 1e9;

    double s = time_best_of(3, [&] { kernels::serial::conv2d_fwd(x.data(), w.data(), bias.data(), y1.data(), d); });
    double p = time_best_of(3, [&] { kernels::par::conv2d_fwd(x.data(), w.data(), bias.data(), y2.data(), d); });
    report("conv2d fwd 8x32x32x32", s, p, y1 == y2, flop);

    std::vector<double> dx1(x.size()), dx2(x.size());
    s = time_best_of(3, [&] { kernels::serial::conv2d_bwd_dx(dy.data(), w.data(), dx1.data(), d); });
    p = time_best_of(3, [&] { kernels::par::conv2d_bwd_dx(dy.data(), w.data(), dx2.data(), d); });
    report("conv2d bwd dx", s, p, dx1 == dx2, flop);

    std::vector<double> dw1(w.size()), dw2(w.size());
    s = time_best_of(3, [&] { kernels::serial::conv2d_bwd_dw(dy.data(), x.data(), dw1.data(), d); });
    p = time_best_of(3, [&] { kernels::par::conv2d_bwd_dw(dy.data(), x.data(), dw2.data(), d); });
    report("conv2d bwd dw", s, p, dw1 == dw2, flop);
  }

  {  // one haar analysis level over a feature batch
    const int64_t planes = 8 * 32, h = 64, w = 64;
    const double c = 1.0 / std::sqrt(2.0);
    const double lo[2] = {c, c}, hi[2] = {c, -c};
    auto x = rand_vec(rng, planes * h * w);
    std::vector<double> l1(static_cast<size_t>(planes * h * w / 2)), l2(l1), h1(l1), h2(l1);
    const double s = time_best_of(5, [&] { kernels::serial::dwt_rows(x.data(), l1.data(), h1.data(), planes, h, w, lo, hi, 2); });
    const double p = time_best_of(5, [&] { kernels::par::dwt_rows(x.data(), l2.data(), h2.data(), planes, h, w, lo, hi, 2); });
    report("dwt rows 256x64x64", s, p, l1 == l2 && h1 == h2, 4.0 * planes * h * w / 2 / 1e9);
  }

  {  // chunked reduction
    const int64_t n = 1 << 22;
    auto x = rand_vec(rng, n);
    double r1 = 0, r2 = 0;
    const double s = time_best_of(5, [&] { r1 = kernels::serial::reduce_sum(x.data(), n); });
    const double p = time_best_of(5, [&] { r2 = kernels::par::reduce_sum(x.data(), n); });
    report("reduce_sum 4M", s, p, r1 == r2, static_cast<double>(n) / 1e9);
  }

  return 0;
}
