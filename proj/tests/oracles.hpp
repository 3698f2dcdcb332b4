#pragma once

// Independent reference computations for tests: naive loops and central
// finite differences. Nothing here may call into the kernel/op code paths it
// is used to verify.

#include <cmath>
#include <functional>
#include <vector>

#include "freekd/diffcore.hpp"

namespace oracle {

inline freekd::Tensor rand_tensor(freekd::Rng& rng, freekd::Shape shape, double lo = -1.0,
                                  double hi = 1.0) {
  return freekd::Tensor::uniform(std::move(shape), rng, lo, hi);
}

inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        int64_t m, int64_t k, int64_t n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p)
      for (int64_t j = 0; j < n; ++j)
        c[static_cast<size_t>(i * n + j)] += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
  return c;
}

struct ConvSpec {
  int64_t n, cin, h, w, cout, k, stride, pad;
};

inline std::vector<double> naive_conv2d(const std::vector<double>& x, const std::vector<double>& w,
                                        const std::vector<double>* bias, const ConvSpec& s) {
  const int64_t ho = (s.h + 2 * s.pad - s.k) / s.stride + 1;
  const int64_t wo = (s.w + 2 * s.pad - s.k) / s.stride + 1;
  std::vector<double> y(static_cast<size_t>(s.n * s.cout * ho * wo), 0.0);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t co = 0; co < s.cout; ++co)
      for (int64_t i = 0; i < ho; ++i)
        for (int64_t j = 0; j < wo; ++j) {
          double acc = bias ? (*bias)[static_cast<size_t>(co)] : 0.0;
          for (int64_t c = 0; c < s.cin; ++c)
            for (int64_t a = 0; a < s.k; ++a)
              for (int64_t b = 0; b < s.k; ++b) {
                const int64_t hi = i * s.stride + a - s.pad;
                const int64_t wi = j * s.stride + b - s.pad;
                if (hi < 0 || hi >= s.h || wi < 0 || wi >= s.w) continue;
                acc += x[static_cast<size_t>(((n * s.cin + c) * s.h + hi) * s.w + wi)] *
                       w[static_cast<size_t>(((co * s.cin + c) * s.k + a) * s.k + b)];
              }
          y[static_cast<size_t>(((n * s.cout + co) * ho + i) * wo + j)] = acc;
        }
  return y;
}

// Central finite differences of a scalar-valued forward against the tape
// gradients, over every element of every listed parameter. Returns the
// maximum relative error. The forward must be a pure function of the params.
inline double grad_check(std::vector<freekd::Tensor> params,
                         const std::function<freekd::Tensor()>& forward, double h = 1e-5) {
  using namespace freekd;
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

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
