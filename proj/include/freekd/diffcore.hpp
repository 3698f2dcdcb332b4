#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "freekd/common.hpp"

// Dense double-precision tensors with tape-based reverse-mode
// differentiation. The tape records executed ops in order; backward() replays
// them in exact reverse order, accumulating gradients additively. Tensors are
// immutable once produced by an op; distinct tapes may live on distinct
// threads (the active-tape pointer is thread_local).

namespace freekd {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor from_data(Shape s, std::vector<double> d);
  // Uniform(lo, hi) fill, used for parameter init.
  static Tensor uniform(Shape s, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  // Scalar extraction; requires numel() == 1.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  // Zero-filled on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad_checked() const;  // StateError if absent
  void zero_grad() { if (impl_) impl_->grad.clear(); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend Tensor make_tensor(Shape, std::vector<double>);
};

Tensor make_tensor(Shape s, std::vector<double> d);

// Throws NumericError when any element is NaN/Inf; run after every forward
// and backward kernel.
void check_finite(const std::vector<double>& v, const char* what);

class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }
  // Seeds d(loss)/d(loss) = 1 and replays nodes in reverse execution order.
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  static GradTape* active();

 private:
  std::vector<BackwardFn> nodes_;
  friend class TapeScope;
};

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* prev_;
};

// Suspends recording; outputs produced inside are plain constants.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* prev_;
};

// ---- elementwise family ----
// Binary ops accept equal shapes, or shapes of equal rank where one operand
// has extent 1 on a leading prefix of dims (the broadcast block).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);             // subgradient 0 at 0
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

// x:[N,C,H,W] * m:[N,1,H,W], mask shared across channels.
Tensor mul_spatial(const Tensor& x, const Tensor& m);
// x:[N,C,H,W] * g:[N,C], gate shared across spatial positions.
Tensor mul_channel(const Tensor& x, const Tensor& g);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
// Batched matmul over dim 0; a batch extent of 1 broadcasts. trans_b
// multiplies by b^T (per batch).
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

Tensor softmax_lastdim(const Tensor& x);

// ---- structural ----
Tensor reshape(const Tensor& x, Shape s);
Tensor narrow(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor resize_nearest(const Tensor& x, int64_t out_h, int64_t out_w);  // [N,C,H,W]

// ---- convolution ----
// x:[N,C,H,W], w:[Co,C,k,k], optional bias:[Co]; k odd, pad >= 0. Output
// extents must divide exactly, otherwise DimensionError.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduce one axis, keeping it with extent 1.
Tensor sum_axis(const Tensor& x, int axis);
Tensor l1_distance(const Tensor& a, const Tensor& b);

// ---- task loss ----
struct LabelMap {
  int64_t n = 0, h = 0, w = 0;
  std::vector<int32_t> v;  // row-major [n,h,w]
  int64_t numel() const { return n * h * w; }
};

// Mean cross-entropy of logits [N,K,H,W] against integer labels, fused with a
// stable log-softmax over the class dim.
Tensor cross_entropy_logits(const Tensor& logits, const LabelMap& labels);

// ---- optimizer ----
// p <- p - lr * (grad + weight_decay * p); grads are zeroed afterwards.
// StateError if any param lacks a populated grad.
void sgd_step(std::vector<Tensor>& params, double lr, double weight_decay);

}  // namespace freekd
