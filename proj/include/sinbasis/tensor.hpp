#pragma once

// Dense float64 tensor with a dynamic reverse-mode tape.
//
// A Tensor is a shared handle to a graph node. Ops record their inputs and a
// backward closure when gradient recording is enabled and at least one input
// requires a gradient. `backward()` walks the recorded graph once; afterwards
// the interior nodes are released and a second backward through them throws
// ContractError. Leaf gradients accumulate across backward calls until
// `zero_grad()`.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sinbasis/errors.hpp"

namespace sinbasis {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable storage. Only valid on leaves; used by optimizers and loaders.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar.
  void backward() const;

  /// Same values, no history, no gradient.
  Tensor detach() const;
  /// Deep copy of values as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  // Internal: used by the op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables recording of new graph nodes on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- arithmetic (equal shapes, or one side with a single element) ----------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---- elementwise maps ----------------------------------------------------
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor exp(const Tensor& x);
/// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& x);
/// ReLU with derivative 0 at 0.
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);

/// Softmax over the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& x);

// ---- reductions / layout -------------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums over `axis`, removing it.
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
/// Broadcasts extent-1 axes of x up to `shape` (same rank).
Tensor expand(const Tensor& x, Shape shape);

// ---- row-vector broadcasts: x viewed as [rows, rest], v has `rows` entries --
Tensor row_scale(const Tensor& x, const Tensor& v);
Tensor row_shift(const Tensor& x, const Tensor& v);
/// x[..., D] + bias[D].
Tensor add_bias(const Tensor& x, const Tensor& bias);

// ---- linear algebra ------------------------------------------------------
/// a[M×K] · b[K×N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[B×M×K] · b[B×K×N].
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[N×in] · wᵀ + bias, w stored [out×in]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// ---- image ops (NCHW) ----------------------------------------------------
struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  bool circular = false;
};

/// Cross-correlation x[B,C,H,W] ⋆ w[O,C,kh,kw] + bias[O] (bias may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dOptions& opt);
/// Non-overlapping max pooling; ties resolve to the first index in scan order.
Tensor max_pool2d(const Tensor& x, std::size_t window);
/// Mean over the two trailing spatial axes: [B,C,H,W] -> [B,C].
Tensor global_avg_pool(const Tensor& x);
/// [B,C,H,W] -> [B, (H/p)(W/p), C·p·p], patches in row-major order.
Tensor patchify(const Tensor& x, std::size_t patch);

// ---- normalisation / capsules / losses -----------------------------------
/// Layer norm over the last axis with affine gamma, beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// squash(s) = |s|²/(1+|s|²) · s/|s| over the last axis; squash(0) = 0.
Tensor squash(const Tensor& x);
/// Mean squared error between equal-shape tensors; target carries no gradient.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
/// Mean cross-entropy of logits[B,C] against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Max over coordinates of |autodiff − central difference| / max(1, |central difference|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h = 1e-6);

std::ostream& operator<<(std::ostream& os, const Tensor& t);

}  // namespace sinbasis
