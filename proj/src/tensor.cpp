#include "sinbasis/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "sinbasis/kernels.hpp"

namespace sinbasis {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Gradient buffer of an input, allocated on first use; nullptr when the
  // input does not take part in differentiation.
  double* grad_of(std::size_t i) {
    Node& in = *inputs[i];
    if (!in.requires_grad) return nullptr;
    if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
    return in.grad.data();
  }
  const std::vector<double>& input_value(std::size_t i) const { return inputs[i]->value; }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool t_grad_enabled = true;

Tensor record(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
              std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool needs = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                       return t.defined() && t.requires_grad();
                     });
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

std::vector<double> copy_values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F f, D deriv) {
  require_defined(x, name);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return record(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    const auto& xv = self.input_value(0);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.numel() == 1 && !same;
  const bool b_scalar = b.numel() == 1 && !same;
  if (!same && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  const auto av = a.data(), bv = b.data();
  auto A = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
  auto B = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (op) {
      case BinOp::Add: out[i] = A(i) + B(i); break;
      case BinOp::Sub: out[i] = A(i) - B(i); break;
      case BinOp::Mul: out[i] = A(i) * B(i); break;
    }
  }
  return record(shape, std::move(out), {a, b}, [op, a_scalar, b_scalar](Node& self) {
    const auto& xa = self.input_value(0);
    const auto& xb = self.input_value(1);
    const std::size_t n = self.grad.size();
    if (double* ga = self.grad_of(0)) {
      for (std::size_t i = 0; i < n; ++i) {
        double d = self.grad[i];
        if (op == BinOp::Mul) d *= b_scalar ? xb[0] : xb[i];
        ga[a_scalar ? 0 : i] += d;
      }
    }
    if (double* gb = self.grad_of(1)) {
      for (std::size_t i = 0; i < n; ++i) {
        double d = self.grad[i];
        if (op == BinOp::Sub) d = -d;
        if (op == BinOp::Mul) d *= a_scalar ? xa[0] : xa[i];
        gb[b_scalar ? 0 : i] += d;
      }
    }
  });
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("Tensor: extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("dim: axis out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  if (!node_->leaf) throw ContractError("mutable_data: only leaf tensors may be written");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) throw ContractError("backward: no recorded graph reaches this tensor");
  if (node_->released) {
    throw ContractError("backward: graph was already consumed by a previous backward pass");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (n->released) {
      throw ContractError("backward: graph was already consumed by a previous backward pass");
    }
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && !child->leaf && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  if (node_->leaf) {
    if (node_->grad.empty()) node_->grad.assign(1, 0.0);
    node_->grad[0] += 1.0;
    return;
  }
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
  for (Node* n : order) {
    if (n->leaf) continue;
    n->released = true;
    n->backward_fn = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(node_->shape, node_->value, false);
}

Tensor Tensor::clone(bool requires_grad) const {
  require_defined(*this, "clone");
  return Tensor(node_->shape, node_->value, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---- arithmetic -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

// ---- elementwise ------------------------------------------------------------

Tensor sin(const Tensor& x) {
  return unary(
      x, "sin", [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary(
      x, "cos", [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  require_defined(x, "log");
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  if (x.rank() == 0) throw DimensionError("softmax_rows: needs rank >= 1");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * cols;
    double* yr = out.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
  return record(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

// ---- reductions / layout -----------------------------------------------------

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  return record({}, {total}, {x}, [](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require_defined(x, "sum_axis");
  if (axis >= x.rank()) throw DimensionError("sum_axis: axis out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<long>(axis)));
  const std::size_t extent = s[axis];
  const std::size_t inner = shape_numel(Shape(s.begin() + static_cast<long>(axis) + 1, s.end()));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  std::vector<double> out(outer * inner, 0.0);
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * extent + e) * inner + i];
  return record(out_shape, std::move(out), {x}, [outer, extent, inner](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t e = 0; e < extent; ++e)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * extent + e) * inner + i] += self.grad[o * inner + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return record(std::move(shape), copy_values(x), {x}, [](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  require_defined(x, "permute");
  const Shape& s = x.shape();
  if (order.size() != s.size()) throw DimensionError("permute: order rank mismatch");
  std::vector<bool> used(s.size(), false);
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= s.size() || used[order[i]]) throw DimensionError("permute: invalid axis order");
    used[order[i]] = true;
    out_shape[i] = s[order[i]];
  }
  const auto in_strides = strides_of(s);
  // Source offset of every output element, in output order.
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) off += idx[d] * in_strides[order[d]];
    src[flat] = off;
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> out(src.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = in[src[i]];
  return record(out_shape, std::move(out), {x}, [src = std::move(src)](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
  });
}

Tensor expand(const Tensor& x, Shape shape) {
  require_defined(x, "expand");
  const Shape& s = x.shape();
  if (s.size() != shape.size()) throw DimensionError("expand: rank mismatch");
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (s[d] != shape[d] && s[d] != 1) {
      throw DimensionError("expand: cannot broadcast " + shape_str(s) + " to " + shape_str(shape));
    }
  }
  const auto in_strides = strides_of(s);
  const std::size_t n = shape_numel(shape);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) off += (s[d] == 1 ? 0 : idx[d]) * in_strides[d];
    src[flat] = off;
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  const auto in = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = in[src[i]];
  return record(std::move(shape), std::move(out), {x}, [src = std::move(src)](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
  });
}

// ---- row broadcasts ----------------------------------------------------------

namespace {

Tensor row_op(const Tensor& x, const Tensor& v, bool multiply, const char* name) {
  require_defined(x, name);
  require_defined(v, name);
  if (x.rank() == 0 || v.numel() != x.dim(0)) {
    throw DimensionError(std::string(name) + ": vector of " + std::to_string(v.numel()) +
                         " entries does not match rows of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.numel() / rows;
  const auto xv = x.data();
  const auto vv = v.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = multiply ? xv[r * cols + c] * vv[r] : xv[r * cols + c] + vv[r];
  return record(x.shape(), std::move(out), {x, v}, [rows, cols, multiply](Node& self) {
    const auto& xin = self.input_value(0);
    const auto& vin = self.input_value(1);
    if (double* gx = self.grad_of(0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          gx[r * cols + c] += multiply ? self.grad[r * cols + c] * vin[r] : self.grad[r * cols + c];
    }
    if (double* gv = self.grad_of(1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
          acc += multiply ? self.grad[r * cols + c] * xin[r * cols + c] : self.grad[r * cols + c];
        gv[r] += acc;
      }
    }
  });
}

}  // namespace

Tensor row_scale(const Tensor& x, const Tensor& v) { return row_op(x, v, true, "row_scale"); }
Tensor row_shift(const Tensor& x, const Tensor& v) { return row_op(x, v, false, "row_shift"); }

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  if (x.rank() == 0 || bias.numel() != x.shape().back()) {
    throw DimensionError("add_bias: bias of " + std::to_string(bias.numel()) +
                         " entries does not match " + shape_str(x.shape()));
  }
  const std::size_t cols = bias.numel();
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out = copy_values(x);
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  return record(x.shape(), std::move(out), {x, bias}, [rows, cols](Node& self) {
    if (double* gx = self.grad_of(0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    if (double* gb = self.grad_of(1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += self.grad[r * cols + c];
  });
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::parallel::gemm(false, false, m, n, k, a.data(), b.data(), out);
  return record({m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    if (double* ga = self.grad_of(0))
      kernels::parallel::gemm(false, true, m, k, n, self.grad, self.input_value(1), {ga, m * k}, true);
    if (double* gb = self.grad_of(1))
      kernels::parallel::gemm(true, false, k, n, m, self.input_value(0), self.grad, {gb, k * n}, true);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(batch * m * n);
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < batch; ++i)
    kernels::parallel::gemm(false, false, m, n, k, av.subspan(i * m * k, m * k),
                            bv.subspan(i * k * n, k * n), {out.data() + i * m * n, m * n});
  return record({batch, m, n}, std::move(out), {a, b}, [batch, m, n, k](Node& self) {
    const std::span<const double> g = self.grad;
    const std::span<const double> av = self.input_value(0), bv = self.input_value(1);
    if (double* ga = self.grad_of(0))
      for (std::size_t i = 0; i < batch; ++i)
        kernels::parallel::gemm(false, true, m, k, n, g.subspan(i * m * n, m * n),
                                bv.subspan(i * k * n, k * n), {ga + i * m * k, m * k}, true);
    if (double* gb = self.grad_of(1))
      for (std::size_t i = 0; i < batch; ++i)
        kernels::parallel::gemm(true, false, k, n, m, av.subspan(i * m * k, m * k),
                                g.subspan(i * m * n, m * n), {gb + i * k * n, k * n}, true);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined(x, "linear");
  require_rank(w, 2, "linear");
  const std::size_t out_f = w.dim(0), in_f = w.dim(1);
  if (x.rank() < 1 || x.shape().back() != in_f) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  if (bias.defined() && bias.numel() != out_f) throw DimensionError("linear: bias size mismatch");
  const std::size_t rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<double> out(rows * out_f);
  kernels::parallel::gemm(false, true, rows, out_f, in_f, x.data(), w.data(), out);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < out_f; ++c) out[r * out_f + c] += b[c];
  }
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return record(out_shape, std::move(out), inputs, [rows, in_f, out_f, has_bias](Node& self) {
    if (double* gx = self.grad_of(0))
      kernels::parallel::gemm(false, false, rows, in_f, out_f, self.grad, self.input_value(1),
                              {gx, rows * in_f}, true);
    if (double* gw = self.grad_of(1))
      kernels::parallel::gemm(true, false, out_f, in_f, rows, self.grad, self.input_value(0),
                              {gw, out_f * in_f}, true);
    if (has_bias) {
      if (double* gb = self.grad_of(2))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < out_f; ++c) gb[c] += self.grad[r * out_f + c];
    }
  });
}

// ---- image ops ---------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: input channels " + std::to_string(x.dim(1)) +
                         " do not match kernel " + shape_str(w.shape()));
  }
  if (opt.stride == 0 || opt.dilation == 0) throw DimensionError("conv2d: stride and dilation must be positive");
  kernels::ConvGeometry g;
  g.channels = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.kernel_h = w.dim(2);
  g.kernel_w = w.dim(3);
  g.stride = opt.stride;
  g.padding = opt.padding;
  g.dilation = opt.dilation;
  g.circular = opt.circular;
  if (g.out_h() == 0 || g.out_w() == 0) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " does not fit input " +
                         shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), out_c = w.dim(0);
  const std::size_t windows = g.windows(), patch = g.patch_size();
  if (bias.defined() && bias.numel() != out_c) throw DimensionError("conv2d: bias size mismatch");

  auto cols = std::make_shared<std::vector<double>>(batch * patch * windows);
  std::vector<double> out(batch * out_c * windows);
  const auto xv = x.data();
  const std::size_t image = g.channels * g.in_h * g.in_w;
  for (std::size_t b = 0; b < batch; ++b) {
    std::span<double> cb{cols->data() + b * patch * windows, patch * windows};
    kernels::parallel::im2col(g, xv.subspan(b * image, image), cb);
    std::span<double> ob{out.data() + b * out_c * windows, out_c * windows};
    kernels::parallel::gemm(false, false, out_c, windows, patch, w.data(), cb, ob);
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::size_t o = 0; o < out_c; ++o)
        for (std::size_t p = 0; p < windows; ++p) ob[o * windows + p] += bv[o];
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return record({batch, out_c, g.out_h(), g.out_w()}, std::move(out), inputs,
                [g, batch, out_c, windows, patch, image, has_bias, cols](Node& self) {
                  const std::span<const double> grad = self.grad;
                  const std::span<const double> wv = self.input_value(1);
                  if (double* gw = self.grad_of(1)) {
                    for (std::size_t b = 0; b < batch; ++b)
                      kernels::parallel::gemm(false, true, out_c, patch, windows,
                                              grad.subspan(b * out_c * windows, out_c * windows),
                                              {cols->data() + b * patch * windows, patch * windows},
                                              {gw, out_c * patch}, true);
                  }
                  if (double* gx = self.grad_of(0)) {
                    std::vector<double> dcols(patch * windows);
                    for (std::size_t b = 0; b < batch; ++b) {
                      kernels::parallel::gemm(true, false, patch, windows, out_c, wv,
                                              grad.subspan(b * out_c * windows, out_c * windows), dcols);
                      kernels::parallel::col2im(g, dcols, {gx + b * image, image});
                    }
                  }
                  if (has_bias) {
                    if (double* gb = self.grad_of(2))
                      for (std::size_t b = 0; b < batch; ++b)
                        for (std::size_t o = 0; o < out_c; ++o)
                          for (std::size_t p = 0; p < windows; ++p)
                            gb[o] += grad[(b * out_c + o) * windows + p];
                  }
                });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 4, "max_pool2d");
  if (window == 0 || x.dim(2) < window || x.dim(3) < window) {
    throw DimensionError("max_pool2d: window does not fit " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  std::vector<double> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = p * h * w + (oy * window + dy) * w + ox * window + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
  return record({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                [argmax = std::move(argmax)](Node& self) {
                  double* gx = self.grad_of(0);
                  if (!gx) return;
                  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
                });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t area = x.dim(2) * x.dim(3);
  std::vector<double> out(planes, 0.0);
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) acc += xv[p * area + i];
    out[p] = acc / static_cast<double>(area);
  }
  return record({x.dim(0), x.dim(1)}, std::move(out), {x}, [planes, area](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < area; ++i) gx[p * area + i] += self.grad[p] / static_cast<double>(area);
  });
}

Tensor patchify(const Tensor& x, std::size_t patch) {
  require_rank(x, 4, "patchify");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("patchify: patch size " + std::to_string(patch) + " does not divide " +
                         shape_str(x.shape()));
  }
  const std::size_t ph = h / patch, pw = w / patch, tokens = ph * pw;
  const std::size_t dim = ch * patch * patch;
  std::vector<std::size_t> src(batch * tokens * dim);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ty = 0; ty < ph; ++ty)
      for (std::size_t tx = 0; tx < pw; ++tx)
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t dy = 0; dy < patch; ++dy)
            for (std::size_t dx = 0; dx < patch; ++dx) {
              const std::size_t token = ty * pw + tx;
              const std::size_t feat = (c * patch + dy) * patch + dx;
              src[(b * tokens + token) * dim + feat] =
                  ((b * ch + c) * h + ty * patch + dy) * w + tx * patch + dx;
            }
  std::vector<double> out(src.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  return record({batch, tokens, dim}, std::move(out), {x}, [src = std::move(src)](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
  });
}

// ---- normalisation / capsules / losses ----------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  if (x.rank() == 0) throw DimensionError("layer_norm: needs rank >= 1");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine size mismatch");
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mu) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * gv[c] + bv[c];
    }
  }
  return record(x.shape(), std::move(out), {x, gamma, beta},
                [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                  const auto& gam = self.input_value(1);
                  if (double* gx = self.grad_of(0)) {
                    const double dn = static_cast<double>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = self.grad[r * d + c] * gam[c];
                        s1 += dxh;
                        s2 += dxh * xhat[r * d + c];
                      }
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = self.grad[r * d + c] * gam[c];
                        gx[r * d + c] += inv_std[r] / dn * (dn * dxh - s1 - xhat[r * d + c] * s2);
                      }
                    }
                  }
                  if (double* gg = self.grad_of(1))
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < d; ++c) gg[c] += self.grad[r * d + c] * xhat[r * d + c];
                  if (double* gb = self.grad_of(2))
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < d; ++c) gb[c] += self.grad[r * d + c];
                });
}

Tensor squash(const Tensor& x) {
  require_defined(x, "squash");
  if (x.rank() == 0) throw DimensionError("squash: needs rank >= 1");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) n2 += xv[r * d + c] * xv[r * d + c];
    const double f = std::sqrt(n2) / (1.0 + n2);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = f * xv[r * d + c];
  }
  return record(x.shape(), std::move(out), {x}, [rows, d](Node& self) {
    double* gx = self.grad_of(0);
    if (!gx) return;
    const auto& s = self.input_value(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double n2 = 0.0, sg = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        n2 += s[r * d + c] * s[r * d + c];
        sg += s[r * d + c] * self.grad[r * d + c];
      }
      if (n2 == 0.0) continue;  // Jacobian vanishes at the origin.
      const double n = std::sqrt(n2);
      const double f = n / (1.0 + n2);
      const double df_over_n = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
      for (std::size_t c = 0; c < d; ++c)
        gx[r * d + c] += f * self.grad[r * d + c] + df_over_n * sg * s[r * d + c];
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_defined(pred, "mse_loss");
  require_defined(target, "mse_loss");
  if (pred.numel() != target.numel()) {
    throw DimensionError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto p = pred.data(), t = target.data();
  const std::size_t n = p.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  std::vector<double> tv(t.begin(), t.end());
  return record({}, {acc / static_cast<double>(n)}, {pred}, [tv = std::move(tv)](Node& self) {
    double* gp = self.grad_of(0);
    if (!gp) return;
    const auto& pv = self.input_value(0);
    const double k = 2.0 * self.grad[0] / static_cast<double>(pv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += k * (pv[i] - tv[i]);
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) throw DimensionError("cross_entropy: label count mismatch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw ContractError("cross_entropy: label " + std::to_string(l) + " out of range");
    }
  }
  const auto z = logits.data();
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* zr = z.data() + b * classes;
    const double mx = *std::max_element(zr, zr + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(zr[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(zr[c] - lse);
    loss += lse - zr[labels[b]];
  }
  return record({}, {loss / static_cast<double>(batch)}, {logits},
                [batch, classes, labels, probs = std::move(probs)](Node& self) {
                  double* gz = self.grad_of(0);
                  if (!gz) return;
                  const double k = self.grad[0] / static_cast<double>(batch);
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t c = 0; c < classes; ++c) {
                      const double onehot = static_cast<int>(c) == labels[b] ? 1.0 : 0.0;
                      gz[b * classes + c] += k * (probs[b * classes + c] - onehot);
                    }
                });
}

// ---- gradient check ------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.clone(true);
  Tensor y = f(leaf);
  if (y.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  std::vector<double> analytic(x.numel(), 0.0);
  if (y.requires_grad()) {
    y.backward();
    if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
  }
  NoGradGuard no_grad;
  double worst = 0.0;
  std::vector<double> probe(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig - h;
    const double fm = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  if (!t.defined()) return os << "Tensor(undefined)";
  os << "Tensor" << shape_str(t.shape()) << '{';
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? ", " : "") << d[i];
  return os << '}';
}

}  // namespace sinbasis
