#include "sinbasis/matrix_equiv.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <utility>

#include "sinbasis/kernels.hpp"

namespace sinbasis::matrix_equiv {

namespace {

kernels::ConvGeometry geometry(const ConvSpec& s, std::size_t h, std::size_t w) {
  kernels::ConvGeometry g;
  g.channels = 1;
  g.in_h = h;
  g.in_w = w;
  g.kernel_h = s.kernel_h;
  g.kernel_w = s.kernel_w;
  g.stride = s.stride;
  g.padding = s.padding;
  g.dilation = s.dilation;
  g.circular = s.circular;
  return g;
}

void require_image(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() != 2) throw DimensionError(std::string(op) + ": expected a 2-D tensor");
}

}  // namespace

std::size_t ConvSpec::out_h(std::size_t in_h) const { return geometry(*this, in_h, 1).out_h(); }
std::size_t ConvSpec::out_w(std::size_t in_w) const { return geometry(*this, 1, in_w).out_w(); }

void ConvSpec::validate(std::size_t in_h, std::size_t in_w) const {
  if (kernel_h == 0 || kernel_w == 0 || stride == 0 || dilation == 0) {
    throw DimensionError("ConvSpec: kernel extents, stride and dilation must be positive");
  }
  if (out_h(in_h) == 0 || out_w(in_w) == 0) {
    throw DimensionError("ConvSpec: degenerate output for input " + std::to_string(in_h) + "x" +
                         std::to_string(in_w));
  }
}

Tensor flatten(const Tensor& image) {
  require_image(image, "flatten");
  return reshape(image, {image.numel()});
}

Tensor unflatten(const Tensor& vec, std::size_t h, std::size_t w) { return reshape(vec, {h, w}); }

Tensor im2col(const Tensor& image, const ConvSpec& spec) {
  require_image(image, "im2col");
  const std::size_t h = image.dim(0), w = image.dim(1);
  spec.validate(h, w);
  const auto g = geometry(spec, h, w);
  std::vector<double> cols(g.patch_size() * g.windows());
  kernels::parallel::im2col(g, image.data(), cols);
  // kernels lay out [patch × windows]; the patch matrix is its transpose.
  return permute(Tensor({g.patch_size(), g.windows()}, std::move(cols)), {1, 0});
}

Tensor conv_direct(const Tensor& image, const Tensor& kernel, const ConvSpec& spec) {
  require_image(image, "conv_direct");
  require_image(kernel, "conv_direct");
  if (kernel.dim(0) != spec.kernel_h || kernel.dim(1) != spec.kernel_w) {
    throw DimensionError("conv_direct: kernel shape disagrees with spec");
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  spec.validate(h, w);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const auto x = image.data(), k = kernel.data();
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double acc = 0.0;
      for (std::size_t ki = 0; ki < spec.kernel_h; ++ki)
        for (std::size_t kj = 0; kj < spec.kernel_w; ++kj) {
          long iy = static_cast<long>(oy * spec.stride + ki * spec.dilation) - static_cast<long>(spec.padding);
          long ix = static_cast<long>(ox * spec.stride + kj * spec.dilation) - static_cast<long>(spec.padding);
          if (spec.circular) {
            iy = ((iy % static_cast<long>(h)) + static_cast<long>(h)) % static_cast<long>(h);
            ix = ((ix % static_cast<long>(w)) + static_cast<long>(w)) % static_cast<long>(w);
          } else if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) {
            continue;
          }
          acc += k[ki * spec.kernel_w + kj] * x[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)];
        }
      out[oy * ow + ox] = acc;
    }
  return Tensor({oh, ow}, std::move(out));
}

SparseBTTB assemble_bttb(const Tensor& kernel, const ConvSpec& spec, std::size_t in_h,
                         std::size_t in_w) {
  require_image(kernel, "assemble_bttb");
  if (kernel.dim(0) != spec.kernel_h || kernel.dim(1) != spec.kernel_w) {
    throw DimensionError("assemble_bttb: kernel shape disagrees with spec");
  }
  spec.validate(in_h, in_w);
  const std::size_t oh = spec.out_h(in_h), ow = spec.out_w(in_w);
  const auto k = kernel.data();
  SparseBTTB m;
  m.rows = oh * ow;
  m.cols = in_h * in_w;
  m.kernel = kernel.detach();
  m.spec = spec;
  m.in_h = in_h;
  m.in_w = in_w;
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      // Taps that wrap onto the same input pixel are merged.
      std::map<std::size_t, double> row;
      for (std::size_t ki = 0; ki < spec.kernel_h; ++ki)
        for (std::size_t kj = 0; kj < spec.kernel_w; ++kj) {
          const long iy = kernels::source_index(
              static_cast<long>(oy * spec.stride + ki * spec.dilation) - static_cast<long>(spec.padding),
              in_h, spec.circular);
          const long ix = kernels::source_index(
              static_cast<long>(ox * spec.stride + kj * spec.dilation) - static_cast<long>(spec.padding),
              in_w, spec.circular);
          if (iy < 0 || ix < 0) continue;
          row[static_cast<std::size_t>(iy) * in_w + static_cast<std::size_t>(ix)] += k[ki * spec.kernel_w + kj];
        }
      for (const auto& [col, value] : row) m.entries.push_back({oy * ow + ox, col, value});
    }
  return m;
}

Tensor SparseBTTB::multiply(const Tensor& x) const {
  if (!x.defined() || x.numel() != cols) {
    throw DimensionError("SparseBTTB::multiply: expected a vector of length " + std::to_string(cols));
  }
  const auto xv = x.data();
  std::vector<double> y(rows, 0.0);
  for (const auto& e : entries) y[e.row] += e.value * xv[e.col];
  return Tensor({rows}, std::move(y));
}

Tensor SparseBTTB::to_dense() const {
  std::vector<double> d(rows * cols, 0.0);
  for (const auto& e : entries) d[e.row * cols + e.col] = e.value;
  return Tensor({rows, cols}, std::move(d));
}

void write_bttb(std::ostream& os, const SparseBTTB& m) {
  os << m.rows << ' ' << m.cols << ' ' << m.nnz() << '\n';
  os << std::setprecision(17);
  for (const auto& e : m.entries) os << e.row << ' ' << e.col << ' ' << e.value << '\n';
}

Tensor circular_shift(const Tensor& x, long delta) {
  if (!x.defined() || x.rank() != 1) throw DimensionError("circular_shift: expected a vector");
  const long n = static_cast<long>(x.numel());
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = xv[static_cast<std::size_t>((((i - delta) % n) + n) % n)];
  return Tensor(x.shape(), std::move(out));
}

namespace {

void check_attention(const Tensor& x, const AttentionWeights& w) {
  if (!x.defined() || x.rank() != 2) throw DimensionError("attention: X must be N×d");
  const std::size_t d = x.dim(1);
  for (const Tensor* m : {&w.w_q, &w.w_k, &w.w_v}) {
    if (!m->defined() || m->rank() != 2 || m->dim(0) != d || m->dim(1) != d) {
      throw DimensionError("attention: projection weights must be " + std::to_string(d) + "x" +
                           std::to_string(d));
    }
  }
}

}  // namespace

Tensor attention_scores(const Tensor& x, const AttentionWeights& w) {
  check_attention(x, w);
  const Tensor q = matmul(x, w.w_q);
  const Tensor k = matmul(x, w.w_k);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.dim(1)));
  return softmax_rows(scale(matmul(q, permute(k, {1, 0})), inv_sqrt_d));
}

Tensor attention_forward(const Tensor& x, const AttentionWeights& w) {
  return matmul(attention_scores(x, w), matmul(x, w.w_v));
}

}  // namespace sinbasis::matrix_equiv
