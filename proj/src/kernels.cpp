#include "sinbasis/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sinbasis/errors.hpp"

namespace sinbasis::kernels {

namespace {

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                       std::size_t dil) {
  const long span = static_cast<long>(dil * (k - 1) + 1);
  const long padded = static_cast<long>(in + 2 * pad);
  if (padded < span) return 0;
  return static_cast<std::size_t>((padded - span) / static_cast<long>(stride)) + 1;
}

void check_gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                std::span<const double> b, std::span<double> c) {
  if (a.size() != m * k || b.size() != k * n || c.size() != m * n) {
    throw DimensionError("gemm: buffer sizes do not match m, n, k");
  }
}

// Row-major copy of op(A) as M×K.
std::vector<double> pack(bool trans, std::size_t rows, std::size_t cols,
                         std::span<const double> src) {
  std::vector<double> out(rows * cols);
  if (!trans) {
    std::copy(src.begin(), src.end(), out.begin());
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = src[c * rows + r];
  }
  return out;
}

}  // namespace

std::size_t ConvGeometry::out_h() const {
  return out_extent(in_h, kernel_h, stride, padding, dilation);
}

std::size_t ConvGeometry::out_w() const {
  return out_extent(in_w, kernel_w, stride, padding, dilation);
}

long source_index(long pos, std::size_t extent, bool circular) {
  const long n = static_cast<long>(extent);
  if (circular) return ((pos % n) + n) % n;
  return (pos < 0 || pos >= n) ? -1 : pos;
}

namespace serial {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  check_gemm(m, n, k, a, b, c);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;  // same summation order as parallel::gemm
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (ch * g.kernel_h + ki) * g.kernel_w + kj;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long iy = source_index(static_cast<long>(oy * g.stride + ki * g.dilation) -
                                             static_cast<long>(g.padding),
                                         g.in_h, g.circular);
            const long ix = source_index(static_cast<long>(ox * g.stride + kj * g.dilation) -
                                             static_cast<long>(g.padding),
                                         g.in_w, g.circular);
            cols[row * oh * ow + oy * ow + ox] =
                (iy < 0 || ix < 0) ? 0.0
                                   : image[(ch * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                                           static_cast<std::size_t>(ix)];
          }
      }
}

void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (ch * g.kernel_h + ki) * g.kernel_w + kj;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long iy = source_index(static_cast<long>(oy * g.stride + ki * g.dilation) -
                                             static_cast<long>(g.padding),
                                         g.in_h, g.circular);
            const long ix = source_index(static_cast<long>(ox * g.stride + kj * g.dilation) -
                                             static_cast<long>(g.padding),
                                         g.in_w, g.circular);
            if (iy < 0 || ix < 0) continue;
            image[(ch * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                  static_cast<std::size_t>(ix)] += cols[row * oh * ow + oy * ow + ox];
          }
      }
}

}  // namespace serial

namespace parallel {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  check_gemm(m, n, k, a, b, c);
  const std::vector<double> pa = trans_a ? pack(true, m, k, a) : std::vector<double>{};
  const std::vector<double> pb = trans_b ? pack(true, k, n, b) : std::vector<double>{};
  const double* A = trans_a ? pa.data() : a.data();
  const double* B = trans_b ? pb.data() : b.data();
  double* C = c.data();
  const long rows = static_cast<long>(m);

#pragma omp parallel for schedule(static)
  for (long il = 0; il < rows; ++il) {
    const auto i = static_cast<std::size_t>(il);
    double* crow = C + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const long rows = static_cast<long>(g.patch_size());

#pragma omp parallel for schedule(static)
  for (long rl = 0; rl < rows; ++rl) {
    const auto row = static_cast<std::size_t>(rl);
    const std::size_t kj = row % g.kernel_w;
    const std::size_t ki = (row / g.kernel_w) % g.kernel_h;
    const std::size_t ch = row / (g.kernel_w * g.kernel_h);
    const double* plane = image.data() + ch * g.in_h * g.in_w;
    double* out = cols.data() + row * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const long iy = source_index(static_cast<long>(oy * g.stride + ki * g.dilation) -
                                       static_cast<long>(g.padding),
                                   g.in_h, g.circular);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const long ix = source_index(static_cast<long>(ox * g.stride + kj * g.dilation) -
                                         static_cast<long>(g.padding),
                                     g.in_w, g.circular);
        out[oy * ow + ox] = (iy < 0 || ix < 0)
                                ? 0.0
                                : plane[static_cast<std::size_t>(iy) * g.in_w +
                                        static_cast<std::size_t>(ix)];
      }
    }
  }
}

void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const long channels = static_cast<long>(g.channels);

  // Rows of one channel only scatter into that channel's plane.
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < channels; ++cl) {
    const auto ch = static_cast<std::size_t>(cl);
    double* plane = image.data() + ch * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (ch * g.kernel_h + ki) * g.kernel_w + kj;
        const double* in = cols.data() + row * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = source_index(static_cast<long>(oy * g.stride + ki * g.dilation) -
                                           static_cast<long>(g.padding),
                                       g.in_h, g.circular);
          if (iy < 0) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = source_index(static_cast<long>(ox * g.stride + kj * g.dilation) -
                                             static_cast<long>(g.padding),
                                         g.in_w, g.circular);
            if (ix < 0) continue;
            plane[static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)] +=
                in[oy * ow + ox];
          }
        }
      }
  }
}

}  // namespace parallel

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void configure_threads_from_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("SINBASIS_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

}  // namespace sinbasis::kernels
