#pragma once

// Dense numeric kernels used by the tensor ops.
//
// Every kernel exists twice: `serial::` is the plain reference loop nest kept
// for testing, `parallel::` is the OpenMP version used by the ops. Parallel
// kernels only split work over independent output elements, so the summation
// order for each output value does not depend on the thread count and results
// are bit-identical for any OMP_NUM_THREADS.

#include <cstddef>
#include <span>

namespace sinbasis::kernels {

/// Geometry of one 2-D sliding-window pass over a C×H×W image.
struct ConvGeometry {
  std::size_t channels = 1;
  std::size_t in_h = 0, in_w = 0;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  bool circular = false;

  std::size_t out_h() const;
  std::size_t out_w() const;
  std::size_t windows() const { return out_h() * out_w(); }
  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
};

/// Maps an output-relative source coordinate to an input index, or -1 when it
/// falls in the zero padding.
long source_index(long pos, std::size_t extent, bool circular);

namespace serial {

/// C[M×N] = op(A) · op(B) (+ C when accumulate). op(A) is M×K.
/// A is stored row-major as M×K (or K×M when trans_a), B as K×N (or N×K).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate = false);

/// cols[patch_size × windows] from one C×H×W image.
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols);

/// Adjoint of im2col: scatter-adds cols back into image (image is not cleared).
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image);

}  // namespace serial

namespace parallel {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate = false);

void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols);

void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image);

}  // namespace parallel

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int thread_count();

/// Applies the SINBASIS_THREADS environment variable, if set.
void configure_threads_from_env();

}  // namespace sinbasis::kernels
