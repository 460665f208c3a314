#pragma once

// Convolution and attention written as linear maps on flattened inputs:
// im2col patch matrices, explicit block-Toeplitz (BTTB) convolution matrices,
// circular shifts, and single-head dense attention. `conv_direct` is the
// textbook sliding-window loop kept as the independent oracle for the others.

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "sinbasis/tensor.hpp"

namespace sinbasis::matrix_equiv {

struct ConvSpec {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool circular = false;
  std::size_t dilation = 1;

  /// floor((in + 2·pad − dilation·(k−1) − 1)/stride) + 1, or 0 when the kernel does not fit.
  std::size_t out_h(std::size_t in_h) const;
  std::size_t out_w(std::size_t in_w) const;
  /// Throws DimensionError for zero extents or a degenerate output.
  void validate(std::size_t in_h, std::size_t in_w) const;
};

/// Row-major vectorisation of a 2-D image.
Tensor flatten(const Tensor& image);
Tensor unflatten(const Tensor& vec, std::size_t h, std::size_t w);

/// Patch matrix [windows × kernel_h·kernel_w]: row i is the i-th receptive field
/// in sliding (row-major) order, so conv = im2col(X) · vec(kernel).
Tensor im2col(const Tensor& image, const ConvSpec& spec);

/// Direct cross-correlation (no kernel flip).
Tensor conv_direct(const Tensor& image, const Tensor& kernel, const ConvSpec& spec);

struct SparseEntry {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Coordinate-list realisation of a convolution as a P×L matrix.
struct SparseBTTB {
  std::size_t rows = 0;  // P = output pixels
  std::size_t cols = 0;  // L = input pixels
  std::vector<SparseEntry> entries;  // row-major, no duplicate coordinates
  Tensor kernel;
  ConvSpec spec;
  std::size_t in_h = 0, in_w = 0;

  std::size_t nnz() const { return entries.size(); }
  /// y = W_conv · x for x of length L.
  Tensor multiply(const Tensor& x) const;
  Tensor to_dense() const;
};

SparseBTTB assemble_bttb(const Tensor& kernel, const ConvSpec& spec, std::size_t in_h,
                         std::size_t in_w);

/// Text export: "P L NNZ" header, then one "row col value" line per entry.
void write_bttb(std::ostream& os, const SparseBTTB& m);

/// out[i] = x[(i − delta) mod L]; delta may be negative or exceed L.
Tensor circular_shift(const Tensor& x, long delta);

struct AttentionWeights {
  Tensor w_q, w_k, w_v;  // d × d
};

/// Row-stochastic score matrix softmax(QKᵀ/√d) for X[N×d].
Tensor attention_scores(const Tensor& x, const AttentionWeights& w);
/// Single-head attention A·V, differentiable in X and all three projections.
Tensor attention_forward(const Tensor& x, const AttentionWeights& w);

}  // namespace sinbasis::matrix_equiv
