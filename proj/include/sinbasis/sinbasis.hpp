#pragma once

// Weight-space sinusoidal reparameterisation.
//
// A WeightMatrix owns raw trainable parameters W (P rows, any trailing shape,
// e.g. a conv kernel [O,C,kh,kw] has P = O) and recomputes the effective
// weight W~ on every call:
//
//   plain           W~ = W
//   sin_fixed       W~ = sin(W)
//   sin_tunable     W~[p,q] = a[p]·sin(b[p]·W[p,q] + phi[p])
//   cos_fixed       W~ = cos(W)
//   random_fourier  row p is sin(W[p,:]) or cos(W[p,:]) by a frozen seeded
//                   coin flip, scaled by sqrt(2/P)
//
// a, b, phi are the diagonals of the row-wise amplitude, frequency and phase
// matrices and are stored as length-P vectors.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sinbasis/tensor.hpp"

namespace sinbasis {

enum class BasisMode { plain, sin_fixed, sin_tunable, cos_fixed, random_fourier };

std::string_view to_string(BasisMode mode);
/// Throws std::invalid_argument for unknown names.
BasisMode parse_basis_mode(std::string_view name);

struct TunableParams {
  Tensor a, b, phi;

  /// a = 1, b = 1, phi = 0: reproduces sin_fixed exactly.
  static TunableParams identity(std::size_t rows);
};

class WeightMatrix {
 public:
  WeightMatrix() = default;
  /// Wraps existing raw parameters; tunables start at identity, the random
  /// Fourier row assignment is drawn from `basis_seed`.
  WeightMatrix(Tensor raw, BasisMode mode, std::uint64_t basis_seed = 0);
  WeightMatrix(Tensor raw, BasisMode mode, std::optional<TunableParams> tunable,
               std::vector<double> cosine_rows);

  /// Raw W ~ U[−sqrt(1/L), sqrt(1/L)], L = fan-in (elements per row).
  static WeightMatrix initialized(Shape shape, BasisMode mode, std::uint64_t seed);

  BasisMode mode() const { return mode_; }
  const Tensor& raw() const { return raw_; }
  Tensor& raw() { return raw_; }
  const std::optional<TunableParams>& tunable() const { return tunable_; }
  std::optional<TunableParams>& tunable() { return tunable_; }
  /// 1.0 for rows that use cos in random_fourier mode, 0.0 for sin rows.
  const std::vector<double>& cosine_rows() const { return cosine_rows_; }
  void set_cosine_rows(std::vector<double> rows) { cosine_rows_ = std::move(rows); }

  std::size_t rows() const { return raw_.dim(0); }
  std::size_t cols() const { return raw_.numel() / raw_.dim(0); }

  /// Trainable leaves: W, then a, b, phi when tunable.
  std::vector<Tensor> parameters() const;

 private:
  Tensor raw_;
  BasisMode mode_ = BasisMode::plain;
  std::optional<TunableParams> tunable_;
  std::vector<double> cosine_rows_;
};

/// W~ as a differentiable function of the raw parameters.
Tensor effective_weight(const WeightMatrix& wm);

struct WeightGrads {
  Tensor w;
  Tensor a, b, phi;  // undefined unless tunable
};

/// Closed-form chain rule of W~ back to W (and a, b, phi) for an upstream
/// gradient dL/dW~ of the raw weight's shape.
WeightGrads effective_weight_grad(const WeightMatrix& wm, const Tensor& upstream);

struct LipschitzReport {
  double sin_norm;  // ‖sin(W)‖_F
  double raw_norm;  // ‖W‖_F
  bool holds;
};

LipschitzReport lipschitz_norm_check(const Tensor& w);

}  // namespace sinbasis
