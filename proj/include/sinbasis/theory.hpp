#pragma once

// Numerical checks of the three structural results behind sinusoidal weight
// bases: the shift-response span identity, the Mercer spectrum of the sine
// feature kernel, and the Rademacher bound for norm-bounded linear maps.

#include <cstdint>
#include <vector>

#include "sinbasis/tensor.hpp"

namespace sinbasis::theory {

// ---- shift response ------------------------------------------------------------

struct ShiftResponseReport {
  long delta = 0;
  double residual = 0.0;  // max_p |LHS[p] − RHS[p]|, Fourier-coefficient model
  /// max_p |sin(W)·shift(X, δ) − RHS[p]| with X read as a spatial vector.
  /// Diagnostic only: the identity is not claimed at this level.
  double spatial_residual = 0.0;
  std::vector<double> c1, c2;  // diagonals cos φ_q, sin φ_q
};

/// φ_q(δ) = 2π·((δ·q) mod L)/L for q = 0..L−1. Reducing δ·q mod L first
/// makes δ ≡ 0 (mod L) give φ = 0 exactly.
std::vector<double> shift_phases(std::size_t length, long delta);

/// LHS[p] = Σ_q sin(W[p,q] + φ_q)·X[q];  RHS = sin(W)·C₁·X + cos(W)·C₂·X.
ShiftResponseReport verify_shift_response(const Tensor& w, const Tensor& x, long delta);

// ---- Mercer spectrum -------------------------------------------------------------

/// k(u,v) = ∫₀^Ω sin(ωu)·sin(ωv) dω in closed form.
double kernel_eval(double u, double v, double omega);

/// Midpoint grid (i + ½)·(b − a)/G + a.
std::vector<double> midpoint_grid(std::size_t g, double a = 0.0, double b = 1.0);

struct MercerReport {
  std::vector<double> grid;
  double omega = 0.0;
  std::vector<double> eigenvalues;        // descending
  std::vector<double> truncation_errors;  // E_m for m = 1..G
  double min_eigenvalue = 0.0;
  std::size_t stable_count = 0;  // eigenvalues ≥ 1e-10·λ₁ used for the fit
  double alpha_hat = 0.0;        // from log λ_i ≈ c − 2α·log i
  double em_slope = 0.0;         // log-log slope of E_m over the middle third of the stable range
  double predicted_slope = 0.0;  // ½ − α̂
  std::size_t slope_m_lo = 0, slope_m_hi = 0;
};

/// Gram matrix K[i,j] = k(u_i, u_j)·w with w = interval/G; symmetric
/// eigendecomposition. Throws ContractError on repeated grid points or G > 256.
MercerReport mercer_spectrum(const std::vector<double>& grid, double omega);

// ---- Rademacher complexity -------------------------------------------------------

struct RademacherReport {
  std::size_t n = 0;
  double b = 0.0, r = 0.0;
  double estimate = 0.0;  // mean over draws of (B/n)·‖Σ σ_i x_i‖
  double bound = 0.0;     // B·R/√n
  std::size_t trials = 0;
};

/// inputs: [n × d]. Throws ContractError if some ‖x_i‖ > R or trials < 100.
RademacherReport rademacher_estimate(const Tensor& inputs, double b, double r, std::size_t trials,
                                     std::uint64_t seed);

}  // namespace sinbasis::theory
