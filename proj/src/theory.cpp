#include "sinbasis/theory.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "sinbasis/matrix_equiv.hpp"
#include "sinbasis/rng.hpp"

namespace sinbasis::theory {

std::vector<double> shift_phases(std::size_t length, long delta) {
  const long l = static_cast<long>(length);
  std::vector<double> phi(length);
  for (long q = 0; q < l; ++q) {
    const long k = (((delta % l) * q) % l + l) % l;
    phi[static_cast<std::size_t>(q)] = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(l);
  }
  return phi;
}

ShiftResponseReport verify_shift_response(const Tensor& w, const Tensor& x, long delta) {
  if (w.rank() != 2 || x.rank() != 1 || w.dim(1) != x.dim(0)) {
    throw DimensionError("verify_shift_response: W must be P×L and X of length L");
  }
  const std::size_t p = w.dim(0), l = w.dim(1);
  const auto wv = w.data(), xv = x.data();
  const std::vector<double> phi = shift_phases(l, delta);

  ShiftResponseReport rep;
  rep.delta = delta;
  rep.c1.resize(l);
  rep.c2.resize(l);
  for (std::size_t q = 0; q < l; ++q) {
    rep.c1[q] = std::cos(phi[q]);
    rep.c2[q] = std::sin(phi[q]);
  }
  const Tensor shifted = matrix_equiv::circular_shift(x, delta);
  for (std::size_t r = 0; r < p; ++r) {
    double lhs = 0.0, rhs = 0.0, spatial = 0.0;
    for (std::size_t q = 0; q < l; ++q) {
      const double a = wv[r * l + q];
      lhs += std::sin(a + phi[q]) * xv[q];
      rhs += std::sin(a) * (rep.c1[q] * xv[q]) + std::cos(a) * (rep.c2[q] * xv[q]);
      spatial += std::sin(a) * shifted.at(q);
    }
    rep.residual = std::max(rep.residual, std::abs(lhs - rhs));
    rep.spatial_residual = std::max(rep.spatial_residual, std::abs(spatial - rhs));
  }
  return rep;
}

namespace {

/// sin(a·Ω)/a, equal to Ω at a = 0.
double sin_ratio(double a, double omega) {
  const double x = a * omega;
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return omega * (1.0 - x2 / 6.0 + x2 * x2 / 120.0);
  }
  return std::sin(x) / a;
}

double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

double kernel_eval(double u, double v, double omega) {
  if (!(omega > 0.0)) throw DomainError("kernel_eval: omega must be positive");
  return 0.5 * (sin_ratio(u - v, omega) - sin_ratio(u + v, omega));
}

std::vector<double> midpoint_grid(std::size_t g, double a, double b) {
  std::vector<double> u(g);
  for (std::size_t i = 0; i < g; ++i) u[i] = a + (static_cast<double>(i) + 0.5) * (b - a) / static_cast<double>(g);
  return u;
}

MercerReport mercer_spectrum(const std::vector<double>& grid, double omega) {
  const std::size_t g = grid.size();
  if (g < 2 || g > 256) throw ContractError("mercer_spectrum: grid size must lie in [2, 256]");
  if (std::set<double>(grid.begin(), grid.end()).size() != g) {
    throw ContractError("mercer_spectrum: grid points must be distinct");
  }
  // Interval covered by G equally spaced cells whose outer points are lo and hi
  // (exactly [a, b] for a midpoint grid).
  const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
  const double weight = (*hi - *lo) * static_cast<double>(g) / static_cast<double>(g - 1) / static_cast<double>(g);

  Eigen::MatrixXd k(g, g);
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = kernel_eval(grid[i], grid[j], omega) * weight;
      k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      k(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(k, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("mercer_spectrum: eigendecomposition failed");

  MercerReport rep;
  rep.grid = grid;
  rep.omega = omega;
  rep.eigenvalues.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + g);
  std::sort(rep.eigenvalues.begin(), rep.eigenvalues.end(), std::greater<>());
  rep.min_eigenvalue = rep.eigenvalues.back();

  // tail sums accumulated from the smallest end keep E_m monotone
  rep.truncation_errors.assign(g, 0.0);
  double tail = 0.0;
  for (std::size_t m = g; m-- > 0;) {
    rep.truncation_errors[m] = std::sqrt(tail);  // E_{m+1}
    tail += std::max(rep.eigenvalues[m], 0.0);
  }

  const double l1 = rep.eigenvalues.front();
  std::vector<double> li, ll;
  for (std::size_t i = 0; i < g && rep.eigenvalues[i] >= 1e-10 * l1 && rep.eigenvalues[i] > 0.0; ++i) {
    li.push_back(std::log(static_cast<double>(i + 1)));
    ll.push_back(std::log(rep.eigenvalues[i]));
  }
  rep.stable_count = li.size();
  if (rep.stable_count < 3) throw NumericalError("mercer_spectrum: fewer than three stable eigenvalues");
  rep.alpha_hat = -0.5 * fit_slope(li, ll);
  rep.predicted_slope = 0.5 - rep.alpha_hat;

  rep.slope_m_lo = rep.stable_count / 3 + 1;
  rep.slope_m_hi = std::max(rep.slope_m_lo + 1, 2 * rep.stable_count / 3);
  std::vector<double> lm, le;
  for (std::size_t m = rep.slope_m_lo; m <= rep.slope_m_hi; ++m) {
    lm.push_back(std::log(static_cast<double>(m)));
    le.push_back(std::log(rep.truncation_errors[m - 1]));
  }
  rep.em_slope = fit_slope(lm, le);
  return rep;
}

RademacherReport rademacher_estimate(const Tensor& inputs, double b, double r, std::size_t trials,
                                     std::uint64_t seed) {
  if (inputs.rank() != 2) throw DimensionError("rademacher_estimate: inputs must be n×d");
  if (trials < 100) throw ContractError("rademacher_estimate: need at least 100 trials");
  const std::size_t n = inputs.dim(0), d = inputs.dim(1);
  const auto x = inputs.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * x[i * d + k];
    if (std::sqrt(s) > r * (1.0 + 1e-12)) throw ContractError("rademacher_estimate: input norm exceeds R");
  }
  std::vector<double> per_trial(trials);
#pragma omp parallel for schedule(static)
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, "rademacher", t));
    std::vector<double> acc(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double sigma = (rng.next() >> 63) ? 1.0 : -1.0;
      for (std::size_t k = 0; k < d; ++k) acc[k] += sigma * x[i * d + k];
    }
    double s = 0.0;
    for (double v : acc) s += v * v;
    per_trial[t] = b * std::sqrt(s) / static_cast<double>(n);
  }
  RademacherReport rep;
  rep.n = n;
  rep.b = b;
  rep.r = r;
  rep.trials = trials;
  for (double v : per_trial) rep.estimate += v;  // index order: thread-count independent
  rep.estimate /= static_cast<double>(trials);
  rep.bound = b * r / std::sqrt(static_cast<double>(n));
  return rep;
}

}  // namespace sinbasis::theory
