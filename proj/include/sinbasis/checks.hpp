#pragma once

// Self-checks run by `sinbasis verify` and the acceptance binary. Each check
// returns a single pass/fail verdict with a one-line numeric detail.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sinbasis/metrics.hpp"
#include "sinbasis/networks.hpp"
#include "sinbasis/train.hpp"

namespace sinbasis::checks {

struct CheckResult {
  int criterion = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyConfig {
  std::uint64_t seed = 0;
  std::size_t matrix_cases = 200;
  double grad_h = 1e-6;
  double grad_tol = 1e-4;
  std::size_t shift_cases = 100;
  std::size_t mercer_grid = 128;
  double mercer_omega = 10.0;
  double slope_tol = 0.3;
  std::size_t rademacher_instances = 1000;  // per n
  std::size_t rademacher_draws = 200;       // sign vectors per estimate
  std::size_t lipschitz_cases = 1000;
};

/// conv_direct vs im2col·k vs SparseBTTB·x on random instances with H, W ≤ 8.
CheckResult check_matrix_equivalence(const VerifyConfig& cfg);
/// grad_check on every layer type at 8×8 inputs.
CheckResult check_gradients(const VerifyConfig& cfg);
/// Shift-response identity in the Fourier-coefficient model.
CheckResult check_shift_response(const VerifyConfig& cfg);
/// Mercer spectrum: PSD, monotone E_m, closed form vs quadrature, E_m slope vs ½ − α̂.
CheckResult check_mercer(const VerifyConfig& cfg);
/// Rademacher estimate below B·R/√n for n ∈ {10, 100, 1000}, and ‖sin W‖_F ≤ ‖W‖_F.
CheckResult check_rademacher(const VerifyConfig& cfg);
/// basis_mode = plain forwards equal standard layers bit for bit.
CheckResult check_mode_degeneracy(const VerifyConfig& cfg);
/// phase_error, band_mse Parseval and the exact Wilcoxon tail.
CheckResult check_metric_units(const VerifyConfig& cfg);

/// All of the above in criterion order. Progress lines go to `log` if given.
std::vector<CheckResult> run_verify_suite(const VerifyConfig& cfg, std::ostream* log = nullptr);

// ---- desk-scale comparison -----------------------------------------------------------

struct ExperimentConfig {
  spectro::DatasetConfig data;  // n = 2500 gives 2000 / 250 / 250
  nets::ModelConfig model;      // backbone and sizes; basis and seed are set per run
  train::TrainConfig train;
  BasisMode baseline = BasisMode::plain;
  BasisMode candidate = BasisMode::sin_fixed;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double fgsm_eps = 0.05;
  double noise_sigma = 0.05;

  ExperimentConfig();
};

struct ExperimentResult {
  std::vector<metrics::MetricsRecord> baseline, candidate;  // test split, one per seed
  double seconds = 0.0;
};

/// Trains and evaluates both modes for every seed on one shared dataset. Each
/// seed fixes model init (paired across modes) and the shuffling order.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Median test MSE lower for the candidate and one-sided Wilcoxon p ≤ 0.0625.
CheckResult check_directional_mse(const ExperimentResult& r);
/// Median FGSM and noise MSE lower for the candidate, and median Δ_rel lower.
CheckResult check_directional_robustness(const ExperimentResult& r, const ExperimentConfig& cfg);

/// "[PASS] 3 shift-response identity: ..." style line.
std::string format(const CheckResult& r);

}  // namespace sinbasis::checks
