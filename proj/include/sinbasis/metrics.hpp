#pragma once

// Evaluation metrics, perturbation sweeps, saliency and multi-seed statistics.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sinbasis/networks.hpp"
#include "sinbasis/spectrogram.hpp"

namespace sinbasis::metrics {

// ---- scalar metrics ---------------------------------------------------------------

/// Circular distance min(|Δ|, 2π − |Δ|) after wrapping both angles into [0, 2π).
double phase_error(double predicted, double truth);

double mse(const std::vector<double>& predicted, const std::vector<double>& truth);
double mean_phase_error(const std::vector<double>& predicted, const std::vector<double>& truth);

/// Regression outputs for x: [N, 1, H, W], evaluated in batches without a graph.
std::vector<double> predict(const nets::Model& model, const Tensor& x, std::size_t batch = 250);
/// Classification logits [N, C].
Tensor predict_logits(const nets::Model& model, const Tensor& x, std::size_t batch = 250);

// ---- relative degradation under input transforms -------------------------------------

using Transform = std::function<Tensor(const Tensor&)>;

/// Circular shift by delta pixels along the last (delay) axis of [..., W].
Tensor delay_shift(const Tensor& x, long delta);
/// Circular delay shifts of 2, 4 and 8 pixels.
std::vector<Transform> default_transforms();

/// (1/|T|)·Σ_t (MSE(t(X)) − MSE(X))/MSE(X). Throws ContractError when the
/// baseline MSE is exactly 0 or T is empty.
double delta_rel(const nets::Model& model, const spectro::Shard& test,
                 const std::vector<Transform>& transforms = default_transforms());

// ---- band-split error -------------------------------------------------------------

struct BandSplit {
  double low = 0.0, high = 0.0;  // low + high == total up to rounding
  double total = 0.0;            // spatial mean of the squared residual
};

/// Residual r = predicted − truth (rank 1 or 2, equal shapes; rank 1 is read as
/// a 1×N field). The 2-D DFT energy is split by the radial frequency
/// √(fx² + fy²)/f_Nyquist ≤ cutoff into low and high, each normalised so the
/// two add up to the spatial MSE (Parseval).
BandSplit band_mse(const Tensor& predicted, const Tensor& truth, double cutoff = 0.25);

/// Scalar predictions: residual sequence ordered by the true phase.
BandSplit band_mse_sorted(const std::vector<double>& predicted, const std::vector<double>& truth,
                          double cutoff = 0.25);

// ---- classification -----------------------------------------------------------------

struct ClassificationMetrics {
  double accuracy = 0.0;
  double map = 0.0;
  std::vector<int> skipped_classes;  // absent from the labels, left out of mAP
};

/// Interpolated average precision of a ranking: Σ_k (r_k − r_{k−1})·max_{j≥k} p_j
/// over the positive positions k after sorting by descending score (ties keep
/// index order). Returns NaN when there are no positives.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive);

/// scores: [N, C] (softmax or logits; only the ranking per class matters for
/// mAP, argmax for accuracy).
ClassificationMetrics classification_metrics(const Tensor& scores, const std::vector<int>& labels);
ClassificationMetrics eval_classification(const nets::Model& model, const spectro::Shard& test);

// ---- robustness -------------------------------------------------------------------

struct PerturbationSpec {
  enum class Kind { fgsm, pgd, noise, shift };
  Kind kind = Kind::fgsm;
  double value = 0.0;  // ε, σ or s

  /// "fgsm@0.05", "pgd@0.03", "noise@0.1", "shift@1.5".
  std::string name() const;
  static PerturbationSpec parse(const std::string& text);
};

struct PerturbationResult {
  PerturbationSpec spec;
  double value = 0.0;  // MSE for regression heads, accuracy for classification heads
};

/// Applies each spec to the whole test split in the given order. PGD uses
/// `pgd` with eps = spec value and the step scaled as alpha·value/eps; noise
/// and PGD restarts draw from derive_seed(seed, spec name).
std::vector<PerturbationResult> robustness_sweep(const nets::Model& model, const spectro::Shard& test,
                                                 const std::vector<PerturbationSpec>& specs, std::uint64_t seed,
                                                 const spectro::PgdOptions& pgd = {});

// ---- saliency and latency ---------------------------------------------------------

/// |∇_X L| for one input [1, C, H, W], max over channels, divided by its
/// maximum: an [H, W] map in [0, 1]. An all-zero gradient gives an all-zero map.
Tensor saliency_map(const spectro::PerSampleLoss& loss, const Tensor& x);
/// Squared error against `target` for regression heads, cross-entropy against
/// class round(target) for classification heads.
Tensor saliency_map(const nets::Model& model, const Tensor& x, double target);

/// Median wall time in milliseconds of single-image forwards.
double latency_ms(const nets::Model& model, const Tensor& image, std::size_t warmup = 20, std::size_t reps = 200);

// ---- records and seed aggregation -------------------------------------------------

struct MetricsRecord {
  std::uint64_t seed = 0;
  double mse = 0.0, phase_error = 0.0, delta_rel = 0.0;
  double band_mse_low = 0.0, band_mse_high = 0.0;
  double accuracy = 0.0, map = 0.0;  // NaN for regression runs; the regression fields are NaN otherwise
  std::vector<std::pair<std::string, double>> perturbations;  // spec name -> value
  // wall clock; kept out of the CSV so reruns stay byte-identical
  double epoch_seconds = 0.0, latency_ms = 0.0;

  /// Deterministic metric columns in CSV order (seed excluded).
  std::vector<std::pair<std::string, double>> columns() const;
};

struct EvalConfig {
  double band_cutoff = 0.25;
  std::vector<long> delay_shifts{2, 4, 8};
  std::vector<PerturbationSpec> perturbations;
  spectro::PgdOptions pgd;
  std::uint64_t seed = 0;
};

/// Full record on one split (timings left at 0).
MetricsRecord evaluate(const nets::Model& model, const spectro::Shard& test, const EvalConfig& cfg);

/// Exact one-sided Wilcoxon signed-rank p-value P(W⁺ ≥ w) for differences d
/// (positive = improvement). Zeros are dropped, tied magnitudes share average
/// ranks; an empty or all-zero list gives p = 1.
double wilcoxon_signed_rank(const std::vector<double>& differences);

struct MetricSummary {
  std::string metric;
  std::size_t n = 0;
  double mean = 0.0, std = 0.0;
  double median = 0.0;
  std::optional<double> baseline_mean, baseline_std, baseline_median;
  /// One-sided p that the candidate beats the baseline: lower for error
  /// metrics, higher for accuracy and map.
  std::optional<double> p_value;
};

/// Mean, sample std (n−1; 0 for n = 1) and median per metric; with a
/// non-empty baseline, records are paired by seed and a Wilcoxon p is added.
/// Throws ContractError when the seed sets differ or contain duplicates.
std::vector<MetricSummary> aggregate_seeds(const std::vector<MetricsRecord>& records,
                                           const std::vector<MetricsRecord>& baseline = {});

/// One header line then one row per record: seed then columns().
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

void write_summary_json(const std::filesystem::path& path, const std::vector<MetricSummary>& summary,
                        const std::string& candidate_label, const std::string& baseline_label);

/// s,mse rows for the shift entries of a record.
void write_shift_curve_csv(const std::filesystem::path& path, const MetricsRecord& record);

}  // namespace sinbasis::metrics
