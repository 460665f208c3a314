#pragma once

// Synthetic streaking spectrograms and the input perturbations used to probe
// robustness.
//
// Physics model: the classical streaking approximation. A photoelectron line
// at E0 is shifted by the IR vector potential, giving a Gaussian energy ridge
// whose centre follows cos(2π·τ/T + Φ) across delay τ. Rows index energy
// (increasing), columns index delay.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sinbasis/networks.hpp"
#include "sinbasis/tensor.hpp"

namespace sinbasis::spectro {

inline constexpr double kEnergyMin = 20.0;   // eV
inline constexpr double kEnergyMax = 100.0;  // eV
inline constexpr double kCentralEnergy = 60.0;
inline constexpr double kStreakAmplitude = 15.0;  // eV at modulation_depth 1
/// Transform-limited Gaussian: FWHM_E · FWHM_t = 1.825 eV·fs.
inline constexpr double kTimeBandwidth = 1.825;
inline constexpr const char* kGeneratorVersion = "classical-streaking-1";

struct StreakingParams {
  double xuv_duration = 100.0;   // as, [50, 200]
  double ir_delay_span = 10.0;   // fs, (0, 20]
  double ir_period = 2.67;       // fs
  double modulation_depth = 1.0;
  double chirp = 0.0;            // relative ridge-width modulation, |chirp| < 1
  double cep_phase = 0.0;        // rad; wrapped into [0, 2π)
  double noise_floor = 0.0;      // relative to the unit ridge peak
  std::size_t h = 32, w = 32;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Spectrogram {
  Tensor intensity;  // [h, w] in [0, 1]
  std::vector<double> delay_axis;   // fs, length w
  std::vector<double> energy_axis;  // eV, length h
  double target_phase = 0.0;
  int class_label = -1;
};

/// Ridge-centre energy at delay tau.
double ridge_center(const StreakingParams& p, double tau);

Spectrogram generate(const StreakingParams& params, std::uint64_t seed);

// ---- datasets ----------------------------------------------------------------

struct DatasetConfig {
  std::size_t n = 2000;
  std::size_t h = 32, w = 32;
  std::uint64_t seed = 0;
  std::size_t num_classes = 5;  // equal-width buckets of ir_period
  double duration_min = 50.0, duration_max = 200.0;
  double period_min = 2.2, period_max = 3.2;
  double modulation_min = 0.5, modulation_max = 1.0;
  double chirp_max = 0.3;
  double delay_span = 10.0;
  double noise_floor = 0.02;
};

struct Shard {
  std::size_t h = 0, w = 0;
  std::vector<double> intensity;  // count · h · w, sample-major
  std::vector<double> phase;
  std::vector<int> label;

  std::size_t size() const { return phase.size(); }
  /// Samples [begin, begin+count) as [count, 1, h, w].
  Tensor images(std::size_t begin, std::size_t count) const;
  Tensor images() const { return images(0, size()); }
  /// Gathers the given sample indices as [k, 1, h, w].
  Tensor gather(const std::vector<std::size_t>& idx) const;
};

struct Dataset {
  Shard train, val, test;
};

/// Parameters of sample `index`, drawn from (seed, "data", index).
StreakingParams sample_params(const DatasetConfig& cfg, std::size_t index);
int period_bucket(const DatasetConfig& cfg, double period);

/// 80/10/10 split by index: floor(8n/10), floor(n/10), remainder.
Dataset make_dataset(const DatasetConfig& cfg);

void write_shard(const std::filesystem::path& path, const Shard& shard);
Shard read_shard(const std::filesystem::path& path);
/// train.sbd, val.sbd, test.sbd and dataset.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds, const DatasetConfig& cfg);
Dataset read_dataset(const std::filesystem::path& dir);

/// Pearson χ² statistic of `values` binned uniformly on [0, 2π).
double uniformity_chi2(const std::vector<double>& values, std::size_t bins);

// ---- perturbations -------------------------------------------------------------

/// Per-sample losses [B], differentiable in the input batch.
using PerSampleLoss = std::function<Tensor(const Tensor& x)>;

PerSampleLoss squared_error_loss(const nets::Model& model, std::vector<double> targets);
PerSampleLoss cross_entropy_loss(const nets::Model& model, std::vector<int> labels);

/// X' = clip(X + ε·sign(∇_X L), 0, 1) with sign(0) = 0.
Tensor fgsm(const PerSampleLoss& loss, const Tensor& x, double eps);

struct PgdOptions {
  double eps = 0.03;
  double alpha = 2.5e-3;
  std::size_t steps = 20;
  std::size_t restarts = 2;
  std::uint64_t seed = 0;  // random starts for restarts after the first
};

/// Projected signed-gradient ascent; per sample, the restart with the largest
/// final loss wins. The first restart starts at X.
Tensor pgd(const PerSampleLoss& loss, const Tensor& x, const PgdOptions& opt);

/// X' = clip(X + η, 0, 1), η ~ N(0, σ²) i.i.d. from `seed`.
Tensor gaussian_noise(const Tensor& x, double sigma, std::uint64_t seed);

/// Rescales the delay (last) axis by s about its centre and resamples back to
/// the original width with linear interpolation, mirroring at the borders.
/// Fringe frequencies along delay scale by 1/s.
Tensor frequency_shift(const Tensor& x, double s);

}  // namespace sinbasis::spectro
