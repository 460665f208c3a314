#include "sinbasis/spectrogram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "sinbasis/rng.hpp"
#include "sinbasis/serialize.hpp"

namespace sinbasis::spectro {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_phase(double phi) {
  double r = std::fmod(phi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  return r >= kTwoPi ? 0.0 : r;
}

}  // namespace

void StreakingParams::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("StreakingParams: " + m); };
  if (!(xuv_duration >= 50.0 && xuv_duration <= 200.0)) fail("xuv_duration must lie in [50, 200] as");
  if (!(ir_delay_span > 0.0 && ir_delay_span <= 20.0)) fail("ir_delay_span must lie in (0, 20] fs");
  if (!(ir_period > 0.0)) fail("ir_period must be positive");
  if (!(modulation_depth >= 0.0)) fail("modulation_depth must be non-negative");
  if (!(std::abs(chirp) < 1.0)) fail("|chirp| must be below 1");
  if (!std::isfinite(cep_phase)) fail("cep_phase must be finite");
  if (!(noise_floor >= 0.0)) fail("noise_floor must be non-negative");
  if (h < 16 || w < 16) fail("grid must be at least 16x16");
}

double ridge_center(const StreakingParams& p, double tau) {
  return kCentralEnergy +
         p.modulation_depth * kStreakAmplitude * std::cos(kTwoPi * tau / p.ir_period + wrap_phase(p.cep_phase));
}

Spectrogram generate(const StreakingParams& params, std::uint64_t seed) {
  params.validate();
  const std::size_t h = params.h, w = params.w;
  const double phi = wrap_phase(params.cep_phase);
  const double sigma0 = kTimeBandwidth / (params.xuv_duration * 1e-3) / (2.0 * std::sqrt(2.0 * std::log(2.0)));

  Spectrogram s;
  s.target_phase = phi;
  s.delay_axis.resize(w);
  s.energy_axis.resize(h);
  for (std::size_t j = 0; j < w; ++j) s.delay_axis[j] = params.ir_delay_span * static_cast<double>(j) / static_cast<double>(w - 1);
  for (std::size_t i = 0; i < h; ++i)
    s.energy_axis[i] = kEnergyMin + (kEnergyMax - kEnergyMin) * static_cast<double>(i) / static_cast<double>(h - 1);

  std::vector<double> img(h * w);
  for (std::size_t j = 0; j < w; ++j) {
    const double arg = kTwoPi * s.delay_axis[j] / params.ir_period + phi;
    const double centre = kCentralEnergy + params.modulation_depth * kStreakAmplitude * std::cos(arg);
    // the chirp tilts the ridge: its width breathes with the streaking phase
    const double sigma = sigma0 * std::max(0.2, 1.0 - params.chirp * std::sin(arg));
    for (std::size_t i = 0; i < h; ++i) {
      const double d = (s.energy_axis[i] - centre) / sigma;
      img[i * w + j] = std::exp(-0.5 * d * d);
    }
  }
  if (params.noise_floor > 0.0) {
    Rng rng(seed);
    for (auto& v : img) v = std::max(0.0, v + params.noise_floor * rng.normal());
  }
  const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
  const double low = *lo, range = *hi - *lo;
  for (auto& v : img) v = range > 0.0 ? std::clamp((v - low) / range, 0.0, 1.0) : 0.0;
  s.intensity = Tensor({h, w}, std::move(img));
  return s;
}

// ---- datasets ----------------------------------------------------------------

Tensor Shard::images(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw DimensionError("Shard::images: range exceeds shard size");
  const std::size_t px = h * w;
  std::vector<double> v(intensity.begin() + static_cast<std::ptrdiff_t>(begin * px),
                        intensity.begin() + static_cast<std::ptrdiff_t>((begin + count) * px));
  return Tensor({count, 1, h, w}, std::move(v));
}

Tensor Shard::gather(const std::vector<std::size_t>& idx) const {
  const std::size_t px = h * w;
  std::vector<double> v(idx.size() * px);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= size()) throw DimensionError("Shard::gather: index out of range");
    std::copy_n(intensity.begin() + static_cast<std::ptrdiff_t>(idx[k] * px), px,
                v.begin() + static_cast<std::ptrdiff_t>(k * px));
  }
  return Tensor({idx.size(), 1, h, w}, std::move(v));
}

StreakingParams sample_params(const DatasetConfig& cfg, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, "data", index));
  StreakingParams p;
  p.h = cfg.h;
  p.w = cfg.w;
  p.ir_delay_span = cfg.delay_span;
  p.noise_floor = cfg.noise_floor;
  p.xuv_duration = rng.uniform(cfg.duration_min, cfg.duration_max);
  p.ir_period = rng.uniform(cfg.period_min, cfg.period_max);
  p.modulation_depth = rng.uniform(cfg.modulation_min, cfg.modulation_max);
  p.chirp = rng.uniform(-cfg.chirp_max, cfg.chirp_max);
  p.cep_phase = wrap_phase(rng.uniform(0.0, kTwoPi));
  return p;
}

int period_bucket(const DatasetConfig& cfg, double period) {
  const double t = (period - cfg.period_min) / (cfg.period_max - cfg.period_min);
  const auto k = static_cast<long>(std::floor(t * static_cast<double>(cfg.num_classes)));
  return static_cast<int>(std::clamp<long>(k, 0, static_cast<long>(cfg.num_classes) - 1));
}

Dataset make_dataset(const DatasetConfig& cfg) {
  if (cfg.n < 10) throw ContractError("make_dataset: need at least 10 samples");
  if (cfg.num_classes < 1) throw ContractError("make_dataset: num_classes must be positive");
  const std::size_t n = cfg.n, px = cfg.h * cfg.w;
  std::vector<double> pixels(n * px), phase(n);
  std::vector<int> label(n);
  // Each sample depends only on its own index, so completion order is irrelevant.
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t i = 0; i < n; ++i) {
    const StreakingParams p = sample_params(cfg, i);
    const Spectrogram s = generate(p, derive_seed(cfg.seed, "noise", i));
    std::copy(s.intensity.data().begin(), s.intensity.data().end(),
              pixels.begin() + static_cast<std::ptrdiff_t>(i * px));
    phase[i] = s.target_phase;
    label[i] = period_bucket(cfg, p.ir_period);
  }
  const std::size_t n_train = n * 8 / 10, n_val = n / 10;
  auto slice = [&](std::size_t begin, std::size_t count) {
    Shard s;
    s.h = cfg.h;
    s.w = cfg.w;
    s.intensity.assign(pixels.begin() + static_cast<std::ptrdiff_t>(begin * px),
                       pixels.begin() + static_cast<std::ptrdiff_t>((begin + count) * px));
    s.phase.assign(phase.begin() + static_cast<std::ptrdiff_t>(begin),
                   phase.begin() + static_cast<std::ptrdiff_t>(begin + count));
    s.label.assign(label.begin() + static_cast<std::ptrdiff_t>(begin),
                   label.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return s;
  };
  return {slice(0, n_train), slice(n_train, n_val), slice(n_train + n_val, n - n_train - n_val)};
}

void write_shard(const std::filesystem::path& path, const Shard& shard) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("SBD1", 4);
  binio::write_u32(os, static_cast<std::uint32_t>(shard.size()));
  binio::write_u32(os, static_cast<std::uint32_t>(shard.h));
  binio::write_u32(os, static_cast<std::uint32_t>(shard.w));
  const std::size_t px = shard.h * shard.w;
  for (std::size_t i = 0; i < shard.size(); ++i) {
    for (std::size_t k = 0; k < px; ++k) binio::write_f64(os, shard.intensity[i * px + k]);
    binio::write_f64(os, shard.phase[i]);
    binio::write_i32(os, shard.label[i]);
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Shard read_shard(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  binio::expect_magic(is, "SBD1");
  Shard s;
  const std::size_t count = binio::read_u32(is);
  s.h = binio::read_u32(is);
  s.w = binio::read_u32(is);
  const std::size_t px = s.h * s.w;
  s.intensity.resize(count * px);
  s.phase.resize(count);
  s.label.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < px; ++k) s.intensity[i * px + k] = binio::read_f64(is);
    s.phase[i] = binio::read_f64(is);
    s.label[i] = binio::read_i32(is);
  }
  return s;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds, const DatasetConfig& cfg) {
  std::filesystem::create_directories(dir);
  write_shard(dir / "train.sbd", ds.train);
  write_shard(dir / "val.sbd", ds.val);
  write_shard(dir / "test.sbd", ds.test);
  nlohmann::ordered_json j;
  j["generator_version"] = kGeneratorVersion;
  j["physics_model"] = "classical streaking approximation: Gaussian energy ridge centred at "
                       "E0 + m*A*cos(2*pi*tau/T + phi)";
  j["resampling_mode"] = "linear along delay, mirrored borders";
  j["seed"] = cfg.seed;
  j["grid"] = {{"h", cfg.h}, {"w", cfg.w}};
  j["counts"] = {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}};
  j["energy_axis_ev"] = {kEnergyMin, kEnergyMax};
  j["ranges"] = {{"xuv_duration_as", {cfg.duration_min, cfg.duration_max}},
                 {"ir_period_fs", {cfg.period_min, cfg.period_max}},
                 {"modulation_depth", {cfg.modulation_min, cfg.modulation_max}},
                 {"chirp", {-cfg.chirp_max, cfg.chirp_max}},
                 {"ir_delay_span_fs", cfg.delay_span},
                 {"noise_floor", cfg.noise_floor},
                 {"cep_phase_rad", {0.0, kTwoPi}}};
  j["num_classes"] = cfg.num_classes;
  j["label"] = "equal-width bucket of ir_period";
  std::ofstream os(dir / "dataset.json");
  os << j.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  return {read_shard(dir / "train.sbd"), read_shard(dir / "val.sbd"), read_shard(dir / "test.sbd")};
}

double uniformity_chi2(const std::vector<double>& values, std::size_t bins) {
  std::vector<double> counts(bins, 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(wrap_phase(v) / kTwoPi * static_cast<double>(bins));
    counts[std::min(b, bins - 1)] += 1.0;
  }
  const double expected = static_cast<double>(values.size()) / static_cast<double>(bins);
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  return chi2;
}

// ---- perturbations -------------------------------------------------------------

PerSampleLoss squared_error_loss(const nets::Model& model, std::vector<double> targets) {
  return [&model, targets = std::move(targets)](const Tensor& x) {
    const Tensor pred = model.forward(x);
    if (pred.numel() != targets.size()) throw DimensionError("squared_error_loss: target count mismatch");
    return square(sub(reshape(pred, {targets.size()}), Tensor({targets.size()}, targets)));
  };
}

PerSampleLoss cross_entropy_loss(const nets::Model& model, std::vector<int> labels) {
  return [&model, labels = std::move(labels)](const Tensor& x) {
    const Tensor logits = model.forward(x);
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (b != labels.size()) throw DimensionError("cross_entropy_loss: label count mismatch");
    std::vector<double> row_max(b), onehot(b * c, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      row_max[i] = *std::max_element(logits.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                                     logits.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
      onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    const Tensor shifted = sub(logits, expand(Tensor({b, 1}, std::move(row_max)), {b, c}));
    const Tensor lse = log(sum_axis(exp(shifted), 1));
    return sub(lse, sum_axis(mul(shifted, Tensor({b, c}, std::move(onehot))), 1));
  };
}

namespace {

/// Per-sample losses and the input gradient of their sum.
std::pair<std::vector<double>, std::vector<double>> loss_and_grad(const PerSampleLoss& loss, const Tensor& x) {
  Tensor leaf = x.detach().clone(true);
  const Tensor per = loss(leaf);
  sum(per).backward();
  return {{per.data().begin(), per.data().end()}, {leaf.grad().begin(), leaf.grad().end()}};
}

double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

}  // namespace

Tensor fgsm(const PerSampleLoss& loss, const Tensor& x, double eps) {
  if (eps < 0.0) throw std::invalid_argument("fgsm: epsilon must be non-negative");
  if (eps == 0.0) return x.detach();
  const auto [l, g] = loss_and_grad(loss, x);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i] + eps * sign(g[i]), 0.0, 1.0);
  return Tensor(x.shape(), std::move(out));
}

Tensor pgd(const PerSampleLoss& loss, const Tensor& x, const PgdOptions& opt) {
  if (opt.eps < 0.0 || opt.alpha < 0.0) throw std::invalid_argument("pgd: eps and alpha must be non-negative");
  if (opt.restarts == 0) throw std::invalid_argument("pgd: need at least one restart");
  const auto xv = x.data();
  const std::size_t batch = x.dim(0), per = x.numel() / batch;
  std::vector<double> best(xv.begin(), xv.end());
  std::vector<double> best_loss(batch, -std::numeric_limits<double>::infinity());

  for (std::size_t r = 0; r < opt.restarts; ++r) {
    std::vector<double> cur(xv.begin(), xv.end());
    if (r > 0) {
      Rng rng(derive_seed(opt.seed, "pgd-start", r));
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = std::clamp(xv[i] + rng.uniform(-opt.eps, opt.eps), 0.0, 1.0);
    }
    for (std::size_t step = 0; step < opt.steps; ++step) {
      const auto [l, g] = loss_and_grad(loss, Tensor(x.shape(), cur));
      for (std::size_t i = 0; i < cur.size(); ++i) {
        const double moved = cur[i] + opt.alpha * sign(g[i]);
        cur[i] = std::clamp(std::clamp(moved, xv[i] - opt.eps, xv[i] + opt.eps), 0.0, 1.0);
      }
    }
    const Tensor final_loss = [&] {
      NoGradGuard guard;
      return loss(Tensor(x.shape(), cur));
    }();
    for (std::size_t b = 0; b < batch; ++b) {
      if (final_loss.at(b) > best_loss[b]) {
        best_loss[b] = final_loss.at(b);
        std::copy_n(cur.begin() + static_cast<std::ptrdiff_t>(b * per), per,
                    best.begin() + static_cast<std::ptrdiff_t>(b * per));
      }
    }
  }
  return Tensor(x.shape(), std::move(best));
}

Tensor gaussian_noise(const Tensor& x, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("gaussian_noise: sigma must be non-negative");
  const auto xv = x.data();
  std::vector<double> out(xv.begin(), xv.end());
  if (sigma == 0.0) return Tensor(x.shape(), std::move(out));
  Rng rng(seed);
  for (auto& v : out) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  return Tensor(x.shape(), std::move(out));
}

Tensor frequency_shift(const Tensor& x, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("frequency_shift: factor must be positive");
  if (x.rank() < 1) throw DimensionError("frequency_shift: need at least one axis");
  const std::size_t w = x.shape().back(), rows = x.numel() / w;
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  if (w == 1) {
    out.assign(xv.begin(), xv.end());
    return Tensor(x.shape(), std::move(out));
  }
  const double c = 0.5 * static_cast<double>(w - 1), last = static_cast<double>(w - 1);
  const double period = 2.0 * last;
  for (std::size_t j = 0; j < w; ++j) {
    double src = c + (static_cast<double>(j) - c) / s;
    src = std::fmod(std::abs(src), period);  // mirror about both borders
    if (src > last) src = period - src;
    const auto j0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t j1 = std::min(j0 + 1, w - 1);
    const double f = src - static_cast<double>(j0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double a = xv[r * w + j0], b = xv[r * w + j1];
      out[r * w + j] = f == 0.0 ? a : a + f * (b - a);
    }
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace sinbasis::spectro
