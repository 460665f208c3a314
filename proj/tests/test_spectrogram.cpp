#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sinbasis/rng.hpp"
#include "sinbasis/spectrogram.hpp"

using namespace sinbasis;
using namespace sinbasis::spectro;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

double linf(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Tiny trained-free regression model whose loss surface is non-trivial.
nets::ModelConfig tiny_cnn(std::size_t hw) {
  nets::ModelConfig c;
  c.in_h = c.in_w = hw;
  c.cnn_channels = {4, 4};
  c.head_hidden = 8;
  c.basis = BasisMode::sin_fixed;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("generate examples") {
  StreakingParams p;
  p.modulation_depth = 0.0;
  const Spectrogram flat = generate(p, 1);
  // no streaking: every column is the same
  for (std::size_t i = 0; i < p.h; ++i)
    for (std::size_t j = 1; j < p.w; ++j) CHECK(flat.intensity.at(i * p.w + j) == flat.intensity.at(i * p.w));

  p.modulation_depth = 0.8;
  p.cep_phase = 1.3;
  const Spectrogram a = generate(p, 1);
  p.cep_phase = 1.3 + kTwoPi;
  const Spectrogram b = generate(p, 1);
  CHECK(max_abs_diff(a.intensity, b.intensity) <= 1e-12);
  CHECK(a.target_phase == doctest::Approx(1.3));
  CHECK(b.target_phase == doctest::Approx(1.3));

  p.cep_phase = -0.5;
  CHECK(generate(p, 1).target_phase == doctest::Approx(kTwoPi - 0.5));

  p.h = 8;
  CHECK_THROWS_AS(generate(p, 1), std::invalid_argument);
  p.h = 32;
  p.xuv_duration = 20;
  CHECK_THROWS_AS(generate(p, 1), std::invalid_argument);
}

// The brightest energy row in each delay column follows the streaking cosine.
TEST_CASE("ridge argmax traces the streaking cosine") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    StreakingParams p;
    p.h = p.w = 128;
    p.xuv_duration = rng.uniform(50, 200);
    p.ir_period = rng.uniform(2.2, 3.2);
    p.modulation_depth = rng.uniform(0.5, 1.0);
    p.chirp = rng.uniform(-0.3, 0.3);
    p.cep_phase = rng.uniform(0, kTwoPi);
    const Spectrogram s = generate(p, 0);
    const double omega = kTwoPi / p.ir_period;
    for (std::size_t j = 0; j < p.w; ++j) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < p.h; ++i)
        if (s.intensity.at(i * p.w + j) > s.intensity.at(best * p.w + j)) best = i;
      const double centre = 60.0 + 15.0 * p.modulation_depth * std::cos(omega * s.delay_axis[j] + p.cep_phase);
      const double expected_row = (centre - 20.0) / 80.0 * 127.0;
      CHECK(std::abs(static_cast<double>(best) - expected_row) <= 1.0);
    }
  }
}

TEST_CASE("intensities and targets stay in range; generation is deterministic") {
  DatasetConfig cfg;
  cfg.n = 40;
  cfg.seed = 5;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const StreakingParams p = sample_params(cfg, i);
    const Spectrogram s1 = generate(p, 77), s2 = generate(p, 77);
    double lo = 1.0, hi = 0.0;
    for (double v : s1.intensity.data()) lo = std::min(lo, v), hi = std::max(hi, v);
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    CHECK(s1.target_phase >= 0.0);
    CHECK(s1.target_phase < kTwoPi);
    CHECK(max_abs_diff(s1.intensity, s2.intensity) == 0.0);
  }
}

TEST_CASE("dataset split and determinism") {
  DatasetConfig cfg;
  cfg.n = 10;
  cfg.h = cfg.w = 16;
  const Dataset d = make_dataset(cfg);
  CHECK(d.train.size() == 8);
  CHECK(d.val.size() == 1);
  CHECK(d.test.size() == 1);
  cfg.n = 9;
  CHECK_THROWS_AS(make_dataset(cfg), ContractError);

  cfg.n = 57;
  const Dataset e = make_dataset(cfg);
  CHECK(e.train.size() == 45);
  CHECK(e.val.size() == 5);
  CHECK(e.test.size() == 7);
  for (int l : e.train.label) CHECK((l >= 0 && l < 5));

  const auto base = std::filesystem::temp_directory_path() / "sinbasis_test_ds";
  std::filesystem::remove_all(base);
  write_dataset(base / "a", e, cfg);
  write_dataset(base / "b", make_dataset(cfg), cfg);
  for (const char* f : {"train.sbd", "val.sbd", "test.sbd", "dataset.json"})
    CHECK(file_bytes(base / "a" / f) == file_bytes(base / "b" / f));

  const std::string bytes = file_bytes(base / "a" / "val.sbd");
  CHECK(bytes.substr(0, 4) == "SBD1");
  CHECK(bytes.size() == 16 + 5 * (16 * 16 * 8 + 8 + 4));

  const Dataset back = read_dataset(base / "a");
  CHECK(back.train.intensity == e.train.intensity);
  CHECK(back.test.phase == e.test.phase);
  CHECK(back.val.label == e.val.label);

  cfg.seed = 6;
  write_dataset(base / "c", make_dataset(cfg), cfg);
  CHECK(file_bytes(base / "a" / "train.sbd") != file_bytes(base / "c" / "train.sbd"));
  std::filesystem::remove_all(base);
}

TEST_CASE("target phases are uniform") {
  DatasetConfig cfg;
  cfg.seed = 123;
  std::vector<double> phases;
  for (std::size_t i = 0; i < 2000; ++i) phases.push_back(sample_params(cfg, i).cep_phase);
  // χ²(9) upper 1% point
  CHECK(uniformity_chi2(phases, 10) < 21.666);
  // and the test does reject an obviously skewed sample
  std::vector<double> skewed;
  for (std::size_t i = 0; i < 2000; ++i) skewed.push_back(phases[i] * 0.5);
  CHECK(uniformity_chi2(skewed, 10) > 21.666);
}

TEST_CASE("FGSM examples and ball contract") {
  DatasetConfig cfg;
  cfg.n = 20;
  cfg.h = cfg.w = 16;
  const Dataset d = make_dataset(cfg);
  const nets::Model model(tiny_cnn(16));
  const Tensor x = d.train.images();
  const auto loss = squared_error_loss(model, d.train.phase);

  CHECK(max_abs_diff(fgsm(loss, x, 0.0), x) == 0.0);
  for (double eps : {0.01, 0.03, 0.05}) {
    const Tensor adv = fgsm(loss, x, eps);
    CHECK(linf(adv, x) <= eps + 1e-15);
    // where the pixel is not clipped and the gradient is non-zero, the move is exactly ε
    Tensor leaf = x.clone(true);
    sum(loss(leaf)).backward();
    std::size_t exact = 0, moved = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (leaf.grad()[i] == 0.0) {
        CHECK(adv.at(i) == x.at(i));
        continue;
      }
      const double target = x.at(i) + (leaf.grad()[i] > 0 ? eps : -eps);
      if (target < 0.0 || target > 1.0) continue;
      ++moved;
      exact += std::abs(std::abs(adv.at(i) - x.at(i)) - eps) <= 1e-15;
    }
    CHECK(moved > 0);
    CHECK(exact == moved);
    for (double v : adv.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("PGD contracts") {
  DatasetConfig cfg;
  cfg.n = 30;
  cfg.h = cfg.w = 16;
  const Dataset d = make_dataset(cfg);
  const nets::Model model(tiny_cnn(16));
  const Tensor x = d.train.images();
  const auto loss = squared_error_loss(model, d.train.phase);

  // one step of size ε with a single restart is FGSM
  const PgdOptions one{.eps = 0.03, .alpha = 0.03, .steps = 1, .restarts = 1};
  CHECK(max_abs_diff(pgd(loss, x, one), fgsm(loss, x, 0.03)) == 0.0);

  const PgdOptions full{.eps = 0.05, .seed = 9};
  const Tensor adv = pgd(loss, x, full);
  CHECK(linf(adv, x) <= 0.05 + 1e-15);
  for (double v : adv.data()) CHECK((v >= 0.0 && v <= 1.0));

  // iterated attack reaches at least the single-step loss on most samples
  const Tensor single = fgsm(loss, x, 0.05);
  NoGradGuard guard;
  const Tensor l_pgd = loss(adv), l_fgsm = loss(single);
  std::size_t wins = 0;
  for (std::size_t b = 0; b < x.dim(0); ++b) wins += l_pgd.at(b) >= l_fgsm.at(b) - 1e-12;
  CHECK(wins * 10 >= x.dim(0) * 8);
}

TEST_CASE("classification loss is per-sample cross-entropy") {
  nets::ModelConfig c = tiny_cnn(16);
  c.head = nets::HeadKind::classification;
  c.num_classes = 3;
  const nets::Model model(c);
  Rng rng(4);
  std::vector<double> v(4 * 256);
  for (auto& e : v) e = rng.uniform();
  const Tensor x({4, 1, 16, 16}, v);
  const std::vector<int> labels{0, 2, 1, 2};
  const Tensor per = cross_entropy_loss(model, labels)(x);
  double mean = 0.0;
  for (double e : per.data()) mean += e / 4.0;
  CHECK(mean == doctest::Approx(cross_entropy(model.forward(x), labels).item()).epsilon(1e-12));
  const Tensor adv = fgsm(cross_entropy_loss(model, labels), x, 0.02);
  CHECK(linf(adv, x) <= 0.02 + 1e-15);
}

TEST_CASE("gaussian noise examples") {
  const Tensor x = Tensor::full({128, 128}, 0.5);
  CHECK(max_abs_diff(gaussian_noise(x, 0.0, 1), x) == 0.0);
  for (double sigma : {0.01, 0.03, 0.05}) {
    const Tensor y = gaussian_noise(x, sigma, 42);
    double m = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
      const double eta = y.at(i) - 0.5;
      m += eta;
      m2 += eta * eta;
    }
    m /= static_cast<double>(y.numel());
    const double sd = std::sqrt(m2 / static_cast<double>(y.numel()) - m * m);
    CHECK(std::abs(sd - sigma) <= 0.05 * sigma);
    CHECK(max_abs_diff(gaussian_noise(x, sigma, 42), y) == 0.0);
  }
  const Tensor edge = gaussian_noise(Tensor::full({50, 50}, 0.99), 0.05, 3);
  for (double v : edge.data()) CHECK((v >= 0.0 && v <= 1.0));
}

namespace {

// Dominant non-DC frequency bin of a real sequence by direct DFT.
std::size_t dominant_bin(const std::vector<double>& row) {
  const std::size_t n = row.size();
  double mean = 0.0;
  for (double v : row) mean += v / static_cast<double>(n);
  std::size_t best = 1;
  double best_mag = -1.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      acc += (row[j] - mean) * std::polar(1.0, -kTwoPi * static_cast<double>(k * j) / static_cast<double>(n));
    if (std::abs(acc) > best_mag) best_mag = std::abs(acc), best = k;
  }
  return best;
}

}  // namespace

TEST_CASE("frequency shift examples") {
  Rng rng(6);
  std::vector<double> v(16 * 40);
  for (auto& e : v) e = rng.uniform();
  const Tensor x({16, 40}, v);
  CHECK(max_abs_diff(frequency_shift(x, 1.0), x) <= 1e-12);
  for (double s : {0.5, 1.5, 2.0}) CHECK(frequency_shift(x, s).shape() == x.shape());
  CHECK(frequency_shift(Tensor::zeros({2, 3, 8, 8}), 1.5).shape() == Shape{2, 3, 8, 8});
  CHECK_THROWS_AS(frequency_shift(x, 0.0), std::invalid_argument);

  // pure cosine fringe along delay: the dominant frequency scales by 1/s
  const std::size_t w = 128;
  for (std::size_t k0 : {8, 12, 16}) {
    std::vector<double> row(w);
    for (std::size_t j = 0; j < w; ++j) row[j] = 0.5 + 0.5 * std::cos(kTwoPi * static_cast<double>(k0 * j) / w);
    for (double s : {0.5, 1.5, 2.0}) {
      const Tensor shifted = frequency_shift(Tensor({1, w}, row), s);
      const std::size_t k = dominant_bin({shifted.data().begin(), shifted.data().end()});
      CHECK(std::abs(static_cast<double>(k) - static_cast<double>(k0) / s) <= 1.0);
    }
  }
}
