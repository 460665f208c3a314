#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "sinbasis/metrics.hpp"
#include "sinbasis/train.hpp"

using namespace sinbasis;
using namespace sinbasis::train;

namespace {

nets::ModelConfig small_config(BasisMode mode = BasisMode::plain,
                               nets::HeadKind head = nets::HeadKind::regression) {
  nets::ModelConfig c;
  c.in_h = c.in_w = 16;
  c.cnn_channels = {4, 4, 4};
  c.head_hidden = 16;
  c.basis = mode;
  c.head = head;
  c.seed = 21;
  return c;
}

spectro::Dataset small_data(std::size_t n = 100) {
  spectro::DatasetConfig dc;
  dc.n = n;
  dc.h = dc.w = 16;
  dc.seed = 5;
  return spectro::make_dataset(dc);
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch = 16;
  t.seed = 3;
  return t;
}

std::vector<std::vector<double>> snapshot(const nets::Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& nt : m.state()) out.emplace_back(nt.tensor.data().begin(), nt.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("config validation and schedule") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 0.0;
  CHECK_NOTHROW(c.validate());
  for (auto bad : {&TrainConfig::batch, &TrainConfig::epochs, &TrainConfig::patience}) {
    TrainConfig b;
    b.*bad = 0;
    CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  }
  TrainConfig b;
  b.beta2 = 1.0;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);

  TrainConfig s;
  s.lr = 0.1;
  s.epochs = 10;
  CHECK(s.lr_at(0) == 0.1);
  CHECK(s.lr_at(5) == doctest::Approx(0.05));
  CHECK(s.lr_at(9) < s.lr_at(8));
  s.cosine = false;
  CHECK(s.lr_at(9) == 0.1);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto data = small_data();
  nets::Model model(small_config(BasisMode::sin_tunable));
  const auto before = snapshot(model);
  TrainConfig cfg = quick(3);
  cfg.lr = 0.0;
  const TrainState st = fit(model, data, cfg);
  CHECK(snapshot(model) == before);
  REQUIRE(st.history.size() == 3);
  for (const auto& r : st.history) {
    CHECK(r.val_loss == st.history[0].val_loss);
    CHECK(r.train_loss == doctest::Approx(st.history[0].train_loss).epsilon(1e-12));
  }
}

TEST_CASE("single sample is memorised") {
  const auto data = small_data();
  spectro::Dataset one;
  one.train.h = one.train.w = 16;
  one.train.intensity.assign(data.train.intensity.begin(), data.train.intensity.begin() + 256);
  one.train.phase = {data.train.phase[0]};
  one.train.label = {data.train.label[0]};
  one.val = one.train;
  nets::Model model(small_config(BasisMode::sin_fixed));
  TrainConfig cfg = quick(300);
  cfg.lr = 3e-3;
  cfg.patience = 300;
  const TrainState st = fit(model, one, cfg);
  CHECK(st.history.front().train_loss > 0.1);
  CHECK(st.best_val < 1e-4);
}

TEST_CASE("training is deterministic and improves the fit") {
  const auto data = small_data(200);
  auto run = [&] {
    nets::Model m(small_config(BasisMode::sin_fixed));
    const TrainState st = fit(m, data, quick(4));
    return std::make_pair(snapshot(m), st);
  };
  const auto [w1, s1] = run();
  const auto [w2, s2] = run();
  CHECK(w1 == w2);
  REQUIRE(s1.history.size() == s2.history.size());
  for (std::size_t i = 0; i < s1.history.size(); ++i) {
    CHECK(s1.history[i].train_loss == s2.history[i].train_loss);
    CHECK(s1.history[i].val_loss == s2.history[i].val_loss);
  }
  CHECK(s1.history.back().train_loss < s1.history.front().train_loss);
}

TEST_CASE("best epoch is restored") {
  const auto data = small_data();
  nets::Model model(small_config());
  Trainer t(model, data.train, data.val, quick(4));
  t.run();
  CHECK(dataset_loss(model, data.val) == t.state().best_val);
}

TEST_CASE("resume reproduces the next epoch bit-exactly") {
  const auto data = small_data();
  const auto dir = std::filesystem::temp_directory_path() / "sinbasis_test_resume";
  std::filesystem::remove_all(dir);

  nets::Model straight(small_config(BasisMode::sin_tunable));
  Trainer full(straight, data.train, data.val, quick(3));
  for (int i = 0; i < 3; ++i) full.run_epoch();

  {
    nets::Model first(small_config(BasisMode::sin_tunable));
    Trainer t(first, data.train, data.val, quick(3));
    t.run_epoch();
    t.run_epoch();
    nets::save_checkpoint(dir / "model", first);
    save_train_state(dir / "optim", t.state());
  }
  nets::Model resumed = nets::load_checkpoint(dir / "model");
  Trainer t(resumed, data.train, data.val, quick(3));
  t.resume(load_train_state(dir / "optim"));
  CHECK(t.state().history.size() == 2);
  const EpochRecord& r = t.run_epoch();
  CHECK(r.train_loss == full.state().history[2].train_loss);
  CHECK(r.val_loss == full.state().history[2].val_loss);
  CHECK(snapshot(resumed) == snapshot(straight));
  CHECK(t.state().best_val == full.state().best_val);
  std::filesystem::remove_all(dir);
}

TEST_CASE("early stopping") {
  const auto data = small_data();
  nets::Model model(small_config());
  TrainConfig cfg = quick(10);
  cfg.lr = 0.0;
  cfg.patience = 2;
  const TrainState st = fit(model, data, cfg);
  CHECK(st.stopped_early);
  CHECK(st.history.size() == 3);
  CHECK(st.best_epoch == 1);
}

TEST_CASE("divergence raises") {
  const auto data = small_data();
  nets::Model model(small_config());
  TrainConfig cfg = quick(3);
  cfg.lr = 1e300;
  CHECK_THROWS_AS(fit(model, data, cfg), NumericalError);
}

TEST_CASE("shape mismatch") {
  spectro::DatasetConfig dc;
  dc.n = 20;
  dc.h = dc.w = 32;
  const auto data = spectro::make_dataset(dc);
  nets::Model model(small_config());
  CHECK_THROWS_AS(Trainer(model, data.train, data.val, quick(1)), DimensionError);
}

TEST_CASE("classification heads train on cross-entropy") {
  const auto data = small_data(200);
  nets::Model model(small_config(BasisMode::sin_fixed, nets::HeadKind::classification));
  TrainConfig cfg = quick(5);
  cfg.lr = 3e-3;
  const TrainState st = fit(model, data, cfg);
  CHECK(st.history.back().train_loss < st.history.front().train_loss);
  const auto m = metrics::eval_classification(model, data.test);
  CHECK(m.accuracy >= 0.0);
}
