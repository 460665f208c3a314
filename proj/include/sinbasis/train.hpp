#pragma once

// Mini-batch training with Adam, cosine learning-rate annealing per epoch,
// early stopping on the validation loss and a resumable optimizer state.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "sinbasis/networks.hpp"
#include "sinbasis/spectrogram.hpp"

namespace sinbasis::train {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-5;  // L2 term added to the gradient
  std::size_t batch = 64;
  std::size_t epochs = 30;
  std::size_t patience = 10;
  bool cosine = true;
  std::uint64_t seed = 0;  // shuffling only; init comes from the model seed

  /// Throws std::invalid_argument naming the offending field. lr may be 0.
  void validate() const;
  /// Learning rate used during 0-based epoch e.
  double lr_at(std::size_t e) const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;  // wall clock; never written to deterministic outputs
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;  // Adam steps taken
  std::vector<std::vector<double>> m, v;  // per parameter, in named_parameters() order
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t bad_epochs = 0;
  bool stopped_early = false;
  std::vector<nets::NamedTensor> best;  // model.state() at best_epoch
  std::vector<EpochRecord> history;
};

/// Mean loss of the model over a shard: MSE on Φ for regression heads,
/// cross-entropy on labels for classification heads. No graph is recorded.
double dataset_loss(const nets::Model& model, const spectro::Shard& shard, std::size_t batch = 250);

class Trainer {
 public:
  Trainer(nets::Model& model, const spectro::Shard& train, const spectro::Shard& val, TrainConfig cfg);

  /// Replaces the optimizer state, e.g. after load_state().
  void resume(TrainState state);

  bool finished() const;
  /// Runs one epoch. Throws NumericalError when a batch loss is not finite.
  const EpochRecord& run_epoch();
  /// Runs the remaining epochs, then loads the best snapshot into the model.
  const TrainState& run();
  /// Loads the best snapshot (if any) into the model.
  void restore_best();

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  nets::Model& model_;
  const spectro::Shard& train_;
  const spectro::Shard& val_;
  TrainConfig cfg_;
  TrainState state_;
};

/// Convenience wrapper: fresh Trainer, run to completion.
TrainState fit(nets::Model& model, const spectro::Dataset& data, const TrainConfig& cfg);

/// Layout: adam_m/<i>.sbt, adam_v/<i>.sbt, best/<name>.sbt, history.csv and
/// state.ini. Scalars are stored as hex floats so reloads are exact.
void save_train_state(const std::filesystem::path& dir, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& dir);

/// epoch,lr,train_loss,val_loss with round-trip precision.
void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

}  // namespace sinbasis::train
