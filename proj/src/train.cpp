#include "sinbasis/train.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "sinbasis/errors.hpp"
#include "sinbasis/rng.hpp"
#include "sinbasis/serialize.hpp"

namespace sinbasis::train {

namespace {

std::string hexf(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor batch_loss(const nets::Model& model, const spectro::Shard& shard, const std::vector<std::size_t>& idx) {
  const Tensor x = shard.gather(idx);
  const Tensor out = model.forward(x);
  if (model.config().head == nets::HeadKind::regression) {
    std::vector<double> t(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) t[i] = shard.phase[idx[i]];
    return mse_loss(out, Tensor({idx.size(), 1}, std::move(t)));
  }
  std::vector<int> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = shard.label[idx[i]];
  return cross_entropy(out, labels);
}

}  // namespace

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train.") + what);
  };
  need(lr >= 0.0 && std::isfinite(lr), "lr must be finite and non-negative");
  need(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  need(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  need(eps > 0.0, "eps must be positive");
  need(weight_decay >= 0.0, "weight_decay must be non-negative");
  need(batch > 0, "batch must be positive");
  need(epochs > 0, "epochs must be positive");
  need(patience > 0, "patience must be positive");
}

double TrainConfig::lr_at(std::size_t e) const {
  if (!cosine) return lr;
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(e) / static_cast<double>(epochs)));
}

double dataset_loss(const nets::Model& model, const spectro::Shard& shard, std::size_t batch) {
  if (shard.size() == 0) throw ContractError("dataset_loss: empty shard");
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t b = 0; b < shard.size(); b += batch) {
    const std::size_t n = std::min(batch, shard.size() - b);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = b + i;
    total += batch_loss(model, shard, idx).item() * static_cast<double>(n);
  }
  return total / static_cast<double>(shard.size());
}

Trainer::Trainer(nets::Model& model, const spectro::Shard& train, const spectro::Shard& val, TrainConfig cfg)
    : model_(model), train_(train), val_(val), cfg_(cfg) {
  cfg_.validate();
  if (train_.size() == 0 || val_.size() == 0) throw ContractError("train: empty train or validation split");
  const auto& mc = model_.config();
  if (train_.h != mc.in_h || train_.w != mc.in_w || val_.h != mc.in_h || val_.w != mc.in_w || mc.in_channels != 1) {
    throw DimensionError("train: data shape " + std::to_string(train_.h) + "x" + std::to_string(train_.w) +
                         " does not match the model input");
  }
  for (const Tensor& p : model_.parameters()) {
    state_.m.emplace_back(p.numel(), 0.0);
    state_.v.emplace_back(p.numel(), 0.0);
  }
}

void Trainer::resume(TrainState state) {
  const auto params = model_.parameters();
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("train: optimizer state does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw ContractError("train: optimizer state does not match the model");
    }
  }
  state_ = std::move(state);
}

bool Trainer::finished() const { return state_.stopped_early || state_.epoch >= cfg_.epochs; }

const EpochRecord& Trainer::run_epoch() {
  if (finished()) throw ContractError("train: run already finished");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t e = state_.epoch;
  const double lr = cfg_.lr_at(e);
  const std::vector<Tensor> params = model_.parameters();

  Rng rng(derive_seed(cfg_.seed, "shuffle", e));
  const std::vector<std::size_t> order = rng.permutation(train_.size());
  double total = 0.0;
  for (std::size_t b = 0; b < order.size(); b += cfg_.batch) {
    const std::size_t n = std::min(cfg_.batch, order.size() - b);
    const std::vector<std::size_t> idx(order.begin() + static_cast<long>(b), order.begin() + static_cast<long>(b + n));
    for (Tensor p : params) p.zero_grad();
    Tensor loss = batch_loss(model_, train_, idx);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericalError("train: non-finite loss at epoch " + std::to_string(e + 1) + ", batch " +
                           std::to_string(b / cfg_.batch + 1));
    }
    total += value * static_cast<double>(n);
    loss.backward();

    ++state_.step;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor p = params[i];
      if (!p.has_grad()) continue;  // parameter not reached by this loss
      const auto g = p.grad();
      auto w = p.mutable_data();
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k] + cfg_.weight_decay * w[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      }
    }
  }
  for (Tensor p : params) p.zero_grad();

  EpochRecord rec;
  rec.epoch = e + 1;
  rec.lr = lr;
  rec.train_loss = total / static_cast<double>(train_.size());
  rec.val_loss = dataset_loss(model_, val_);
  if (!std::isfinite(rec.val_loss)) {
    throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(e + 1));
  }
  state_.epoch = e + 1;
  if (rec.val_loss < state_.best_val) {
    state_.best_val = rec.val_loss;
    state_.best_epoch = rec.epoch;
    state_.bad_epochs = 0;
    state_.best.clear();
    for (const auto& nt : model_.state()) state_.best.push_back({nt.name, nt.tensor.clone()});
  } else if (++state_.bad_epochs >= cfg_.patience) {
    state_.stopped_early = true;
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  state_.history.push_back(rec);
  return state_.history.back();
}

const TrainState& Trainer::run() {
  while (!finished()) run_epoch();
  restore_best();
  return state_;
}

void Trainer::restore_best() {
  if (!state_.best.empty()) model_.load_state(state_.best);
}

TrainState fit(nets::Model& model, const spectro::Dataset& data, const TrainConfig& cfg) {
  Trainer t(model, data.train, data.val, cfg);
  return t.run();
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,lr,train_loss,val_loss\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << g17(r.lr) << ',' << g17(r.train_loss) << ',' << g17(r.val_loss) << '\n';
  }
}

namespace {

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<EpochRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    std::istringstream ls(line);
    std::string f;
    std::getline(ls, f, ',');
    r.epoch = std::stoul(f);
    std::getline(ls, f, ',');
    r.lr = std::strtod(f.c_str(), nullptr);
    std::getline(ls, f, ',');
    r.train_loss = std::strtod(f.c_str(), nullptr);
    std::getline(ls, f, ',');
    r.val_loss = std::strtod(f.c_str(), nullptr);
    out.push_back(r);
  }
  return out;
}

}  // namespace

void save_train_state(const std::filesystem::path& dir, const TrainState& state) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "adam_m");
  fs::create_directories(dir / "adam_v");
  fs::create_directories(dir / "best");
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    save_tensor(dir / "adam_m" / (std::to_string(i) + ".sbt"), Tensor({state.m[i].size()}, state.m[i]));
    save_tensor(dir / "adam_v" / (std::to_string(i) + ".sbt"), Tensor({state.v[i].size()}, state.v[i]));
  }
  for (const auto& nt : state.best) save_tensor(dir / "best" / (nt.name + ".sbt"), nt.tensor);
  write_history_csv(dir / "history.csv", state.history);

  boost::property_tree::ptree pt;
  pt.put("state.epoch", state.epoch);
  pt.put("state.step", state.step);
  pt.put("state.params", state.m.size());
  pt.put("state.best_val", hexf(state.best_val));
  pt.put("state.best_epoch", state.best_epoch);
  pt.put("state.bad_epochs", state.bad_epochs);
  pt.put("state.stopped_early", state.stopped_early ? 1 : 0);
  std::string names;
  for (const auto& nt : state.best) names += (names.empty() ? "" : ",") + nt.name;
  pt.put("state.best_names", names);
  boost::property_tree::write_ini((dir / "state.ini").string(), pt);
}

TrainState load_train_state(const std::filesystem::path& dir) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini((dir / "state.ini").string(), pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ContractError("load_train_state: " + std::string(e.what()));
  }
  TrainState s;
  s.epoch = pt.get<std::size_t>("state.epoch");
  s.step = pt.get<std::uint64_t>("state.step");
  const auto n = pt.get<std::size_t>("state.params");
  s.best_val = std::strtod(pt.get<std::string>("state.best_val").c_str(), nullptr);
  s.best_epoch = pt.get<std::size_t>("state.best_epoch");
  s.bad_epochs = pt.get<std::size_t>("state.bad_epochs");
  s.stopped_early = pt.get<int>("state.stopped_early") != 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor m = load_tensor(dir / "adam_m" / (std::to_string(i) + ".sbt"));
    const Tensor v = load_tensor(dir / "adam_v" / (std::to_string(i) + ".sbt"));
    s.m.emplace_back(m.data().begin(), m.data().end());
    s.v.emplace_back(v.data().begin(), v.data().end());
  }
  std::istringstream names(pt.get<std::string>("state.best_names", ""));
  std::string name;
  while (std::getline(names, name, ',')) {
    if (!name.empty()) s.best.push_back({name, load_tensor(dir / "best" / (name + ".sbt"))});
  }
  s.history = read_history_csv(dir / "history.csv");
  return s;
}

}  // namespace sinbasis::train
