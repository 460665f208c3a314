#include "sinbasis/cli.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "sinbasis/checks.hpp"
#include "sinbasis/errors.hpp"
#include "sinbasis/kernels.hpp"
#include "sinbasis/metrics.hpp"
#include "sinbasis/networks.hpp"
#include "sinbasis/spectrogram.hpp"
#include "sinbasis/train.hpp"

#ifndef SINBASIS_GIT_REV
#define SINBASIS_GIT_REV "unknown"
#endif

namespace sinbasis::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

const std::map<std::string, std::set<std::string>> kKnownKeys{
    {"run", {"seed", "out"}},
    {"data",
     {"n", "h", "w", "seed", "classes", "duration_min", "duration_max", "period_min", "period_max", "modulation_min",
      "modulation_max", "chirp_max", "delay_span", "noise_floor", "dir"}},
    {"model",
     {"backbone", "basis", "head", "classes", "in_channels", "in_h", "in_w", "cnn_channels", "cnn_kernel", "cnn_pool",
      "patch", "embed_dim", "vit_depth", "vit_heads", "vit_mlp", "capsule_stem", "primary_caps", "primary_dim",
      "output_caps", "output_dim", "routing_iters", "capsule_sin_conv", "head_hidden", "seed"}},
    {"train",
     {"lr", "beta1", "beta2", "eps", "weight_decay", "batch", "epochs", "patience", "cosine", "seed", "stop_after",
      "resume"}},
    {"eval", {"checkpoint", "split", "band_cutoff", "delay_shifts", "perturbations", "latency", "saliency", "seed"}},
    {"perturb", {"checkpoint", "split", "specs", "pgd_alpha", "pgd_ref_eps", "pgd_steps", "pgd_restarts", "seed"}},
    {"verify",
     {"seed", "matrix_cases", "grad_h", "grad_tol", "shift_cases", "mercer_grid", "mercer_omega", "slope_tol",
      "rademacher_instances", "rademacher_draws", "lipschitz_cases"}},
    {"report", {"candidate", "baseline", "candidate_label", "baseline_label"}},
};

/// Shortest text that reads back to the same double.
std::string g17(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

/// Typed, tracked access to the raw sections. Every read is recorded in the
/// resolved view that ends up in the manifest.
class Resolver {
 public:
  Resolver(Sections raw, std::uint64_t root) : raw_(std::move(raw)), root_(root) {}

  std::optional<std::string> find(const std::string& sec, const std::string& key) const {
    const auto s = raw_.find(sec);
    if (s == raw_.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
  }

  std::string str(const std::string& sec, const std::string& key, const std::string& def) {
    return put(sec, key, find(sec, key).value_or(def));
  }
  std::string required(const std::string& sec, const std::string& key) {
    const auto v = find(sec, key);
    if (!v || v->empty()) throw ConfigError("missing required config key " + sec + "." + key);
    return put(sec, key, *v);
  }
  std::uint64_t u64(const std::string& sec, const std::string& key, std::uint64_t def) {
    const auto v = find(sec, key);
    if (!v) return std::stoull(put(sec, key, std::to_string(def)));
    std::size_t used = 0;
    std::uint64_t x = 0;
    try {
      if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
      x = std::stoull(*v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v->size()) throw ConfigError(sec + "." + key + ": expected a non-negative integer, got '" + *v + "'");
    put(sec, key, std::to_string(x));
    return x;
  }
  std::size_t size(const std::string& sec, const std::string& key, std::size_t def) {
    return static_cast<std::size_t>(u64(sec, key, def));
  }
  std::uint64_t seed(const std::string& sec) { return u64(sec, "seed", root_); }
  double real(const std::string& sec, const std::string& key, double def) {
    const auto v = find(sec, key);
    double x = def;
    if (v) {
      std::size_t used = 0;
      try {
        x = std::stod(*v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != v->size() || !std::isfinite(x)) {
        throw ConfigError(sec + "." + key + ": expected a number, got '" + *v + "'");
      }
    }
    put(sec, key, g17(x));
    return x;
  }
  bool flag(const std::string& sec, const std::string& key, bool def) {
    const auto v = find(sec, key);
    bool x = def;
    if (v) {
      if (*v == "true" || *v == "1" || *v == "yes") x = true;
      else if (*v == "false" || *v == "0" || *v == "no") x = false;
      else throw ConfigError(sec + "." + key + ": expected true or false, got '" + *v + "'");
    }
    put(sec, key, x ? "true" : "false");
    return x;
  }
  std::string path(const std::string& sec, const std::string& key, bool is_required) {
    const auto v = find(sec, key);
    if (!v || v->empty()) {
      if (is_required) throw ConfigError("missing required config key " + sec + "." + key);
      return put(sec, key, "");
    }
    return put(sec, key, fs::absolute(*v).lexically_normal().string());
  }
  std::string put(const std::string& sec, const std::string& key, std::string v) {
    auto& s = resolved_[sec];
    if (!s.count(key)) order_.emplace_back(sec, key);
    s[key] = v;
    return v;
  }
  const Sections& raw() const { return raw_; }

  /// Resolved view in first-read order.
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> resolved() const {
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> out;
    for (const auto& [sec, key] : order_) {
      auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == sec; });
      if (it == out.end()) {
        out.emplace_back(sec, std::vector<std::pair<std::string, std::string>>{});
        it = out.end() - 1;
      }
      it->second.emplace_back(key, resolved_.at(sec).at(key));
    }
    return out;
  }

 private:
  Sections raw_;
  std::uint64_t root_;
  Sections resolved_;
  std::vector<std::pair<std::string, std::string>> order_;
};

spectro::DatasetConfig resolve_data(Resolver& r) {
  spectro::DatasetConfig d;
  d.n = r.size("data", "n", d.n);
  d.h = r.size("data", "h", d.h);
  d.w = r.size("data", "w", d.w);
  d.seed = r.seed("data");
  d.num_classes = r.size("data", "classes", d.num_classes);
  d.duration_min = r.real("data", "duration_min", d.duration_min);
  d.duration_max = r.real("data", "duration_max", d.duration_max);
  d.period_min = r.real("data", "period_min", d.period_min);
  d.period_max = r.real("data", "period_max", d.period_max);
  d.modulation_min = r.real("data", "modulation_min", d.modulation_min);
  d.modulation_max = r.real("data", "modulation_max", d.modulation_max);
  d.chirp_max = r.real("data", "chirp_max", d.chirp_max);
  d.delay_span = r.real("data", "delay_span", d.delay_span);
  d.noise_floor = r.real("data", "noise_floor", d.noise_floor);
  return d;
}

nets::ModelConfig resolve_model(Resolver& r, std::uint64_t root) {
  std::map<std::string, std::string> kv;
  if (const auto s = r.raw().find("model"); s != r.raw().end()) kv = s->second;
  if (!kv.count("seed")) kv["seed"] = std::to_string(root);
  nets::ModelConfig mc;
  try {
    mc = nets::ModelConfig::from_map(kv);
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (const auto& [k, v] : mc.to_map()) r.put("model", k, v);
  return mc;
}

train::TrainConfig resolve_train(Resolver& r) {
  train::TrainConfig t;
  t.lr = r.real("train", "lr", t.lr);
  t.beta1 = r.real("train", "beta1", t.beta1);
  t.beta2 = r.real("train", "beta2", t.beta2);
  t.eps = r.real("train", "eps", t.eps);
  t.weight_decay = r.real("train", "weight_decay", t.weight_decay);
  t.batch = r.size("train", "batch", t.batch);
  t.epochs = r.size("train", "epochs", t.epochs);
  t.patience = r.size("train", "patience", t.patience);
  t.cosine = r.flag("train", "cosine", t.cosine);
  t.seed = r.seed("train");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

const spectro::Shard& pick_split(const spectro::Dataset& ds, const std::string& key, const std::string& split) {
  if (split == "test") return ds.test;
  if (split == "val") return ds.val;
  if (split == "train") return ds.train;
  throw ConfigError(key + ": expected train, val or test, got '" + split + "'");
}

std::vector<metrics::PerturbationSpec> parse_specs(const std::string& key, const std::string& list) {
  std::vector<metrics::PerturbationSpec> out;
  try {
    for (const auto& s : split_list(list)) out.push_back(metrics::PerturbationSpec::parse(s));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
  return out;
}

void check_input_shape(const nets::Model& m, const spectro::Shard& s) {
  const auto& c = m.config();
  if (c.in_channels != 1 || c.in_h != s.h || c.in_w != s.w) {
    throw ConfigError("data grid " + std::to_string(s.h) + "x" + std::to_string(s.w) + " does not match the model input " +
                      std::to_string(c.in_h) + "x" + std::to_string(c.in_w));
  }
}

spectro::Dataset load_data(const std::string& dir) {
  for (const char* f : {"train.sbd", "val.sbd", "test.sbd"}) {
    if (!fs::exists(fs::path(dir) / f)) throw ConfigError("data.dir: " + (fs::path(dir) / f).string() + " not found");
  }
  return spectro::read_dataset(dir);
}

nets::Model load_model(const std::string& key, const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "model.ini")) throw ConfigError(key + ": no checkpoint at " + dir);
  return nets::load_checkpoint(dir);
}

std::string quote_csv(const std::string& s) {
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

/// Writes [manifest] + resolved sections. Called before the work starts and
/// again once it finishes.
class Manifest {
 public:
  Manifest(fs::path path, std::string command, std::string config_path)
      : path_(std::move(path)), command_(std::move(command)), config_(std::move(config_path)), started_(utc_now()) {}

  void note(const std::string& key, const std::string& value) { notes_.emplace_back(key, value); }

  void write(const Resolver& r, bool finished) {
    boost::property_tree::ptree pt;
    pt.put("manifest.command", command_);
    pt.put("manifest.version", std::string(kVersion) + "+" + SINBASIS_GIT_REV);
    pt.put("manifest.generator", spectro::kGeneratorVersion);
    pt.put("manifest.config", config_);
    pt.put("manifest.started", started_);
    if (finished) pt.put("manifest.finished", utc_now());
    for (const auto& [k, v] : notes_) pt.put("manifest." + k, v);
    for (const auto& [sec, kvs] : r.resolved()) {
      boost::property_tree::ptree s;
      for (const auto& [k, v] : kvs) s.put(boost::property_tree::ptree::path_type(k, '\0'), v);
      pt.add_child(boost::property_tree::ptree::path_type(sec, '\0'), s);
    }
    boost::property_tree::write_ini(path_.string(), pt);
  }

 private:
  fs::path path_;
  std::string command_, config_, started_;
  std::vector<std::pair<std::string, std::string>> notes_;
};

void print_resolved(const Resolver& r, std::ostream& out) {
  out << "# resolved configuration\n";
  for (const auto& [sec, kvs] : r.resolved()) {
    out << '[' << sec << "]\n";
    for (const auto& [k, v] : kvs) out << k << " = " << v << '\n';
  }
  out << std::flush;
}

struct Context {
  std::string command;
  Resolver& r;
  fs::path out_dir;
  Manifest& manifest;
  std::ostream& out;
};

/// Resolves the command's sections up front so the manifest is complete
/// before any work starts.
using Prepared = std::function<int(Context&)>;

// ---- commands -------------------------------------------------------------------------

Prepared prepare_gen(Resolver& r) {
  r.required("data", "n");
  const spectro::DatasetConfig dc = resolve_data(r);
  return [dc](Context& c) {
    const spectro::Dataset ds = spectro::make_dataset(dc);
    spectro::write_dataset(c.out_dir, ds, dc);
    c.out << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
          << " train/val/test samples to " << c.out_dir.string() << '\n';
    return kOk;
  };
}

Prepared prepare_train(Resolver& r, std::uint64_t root) {
  const std::string data_dir = r.path("data", "dir", true);
  r.required("model", "backbone");
  r.required("model", "basis");
  const nets::ModelConfig mc = resolve_model(r, root);
  const train::TrainConfig tc = resolve_train(r);
  const std::size_t stop_after = r.size("train", "stop_after", 0);
  const std::string resume = r.path("train", "resume", false);
  return [=](Context& c) {
    const spectro::Dataset ds = load_data(data_dir);
    nets::Model model(mc);
    check_input_shape(model, ds.train);
    if (!resume.empty()) {
      const fs::path prev(resume);
      nets::Model last = load_model("train.resume", (prev / "last").string());
      if (last.config().to_map() != mc.to_map()) throw ConfigError("train.resume: checkpoint model config differs");
      model = std::move(last);
    }
    train::Trainer trainer(model, ds.train, ds.val, tc);
    if (!resume.empty()) {
      try {
        trainer.resume(train::load_train_state(fs::path(resume) / "optimizer"));
      } catch (const ContractError& e) {
        throw ConfigError(std::string("train.resume: ") + e.what());
      }
    }
    std::size_t ran = 0;
    double seconds = 0.0;
    while (!trainer.finished() && (stop_after == 0 || ran < stop_after)) {
      const train::EpochRecord& e = trainer.run_epoch();
      ++ran;
      seconds += e.seconds;
      char line[160];
      std::snprintf(line, sizeof line, "epoch %3zu  lr %.3e  train %.6f  val %.6f  (%.1f s)\n", e.epoch, e.lr,
                    e.train_loss, e.val_loss, e.seconds);
      c.out << line << std::flush;
    }
    const train::TrainState& st = trainer.state();
    nets::save_checkpoint(c.out_dir / "last", model);
    train::save_train_state(c.out_dir / "optimizer", st);
    train::write_history_csv(c.out_dir / "history.csv", st.history);
    trainer.restore_best();
    nets::save_checkpoint(c.out_dir / "checkpoint", model);

    metrics::EvalConfig ec;
    ec.seed = tc.seed;
    metrics::MetricsRecord rec = metrics::evaluate(model, ds.val, ec);
    rec.epoch_seconds = ran ? seconds / static_cast<double>(ran) : 0.0;
    metrics::write_metrics_csv(c.out_dir / "metrics.csv", {rec});
    c.manifest.note("epochs_run", std::to_string(ran));
    c.manifest.note("epoch_seconds_mean", g17(rec.epoch_seconds));
    c.manifest.note("finished_training", trainer.finished() ? "true" : "false");
    c.out << "best epoch " << st.best_epoch << " (validation loss " << g17(st.best_val) << ")"
          << (trainer.finished() ? "" : "; stopped by train.stop_after, resume with train.resume") << '\n';
    return kOk;
  };
}

Prepared prepare_eval(Resolver& r) {
  const std::string data_dir = r.path("data", "dir", true);
  const std::string ckpt = r.path("eval", "checkpoint", true);
  const std::string split = r.str("eval", "split", "test");
  metrics::EvalConfig ec;
  ec.band_cutoff = r.real("eval", "band_cutoff", ec.band_cutoff);
  ec.delay_shifts.clear();
  for (const auto& s : split_list(r.str("eval", "delay_shifts", "2,4,8"))) {
    try {
      ec.delay_shifts.push_back(std::stol(s));
    } catch (const std::exception&) {
      throw ConfigError("eval.delay_shifts: bad integer '" + s + "'");
    }
  }
  if (ec.delay_shifts.empty()) throw ConfigError("eval.delay_shifts: need at least one shift");
  ec.perturbations = parse_specs("eval.perturbations", r.str("eval", "perturbations", ""));
  ec.seed = r.seed("eval");
  const bool latency = r.flag("eval", "latency", true);
  const std::size_t saliency = r.size("eval", "saliency", 0);
  return [=](Context& c) {
    const spectro::Dataset ds = load_data(data_dir);
    const spectro::Shard& shard = pick_split(ds, "eval.split", split);
    const nets::Model model = load_model("eval.checkpoint", ckpt);
    check_input_shape(model, shard);
    metrics::MetricsRecord rec = metrics::evaluate(model, shard, ec);
    metrics::write_metrics_csv(c.out_dir / "metrics.csv", {rec});
    bool shifts = false;
    for (const auto& p : ec.perturbations) shifts = shifts || p.kind == metrics::PerturbationSpec::Kind::shift;
    if (shifts) metrics::write_shift_curve_csv(c.out_dir / "shift_curve.csv", rec);
    for (std::size_t i = 0; i < std::min(saliency, shard.size()); ++i) {
      const double target = model.config().head == nets::HeadKind::regression ? shard.phase[i] : shard.label[i];
      const Tensor map = metrics::saliency_map(model, shard.images(i, 1), target);
      char name[32];
      std::snprintf(name, sizeof name, "saliency_%03zu.csv", i);
      std::ofstream os(c.out_dir / name, std::ios::binary);
      for (std::size_t y = 0; y < shard.h; ++y)
        for (std::size_t x = 0; x < shard.w; ++x) os << g17(map.at(y * shard.w + x)) << (x + 1 < shard.w ? ',' : '\n');
    }
    if (latency) {
      rec.latency_ms = metrics::latency_ms(model, shard.images(0, 1));
      c.manifest.note("latency_ms_median", g17(rec.latency_ms));
    }
    for (const auto& [k, v] : rec.columns()) c.out << k << " = " << g17(v) << '\n';
    return kOk;
  };
}

Prepared prepare_perturb(Resolver& r) {
  const std::string data_dir = r.path("data", "dir", true);
  const std::string ckpt = r.path("perturb", "checkpoint", true);
  const std::string split = r.str("perturb", "split", "test");
  const auto specs = parse_specs("perturb.specs", r.str("perturb", "specs",
                                                        "fgsm@0.01,fgsm@0.03,fgsm@0.05,pgd@0.03,noise@0.05,"
                                                        "noise@0.1,shift@0.5,shift@1.5,shift@2"));
  if (specs.empty()) throw ConfigError("perturb.specs: need at least one perturbation");
  spectro::PgdOptions pgd;
  pgd.alpha = r.real("perturb", "pgd_alpha", pgd.alpha);
  pgd.eps = r.real("perturb", "pgd_ref_eps", pgd.eps);
  pgd.steps = r.size("perturb", "pgd_steps", pgd.steps);
  pgd.restarts = r.size("perturb", "pgd_restarts", pgd.restarts);
  if (pgd.restarts == 0 || !(pgd.eps > 0.0)) throw ConfigError("perturb.pgd_restarts and perturb.pgd_ref_eps must be positive");
  const std::uint64_t seed = r.seed("perturb");
  return [=](Context& c) {
    const spectro::Dataset ds = load_data(data_dir);
    const spectro::Shard& shard = pick_split(ds, "perturb.split", split);
    const nets::Model model = load_model("perturb.checkpoint", ckpt);
    check_input_shape(model, shard);
    const bool regression = model.config().head == nets::HeadKind::regression;
    const auto res = metrics::robustness_sweep(model, shard, specs, seed, pgd);
    std::ofstream os(c.out_dir / "perturb.csv", std::ios::binary);
    os << "perturbation,kind,value,metric,result\n";
    metrics::MetricsRecord curve;
    for (const auto& p : res) {
      const std::string name = p.spec.name();
      const std::string kind = name.substr(0, name.find('@'));
      os << name << ',' << kind << ',' << g17(p.spec.value) << ',' << (regression ? "mse" : "accuracy") << ','
         << g17(p.value) << '\n';
      curve.perturbations.emplace_back(name, p.value);
      c.out << name << " = " << g17(p.value) << '\n';
    }
    metrics::write_shift_curve_csv(c.out_dir / "shift_curve.csv", curve);
    return kOk;
  };
}

Prepared prepare_verify(Resolver& r) {
  checks::VerifyConfig v;
  v.seed = r.seed("verify");
  v.matrix_cases = r.size("verify", "matrix_cases", v.matrix_cases);
  v.grad_h = r.real("verify", "grad_h", v.grad_h);
  v.grad_tol = r.real("verify", "grad_tol", v.grad_tol);
  v.shift_cases = r.size("verify", "shift_cases", v.shift_cases);
  v.mercer_grid = r.size("verify", "mercer_grid", v.mercer_grid);
  v.mercer_omega = r.real("verify", "mercer_omega", v.mercer_omega);
  v.slope_tol = r.real("verify", "slope_tol", v.slope_tol);
  v.rademacher_instances = r.size("verify", "rademacher_instances", v.rademacher_instances);
  v.rademacher_draws = r.size("verify", "rademacher_draws", v.rademacher_draws);
  v.lipschitz_cases = r.size("verify", "lipschitz_cases", v.lipschitz_cases);
  return [v](Context& c) {
    const auto results = checks::run_verify_suite(v, &c.out);
    std::ofstream os(c.out_dir / "verify.csv", std::ios::binary);
    os << "criterion,check,status,detail\n";
    bool ok = true;
    double seconds = 0.0;
    for (const auto& res : results) {
      os << res.criterion << ',' << quote_csv(res.name) << ',' << (res.pass ? "pass" : "fail") << ','
         << quote_csv(res.detail) << '\n';
      ok = ok && res.pass;
      seconds += res.seconds;
    }
    c.manifest.note("verify_seconds", g17(seconds));
    c.out << (ok ? "all checks passed" : "some checks FAILED") << '\n';
    return ok ? kOk : kCheckFailure;
  };
}

std::vector<metrics::MetricsRecord> read_runs(const std::string& key, const std::string& list) {
  std::vector<metrics::MetricsRecord> out;
  for (const auto& item : split_list(list)) {
    fs::path p(item);
    if (fs::is_directory(p)) p /= "metrics.csv";
    if (!fs::exists(p)) throw ConfigError(key + ": " + p.string() + " not found");
    for (auto& rec : metrics::read_metrics_csv(p)) out.push_back(std::move(rec));
  }
  if (out.empty()) throw ConfigError(key + ": no metrics files listed");
  return out;
}

std::string pm(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g ± %.2g", mean, sd);
  return buf;
}

Prepared prepare_report(Resolver& r) {
  const std::string cand = r.required("report", "candidate");
  const std::string base = r.required("report", "baseline");
  const std::string cl = r.str("report", "candidate_label", "candidate");
  const std::string bl = r.str("report", "baseline_label", "baseline");
  return [=](Context& c) {
    const auto cr = read_runs("report.candidate", cand);
    const auto br = read_runs("report.baseline", base);
    std::vector<metrics::MetricSummary> summary;
    try {
      summary = metrics::aggregate_seeds(cr, br);
    } catch (const ContractError& e) {
      throw ConfigError(std::string("report: ") + e.what());
    }
    metrics::write_summary_json(c.out_dir / "summary.json", summary, cl, bl);
    std::ostringstream t;
    t << "mean±std over N=" << cr.size() << " seeds; p: exact one-sided Wilcoxon signed-rank, " << cl
      << " better than " << bl << "\n\n";
    t << "| metric | " << bl << " | " << cl << " | p |\n|---|---|---|---|\n";
    for (const auto& m : summary) {
      char p[32] = "n/a";
      if (m.p_value) std::snprintf(p, sizeof p, "%.4g", *m.p_value);
      t << "| " << m.metric << " | " << (m.baseline_mean ? pm(*m.baseline_mean, *m.baseline_std) : "n/a") << " | "
        << pm(m.mean, m.std) << " | " << p << " |\n";
    }
    std::ofstream(c.out_dir / "table.md", std::ios::binary) << t.str();
    c.out << t.str();
    return kOk;
  };
}

}  // namespace

std::vector<std::string> required_keys(const std::string& command) {
  if (command == "gen") return {"data.n"};
  if (command == "train") return {"data.dir", "model.backbone", "model.basis"};
  if (command == "eval") return {"data.dir", "eval.checkpoint"};
  if (command == "perturb") return {"data.dir", "perturb.checkpoint"};
  if (command == "report") return {"report.candidate", "report.baseline"};
  return {};
}

Sections load_config(const std::string& path) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini(path, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot read config " + path + ": " + e.message());
  }
  Sections s;
  for (const auto& [sec, child] : pt) {
    if (child.empty() && !child.data().empty()) throw ConfigError("config key '" + sec + "' outside a section");
    for (const auto& [k, v] : child) s[sec][k] = v.data();
  }
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  kernels::configure_threads_from_env();
  CLI::App app{"Sinusoidal weight-basis networks: data, training, evaluation and checks", "sinbasis"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  for (const char* name : {"gen", "train", "eval", "perturb", "verify", "report"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "INI configuration file (or a manifest.ini)")->required();
    sub->add_option("--seed", seed, "root seed; overrides run.seed");
    sub->add_option("--out", out_dir, "output directory; overrides run.out");
    sub->add_option("--override", overrides, "SECTION.KEY=VALUE, repeatable");
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "sinbasis: " << e.what() << '\n';
    return kConfigError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    Sections raw = load_config(config_path);
    raw.erase("manifest");
    for (const auto& o : overrides) {
      const auto eq = o.find('='), dot = o.find('.');
      if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("--override expects SECTION.KEY=VALUE, got '" + o + "'");
      }
      raw[o.substr(0, dot)][o.substr(dot + 1, eq - dot - 1)] = o.substr(eq + 1);
    }
    if (seed) raw["run"]["seed"] = std::to_string(*seed);
    if (!out_dir.empty()) raw["run"]["out"] = out_dir;
    if (!raw["run"].count("out")) raw["run"]["out"] = "sinbasis-out";
    for (const auto& [sec, kvs] : raw) {
      const auto known = kKnownKeys.find(sec);
      if (known == kKnownKeys.end()) throw ConfigError("unknown config section [" + sec + "]");
      for (const auto& [k, _] : kvs)
        if (!known->second.count(k)) throw ConfigError("unknown config key " + sec + "." + k);
    }

    Resolver r(raw, 0);
    const std::uint64_t root = r.u64("run", "seed", 0);
    Resolver resolver(raw, root);
    resolver.put("run", "seed", std::to_string(root));
    const fs::path out_path = resolver.path("run", "out", true);

    Prepared work;
    if (command == "gen") work = prepare_gen(resolver);
    else if (command == "train") work = prepare_train(resolver, root);
    else if (command == "eval") work = prepare_eval(resolver);
    else if (command == "perturb") work = prepare_perturb(resolver);
    else if (command == "verify") work = prepare_verify(resolver);
    else work = prepare_report(resolver);

    print_resolved(resolver, out);
    std::error_code ec;
    fs::create_directories(out_path, ec);
    if (ec || !fs::is_directory(out_path)) throw ConfigError("run.out: cannot create " + out_path.string());
    Manifest manifest(out_path / "manifest.ini", command, fs::absolute(config_path).lexically_normal().string());
    manifest.write(resolver, false);
    if (!fs::exists(out_path / "manifest.ini")) throw ConfigError("run.out: " + out_path.string() + " is not writable");
    Context ctx{command, resolver, out_path, manifest, out};
    const int code = work(ctx);
    manifest.write(resolver, true);
    return code;
  } catch (const ConfigError& e) {
    err << "sinbasis " << command << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericalError& e) {
    err << "sinbasis " << command << ": numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const boost::property_tree::ptree_error& e) {
    err << "sinbasis " << command << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const std::invalid_argument& e) {  // also DimensionError
    err << "sinbasis " << command << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const std::logic_error& e) {  // ContractError, DomainError
    err << "sinbasis " << command << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {  // I/O failures
    err << "sinbasis " << command << ": " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace sinbasis::cli
