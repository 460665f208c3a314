#include "sinbasis/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sinbasis/errors.hpp"
#include "sinbasis/rng.hpp"

namespace sinbasis::metrics {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

double wrap(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  return r >= kTwoPi ? 0.0 : r;
}

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Rows [begin, begin+count) of a batch tensor.
Tensor slice_batch(const Tensor& x, std::size_t begin, std::size_t count) {
  Shape s = x.shape();
  const std::size_t per = x.numel() / s[0];
  s[0] = count;
  const auto d = x.data();
  return Tensor(s, std::vector<double>(d.begin() + static_cast<long>(begin * per),
                                       d.begin() + static_cast<long>((begin + count) * per)));
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void require_regression(const nets::Model& model, const char* who) {
  if (model.config().head != nets::HeadKind::regression) {
    throw ContractError(std::string(who) + ": needs a regression head");
  }
}

}  // namespace

double phase_error(double predicted, double truth) {
  const double d = std::abs(wrap(predicted) - wrap(truth));
  return std::min(d, kTwoPi - d);
}

double mse(const std::vector<double>& predicted, const std::vector<double>& truth) {
  if (predicted.size() != truth.size() || predicted.empty()) throw DimensionError("mse: size mismatch or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
  return s / static_cast<double>(predicted.size());
}

double mean_phase_error(const std::vector<double>& predicted, const std::vector<double>& truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw DimensionError("mean_phase_error: size mismatch or empty");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += phase_error(predicted[i], truth[i]);
  return s / static_cast<double>(predicted.size());
}

Tensor predict_logits(const nets::Model& model, const Tensor& x, std::size_t batch) {
  NoGradGuard guard;
  const std::size_t n = x.dim(0);
  std::vector<double> out;
  std::size_t width = 0;
  for (std::size_t b = 0; b < n; b += batch) {
    const Tensor y = model.forward(slice_batch(x, b, std::min(batch, n - b)));
    width = y.dim(1);
    const auto d = y.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return Tensor({n, width}, std::move(out));
}

std::vector<double> predict(const nets::Model& model, const Tensor& x, std::size_t batch) {
  require_regression(model, "predict");
  const Tensor y = predict_logits(model, x, batch);
  return {y.data().begin(), y.data().end()};
}

// ---- delta_rel -----------------------------------------------------------------------

Tensor delay_shift(const Tensor& x, long delta) {
  const std::size_t w = x.shape().back();
  const std::size_t rows = x.numel() / w;
  const long lw = static_cast<long>(w);
  const auto d = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (long j = 0; j < lw; ++j) {
      const long src = ((j - delta) % lw + lw) % lw;
      out[r * w + static_cast<std::size_t>(j)] = d[r * w + static_cast<std::size_t>(src)];
    }
  return Tensor(x.shape(), std::move(out));
}

std::vector<Transform> default_transforms() {
  std::vector<Transform> t;
  for (long d : {2L, 4L, 8L}) t.push_back([d](const Tensor& x) { return delay_shift(x, d); });
  return t;
}

double delta_rel(const nets::Model& model, const spectro::Shard& test, const std::vector<Transform>& transforms) {
  require_regression(model, "delta_rel");
  if (transforms.empty()) throw ContractError("delta_rel: empty transform set");
  const Tensor x = test.images();
  const double base = mse(predict(model, x), test.phase);
  if (base == 0.0) throw ContractError("delta_rel: baseline MSE is zero");
  double acc = 0.0;
  for (const auto& t : transforms) acc += (mse(predict(model, t(x)), test.phase) - base) / base;
  return acc / static_cast<double>(transforms.size());
}

// ---- band split ----------------------------------------------------------------------

BandSplit band_mse(const Tensor& predicted, const Tensor& truth, double cutoff) {
  if (predicted.shape() != truth.shape() || predicted.rank() < 1 || predicted.rank() > 2) {
    throw DimensionError("band_mse: equal rank-1 or rank-2 shapes required");
  }
  const std::size_t h = predicted.rank() == 2 ? predicted.dim(0) : 1;
  const std::size_t w = predicted.shape().back();
  const std::size_t n = h * w;
  const auto p = predicted.data(), t = truth.data();

  std::vector<std::complex<double>> in(n), out(n);
  BandSplit res;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = p[i] - t[i];
    in[i] = r;
    res.total += r * r;
  }
  res.total /= static_cast<double>(n);

  {
    // FFTW planning is not thread-safe; execution of a private plan is.
    static std::mutex planner;
    fftw_plan plan;
    {
      std::lock_guard lock(planner);
      plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), reinterpret_cast<fftw_complex*>(in.data()),
                              reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard lock(planner);
    fftw_destroy_plan(plan);
  }

  auto freq = [](std::size_t k, std::size_t len) {
    const long kk = static_cast<long>(k) <= static_cast<long>(len) / 2 ? static_cast<long>(k)
                                                                       : static_cast<long>(k) - static_cast<long>(len);
    return static_cast<double>(kk) / static_cast<double>(len);
  };
  const double norm = static_cast<double>(n) * static_cast<double>(n);
  for (std::size_t ky = 0; ky < h; ++ky)
    for (std::size_t kx = 0; kx < w; ++kx) {
      const double fy = freq(ky, h), fx = freq(kx, w);
      const double radial = std::sqrt(fx * fx + fy * fy) / 0.5;
      const double e = std::norm(out[ky * w + kx]) / norm;
      (radial <= cutoff ? res.low : res.high) += e;
    }
  return res;
}

BandSplit band_mse_sorted(const std::vector<double>& predicted, const std::vector<double>& truth, double cutoff) {
  if (predicted.size() != truth.size() || predicted.empty()) throw DimensionError("band_mse: size mismatch");
  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return truth[a] < truth[b]; });
  std::vector<double> p(order.size()), t(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    p[i] = predicted[order[i]];
    t[i] = truth[order[i]];
  }
  const std::size_t n = p.size();
  return band_mse(Tensor({n}, std::move(p)), Tensor({n}, std::move(t)), cutoff);
}

// ---- classification ------------------------------------------------------------------

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw DimensionError("average_precision: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto total = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  if (total == 0) return kNaN;

  std::vector<double> precision(order.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (positive[order[k]]) ++tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  for (std::size_t k = order.size() - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (positive[order[k]]) ap += precision[k] / static_cast<double>(total);
  }
  return ap;
}

ClassificationMetrics classification_metrics(const Tensor& scores, const std::vector<int>& labels) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size() || labels.empty()) {
    throw DimensionError("classification_metrics: scores must be [N, C] with N labels");
  }
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  if (c < 2) throw ContractError("classification_metrics: need at least two classes");
  const auto s = scores.data();
  ClassificationMetrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = s.subspan(i * c, c);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[i];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> col(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = s[i * c + k];
      pos[i] = labels[i] == static_cast<int>(k);
    }
    const double ap = average_precision(col, pos);
    if (std::isnan(ap)) {
      m.skipped_classes.push_back(static_cast<int>(k));
      continue;
    }
    total += ap;
    ++used;
  }
  if (!m.skipped_classes.empty()) {
    std::cerr << "warning: classes absent from the evaluation labels skipped in mAP:";
    for (int k : m.skipped_classes) std::cerr << ' ' << k;
    std::cerr << '\n';
  }
  m.map = used ? total / static_cast<double>(used) : kNaN;
  return m;
}

ClassificationMetrics eval_classification(const nets::Model& model, const spectro::Shard& test) {
  if (model.config().head != nets::HeadKind::classification) {
    throw ContractError("eval_classification: needs a classification head");
  }
  const Tensor logits = predict_logits(model, test.images());
  return classification_metrics(softmax_rows(logits), test.label);
}

// ---- robustness ----------------------------------------------------------------------

std::string PerturbationSpec::name() const {
  const char* k = kind == Kind::fgsm ? "fgsm" : kind == Kind::pgd ? "pgd" : kind == Kind::noise ? "noise" : "shift";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s@%g", k, value);
  return buf;
}

PerturbationSpec PerturbationSpec::parse(const std::string& text) {
  const auto at = text.find('@');
  if (at == std::string::npos) throw std::invalid_argument("perturbation '" + text + "': expected kind@value");
  const std::string kind = text.substr(0, at);
  PerturbationSpec s;
  if (kind == "fgsm") s.kind = Kind::fgsm;
  else if (kind == "pgd") s.kind = Kind::pgd;
  else if (kind == "noise") s.kind = Kind::noise;
  else if (kind == "shift") s.kind = Kind::shift;
  else throw std::invalid_argument("perturbation '" + text + "': unknown kind");
  std::size_t used = 0;
  try {
    s.value = std::stod(text.substr(at + 1), &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() - at - 1 || !std::isfinite(s.value) || s.value < 0.0 ||
      (s.kind == Kind::shift && s.value == 0.0)) {
    throw std::invalid_argument("perturbation '" + text + "': bad value");
  }
  return s;
}

std::vector<PerturbationResult> robustness_sweep(const nets::Model& model, const spectro::Shard& test,
                                                 const std::vector<PerturbationSpec>& specs, std::uint64_t seed,
                                                 const spectro::PgdOptions& pgd) {
  const bool regression = model.config().head == nets::HeadKind::regression;
  const spectro::PerSampleLoss loss =
      regression ? spectro::squared_error_loss(model, test.phase) : spectro::cross_entropy_loss(model, test.label);
  const Tensor x = test.images();
  std::vector<PerturbationResult> out;
  for (const auto& spec : specs) {
    const std::uint64_t s = derive_seed(seed, spec.name());
    Tensor xp;
    switch (spec.kind) {
      case PerturbationSpec::Kind::fgsm:
        xp = spectro::fgsm(loss, x, spec.value);
        break;
      case PerturbationSpec::Kind::pgd: {
        spectro::PgdOptions o = pgd;
        o.alpha = pgd.eps > 0.0 ? pgd.alpha * spec.value / pgd.eps : pgd.alpha;
        o.eps = spec.value;
        o.seed = s;
        xp = spectro::pgd(loss, x, o);
        break;
      }
      case PerturbationSpec::Kind::noise:
        xp = spectro::gaussian_noise(x, spec.value, s);
        break;
      case PerturbationSpec::Kind::shift:
        xp = spectro::frequency_shift(x, spec.value);
        break;
    }
    const double v = regression ? mse(predict(model, xp), test.phase)
                                : classification_metrics(predict_logits(model, xp), test.label).accuracy;
    out.push_back({spec, v});
  }
  return out;
}

// ---- saliency and latency ------------------------------------------------------------

Tensor saliency_map(const spectro::PerSampleLoss& loss, const Tensor& x) {
  if (x.rank() != 4 || x.dim(0) != 1) throw DimensionError("saliency_map: input must be [1, C, H, W]");
  const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor leaf = x.clone(true);
  const Tensor l = sum(loss(leaf));
  if (l.requires_grad()) l.backward();
  std::vector<double> map(h * w, 0.0);
  if (leaf.has_grad()) {
    const auto g = leaf.grad();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h * w; ++i) map[i] = std::max(map[i], std::abs(g[ch * h * w + i]));
  }
  const double peak = *std::max_element(map.begin(), map.end());
  if (peak > 0.0)
    for (double& v : map) v /= peak;
  return Tensor({h, w}, std::move(map));
}

Tensor saliency_map(const nets::Model& model, const Tensor& x, double target) {
  if (model.config().head == nets::HeadKind::regression) {
    return saliency_map(spectro::squared_error_loss(model, {target}), x);
  }
  return saliency_map(spectro::cross_entropy_loss(model, {static_cast<int>(std::lround(target))}), x);
}

double latency_ms(const nets::Model& model, const Tensor& image, std::size_t warmup, std::size_t reps) {
  if (reps == 0) throw ContractError("latency_ms: need at least one timed call");
  NoGradGuard guard;
  for (std::size_t i = 0; i < warmup; ++i) (void)model.forward(image);
  std::vector<double> times(reps);
  for (auto& t : times) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor y = model.forward(image);
    t = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return median_of(std::move(times));
}

// ---- records -------------------------------------------------------------------------

std::vector<std::pair<std::string, double>> MetricsRecord::columns() const {
  std::vector<std::pair<std::string, double>> c{{"mse", mse},
                                                {"phase_error", phase_error},
                                                {"delta_rel", delta_rel},
                                                {"band_mse_low", band_mse_low},
                                                {"band_mse_high", band_mse_high},
                                                {"accuracy", accuracy},
                                                {"map", map}};
  c.insert(c.end(), perturbations.begin(), perturbations.end());
  return c;
}

MetricsRecord evaluate(const nets::Model& model, const spectro::Shard& test, const EvalConfig& cfg) {
  MetricsRecord r;
  r.seed = model.config().seed;
  if (model.config().head == nets::HeadKind::regression) {
    const std::vector<double> pred = predict(model, test.images());
    r.mse = mse(pred, test.phase);
    r.phase_error = mean_phase_error(pred, test.phase);
    std::vector<Transform> ts;
    for (long d : cfg.delay_shifts) ts.push_back([d](const Tensor& x) { return delay_shift(x, d); });
    r.delta_rel = delta_rel(model, test, ts);
    const BandSplit b = band_mse_sorted(pred, test.phase, cfg.band_cutoff);
    r.band_mse_low = b.low;
    r.band_mse_high = b.high;
    r.accuracy = r.map = kNaN;
  } else {
    const ClassificationMetrics c = eval_classification(model, test);
    r.accuracy = c.accuracy;
    r.map = c.map;
    r.mse = r.phase_error = r.delta_rel = r.band_mse_low = r.band_mse_high = kNaN;
  }
  for (const auto& p : robustness_sweep(model, test, cfg.perturbations, cfg.seed, cfg.pgd)) {
    r.perturbations.emplace_back(p.spec.name(), p.value);
  }
  return r;
}

// ---- statistics ----------------------------------------------------------------------

double wilcoxon_signed_rank(const std::vector<double>& differences) {
  std::vector<double> d;
  for (double v : differences)
    if (v != 0.0) d.push_back(v);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  // doubled average ranks stay integral: tie group i..j-1 gets (i+1)+(j) = 2·mean rank
  std::vector<std::size_t> rank2(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = i + 1 + j;
    i = j;
  }
  std::size_t observed = 0, max_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0.0) observed += rank2[i];
    max_sum += rank2[i];
  }
  // counts[s] = number of sign patterns with doubled positive-rank sum s
  std::vector<long double> counts(max_sum + 1, 0.0L);
  counts[0] = 1.0L;
  std::size_t reach = 0;
  for (std::size_t i = 0; i < n; ++i) {
    reach += rank2[i];
    for (std::size_t s = reach + 1; s-- > rank2[i];) counts[s] += counts[s - rank2[i]];
  }
  long double tail = 0.0L;
  for (std::size_t s = observed; s <= max_sum; ++s) tail += counts[s];
  return static_cast<double>(tail / std::ldexp(1.0L, static_cast<int>(n)));
}

namespace {

struct Stats {
  double mean = 0.0, std = 0.0, median = 0.0;
};

Stats stats_of(const std::vector<double>& v) {
  Stats s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  s.median = median_of(v);
  return s;
}

std::map<std::uint64_t, const MetricsRecord*> by_seed(const std::vector<MetricsRecord>& records) {
  std::map<std::uint64_t, const MetricsRecord*> m;
  for (const auto& r : records) {
    if (!m.emplace(r.seed, &r).second) throw ContractError("aggregate_seeds: duplicate seed " + std::to_string(r.seed));
  }
  return m;
}

double column(const MetricsRecord& r, const std::string& name) {
  for (const auto& [k, v] : r.columns())
    if (k == name) return v;
  throw ContractError("aggregate_seeds: record lacks metric " + name);
}

}  // namespace

std::vector<MetricSummary> aggregate_seeds(const std::vector<MetricsRecord>& records,
                                           const std::vector<MetricsRecord>& baseline) {
  if (records.empty()) throw ContractError("aggregate_seeds: no records");
  const auto cand = by_seed(records);
  std::map<std::uint64_t, const MetricsRecord*> base;
  if (!baseline.empty()) {
    base = by_seed(baseline);
    std::set<std::uint64_t> a, b;
    for (const auto& [s, _] : cand) a.insert(s);
    for (const auto& [s, _] : base) b.insert(s);
    if (a != b) throw ContractError("aggregate_seeds: candidate and baseline seeds are not paired");
  }
  const bool classification = !std::isnan(records.front().accuracy);

  std::vector<MetricSummary> out;
  for (const auto& [name, _] : records.front().columns()) {
    std::vector<double> xs, ys;
    for (const auto& [seed, rec] : cand) {
      xs.push_back(column(*rec, name));
      if (!base.empty()) ys.push_back(column(*base.at(seed), name));
    }
    if (std::any_of(xs.begin(), xs.end(), [](double v) { return std::isnan(v); })) continue;

    MetricSummary m;
    m.metric = name;
    m.n = xs.size();
    const Stats s = stats_of(xs);
    m.mean = s.mean;
    m.std = s.std;
    m.median = s.median;
    if (!ys.empty() && std::none_of(ys.begin(), ys.end(), [](double v) { return std::isnan(v); })) {
      const Stats b = stats_of(ys);
      m.baseline_mean = b.mean;
      m.baseline_std = b.std;
      m.baseline_median = b.median;
      const bool higher_better =
          name == "accuracy" || name == "map" || (classification && name.find('@') != std::string::npos);
      std::vector<double> diff(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) diff[i] = higher_better ? xs[i] - ys[i] : ys[i] - xs[i];
      m.p_value = wilcoxon_signed_rank(diff);
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw ContractError("write_metrics_csv: no records");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const auto header = records.front().columns();
  os << "seed";
  for (const auto& [k, _] : header) os << ',' << k;
  os << '\n';
  for (const auto& r : records) {
    const auto cols = r.columns();
    if (cols.size() != header.size()) throw ContractError("write_metrics_csv: records have different columns");
    os << r.seed;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i].first != header[i].first) throw ContractError("write_metrics_csv: records have different columns");
      os << ',' << g17(cols[i].second);
    }
    os << '\n';
  }
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string x;
    while (std::getline(ls, x, ',')) f.push_back(x);
    return f;
  };
  std::string line;
  if (!std::getline(is, line)) throw ContractError("read_metrics_csv: empty file " + path.string());
  const auto header = split(line);
  if (header.empty() || header[0] != "seed") throw ContractError("read_metrics_csv: bad header in " + path.string());
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw ContractError("read_metrics_csv: ragged row in " + path.string());
    MetricsRecord r;
    r.seed = std::stoull(f[0]);
    const std::map<std::string, double*> fixed{{"mse", &r.mse},
                                               {"phase_error", &r.phase_error},
                                               {"delta_rel", &r.delta_rel},
                                               {"band_mse_low", &r.band_mse_low},
                                               {"band_mse_high", &r.band_mse_high},
                                               {"accuracy", &r.accuracy},
                                               {"map", &r.map}};
    for (std::size_t i = 1; i < f.size(); ++i) {
      const double v = std::strtod(f[i].c_str(), nullptr);
      if (auto it = fixed.find(header[i]); it != fixed.end()) *it->second = v;
      else r.perturbations.emplace_back(header[i], v);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_summary_json(const std::filesystem::path& path, const std::vector<MetricSummary>& summary,
                        const std::string& candidate_label, const std::string& baseline_label) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["candidate"] = candidate_label;
  j["baseline"] = baseline_label.empty() ? ordered_json(nullptr) : ordered_json(baseline_label);
  j["test"] = "wilcoxon signed-rank, exact, one-sided (candidate better)";
  ordered_json rows = ordered_json::array();
  for (const auto& m : summary) {
    ordered_json r;
    r["metric"] = m.metric;
    r["n"] = m.n;
    r["mean"] = m.mean;
    r["std"] = m.std;
    r["median"] = m.median;
    r["baseline_mean"] = opt(m.baseline_mean);
    r["baseline_std"] = opt(m.baseline_std);
    r["baseline_median"] = opt(m.baseline_median);
    r["p_value"] = opt(m.p_value);
    rows.push_back(std::move(r));
  }
  j["metrics"] = std::move(rows);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_shift_curve_csv(const std::filesystem::path& path, const MetricsRecord& record) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "s,mse\n";
  for (const auto& [name, v] : record.perturbations) {
    if (name.rfind("shift@", 0) == 0) os << name.substr(6) << ',' << g17(v) << '\n';
  }
}

}  // namespace sinbasis::metrics
