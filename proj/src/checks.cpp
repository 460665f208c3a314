#include "sinbasis/checks.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "sinbasis/matrix_equiv.hpp"
#include "sinbasis/rng.hpp"
#include "sinbasis/sinbasis.hpp"
#include "sinbasis/theory.hpp"

namespace sinbasis::checks {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  return std::equal(x.begin(), x.end(), y.begin());
}

nets::ModelConfig tiny(nets::Backbone b, BasisMode m, nets::HeadKind h, std::uint64_t seed) {
  nets::ModelConfig c;
  c.backbone = b;
  c.basis = m;
  c.head = h;
  c.num_classes = 3;
  c.in_h = c.in_w = 8;
  c.cnn_channels = {3, 4};
  c.patch = 4;
  c.embed_dim = 8;
  c.vit_heads = 2;
  c.vit_depth = 1;
  c.vit_mlp = 12;
  c.capsule_stem = 3;
  c.primary_caps = 3;
  c.primary_dim = 4;
  c.output_caps = 2;
  c.output_dim = 5;
  c.head_hidden = 6;
  c.seed = seed;
  return c;
}

constexpr nets::Backbone kBackbones[] = {nets::Backbone::cnn, nets::Backbone::vit, nets::Backbone::capsule};

}  // namespace

std::string format(const CheckResult& r) {
  return fmt("[%s] %2d %s: %s (%.1f s)", r.pass ? "PASS" : "FAIL", r.criterion, r.name.c_str(), r.detail.c_str(),
             r.seconds);
}

// ---- 1 ---------------------------------------------------------------------------------

CheckResult check_matrix_equivalence(const VerifyConfig& cfg) {
  using namespace matrix_equiv;
  const auto t0 = Clock::now();
  Rng rng(derive_seed(cfg.seed, "check-matrix"));
  double worst = 0.0;
  for (std::size_t trial = 0; trial < cfg.matrix_cases; ++trial) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    ConvSpec s;
    do {
      s.kernel_h = 1 + rng.below(3);
      s.kernel_w = 1 + rng.below(3);
      s.stride = 1 + rng.below(2);
      s.dilation = 1 + rng.below(2);
      s.padding = rng.below(3);
      s.circular = rng.below(2) == 1;
    } while (s.out_h(h) < 1 || s.out_w(w) < 1);
    const Tensor x = random_tensor({h, w}, rng);
    const Tensor k = random_tensor({s.kernel_h, s.kernel_w}, rng);
    const Tensor direct = flatten(conv_direct(x, k, s));
    const Tensor lowered = reshape(matmul(im2col(x, s), reshape(k, {k.numel(), 1})), {direct.numel()});
    const Tensor sparse = assemble_bttb(k, s, h, w).multiply(flatten(x));
    worst = std::max({worst, max_abs_diff(direct, lowered), max_abs_diff(direct, sparse)});
  }
  CheckResult r{1, "matrix equivalence", false, "", since(t0)};
  r.pass = worst <= 1e-12 && r.seconds < 10.0;
  r.detail = fmt("%zu instances, max |diff| %.3g (tol 1e-12)", cfg.matrix_cases, worst);
  return r;
}

// ---- 2 ---------------------------------------------------------------------------------

CheckResult check_gradients(const VerifyConfig& cfg) {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(cfg.seed, "check-grad"));
  const double h = cfg.grad_h;
  std::vector<std::pair<std::string, double>> worst;
  auto record = [&](const std::string& layer, double e) {
    for (auto& [n, v] : worst)
      if (n == layer) {
        v = std::max(v, e);
        return;
      }
    worst.emplace_back(layer, e);
  };
  const Tensor x = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
  const Conv2dOptions same{.padding = 1};

  // sin conv, fixed and tunable
  for (BasisMode mode : {BasisMode::sin_fixed, BasisMode::sin_tunable}) {
    const std::string layer = mode == BasisMode::sin_fixed ? "sin conv" : "tunable sin conv";
    const Tensor raw = random_tensor({3, 1, 3, 3}, rng, -1, 1), bias = random_tensor({3}, rng);
    std::optional<TunableParams> tp;
    if (mode == BasisMode::sin_tunable) {
      tp = TunableParams{random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng, 0.5, 1.5),
                         random_tensor({3}, rng, -1, 1)};
    }
    const Tensor up = random_tensor({2, 3, 8, 8}, rng);
    auto layer_out = [&](const Tensor& in, const Tensor& w, const std::optional<TunableParams>& t) {
      return sum(mul(nets::sin_conv_layer(in, WeightMatrix(w, mode, t, {}), bias, same, false), up));
    };
    record(layer, grad_check([&](const Tensor& in) { return layer_out(in, raw, tp); }, x, h));
    record(layer, grad_check([&](const Tensor& w) { return layer_out(x, w, tp); }, raw, h));
    if (tp) {
      record(layer, grad_check([&](const Tensor& a) { return layer_out(x, raw, TunableParams{a, tp->b, tp->phi}); },
                               tp->a, h));
      record(layer, grad_check([&](const Tensor& b) { return layer_out(x, raw, TunableParams{tp->a, b, tp->phi}); },
                               tp->b, h));
      record(layer, grad_check([&](const Tensor& p) { return layer_out(x, raw, TunableParams{tp->a, tp->b, p}); },
                               tp->phi, h));
    }
  }

  // sin patch embedding: 8×8 input, 4×4 patches
  {
    const Tensor e = random_tensor({6, 16}, rng, -1, 1), pos = random_tensor({4, 6}, rng);
    const Tensor up = random_tensor({2, 4, 6}, rng);
    auto f = [&](const Tensor& in, const Tensor& w, const Tensor& p) {
      return sum(mul(nets::sin_vit_embed(patchify(in, 4), WeightMatrix(w, BasisMode::sin_fixed), p), up));
    };
    record("sin patch embed", grad_check([&](const Tensor& in) { return f(in, e, pos); }, x, h));
    record("sin patch embed", grad_check([&](const Tensor& w) { return f(x, w, pos); }, e, h));
    record("sin patch embed", grad_check([&](const Tensor& p) { return f(x, e, p); }, pos, h));
  }

  // single-head attention on 4 tokens of width 8
  {
    const Tensor tokens = random_tensor({4, 8}, rng, -1, 1);
    matrix_equiv::AttentionWeights aw{random_tensor({8, 8}, rng, -0.5, 0.5), random_tensor({8, 8}, rng, -0.5, 0.5),
                                      random_tensor({8, 8}, rng, -0.5, 0.5)};
    const Tensor up = random_tensor({4, 8}, rng);
    auto f = [&](const Tensor& in, const matrix_equiv::AttentionWeights& w) {
      return sum(mul(matrix_equiv::attention_forward(in, w), up));
    };
    record("attention", grad_check([&](const Tensor& in) { return f(in, aw); }, tokens, h));
    record("attention", grad_check([&](const Tensor& q) { return f(tokens, {q, aw.w_k, aw.w_v}); }, aw.w_q, h));
    record("attention", grad_check([&](const Tensor& k) { return f(tokens, {aw.w_q, k, aw.w_v}); }, aw.w_k, h));
    record("attention", grad_check([&](const Tensor& v) { return f(tokens, {aw.w_q, aw.w_k, v}); }, aw.w_v, h));
  }

  // capsule routing: 3 input capsules of dim 4 to 2 output capsules of dim 5
  {
    const Tensor votes = random_tensor({3, 10, 4}, rng, -1, 1), u = random_tensor({2, 3, 4}, rng, -1, 1);
    const Tensor up = random_tensor({2, 2, 5}, rng);
    auto f = [&](const Tensor& vt, const Tensor& in) { return sum(mul(nets::capsule_route(vt, in, 2, 3).v, up)); };
    record("capsule routing", grad_check([&](const Tensor& vt) { return f(vt, u); }, votes, h));
    record("capsule routing", grad_check([&](const Tensor& in) { return f(votes, in); }, u, h));
  }

  // heads, end to end through every backbone (input and every basis weight)
  for (nets::Backbone b : kBackbones) {
    for (nets::HeadKind hk : {nets::HeadKind::regression, nets::HeadKind::classification}) {
      const nets::Model m(tiny(b, BasisMode::sin_tunable, hk, derive_seed(cfg.seed, "check-grad-model")));
      const Tensor up = random_tensor(m.forward(x).shape(), rng);
      const std::string layer = std::string(to_string(hk)) + " head (" + std::string(to_string(b)) + ")";
      record(layer, grad_check([&](const Tensor& in) { return sum(mul(m.forward(in), up)); }, x, h));
      for (const auto& [name, wm] : m.weights()) {
        auto f = [&, n = name](const Tensor& raw) {
          nets::Model copy = m;
          const WeightMatrix& old = m.weights().at(n);
          copy.weights().at(n) = WeightMatrix(raw, old.mode(), old.tunable(), old.cosine_rows());
          return sum(mul(copy.forward(x), up));
        };
        record(layer, grad_check(f, wm.raw().detach(), h));
      }
    }
  }

  CheckResult r{2, "gradient correctness", true, "", since(t0)};
  double overall = 0.0;
  std::string failing;
  for (const auto& [n, e] : worst) {
    overall = std::max(overall, e);
    if (!(e <= cfg.grad_tol)) {
      r.pass = false;
      failing += " " + n;
    }
  }
  r.pass = r.pass && r.seconds < 120.0;
  r.detail = fmt("%zu layer types, max rel err %.3g (tol %.0e)", worst.size(), overall, cfg.grad_tol);
  if (!failing.empty()) r.detail += "; failing:" + failing;
  return r;
}

// ---- 3 ---------------------------------------------------------------------------------

CheckResult check_shift_response(const VerifyConfig& cfg) {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(cfg.seed, "check-shift"));
  double worst = 0.0;
  bool diag_ok = true;
  for (std::size_t trial = 0; trial < cfg.shift_cases; ++trial) {
    const std::size_t p = 1 + rng.below(16), l = 1 + rng.below(16);
    const long delta = static_cast<long>(rng.below(64)) - 32;
    const auto rep = theory::verify_shift_response(random_tensor({p, l}, rng), random_tensor({l}, rng), delta);
    worst = std::max(worst, rep.residual);
    // C₁, C₂ are stored as diagonals; unit modulus per entry
    for (std::size_t q = 0; q < l; ++q) diag_ok = diag_ok && std::abs(std::hypot(rep.c1[q], rep.c2[q]) - 1.0) <= 1e-15;
  }
  const auto zero = theory::verify_shift_response(random_tensor({5, 7}, rng), random_tensor({7}, rng), 0);
  const bool identity = std::all_of(zero.c1.begin(), zero.c1.end(), [](double v) { return v == 1.0; }) &&
                        std::all_of(zero.c2.begin(), zero.c2.end(), [](double v) { return v == 0.0; }) &&
                        zero.residual == 0.0;
  CheckResult r{3, "shift-response identity", false, "", since(t0)};
  r.pass = worst <= 1e-10 && diag_ok && identity;
  r.detail = fmt("%zu cases, max residual %.3g (tol 1e-10); delta=0 gives C1=I, C2=0: %s", cfg.shift_cases, worst,
                 identity ? "yes" : "no");
  return r;
}

// ---- 4 ---------------------------------------------------------------------------------

CheckResult check_mercer(const VerifyConfig& cfg) {
  const auto t0 = Clock::now();
  const auto grid = theory::midpoint_grid(cfg.mercer_grid);
  const theory::MercerReport rep = theory::mercer_spectrum(grid, cfg.mercer_omega);
  bool monotone = true;
  for (std::size_t m = 1; m < rep.truncation_errors.size(); ++m) {
    monotone = monotone && rep.truncation_errors[m] <= rep.truncation_errors[m - 1];
  }
  Rng rng(derive_seed(cfg.seed, "check-kernel"));
  double quad = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double u = rng.uniform(), v = rng.uniform(), omega = rng.uniform(1.0, 20.0);
    auto f = [&](double w) { return std::sin(w * u) * std::sin(w * v); };
    const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, omega, 20, 1e-14);
    quad = std::max(quad, std::abs(theory::kernel_eval(u, v, omega) - q));
  }
  const double gap = std::abs(rep.em_slope - rep.predicted_slope);
  const bool psd = rep.min_eigenvalue >= -1e-8;
  CheckResult r{4, "Mercer truncation spectrum", false, "", since(t0)};
  r.pass = psd && monotone && quad <= 1e-8 && gap <= cfg.slope_tol;
  r.detail = fmt(
      "min eig %.3g, E_m monotone %s, kernel vs quadrature %.3g; E_m slope %.3f vs 1/2-alpha %.3f over m=%zu..%zu "
      "(|gap| %.3f, tol %.1f; %zu stable eigenvalues; E_m decays %s than predicted)",
      rep.min_eigenvalue, monotone ? "yes" : "no", quad, rep.em_slope, rep.predicted_slope, rep.slope_m_lo,
      rep.slope_m_hi, gap, cfg.slope_tol, rep.stable_count, rep.em_slope <= rep.predicted_slope ? "faster" : "slower");
  return r;
}

// ---- 5 ---------------------------------------------------------------------------------

CheckResult check_rademacher(const VerifyConfig& cfg) {
  const auto t0 = Clock::now();
  const double b = 2.0, radius = 1.5;
  const std::size_t d = 8;
  std::size_t violations = 0, total = 0;
  double worst_ratio = 0.0;
  for (std::size_t n : {10, 100, 1000}) {
    for (std::size_t trial = 0; trial < cfg.rademacher_instances; ++trial) {
      Rng rng(derive_seed(cfg.seed, "check-rademacher-" + std::to_string(n), trial));
      std::vector<double> v(n * d);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += std::pow(v[i * d + k] = rng.normal(), 2);
        // uniform in the R-ball; the last sample sits on the sphere
        const double rad = (i + 1 == n ? 1.0 : std::pow(rng.uniform(), 1.0 / static_cast<double>(d))) * radius;
        for (std::size_t k = 0; k < d; ++k) v[i * d + k] *= rad / std::sqrt(s);
      }
      const auto rep = theory::rademacher_estimate(Tensor({n, d}, std::move(v)), b, radius, cfg.rademacher_draws,
                                                   derive_seed(cfg.seed, "check-rademacher-draws", n * 100000 + trial));
      ++total;
      violations += rep.estimate > rep.bound;
      worst_ratio = std::max(worst_ratio, rep.estimate / rep.bound);
    }
  }
  Rng rng(derive_seed(cfg.seed, "check-lipschitz"));
  std::size_t lip_violations = 0;
  for (std::size_t i = 0; i < cfg.lipschitz_cases; ++i) {
    const std::size_t p = 1 + rng.below(16), l = 1 + rng.below(16);
    const double scale = std::exp(rng.uniform(-3.0, 3.0));
    lip_violations += !lipschitz_norm_check(random_tensor({p, l}, rng, -scale, scale)).holds;
  }
  CheckResult r{5, "Rademacher bound and sin Lipschitz", false, "", since(t0)};
  r.pass = violations == 0 && lip_violations == 0;
  r.detail = fmt("%zu/%zu estimates above B*R/sqrt(n) (max ratio %.3f); %zu/%zu Frobenius violations", violations,
                 total, worst_ratio, lip_violations, cfg.lipschitz_cases);
  return r;
}

// ---- 6 ---------------------------------------------------------------------------------

CheckResult check_mode_degeneracy(const VerifyConfig& cfg) {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(cfg.seed, "check-plain"));
  const Tensor x = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
  bool ok = true;
  std::string failing;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      failing += " " + what;
    }
  };

  for (nets::Backbone b : kBackbones) {
    for (nets::HeadKind hk : {nets::HeadKind::regression, nets::HeadKind::classification}) {
      const nets::Model m(tiny(b, BasisMode::plain, hk, derive_seed(cfg.seed, "check-plain-model")));
      for (const auto& [name, wm] : m.weights()) expect(bit_equal(effective_weight(wm), wm.raw()), name);
    }
  }

  // CNN end to end against conv2d / relu / max_pool2d / linear on the raw weights
  for (nets::HeadKind hk : {nets::HeadKind::regression, nets::HeadKind::classification}) {
    const nets::Model m(tiny(nets::Backbone::cnn, BasisMode::plain, hk, derive_seed(cfg.seed, "check-plain-cnn")));
    const auto& mc = m.config();
    Tensor hcur = x;
    for (std::size_t l = 0; l < mc.cnn_channels.size(); ++l) {
      const std::string n = "conv" + std::to_string(l);
      hcur = relu(conv2d(hcur, m.weights().at(n + ".weight").raw(), m.tensors().at(n + ".bias"),
                         Conv2dOptions{.padding = mc.cnn_kernel / 2}));
      if (mc.cnn_pool) hcur = max_pool2d(hcur, 2);
    }
    hcur = hk == nets::HeadKind::regression ? reshape(hcur, {2, hcur.numel() / 2}) : global_avg_pool(hcur);
    hcur = relu(linear(hcur, m.weights().at("head.fc1.weight").raw(), m.tensors().at("head.fc1.bias")));
    hcur = linear(hcur, m.weights().at("head.fc2.weight").raw(), m.tensors().at("head.fc2.bias"));
    expect(bit_equal(m.forward(x), hcur), std::string("cnn forward (") + std::string(to_string(hk)) + ")");
  }

  // layer level for the other backbones
  {
    const Tensor raw = random_tensor({3, 1, 3, 3}, rng), bias = random_tensor({3}, rng);
    const Conv2dOptions same{.padding = 1};
    expect(bit_equal(nets::sin_conv_layer(x, WeightMatrix(raw, BasisMode::plain), bias, same),
                     relu(conv2d(x, raw, bias, same))),
           "conv layer");
    const Tensor e = random_tensor({6, 16}, rng), pos = random_tensor({4, 6}, rng);
    const Tensor patches = patchify(x, 4);
    const Tensor standard = add(linear(patches, e, Tensor()), expand(reshape(pos, {1, 4, 6}), {2, 4, 6}));
    expect(bit_equal(nets::sin_vit_embed(patches, WeightMatrix(e, BasisMode::plain), pos), standard), "patch embed");
  }

  // shared seed: plain and sin models hold identical raw parameters
  for (nets::Backbone b : kBackbones) {
    const auto seed = derive_seed(cfg.seed, "check-plain-pair");
    const nets::Model p(tiny(b, BasisMode::plain, nets::HeadKind::regression, seed));
    const nets::Model s(tiny(b, BasisMode::sin_fixed, nets::HeadKind::regression, seed));
    const auto pp = p.named_parameters(), sp = s.named_parameters();
    bool same = pp.size() == sp.size();
    for (std::size_t i = 0; same && i < pp.size(); ++i) same = bit_equal(pp[i].tensor, sp[i].tensor);
    expect(same, std::string("paired init (") + std::string(to_string(b)) + ")");
  }

  CheckResult r{6, "plain mode degeneracy", ok, "", since(t0)};
  r.detail = ok ? "plain forwards bit-identical to standard layers for cnn, vit and capsule weights"
                : "mismatch:" + failing;
  return r;
}

// ---- 9 ---------------------------------------------------------------------------------

CheckResult check_metric_units(const VerifyConfig& cfg) {
  const auto t0 = Clock::now();
  const double pe = metrics::phase_error(0.1, 6.2);
  const double pe_err = std::abs(pe - (2.0 * std::numbers::pi - 6.1));

  Rng rng(derive_seed(cfg.seed, "check-band"));
  double parseval = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.below(32), w = 1 + rng.below(32);
    const auto b = metrics::band_mse(random_tensor({h, w}, rng), random_tensor({h, w}, rng));
    parseval = std::max(parseval, std::abs(b.low + b.high - b.total));
  }
  const double p = metrics::wilcoxon_signed_rank({0.5, 0.4, 0.3, 0.2, 0.1});
  CheckResult r{9, "metric unit checks", false, "", since(t0)};
  r.pass = pe_err <= 1e-12 && parseval <= 1e-10 && p == 1.0 / 32.0;
  r.detail = fmt("phase_error(0.1, 6.2) off by %.3g; Parseval gap %.3g; Wilcoxon p %.6g (want 0.03125)", pe_err,
                 parseval, p);
  return r;
}

std::vector<CheckResult> run_verify_suite(const VerifyConfig& cfg, std::ostream* log) {
  std::vector<CheckResult> out;
  for (auto f : {check_matrix_equivalence, check_gradients, check_shift_response, check_mercer, check_rademacher,
                 check_mode_degeneracy, check_metric_units}) {
    out.push_back(f(cfg));
    if (log) *log << format(out.back()) << '\n' << std::flush;
  }
  return out;
}

// ---- desk-scale comparison -----------------------------------------------------------

ExperimentConfig::ExperimentConfig() {
  data.n = 2500;
  data.seed = 2024;
  model.backbone = nets::Backbone::cnn;
  model.head = nets::HeadKind::regression;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  const auto t0 = Clock::now();
  const spectro::Dataset data = spectro::make_dataset(cfg.data);
  metrics::EvalConfig ec;
  ec.perturbations = {{metrics::PerturbationSpec::Kind::fgsm, cfg.fgsm_eps},
                      {metrics::PerturbationSpec::Kind::noise, cfg.noise_sigma}};
  ExperimentResult res;
  for (std::uint64_t seed : cfg.seeds) {
    for (BasisMode mode : {cfg.baseline, cfg.candidate}) {
      const auto t1 = Clock::now();
      nets::ModelConfig mc = cfg.model;
      mc.basis = mode;
      mc.seed = seed;
      nets::Model model(mc);
      train::TrainConfig tc = cfg.train;
      tc.seed = seed;
      const train::TrainState st = train::fit(model, data, tc);
      ec.seed = seed;
      metrics::MetricsRecord rec = metrics::evaluate(model, data.test, ec);
      double secs = 0.0;
      for (const auto& e : st.history) secs += e.seconds;
      rec.epoch_seconds = secs / static_cast<double>(st.history.size());
      (mode == cfg.candidate ? res.candidate : res.baseline).push_back(rec);
      if (log) {
        *log << fmt("  seed %llu %-10s best epoch %2zu  test mse %.5f  delta_rel %.4f  fgsm %.5f  noise %.5f  (%.0f s)",
                    static_cast<unsigned long long>(seed), std::string(to_string(mode)).c_str(), st.best_epoch, rec.mse,
                    rec.delta_rel, rec.perturbations[0].second, rec.perturbations[1].second, since(t1))
             << '\n'
             << std::flush;
      }
    }
  }
  res.seconds = since(t0);
  return res;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> pick(const std::vector<metrics::MetricsRecord>& rs, auto f) {
  std::vector<double> v;
  for (const auto& r : rs) v.push_back(f(r));
  return v;
}

double perturbation(const metrics::MetricsRecord& r, const std::string& name) {
  for (const auto& [k, v] : r.perturbations)
    if (k == name) return v;
  throw ContractError("missing perturbation column " + name);
}

}  // namespace

CheckResult check_directional_mse(const ExperimentResult& r) {
  CheckResult c{7, "desk-scale test MSE ordering", false, "", r.seconds};
  const auto base = pick(r.baseline, [](const auto& m) { return m.mse; });
  const auto cand = pick(r.candidate, [](const auto& m) { return m.mse; });
  std::vector<double> diff(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) diff[i] = base[i] - cand[i];
  const double p = metrics::wilcoxon_signed_rank(diff);
  const double mb = median_of(base), mc = median_of(cand);
  c.pass = mc < mb && p <= 0.0625 && r.seconds < 20.0 * 60.0;
  c.detail = fmt("median MSE candidate %.5f vs baseline %.5f, one-sided Wilcoxon p %.4f (need <= 0.0625), %zu seeds",
                 mc, mb, p, base.size());
  return c;
}

CheckResult check_directional_robustness(const ExperimentResult& r, const ExperimentConfig& cfg) {
  CheckResult c{8, "desk-scale robustness ordering", false, "", r.seconds};
  const std::string fg = metrics::PerturbationSpec{metrics::PerturbationSpec::Kind::fgsm, cfg.fgsm_eps}.name();
  const std::string nz = metrics::PerturbationSpec{metrics::PerturbationSpec::Kind::noise, cfg.noise_sigma}.name();
  const double fb = median_of(pick(r.baseline, [&](const auto& m) { return perturbation(m, fg); }));
  const double fc = median_of(pick(r.candidate, [&](const auto& m) { return perturbation(m, fg); }));
  const double nb = median_of(pick(r.baseline, [&](const auto& m) { return perturbation(m, nz); }));
  const double nc = median_of(pick(r.candidate, [&](const auto& m) { return perturbation(m, nz); }));
  const double db = median_of(pick(r.baseline, [](const auto& m) { return m.delta_rel; }));
  const double dc = median_of(pick(r.candidate, [](const auto& m) { return m.delta_rel; }));
  c.pass = fc < fb && nc < nb && dc < db;
  c.detail = fmt("median candidate vs baseline: %s %.5f vs %.5f, %s %.5f vs %.5f, delta_rel %.4f vs %.4f", fg.c_str(),
                 fc, fb, nz.c_str(), nc, nb, dc, db);
  return c;
}

}  // namespace sinbasis::checks
