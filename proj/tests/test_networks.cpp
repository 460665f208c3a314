#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "sinbasis/matrix_equiv.hpp"
#include "sinbasis/networks.hpp"
#include "sinbasis/rng.hpp"

using namespace sinbasis;
using namespace sinbasis::nets;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

ModelConfig tiny(Backbone b, BasisMode m, HeadKind h = HeadKind::regression) {
  ModelConfig c;
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
  c.seed = 17;
  return c;
}

constexpr Backbone kBackbones[] = {Backbone::cnn, Backbone::vit, Backbone::capsule};

}  // namespace

TEST_CASE("sin conv layer examples") {
  Rng rng(1);
  const Tensor x = random_tensor({2, 2, 6, 6}, rng);
  const Tensor k = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
  const Tensor bias = random_tensor({3}, rng);
  const Conv2dOptions opt{.padding = 1};

  const Tensor plain = sin_conv_layer(x, WeightMatrix(k, BasisMode::plain), bias, opt, false);
  CHECK(max_abs_diff(plain, conv2d(x, k, bias, opt)) == 0.0);

  const Tensor z = sin_conv_layer(x, WeightMatrix(Tensor::zeros({3, 2, 3, 3}, true), BasisMode::sin_fixed), bias, opt,
                                  false);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t p = 0; p < 36; ++p) CHECK(z.at((b * 3 + o) * 36 + p) == bias.at(o));

  // single channel against the explicit sparse matrix of sin(kernel)
  for (bool circular : {false, true}) {
    const Tensor img = random_tensor({5, 7}, rng);
    const Tensor ker = random_tensor({3, 3}, rng, -2, 2, true);
    const Conv2dOptions o{.padding = 1, .circular = circular};
    const Tensor y = sin_conv_layer(reshape(img, {1, 1, 5, 7}), WeightMatrix(reshape(ker, {1, 1, 3, 3}),
                                                                             BasisMode::sin_fixed),
                                    Tensor(), o, false);
    const matrix_equiv::ConvSpec spec{.kernel_h = 3, .kernel_w = 3, .padding = 1, .circular = circular};
    const Tensor via_matrix = matrix_equiv::assemble_bttb(sin(ker), spec, 5, 7).multiply(matrix_equiv::flatten(img));
    CHECK(max_abs_diff(y, via_matrix) <= 1e-12);
  }
}

TEST_CASE("sin ViT embedding examples") {
  Rng rng(2);
  const Tensor patches = random_tensor({2, 4, 6}, rng);
  const Tensor pos = random_tensor({4, 5}, rng);

  const Tensor tok0 = sin_vit_embed(patches, WeightMatrix(Tensor::zeros({5, 6}, true), BasisMode::sin_fixed), pos);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 20; ++i) CHECK(tok0.at(b * 20 + i) == pos.at(i));

  const Tensor e = random_tensor({5, 6}, rng, -1, 1, true);
  const Tensor tp = sin_vit_embed(patches, WeightMatrix(e, BasisMode::plain), pos);
  const Tensor expect = linear(patches, e, Tensor());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 20; ++i) CHECK(tp.at(b * 20 + i) == expect.at(b * 20 + i) + pos.at(i));

  // On a unit patch the sin and plain tokens differ by at most ‖sin(E) − E‖_F.
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor big = random_tensor({5, 6}, rng, -2, 2, true);
    Tensor x = random_tensor({1, 6}, rng);
    double n = 0.0;
    for (double v : x.data()) n += v * v;
    x = scale(x, 1.0 / std::sqrt(n));
    const Tensor ts = sin_vit_embed(x, WeightMatrix(big, BasisMode::sin_fixed), Tensor());
    const Tensor tpl = sin_vit_embed(x, WeightMatrix(big, BasisMode::plain), Tensor());
    double diff = 0.0, bound = 0.0;
    for (std::size_t i = 0; i < 5; ++i) diff += std::pow(ts.at(i) - tpl.at(i), 2);
    for (double v : big.data()) bound += std::pow(std::sin(v) - v, 2);
    CHECK(std::sqrt(diff) <= std::sqrt(bound) + 1e-12);
  }
  CHECK_THROWS_AS(sin_vit_embed(random_tensor({2, 4, 7}, rng), WeightMatrix(e, BasisMode::plain), pos),
                  DimensionError);
}

TEST_CASE("capsule routing examples") {
  Rng rng(3);
  SUBCASE("one iteration uses uniform coupling") {
    const Tensor votes = random_tensor({3, 2 * 4, 5}, rng);
    const Tensor u = random_tensor({2, 3, 5}, rng);
    const RoutingResult r = capsule_route(votes, u, 2, 1);
    REQUIRE(r.couplings.size() == 1);
    for (double c : r.couplings[0].data()) CHECK(c == doctest::Approx(0.5));
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t j = 0; j < 2; ++j) {
        std::vector<double> s(4, 0.0);
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t d = 0; d < 4; ++d)
            for (std::size_t e = 0; e < 5; ++e)
              s[d] += 0.5 * votes.at((i * 8 + j * 4 + d) * 5 + e) * u.at((b * 3 + i) * 5 + e);
        double n2 = 0.0;
        for (double v : s) n2 += v * v;
        for (std::size_t d = 0; d < 4; ++d) {
          const double expect = n2 / (1 + n2) * s[d] / std::sqrt(n2);
          CHECK(r.v.at((b * 2 + j) * 4 + d) == doctest::Approx(expect).epsilon(1e-12));
        }
      }
  }
  SUBCASE("zero votes give zero outputs") {
    const RoutingResult r = capsule_route(Tensor::zeros({3, 6, 4}), random_tensor({2, 3, 4}, rng), 3, 3);
    for (double v : r.v.data()) CHECK(v == 0.0);
  }
  SUBCASE("single capsule pair") {
    const Tensor w = random_tensor({4, 3}, rng, -2, 2, true);
    const Tensor u = random_tensor({1, 1, 3}, rng);
    const Tensor votes = reshape(effective_weight(WeightMatrix(w, BasisMode::sin_fixed)), {1, 4, 3});
    const RoutingResult r = capsule_route(votes, u, 1, 3);
    std::vector<double> s(4, 0.0);
    for (std::size_t d = 0; d < 4; ++d)
      for (std::size_t e = 0; e < 3; ++e) s[d] += std::sin(w.at(d * 3 + e)) * u.at(e);
    double n2 = 0.0;
    for (double v : s) n2 += v * v;
    for (std::size_t d = 0; d < 4; ++d)
      CHECK(r.v.at(d) == doctest::Approx(n2 / (1 + n2) * s[d] / std::sqrt(n2)).epsilon(1e-12));
  }
  SUBCASE("couplings are distributions and outputs stay inside the unit ball") {
    for (int trial = 0; trial < 20; ++trial) {
      const RoutingResult r =
          capsule_route(random_tensor({4, 3 * 5, 6}, rng, -3, 3), random_tensor({2, 4, 6}, rng, -3, 3), 3, 4);
      CHECK(r.couplings.size() == 4);
      for (const Tensor& c : r.couplings)
        for (std::size_t row = 0; row < 2 * 4; ++row) {
          double s = 0.0;
          for (std::size_t j = 0; j < 3; ++j) {
            CHECK(c.at(row * 3 + j) >= 0.0);
            s += c.at(row * 3 + j);
          }
          CHECK(std::abs(s - 1.0) <= 1e-12);
        }
      for (std::size_t cap = 0; cap < 2 * 3; ++cap) {
        double n2 = 0.0;
        for (std::size_t d = 0; d < 5; ++d) n2 += std::pow(r.v.at(cap * 5 + d), 2);
        CHECK(std::sqrt(n2) < 1.0);
      }
    }
  }
  CHECK_THROWS_AS(capsule_route(Tensor::zeros({3, 6, 4}), Tensor::zeros({1, 3, 4}), 3, 0), ContractError);
}

TEST_CASE("forward shape contract") {
  Rng rng(4);
  const Tensor x = random_tensor({3, 1, 8, 8}, rng, 0, 1);
  for (Backbone b : kBackbones) {
    INFO(to_string(b));
    CHECK(Model(tiny(b, BasisMode::sin_fixed)).forward(x).shape() == Shape{3, 1});
    CHECK(Model(tiny(b, BasisMode::sin_fixed, HeadKind::classification)).forward(x).shape() == Shape{3, 3});
    CHECK_THROWS_AS(Model(tiny(b, BasisMode::plain)).forward(random_tensor({1, 1, 8, 6}, rng)), DimensionError);
  }
}

TEST_CASE("zeroed regression head predicts its bias") {
  Rng rng(5);
  for (Backbone b : kBackbones) {
    Model m(tiny(b, BasisMode::sin_fixed));
    for (double& v : m.weights().at("head.fc2.weight").raw().mutable_data()) v = 0.0;
    m.tensors().at("head.fc2.bias").mutable_data()[0] = 0.375;
    const Tensor y = m.forward(random_tensor({4, 1, 8, 8}, rng, 0, 1));
    for (double v : y.data()) CHECK(v == 0.375);
  }
}

TEST_CASE("plain mode is a standard network") {
  Rng rng(6);
  const ModelConfig cfg = tiny(Backbone::cnn, BasisMode::plain);
  const Model m(cfg);
  const Tensor x = random_tensor({2, 1, 8, 8}, rng, 0, 1);
  // hand-assembled standard CNN with the same parameters
  Tensor h = x;
  for (std::size_t l = 0; l < 2; ++l) {
    const std::string n = "conv" + std::to_string(l);
    h = max_pool2d(relu(conv2d(h, m.weights().at(n + ".weight").raw(), m.tensors().at(n + ".bias"),
                               Conv2dOptions{.padding = 1})),
                   2);
  }
  h = reshape(h, {2, h.numel() / 2});
  h = relu(linear(h, m.weights().at("head.fc1.weight").raw(), m.tensors().at("head.fc1.bias")));
  h = linear(h, m.weights().at("head.fc2.weight").raw(), m.tensors().at("head.fc2.bias"));
  CHECK(max_abs_diff(m.forward(x), h) == 0.0);
}

TEST_CASE("plain and sin models share their raw initialization") {
  for (Backbone b : kBackbones) {
    const Model p(tiny(b, BasisMode::plain)), s(tiny(b, BasisMode::sin_fixed));
    const auto pp = p.named_parameters(), sp = s.named_parameters();
    REQUIRE(pp.size() == sp.size());
    for (std::size_t i = 0; i < pp.size(); ++i) {
      CHECK(pp[i].name == sp[i].name);
      CHECK(max_abs_diff(pp[i].tensor, sp[i].tensor) == 0.0);
    }
  }
}

TEST_CASE("parameter count does not depend on fixed basis choice") {
  for (Backbone b : kBackbones) {
    const std::size_t n = Model(tiny(b, BasisMode::plain)).parameter_count();
    CHECK(Model(tiny(b, BasisMode::sin_fixed)).parameter_count() == n);
    CHECK(Model(tiny(b, BasisMode::cos_fixed)).parameter_count() == n);
    CHECK(Model(tiny(b, BasisMode::sin_tunable)).parameter_count() > n);
  }
}

TEST_CASE("end-to-end gradients") {
  Rng rng(7);
  const Tensor x = random_tensor({2, 1, 8, 8}, rng, 0, 1);
  for (Backbone b : kBackbones) {
    for (HeadKind h : {HeadKind::regression, HeadKind::classification}) {
      const Model m(tiny(b, BasisMode::sin_tunable, h));
      const Tensor up = random_tensor(m.forward(x).shape(), rng);
      INFO(to_string(b), " ", to_string(h));
      CHECK(grad_check([&](const Tensor& in) { return sum(mul(m.forward(in), up)); }, x) <= 1e-4);

      // every basis-bearing weight
      for (const auto& [name, wm] : m.weights()) {
        if (wm.mode() == BasisMode::plain) continue;
        auto f = [&, n = name](const Tensor& raw) {
          Model copy = m;
          const WeightMatrix& old = m.weights().at(n);
          copy.weights().at(n) = WeightMatrix(raw, old.mode(), old.tunable(), old.cosine_rows());
          return sum(mul(copy.forward(x), up));
        };
        INFO(name);
        CHECK(grad_check(f, wm.raw().detach()) <= 1e-4);
      }
    }
  }
}

TEST_CASE("config map round trip and validation") {
  ModelConfig c = tiny(Backbone::vit, BasisMode::random_fourier, HeadKind::classification);
  c.cnn_channels = {5, 7, 9};
  const ModelConfig back = ModelConfig::from_map(c.to_map());
  CHECK(back.to_map() == c.to_map());

  CHECK_THROWS_AS(ModelConfig::from_map({{"patch", "x"}}), std::invalid_argument);
  CHECK_THROWS_AS(ModelConfig::from_map({{"nonsense", "1"}}), std::invalid_argument);
  ModelConfig bad = tiny(Backbone::vit, BasisMode::plain);
  bad.patch = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny(Backbone::capsule, BasisMode::plain);
  bad.routing_iters = 0;
  CHECK_THROWS_AS(Model{bad}, std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(8);
  const auto dir = std::filesystem::temp_directory_path() / "sinbasis_test_ckpt";
  const Tensor x = random_tensor({2, 1, 8, 8}, rng, 0, 1);
  for (Backbone b : kBackbones) {
    for (BasisMode mode : {BasisMode::sin_tunable, BasisMode::random_fourier}) {
      std::filesystem::remove_all(dir);
      ModelConfig cfg = tiny(b, mode);
      cfg.capsule_sin_conv = true;
      Model m(cfg);
      // move everything away from initialization
      for (auto& p : m.parameters())
        for (double& v : p.mutable_data()) v += rng.uniform(-0.1, 0.1);
      save_checkpoint(dir, m);
      const Model back = load_checkpoint(dir);
      CHECK(back.config().to_map() == m.config().to_map());
      CHECK(max_abs_diff(back.forward(x), m.forward(x)) == 0.0);
    }
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_checkpoint(dir));
}
