#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "sinbasis/rng.hpp"
#include "sinbasis/sinbasis.hpp"

using namespace sinbasis;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor gaussian(Shape shape, Rng& rng, double sd = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sd * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

constexpr BasisMode kAllModes[] = {BasisMode::plain, BasisMode::sin_fixed, BasisMode::sin_tunable,
                                   BasisMode::cos_fixed, BasisMode::random_fourier};

}  // namespace

TEST_CASE("mode names round trip") {
  for (BasisMode m : kAllModes) CHECK(parse_basis_mode(to_string(m)) == m);
  CHECK_THROWS(parse_basis_mode("fourier"));
}

TEST_CASE("effective weight examples") {
  const WeightMatrix zero(Tensor::zeros({3, 4}, true), BasisMode::sin_fixed);
  const Tensor e0 = effective_weight(zero);
  for (double v : e0.data()) CHECK(v == 0.0);

  Rng rng(1);
  const Tensor w = random_tensor({5, 7}, rng);
  const Tensor fixed = effective_weight(WeightMatrix(w, BasisMode::sin_fixed));
  const Tensor tuned = effective_weight(WeightMatrix(w, BasisMode::sin_tunable));
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(fixed.at(i) == tuned.at(i));  // bit-exact

  WeightMatrix shifted(w, BasisMode::sin_tunable);
  for (double& p : shifted.tunable()->phi.mutable_data()) p = std::numbers::pi / 2;
  const Tensor as_cos = effective_weight(shifted);
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(as_cos.at(i) == doctest::Approx(std::cos(w.at(i))).epsilon(1e-15));

  const Tensor plain = effective_weight(WeightMatrix(w, BasisMode::plain));
  const Tensor c = effective_weight(WeightMatrix(w, BasisMode::cos_fixed));
  for (std::size_t i = 0; i < w.numel(); ++i) {
    CHECK(plain.at(i) == w.at(i));
    CHECK(c.at(i) == std::cos(w.at(i)));
  }

  const WeightMatrix missing(w, BasisMode::sin_tunable, std::nullopt, {});
  CHECK_THROWS_AS(effective_weight(missing), ContractError);
}

TEST_CASE("random Fourier rows") {
  Rng rng(2);
  const Tensor w = random_tensor({64, 3}, rng);
  const WeightMatrix wm(w, BasisMode::random_fourier, 99);
  REQUIRE(wm.cosine_rows().size() == 64);
  std::size_t n_cos = 0;
  for (double c : wm.cosine_rows()) n_cos += c != 0.0;
  CHECK(n_cos > 0);
  CHECK(n_cos < 64);
  const Tensor e = effective_weight(wm);
  const double s = std::sqrt(2.0 / 64.0);
  for (std::size_t p = 0; p < 64; ++p)
    for (std::size_t q = 0; q < 3; ++q) {
      const double v = w.at(p * 3 + q);
      const double expect = s * (wm.cosine_rows()[p] != 0.0 ? std::cos(v) : std::sin(v));
      CHECK(e.at(p * 3 + q) == doctest::Approx(expect).epsilon(1e-15));
    }
  // same seed, same assignment; different seed, different assignment
  CHECK(WeightMatrix(w, BasisMode::random_fourier, 99).cosine_rows() == wm.cosine_rows());
  CHECK(WeightMatrix(w, BasisMode::random_fourier, 100).cosine_rows() != wm.cosine_rows());
}

TEST_CASE("initialization stays within fan-in bound") {
  const WeightMatrix wm = WeightMatrix::initialized({8, 2, 3, 3}, BasisMode::sin_fixed, 4);
  CHECK(wm.rows() == 8);
  CHECK(wm.cols() == 18);
  const double bound = std::sqrt(1.0 / 18.0);
  double max_abs = 0.0;
  for (double v : wm.raw().data()) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs <= bound);
  CHECK(max_abs > 0.5 * bound);
  const WeightMatrix again = WeightMatrix::initialized({8, 2, 3, 3}, BasisMode::sin_fixed, 4);
  for (std::size_t i = 0; i < wm.raw().numel(); ++i) CHECK(again.raw().at(i) == wm.raw().at(i));
}

TEST_CASE("parameter count is unchanged by fixed bases") {
  const Shape shape{16, 9};
  auto count = [&](BasisMode m) {
    std::size_t n = 0;
    for (const auto& p : WeightMatrix::initialized(shape, m, 1).parameters()) n += p.numel();
    return n;
  };
  CHECK(count(BasisMode::sin_fixed) == count(BasisMode::plain));
  CHECK(count(BasisMode::cos_fixed) == count(BasisMode::plain));
  CHECK(count(BasisMode::random_fourier) == count(BasisMode::plain));
  CHECK(count(BasisMode::sin_tunable) == count(BasisMode::plain) + 3 * 16);
}

TEST_CASE("analytic gradient examples") {
  const WeightMatrix zero(Tensor::zeros({2, 3}, true), BasisMode::sin_fixed);
  const WeightGrads g = effective_weight_grad(zero, Tensor::full({2, 3}, 1.0));
  for (double v : g.w.data()) CHECK(v == 1.0);

  Rng rng(3);
  for (BasisMode m : kAllModes) {
    const WeightMatrix wm(random_tensor({4, 5}, rng), m, 7);
    const WeightGrads z = effective_weight_grad(wm, Tensor::zeros({4, 5}));
    for (double v : z.w.data()) CHECK(v == 0.0);
    if (m == BasisMode::sin_tunable) {
      for (const Tensor* t : {&z.a, &z.b, &z.phi})
        for (double v : t->data()) CHECK(v == 0.0);
    }
  }
  CHECK_THROWS_AS(effective_weight_grad(zero, Tensor::zeros({3, 2, 2})), DimensionError);
}

// The closed form must agree with reverse-mode autodiff through the same
// mapping, and both with finite differences.
TEST_CASE("analytic gradient matches autodiff and finite differences") {
  Rng rng(4);
  for (BasisMode m : kAllModes) {
    for (int trial = 0; trial < 10; ++trial) {
      WeightMatrix wm(random_tensor({3, 2, 2}, rng), m, 11);
      if (wm.tunable()) {
        for (Tensor* t : {&wm.tunable()->a, &wm.tunable()->b, &wm.tunable()->phi})
          for (double& v : t->mutable_data()) v = rng.uniform(-1.5, 1.5);
      }
      const Tensor upstream = gaussian({3, 2, 2}, rng);
      sum(mul(effective_weight(wm), upstream)).backward();
      const WeightGrads g = effective_weight_grad(wm, upstream);
      INFO(to_string(m));
      for (std::size_t i = 0; i < 12; ++i) CHECK(g.w.at(i) == doctest::Approx(wm.raw().grad()[i]).epsilon(1e-12));
      if (wm.tunable()) {
        const auto& t = *wm.tunable();
        for (std::size_t p = 0; p < 3; ++p) {
          CHECK(g.a.at(p) == doctest::Approx(t.a.grad()[p]).epsilon(1e-12));
          CHECK(g.b.at(p) == doctest::Approx(t.b.grad()[p]).epsilon(1e-12));
          CHECK(g.phi.at(p) == doctest::Approx(t.phi.grad()[p]).epsilon(1e-12));
        }
      }

      const auto cos_rows = wm.cosine_rows();
      const auto tunable = wm.tunable();
      auto loss_w = [&](const Tensor& w) {
        return sum(mul(effective_weight(WeightMatrix(w, m, tunable, cos_rows)), upstream));
      };
      CHECK(grad_check(loss_w, wm.raw().detach()) <= 1e-4);
      if (tunable) {
        auto loss_phi = [&](const Tensor& phi) {
          const TunableParams tp{tunable->a.detach(), tunable->b.detach(), phi};
          return sum(mul(effective_weight(WeightMatrix(wm.raw().detach(), m, tp, cos_rows)), upstream));
        };
        CHECK(grad_check(loss_phi, tunable->phi.detach()) <= 1e-4);
        auto loss_b = [&](const Tensor& b) {
          const TunableParams tp{tunable->a.detach(), b, tunable->phi.detach()};
          return sum(mul(effective_weight(WeightMatrix(wm.raw().detach(), m, tp, cos_rows)), upstream));
        };
        CHECK(grad_check(loss_b, tunable->b.detach()) <= 1e-4);
      }
    }
  }
}

TEST_CASE("Lipschitz norm check") {
  const LipschitzReport zero = lipschitz_norm_check(Tensor::zeros({3, 3}));
  CHECK(zero.sin_norm == 0.0);
  CHECK(zero.raw_norm == 0.0);
  CHECK(zero.holds);

  const LipschitzReport pi = lipschitz_norm_check(Tensor::full({4, 5}, std::numbers::pi));
  CHECK(pi.sin_norm <= 1e-14);
  CHECK(pi.raw_norm == doctest::Approx(std::numbers::pi * std::sqrt(20.0)));
  CHECK(pi.holds);

  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const double sd = std::pow(10.0, rng.uniform(-3, 2));
    CHECK(lipschitz_norm_check(gaussian({1 + rng.below(6), 1 + rng.below(6)}, rng, sd)).holds);
  }
}

TEST_CASE("sin is 1-Lipschitz in weight space") {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const Tensor a = gaussian({4, 4}, rng, 3.0), b = gaussian({4, 4}, rng, 3.0);
    double lhs = 0.0, rhs = 0.0;
    const Tensor sa = sin(a), sb = sin(b);
    for (std::size_t i = 0; i < 16; ++i) {
      lhs += std::pow(sa.at(i) - sb.at(i), 2);
      rhs += std::pow(a.at(i) - b.at(i), 2);
    }
    CHECK(lhs <= rhs);
  }
}

TEST_CASE("effective weight is deterministic") {
  Rng rng(8);
  for (BasisMode m : kAllModes) {
    const WeightMatrix wm(random_tensor({6, 3}, rng), m, 5);
    const Tensor e1 = effective_weight(wm), e2 = effective_weight(wm);
    for (std::size_t i = 0; i < e1.numel(); ++i) CHECK(e1.at(i) == e2.at(i));
  }
}
