#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "sinbasis/rng.hpp"
#include "sinbasis/serialize.hpp"
#include "sinbasis/tensor.hpp"

using namespace sinbasis;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

void check_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
  REQUIRE(t.numel() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(t.at(i) - expected[i]) <= tol);
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  check_values(matmul(eye, a), {1, 2, 3, 4, 5, 6});
  check_values(matmul(a, Tensor::zeros({3, 4})), std::vector<double>(8, 0.0));
  check_values(matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1})), {3, 7});
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("elementwise examples") {
  check_values(sin(Tensor::zeros({3, 2})), std::vector<double>(6, 0.0));
  check_values(softmax_rows(Tensor({3}, {0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  const Tensor x({4}, {0.1, 1.0, 2.5, 7.0});
  check_values(exp(log(x)), {0.1, 1.0, 2.5, 7.0}, 1e-12);
  CHECK_THROWS_AS(log(Tensor({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  check_values(relu(Tensor({3}, {-1, 0, 2})), {0, 0, 2});
  // scalar broadcast on either side
  check_values(mul(Tensor::scalar(2.0), Tensor({2}, {3, 4})), {6, 8});
  check_values(sub(Tensor({2}, {3, 4}), Tensor({1}, {1})), {2, 3});
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  Rng rng(3);
  const Tensor x = random_tensor({7, 5}, rng, -50, 50);
  const Tensor y = softmax_rows(x);
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += y.at(r * 5 + c);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  const Tensor big = softmax_rows(Tensor({2}, {1000.0, 1000.0}));
  check_values(big, {0.5, 0.5}, 1e-15);
}

TEST_CASE("backward examples") {
  SUBCASE("sum gives ones") {
    Tensor x = Tensor::full({2, 3}, 0.7, true);
    sum(x).backward();
    check_values(Tensor({6}, {x.grad().begin(), x.grad().end()}), std::vector<double>(6, 1.0));
  }
  SUBCASE("sum(sin(w) x) gives cos(w) x") {
    Rng rng(11);
    Tensor w = random_tensor({3, 4}, rng).clone(true);
    const Tensor x = random_tensor({3, 4}, rng);
    sum(mul(sin(w), x)).backward();
    for (std::size_t i = 0; i < 12; ++i) CHECK(w.grad()[i] == doctest::Approx(std::cos(w.at(i)) * x.at(i)).epsilon(1e-14));
  }
  SUBCASE("half squared norm gives x") {
    Tensor x = Tensor({3}, {1.5, -2.0, 0.25}, true);
    scale(sum(square(x)), 0.5).backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(x.at(i)));
  }
  SUBCASE("relu derivative at zero is zero") {
    Tensor x = Tensor({3}, {-1.0, 0.0, 1.0}, true);
    sum(relu(x)).backward();
    check_values(Tensor({3}, {x.grad().begin(), x.grad().end()}), {0, 0, 1});
  }
}

TEST_CASE("backward contract") {
  Tensor x = Tensor({3}, {1, 2, 3}, true);
  CHECK_THROWS_AS(mul(x, x).backward(), ContractError);  // non-scalar

  Tensor loss = sum(square(x));
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), ContractError);  // graph reused without rebuild

  // a fresh graph accumulates into the same leaf
  sum(square(x)).backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(4.0 * x.at(i)));
  x.zero_grad();
  sum(square(x)).backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.at(i)));

  CHECK_THROWS_AS(sum(Tensor::zeros({2})).backward(), ContractError);  // no graph
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x = Tensor({2}, {1, 2}, true);
  NoGradGuard guard;
  const Tensor y = sum(square(x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check examples") {
  Rng rng(5);
  const Tensor x = random_tensor({6}, rng);
  CHECK(grad_check([](const Tensor& t) { return sum(square(t)); }, x) <= 1e-7);
  const Tensor data = random_tensor({6}, rng);
  CHECK(grad_check([&](const Tensor& w) { return sum(mul(sin(w), data)); }, Tensor::zeros({6})) <= 1e-7);
  CHECK(grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, x) == 0.0);
}

// Every primitive with a gradient rule, 50 random draws in [-2, 2].
TEST_CASE("grad_check property over primitives") {
  Rng rng(2024);
  const Tensor other = random_tensor({3, 4}, rng);
  const Tensor positive = random_tensor({3, 4}, rng, 0.5, 2.0);
  const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases = {
      {"sin", [&](const Tensor& t) { return sum(mul(sin(t), other)); }},
      {"cos", [&](const Tensor& t) { return sum(mul(cos(t), other)); }},
      {"exp", [&](const Tensor& t) { return sum(mul(exp(t), other)); }},
      {"log", [&](const Tensor& t) { return sum(log(add(square(t), positive))); }},
      {"add", [&](const Tensor& t) { return sum(square(add(t, other))); }},
      {"sub", [&](const Tensor& t) { return sum(square(sub(other, t))); }},
      {"mul", [&](const Tensor& t) { return sum(mul(t, mul(t, other))); }},
      {"relu", [&](const Tensor& t) { return sum(mul(relu(t), other)); }},
      {"softmax", [&](const Tensor& t) { return sum(mul(softmax_rows(t), other)); }},
      {"matmul", [&](const Tensor& t) { return sum(square(matmul(t, permute(other, {1, 0})))); }},
      {"linear", [&](const Tensor& t) { return sum(square(linear(other, t, Tensor()))); }},
      {"sum_axis", [&](const Tensor& t) { return sum(square(sum_axis(t, 1))); }},
      {"expand", [&](const Tensor& t) { return sum(mul(expand(reshape(sum_axis(t, 0), {1, 4}), {3, 4}), other)); }},
      {"row_scale", [&](const Tensor& t) { return sum(square(row_scale(other, sum_axis(t, 1)))); }},
      {"layer_norm", [&](const Tensor& t) {
         return sum(mul(layer_norm(t, Tensor::full({4}, 1.3), Tensor::full({4}, 0.2)), other));
       }},
      {"squash", [&](const Tensor& t) { return sum(mul(squash(t), other)); }},
      {"mse", [&](const Tensor& t) { return mse_loss(t, other); }},
      {"cross_entropy", [&](const Tensor& t) { return cross_entropy(t, {0, 3, 1}); }},
  };
  for (const auto& [name, f] : cases) {
    double worst = 0.0;
    for (int draw = 0; draw < 50; ++draw) worst = std::max(worst, grad_check(f, random_tensor({3, 4}, rng)));
    INFO(name);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("image op gradients") {
  Rng rng(8);
  const Tensor w = random_tensor({2, 1, 3, 3}, rng);
  const Tensor up = random_tensor({1, 2, 4, 4}, rng);
  for (bool circular : {false, true}) {
    Conv2dOptions opt{.stride = 1, .padding = 1, .dilation = 1, .circular = circular};
    auto f = [&](const Tensor& x) { return sum(mul(conv2d(x, w, Tensor(), opt), up)); };
    CHECK(grad_check(f, random_tensor({1, 1, 4, 4}, rng)) <= 1e-4);
    const Tensor x0 = random_tensor({1, 1, 4, 4}, rng);
    auto fw = [&](const Tensor& k) { return sum(mul(conv2d(x0, k, Tensor(), opt), up)); };
    CHECK(grad_check(fw, w) <= 1e-4);
  }
  const Tensor up2 = random_tensor({1, 2, 2, 2}, rng);
  CHECK(grad_check([&](const Tensor& x) { return sum(mul(max_pool2d(x, 2), up2)); },
                   random_tensor({1, 2, 4, 4}, rng)) <= 1e-4);
  CHECK(grad_check([&](const Tensor& x) { return sum(square(global_avg_pool(x))); },
                   random_tensor({2, 2, 3, 3}, rng)) <= 1e-4);
  CHECK(grad_check([&](const Tensor& x) { return sum(square(patchify(x, 2))); },
                   random_tensor({1, 2, 4, 4}, rng)) <= 1e-4);
}

TEST_CASE("squash at the origin") {
  Tensor s = Tensor::zeros({2, 3}, true);
  const Tensor v = squash(s);
  check_values(v, std::vector<double>(6, 0.0));
  sum(v).backward();
  check_values(Tensor({6}, {s.grad().begin(), s.grad().end()}), std::vector<double>(6, 0.0));
}

TEST_CASE("operations are deterministic") {
  Rng rng(9);
  const Tensor a = random_tensor({16, 16}, rng), b = random_tensor({16, 16}, rng);
  const Tensor c1 = softmax_rows(matmul(a, b)), c2 = softmax_rows(matmul(a, b));
  for (std::size_t i = 0; i < c1.numel(); ++i) CHECK(c1.at(i) == c2.at(i));
}

TEST_CASE("SBT1 round trip and header") {
  Rng rng(4);
  const Tensor t = random_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "SBT1");
  CHECK(bytes.size() == 4 + 4 + 3 * 4 + 24 * 8);
  CHECK(static_cast<unsigned char>(bytes[4]) == 3);  // little-endian rank
  const Tensor back = read_tensor(ss);
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back.at(i) == t.at(i));
  std::stringstream bad("SBX1");
  CHECK_THROWS(read_tensor(bad));
}
