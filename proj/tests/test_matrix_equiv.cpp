#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <sstream>

#include "sinbasis/matrix_equiv.hpp"
#include "sinbasis/rng.hpp"

using namespace sinbasis;
using namespace sinbasis::matrix_equiv;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

ConvSpec random_spec(Rng& rng, std::size_t h, std::size_t w) {
  for (;;) {
    ConvSpec s;
    s.kernel_h = 1 + rng.below(3);
    s.kernel_w = 1 + rng.below(3);
    s.stride = 1 + rng.below(2);
    s.dilation = 1 + rng.below(2);
    s.padding = rng.below(3);
    s.circular = rng.below(2) == 1;
    if (s.out_h(h) >= 1 && s.out_w(w) >= 1) return s;
  }
}

}  // namespace

TEST_CASE("flatten examples") {
  const Tensor x({2, 2}, {1, 2, 3, 4});
  const Tensor f = flatten(x);
  CHECK(f.shape() == Shape{4});
  for (std::size_t i = 0; i < 4; ++i) CHECK(f.at(i) == static_cast<double>(i + 1));
  const Tensor back = unflatten(f, 2, 2);
  CHECK(back.shape() == x.shape());
  CHECK(max_abs_diff(back, x) == 0.0);
  CHECK(flatten(Tensor({1, 1}, {5})).shape() == Shape{1});
  CHECK_THROWS_AS(flatten(Tensor::zeros({4})), DimensionError);
}

TEST_CASE("im2col examples") {
  const Tensor x({2, 2}, {1, 2, 3, 4});
  const Tensor p = im2col(x, ConvSpec{});
  CHECK(p.shape() == Shape{4, 1});
  CHECK(max_abs_diff(reshape(p, {4}), flatten(x)) == 0.0);

  const Tensor y({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor q = im2col(y, ConvSpec{.kernel_h = 2, .kernel_w = 2});
  CHECK(q.shape() == Shape{4, 4});
  const std::vector<double> expected = {1, 2, 4, 5, 2, 3, 5, 6, 4, 5, 7, 8, 5, 6, 8, 9};
  for (std::size_t i = 0; i < 16; ++i) CHECK(q.at(i) == expected[i]);

  CHECK_THROWS_AS(im2col(x, ConvSpec{.kernel_h = 3, .kernel_w = 3}), DimensionError);
  CHECK_THROWS_AS(im2col(x, ConvSpec{.stride = 0}), DimensionError);
}

TEST_CASE("im2col times kernel equals direct convolution") {
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    const ConvSpec s = random_spec(rng, h, w);
    const Tensor x = random_tensor({h, w}, rng);
    const Tensor k = random_tensor({s.kernel_h, s.kernel_w}, rng);
    const Tensor via_cols = matmul(im2col(x, s), reshape(k, {k.numel(), 1}));
    worst = std::max(worst, max_abs_diff(reshape(via_cols, {via_cols.numel()}), flatten(conv_direct(x, k, s))));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("conv_direct examples") {
  Rng rng(7);
  const Tensor x = random_tensor({4, 5}, rng);
  CHECK(max_abs_diff(conv_direct(x, Tensor({1, 1}, {1.0}), ConvSpec{}), x) == 0.0);
  const Tensor z = conv_direct(x, Tensor::zeros({2, 2}), ConvSpec{.kernel_h = 2, .kernel_w = 2});
  for (double v : z.data()) CHECK(v == 0.0);
  const Tensor s = conv_direct(Tensor({2, 2}, {1, 2, 3, 4}), Tensor::full({2, 2}, 1.0),
                               ConvSpec{.kernel_h = 2, .kernel_w = 2});
  CHECK(s.shape() == Shape{1, 1});
  CHECK(s.item() == 10.0);
}

TEST_CASE("BTTB examples") {
  const SparseBTTB m = assemble_bttb(Tensor({1, 1}, {2.5}), ConvSpec{}, 3, 3);
  CHECK(m.rows == 9);
  CHECK(m.cols == 9);
  CHECK(m.nnz() == 9);
  for (const auto& e : m.entries) {
    CHECK(e.row == e.col);
    CHECK(e.value == 2.5);
  }

  std::ostringstream os;
  write_bttb(os, assemble_bttb(Tensor({1, 1}, {1.0}), ConvSpec{}, 1, 2));
  CHECK(os.str() == "2 2 2\n0 0 1\n1 1 1\n");
}

// Three routes to the same convolution must agree: direct loop, im2col
// product, and the assembled sparse matrix.
TEST_CASE("triple equivalence over 200 random instances") {
  Rng rng(2718);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    const ConvSpec s = random_spec(rng, h, w);
    const Tensor x = random_tensor({h, w}, rng);
    const Tensor k = random_tensor({s.kernel_h, s.kernel_w}, rng);
    const Tensor direct = flatten(conv_direct(x, k, s));
    const Tensor cols = reshape(matmul(im2col(x, s), reshape(k, {k.numel(), 1})), {direct.numel()});
    const SparseBTTB m = assemble_bttb(k, s, h, w);
    const Tensor sparse = m.multiply(flatten(x));
    worst = std::max({worst, max_abs_diff(direct, cols), max_abs_diff(direct, sparse)});

    // structural invariants
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      const auto& e = m.entries[i];
      CHECK(e.row < m.rows);
      CHECK(e.col < m.cols);
      CHECK(seen.insert({e.row, e.col}).second);
      if (i > 0) {
        const auto& p = m.entries[i - 1];
        CHECK((p.row < e.row || (p.row == e.row && p.col < e.col)));
      }
    }
  }
  CHECK(worst <= 1e-12);
}

// nnz = windows × kernel size whenever no tap lands in padding or wraps onto
// a pixel already hit by another tap.
TEST_CASE("BTTB sparsity count") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 3 + rng.below(6), w = 3 + rng.below(6);
    ConvSpec s{.kernel_h = 1 + rng.below(3), .kernel_w = 1 + rng.below(3), .stride = 1 + rng.below(2)};
    if (s.kernel_h > h || s.kernel_w > w) continue;
    const SparseBTTB m = assemble_bttb(random_tensor({s.kernel_h, s.kernel_w}, rng, 0.5, 1.0), s, h, w);
    CHECK(m.nnz() == s.out_h(h) * s.out_w(w) * s.kernel_h * s.kernel_w);
  }
  // circular, stride 1, kernel smaller than the image: no taps merge
  const ConvSpec c{.kernel_h = 3, .kernel_w = 3, .padding = 1, .circular = true};
  CHECK(assemble_bttb(Tensor::full({3, 3}, 1.0), c, 5, 6).nnz() == 30 * 9);
}

// Circular padding, stride 1, same-size output: within every block, row r is
// row 0 rotated by r; across block rows, block row b is block row 0 rotated by b.
TEST_CASE("circular BTTB is doubly circulant") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 3 + rng.below(5), w = 3 + rng.below(5);
    const std::size_t kh = 1 + 2 * rng.below(2), kw = 1 + 2 * rng.below(2);
    if (kh != kw) continue;
    const ConvSpec s{.kernel_h = kh, .kernel_w = kw, .padding = (kh - 1) / 2, .circular = true};
    const Tensor dense = assemble_bttb(random_tensor({kh, kw}, rng), s, h, w).to_dense();
    const std::size_t n = h * w;
    auto at = [&](std::size_t r, std::size_t c) { return dense.at(r * n + c); };
    for (std::size_t by = 0; by < h; ++by)
      for (std::size_t bx = 0; bx < h; ++bx)
        for (std::size_t r = 0; r < w; ++r)
          for (std::size_t c = 0; c < w; ++c) {
            // inner circulant
            CHECK(at(by * w + r, bx * w + c) == at(by * w, bx * w + (c + w - r) % w));
            // outer circulant
            CHECK(at(by * w + r, bx * w + c) == at(r, ((bx + h - by) % h) * w + c));
          }
  }
}

TEST_CASE("circular shift examples and properties") {
  const Tensor x({3}, {1, 2, 3});
  const Tensor s1 = circular_shift(x, 1);
  CHECK(s1.at(0) == 3);
  CHECK(s1.at(1) == 1);
  CHECK(s1.at(2) == 2);
  CHECK(max_abs_diff(circular_shift(x, 0), x) == 0.0);
  CHECK(max_abs_diff(circular_shift(x, 3), x) == 0.0);
  CHECK(max_abs_diff(circular_shift(x, -1), circular_shift(x, 2)) == 0.0);

  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    const Tensor v = random_tensor({n}, rng);
    const long a = static_cast<long>(rng.below(61)) - 30, b = static_cast<long>(rng.below(61)) - 30;
    CHECK(max_abs_diff(circular_shift(circular_shift(v, a), b), circular_shift(v, a + b)) == 0.0);
    CHECK(max_abs_diff(circular_shift(circular_shift(v, a), -a), v) == 0.0);
  }
}

TEST_CASE("attention examples") {
  Rng rng(77);
  const std::size_t d = 4;
  const AttentionWeights w{random_tensor({d, d}, rng), random_tensor({d, d}, rng), random_tensor({d, d}, rng)};

  SUBCASE("single token") {
    const Tensor x = random_tensor({1, d}, rng);
    const Tensor a = attention_scores(x, w);
    CHECK(a.item() == 1.0);
    CHECK(max_abs_diff(attention_forward(x, w), matmul(x, w.w_v)) <= 1e-15);
  }
  SUBCASE("zero query and key projections give uniform scores") {
    const AttentionWeights z{Tensor::zeros({d, d}), Tensor::zeros({d, d}), w.w_v};
    const Tensor x = random_tensor({5, d}, rng);
    const Tensor scores = attention_scores(x, z);
    for (double v : scores.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
    const Tensor v = matmul(x, w.w_v);
    const Tensor col_mean = scale(sum_axis(v, 0), 1.0 / 5.0);
    const Tensor out = attention_forward(x, z);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(out.at(r * d + c) - col_mean.at(c)) <= 1e-12);
  }
  SUBCASE("rows of the score matrix sum to one") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 1 + rng.below(10);
      const Tensor a = attention_scores(random_tensor({n, d}, rng, -3, 3), w);
      for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += a.at(r * n + c);
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(attention_forward(random_tensor({3, d + 1}, rng), w), DimensionError);
  }
  SUBCASE("gradient reaches every projection") {
    const Tensor x = random_tensor({3, d}, rng);
    const Tensor up = random_tensor({3, d}, rng);
    CHECK(grad_check([&](const Tensor& q) { return sum(mul(attention_forward(x, {q, w.w_k, w.w_v}), up)); },
                     w.w_q) <= 1e-4);
    CHECK(grad_check([&](const Tensor& k) { return sum(mul(attention_forward(x, {w.w_q, k, w.w_v}), up)); },
                     w.w_k) <= 1e-4);
    CHECK(grad_check([&](const Tensor& v) { return sum(mul(attention_forward(x, {w.w_q, w.w_k, v}), up)); },
                     w.w_v) <= 1e-4);
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(attention_forward(t, w), up)); }, x) <= 1e-4);
  }
}

// Adding c to a whole row of logits leaves softmax unchanged. For attention,
// a row-constant logit shift is produced by adding the same vector u to every
// key: q·(k+u) = q·k + q·u, constant across the row.
TEST_CASE("attention is invariant to row-constant logit shifts") {
  Rng rng(90);
  const std::size_t n = 6, d = 3;
  const Tensor logits = random_tensor({n, n}, rng, -4, 4);
  const Tensor shift = random_tensor({n, 1}, rng, -10, 10);
  const Tensor shifted = add(logits, expand(shift, {n, n}));
  CHECK(max_abs_diff(softmax_rows(logits), softmax_rows(shifted)) <= 1e-12);

  const Tensor x = random_tensor({n, d}, rng);
  const AttentionWeights w{random_tensor({d, d}, rng), random_tensor({d, d}, rng), random_tensor({d, d}, rng)};
  const Tensor base = attention_forward(x, w);
  const Tensor q = matmul(x, w.w_q);
  const Tensor k = matmul(x, w.w_k);
  const Tensor u = random_tensor({1, d}, rng);
  const Tensor k_shift = add(k, expand(u, {n, d}));
  const Tensor a = softmax_rows(scale(matmul(q, permute(k_shift, {1, 0})), 1.0 / std::sqrt(double(d))));
  CHECK(max_abs_diff(matmul(a, matmul(x, w.w_v)), base) <= 1e-12);
}
