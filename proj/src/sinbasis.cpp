#include "sinbasis/sinbasis.hpp"

#include <cmath>
#include <stdexcept>

#include "sinbasis/rng.hpp"

namespace sinbasis {

std::string_view to_string(BasisMode mode) {
  switch (mode) {
    case BasisMode::plain: return "plain";
    case BasisMode::sin_fixed: return "sin_fixed";
    case BasisMode::sin_tunable: return "sin_tunable";
    case BasisMode::cos_fixed: return "cos_fixed";
    case BasisMode::random_fourier: return "random_fourier";
  }
  return "plain";
}

BasisMode parse_basis_mode(std::string_view name) {
  for (BasisMode m : {BasisMode::plain, BasisMode::sin_fixed, BasisMode::sin_tunable,
                      BasisMode::cos_fixed, BasisMode::random_fourier}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown basis mode '" + std::string(name) + "'");
}

TunableParams TunableParams::identity(std::size_t rows) {
  return {Tensor::full({rows}, 1.0, true), Tensor::full({rows}, 1.0, true),
          Tensor::full({rows}, 0.0, true)};
}

WeightMatrix::WeightMatrix(Tensor raw, BasisMode mode, std::uint64_t basis_seed)
    : raw_(std::move(raw)), mode_(mode) {
  if (!raw_.defined() || raw_.rank() == 0) throw DimensionError("WeightMatrix: raw weight needs rank >= 1");
  if (mode_ == BasisMode::sin_tunable) tunable_ = TunableParams::identity(rows());
  if (mode_ == BasisMode::random_fourier) {
    Rng rng(derive_seed(basis_seed, "fourier-rows"));
    cosine_rows_.resize(rows());
    for (auto& c : cosine_rows_) c = (rng.next() >> 63) ? 1.0 : 0.0;
  }
}

WeightMatrix::WeightMatrix(Tensor raw, BasisMode mode, std::optional<TunableParams> tunable,
                           std::vector<double> cosine_rows)
    : raw_(std::move(raw)), mode_(mode), tunable_(std::move(tunable)), cosine_rows_(std::move(cosine_rows)) {
  if (!raw_.defined() || raw_.rank() == 0) throw DimensionError("WeightMatrix: raw weight needs rank >= 1");
}

WeightMatrix WeightMatrix::initialized(Shape shape, BasisMode mode, std::uint64_t seed) {
  const std::size_t n = shape_numel(shape);
  const std::size_t fan_in = n / shape.at(0);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  Rng rng(derive_seed(seed, "weight-init"));
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return WeightMatrix(Tensor(std::move(shape), std::move(v), true), mode, seed);
}

std::vector<Tensor> WeightMatrix::parameters() const {
  std::vector<Tensor> p{raw_};
  if (tunable_) {
    p.push_back(tunable_->a);
    p.push_back(tunable_->b);
    p.push_back(tunable_->phi);
  }
  return p;
}

Tensor effective_weight(const WeightMatrix& wm) {
  const Tensor& w = wm.raw();
  switch (wm.mode()) {
    case BasisMode::plain: return w;
    case BasisMode::sin_fixed: return sin(w);
    case BasisMode::cos_fixed: return cos(w);
    case BasisMode::sin_tunable: {
      if (!wm.tunable()) throw ContractError("effective_weight: tunable mode without tunable parameters");
      const auto& t = *wm.tunable();
      return row_scale(sin(row_shift(row_scale(w, t.b), t.phi)), t.a);
    }
    case BasisMode::random_fourier: {
      const auto& cos_rows = wm.cosine_rows();
      if (cos_rows.size() != wm.rows()) throw ContractError("effective_weight: missing Fourier row assignment");
      const double s = std::sqrt(2.0 / static_cast<double>(wm.rows()));
      std::vector<double> sin_scale(cos_rows.size()), cos_scale(cos_rows.size());
      for (std::size_t p = 0; p < cos_rows.size(); ++p) {
        cos_scale[p] = s * cos_rows[p];
        sin_scale[p] = s * (1.0 - cos_rows[p]);
      }
      const Shape rows{wm.rows()};
      return add(row_scale(sin(w), Tensor(rows, std::move(sin_scale))),
                 row_scale(cos(w), Tensor(rows, std::move(cos_scale))));
    }
  }
  throw ContractError("effective_weight: unknown mode");
}

WeightGrads effective_weight_grad(const WeightMatrix& wm, const Tensor& upstream) {
  const Tensor& w = wm.raw();
  if (!upstream.defined() || upstream.numel() != w.numel()) {
    throw DimensionError("effective_weight_grad: upstream shape does not match weight " + shape_str(w.shape()));
  }
  const std::size_t rows = wm.rows(), cols = wm.cols();
  const auto wv = w.data(), up = upstream.data();
  std::vector<double> dw(w.numel());
  WeightGrads out;

  switch (wm.mode()) {
    case BasisMode::plain:
      dw.assign(up.begin(), up.end());
      break;
    case BasisMode::sin_fixed:
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = std::cos(wv[i]) * up[i];
      break;
    case BasisMode::cos_fixed:
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = -std::sin(wv[i]) * up[i];
      break;
    case BasisMode::random_fourier: {
      const double s = std::sqrt(2.0 / static_cast<double>(rows));
      for (std::size_t p = 0; p < rows; ++p)
        for (std::size_t q = 0; q < cols; ++q) {
          const std::size_t i = p * cols + q;
          dw[i] = s * (wm.cosine_rows()[p] != 0.0 ? -std::sin(wv[i]) : std::cos(wv[i])) * up[i];
        }
      break;
    }
    case BasisMode::sin_tunable: {
      if (!wm.tunable()) throw ContractError("effective_weight_grad: tunable mode without tunable parameters");
      const auto a = wm.tunable()->a.data(), b = wm.tunable()->b.data(), phi = wm.tunable()->phi.data();
      std::vector<double> da(rows, 0.0), db(rows, 0.0), dphi(rows, 0.0);
      for (std::size_t p = 0; p < rows; ++p)
        for (std::size_t q = 0; q < cols; ++q) {
          const std::size_t i = p * cols + q;
          const double arg = b[p] * wv[i] + phi[p];
          const double c = std::cos(arg);
          dw[i] = a[p] * b[p] * c * up[i];
          da[p] += std::sin(arg) * up[i];
          db[p] += a[p] * c * wv[i] * up[i];
          dphi[p] += a[p] * c * up[i];
        }
      out.a = Tensor({rows}, std::move(da));
      out.b = Tensor({rows}, std::move(db));
      out.phi = Tensor({rows}, std::move(dphi));
      break;
    }
  }
  out.w = Tensor(w.shape(), std::move(dw));
  return out;
}

LipschitzReport lipschitz_norm_check(const Tensor& w) {
  double s2 = 0.0, w2 = 0.0;
  for (double v : w.data()) {
    s2 += std::sin(v) * std::sin(v);
    w2 += v * v;
  }
  const double sn = std::sqrt(s2), wn = std::sqrt(w2);
  return {sn, wn, sn <= wn};
}

}  // namespace sinbasis
