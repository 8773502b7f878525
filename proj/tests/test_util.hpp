#ifndef MCGEN_TESTS_TEST_UTIL_HPP
#define MCGEN_TESTS_TEST_UTIL_HPP

#include <functional>
#include <vector>

#include "mcgen/kernels.hpp"
#include "mcgen/tensor.hpp"

namespace mcgen::testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central-finite-difference gradient oracle. `make_loss` must rebuild the
// whole forward graph from the current leaf values and be deterministic.
// Returns the worst relative error between autodiff and FD over the checked
// coordinates (all coordinates unless `max_coords` > 0, in which case an
// evenly strided subset is used).
inline double gradcheck(std::vector<Tensor<double>> leaves,
                        const std::function<Tensor<double>()>& make_loss,
                        double h = 1e-5, Index max_coords = -1) {
  for (auto& l : leaves) l.zero_grad();
  Tensor<double> loss = make_loss();
  backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(leaves.size());
  for (auto& l : leaves) {
    grads.emplace_back(l.grad().begin(), l.grad().end());
    if (grads.back().empty()) grads.back().assign(static_cast<std::size_t>(l.size()), 0.0);
  }
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const Index n = leaf.size();
    const Index stride =
        (max_coords > 0 && n > max_coords) ? (n + max_coords - 1) / max_coords : 1;
    for (Index i = 0; i < n; i += stride) {
      const std::size_t idx = static_cast<std::size_t>(i);
      const double x0 = leaf.data()[idx];
      leaf.mutable_data()[idx] = x0 + h;
      const double lp = make_loss().item();
      leaf.mutable_data()[idx] = x0 - h;
      const double lm = make_loss().item();
      leaf.mutable_data()[idx] = x0;
      const double fd = (lp - lm) / (2.0 * h);
      worst = std::max(worst, rel_err(grads[li][idx], fd));
    }
  }
  return worst;
}

// Direct-summation convolution oracle, independent of the im2col path.
template <typename S>
Tensor<S> naive_conv2d(const Tensor<S>& x, const Tensor<S>& w, Index stride,
                       Index pad) {
  const Index n = x.dim(0), ic = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const Index oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index ho = (h + 2 * pad - kh) / stride + 1;
  const Index wo = (ww + 2 * pad - kw) / stride + 1;
  std::vector<S> out(static_cast<std::size_t>(n * oc * ho * wo), S(0));
  auto xv = x.data();
  auto wv = w.data();
  for (Index b = 0; b < n; ++b)
    for (Index o = 0; o < oc; ++o)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          S acc = S(0);
          for (Index c = 0; c < ic; ++c)
            for (Index dy = 0; dy < kh; ++dy)
              for (Index dx = 0; dx < kw; ++dx) {
                const Index iy = oy * stride - pad + dy;
                const Index ix = ox * stride - pad + dx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                acc += xv[static_cast<std::size_t>(((b * ic + c) * h + iy) * ww + ix)] *
                       wv[static_cast<std::size_t>(((o * ic + c) * kh + dy) * kw + dx)];
              }
          out[static_cast<std::size_t>(((b * oc + o) * ho + oy) * wo + ox)] = acc;
        }
  return Tensor<S>::from_data({n, oc, ho, wo}, std::move(out));
}

template <typename S>
double dot(const Tensor<S>& a, const Tensor<S>& b) {
  double acc = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a.data()[static_cast<std::size_t>(i)]) *
           static_cast<double>(b.data()[static_cast<std::size_t>(i)]);
  }
  return acc;
}

}  // namespace mcgen::testutil

#endif  // MCGEN_TESTS_TEST_UTIL_HPP
