#ifndef MCGEN_LOSSES_HPP
#define MCGEN_LOSSES_HPP

#include "mcgen/tensor.hpp"

namespace mcgen {

// Bernoulli reconstruction loss, summed over feature dims, averaged over the
// batch (axis 0). Predictions clamped to [eps, 1-eps] to keep the logs finite.
template <typename S>
Tensor<S> bce_loss(const Tensor<S>& pred, const Tensor<S>& target,
                   double eps = 1e-6) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("bce_loss: prediction " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  }
  for (S v : target.data()) {
    if (v < S(0) || v > S(1)) {
      throw ValueError("bce_loss: target outside [0, 1]");
    }
  }
  const Index n = pred.dim(0);
  const S lo = static_cast<S>(eps);
  const S hi = static_cast<S>(1.0 - eps);
  Tensor<S> p = clamp(pred, lo, hi);
  Tensor<S> one_minus_p = add_scalar(neg(p), S(1));
  Tensor<S> one_minus_t = add_scalar(neg(target), S(1));
  Tensor<S> ll = add(mul(target, log(p)), mul(one_minus_t, log(one_minus_p)));
  return mul_scalar(neg(sum(ll)), S(1) / static_cast<S>(n));
}

// KL(N(mu, diag(exp(logvar))) || N(0, I)), summed over latent dims, averaged
// over the batch.
template <typename S>
Tensor<S> kl_diag_gaussian(const Tensor<S>& mu, const Tensor<S>& logvar) {
  if (mu.shape() != logvar.shape()) {
    throw ShapeError("kl_diag_gaussian: mu " + shape_str(mu.shape()) +
                     " vs logvar " + shape_str(logvar.shape()));
  }
  const Index n = mu.dim(0);
  // term = -(1 + logvar - mu^2 - exp(logvar))
  Tensor<S> term =
      neg(add(add_scalar(logvar, S(1)), neg(add(mul(mu, mu), exp(logvar)))));
  return mul_scalar(sum(term), S(0.5) / static_cast<S>(n));
}

// Hinge losses for the adversarial game; scores are (N,1) or (N).
template <typename S>
Tensor<S> hinge_d_loss(const Tensor<S>& real_scores,
                       const Tensor<S>& fake_scores) {
  Tensor<S> lr = relu(add_scalar(neg(real_scores), S(1)));  // max(0, 1 - D(x))
  Tensor<S> lf = relu(add_scalar(fake_scores, S(1)));       // max(0, 1 + D(G))
  return add(mean(lr), mean(lf));
}

template <typename S>
Tensor<S> hinge_g_loss(const Tensor<S>& fake_scores) {
  return neg(mean(fake_scores));
}

// Softmax cross entropy with integer labels. logits (N,C). Mean over rows.
template <typename S>
Tensor<S> cross_entropy_logits(const Tensor<S>& logits,
                               const std::vector<Index>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy_logits: rank-2 logits required");
  }
  const Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("cross_entropy_logits: label count mismatch");
  }
  auto lv = logits.data();
  std::vector<S> probs(static_cast<std::size_t>(n * c));
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index lab = labels[static_cast<std::size_t>(i)];
    if (lab < 0 || lab >= c) {
      throw ValueError("cross_entropy_logits: label out of range");
    }
    const S* row = &lv[static_cast<std::size_t>(i * c)];
    S m = row[0];
    for (Index j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (Index j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - m));
    const double lse = static_cast<double>(m) + std::log(z);
    for (Index j = 0; j < c; ++j) {
      probs[static_cast<std::size_t>(i * c + j)] =
          static_cast<S>(std::exp(static_cast<double>(row[j]) - lse));
    }
    total += lse - static_cast<double>(row[lab]);
  }
  auto ln = logits.node();
  return Tensor<S>::make_op(
      {1}, {static_cast<S>(total / static_cast<double>(n))},
      "cross_entropy_logits", {logits},
      [ln, probs = std::move(probs), labels, n, c](const std::vector<S>& g) {
        ln->ensure_grad();
        const S scale = g[0] / static_cast<S>(n);
        for (Index i = 0; i < n; ++i) {
          for (Index j = 0; j < c; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i * c + j);
            S p = probs[idx];
            if (j == labels[static_cast<std::size_t>(i)]) p -= S(1);
            ln->grad[idx] += scale * p;
          }
        }
      });
}

// Per-sample log-density of N(0, I) latents: (N, D...) -> (N).
template <typename S>
Tensor<S> standard_normal_logp(const Tensor<S>& z) {
  const Index n = z.dim(0);
  const Index d = z.size() / n;
  Tensor<S> flat = reshape(z, {n, d});
  Tensor<S> sq = mul(flat, flat);
  Tensor<S> s = sum(sq, 1);
  constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
  return add_scalar(mul_scalar(s, S(-0.5)),
                    static_cast<S>(-0.5 * kLog2Pi * static_cast<double>(d)));
}

}  // namespace mcgen

#endif  // MCGEN_LOSSES_HPP
