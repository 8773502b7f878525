#ifndef MCGEN_METRICS_HPP
#define MCGEN_METRICS_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "mcgen/losses.hpp"
#include "mcgen/models.hpp"

namespace mcgen {

// ---------------------------------------------------------------------------
// Evaluation classifier (conv-pool x3 + conv + linear head); the penultimate
// flattened activations are the metric feature space.
// ---------------------------------------------------------------------------

template <typename S>
struct EvalClassifier {
  int modes = 0;
  int channels = 1;
  Index image = 16;
  Conv2d<S> c1, c2, c3, c4;
  Linear<S> head;

  static EvalClassifier build(int modes, int channels, Index image,
                              std::uint64_t seed) {
    if (image % 8 != 0) {
      throw ConfigError("classifier: image size must be a multiple of 8");
    }
    EvalClassifier m;
    m.modes = modes;
    m.channels = channels;
    m.image = image;
    auto init = init_stream(seed);
    m.c1 = Conv2d<S>::make(channels, 8, 3, 1, 1, init);
    m.c2 = Conv2d<S>::make(8, 16, 3, 1, 1, init);
    m.c3 = Conv2d<S>::make(16, 32, 3, 1, 1, init);
    m.c4 = Conv2d<S>::make(32, 64, 3, 1, 1, init);
    m.head = Linear<S>::make(m.feature_dim(), modes, init);
    return m;
  }

  Index feature_dim() const { return 64 * (image / 8) * (image / 8); }

  // Penultimate activations (N, feature_dim).
  Tensor<S> features(const Tensor<S>& x) const {
    Tensor<S> t = max_pool2d(relu(c1.forward(x)), 2, 2);
    t = max_pool2d(relu(c2.forward(t)), 2, 2);
    t = max_pool2d(relu(c3.forward(t)), 2, 2);
    t = relu(c4.forward(t));
    return reshape(t, {x.dim(0), feature_dim()});
  }
  Tensor<S> logits(const Tensor<S>& x) const { return head.forward(features(x)); }
  Tensor<S> probs(const Tensor<S>& x) const { return softmax(logits(x), 1); }

  ParamRefs<S> params() const {
    ParamRefs<S> r;
    c1.collect("c1", r);
    c2.collect("c2", r);
    c3.collect("c3", r);
    c4.collect("c4", r);
    head.collect("head", r);
    return r;
  }
  std::vector<std::pair<std::string, Codebook*>> books() { return {}; }
};

// Batched helpers evaluated without graph recording; double precision output
// regardless of the model scalar.
template <typename S>
Eigen::MatrixXd classifier_probs(const EvalClassifier<S>& clf,
                                 const Tensor<S>& x, Index batch = 256) {
  NoGradGuard ng;
  const Index n = x.dim(0);
  Eigen::MatrixXd out(n, clf.modes);
  const Index chw = x.size() / n;
  for (Index at = 0; at < n; at += batch) {
    const Index take = std::min(batch, n - at);
    std::vector<S> buf(x.data().begin() + at * chw,
                       x.data().begin() + (at + take) * chw);
    auto xb = Tensor<S>::from_data({take, x.dim(1), x.dim(2), x.dim(3)},
                                   std::move(buf));
    auto p = clf.probs(xb);
    for (Index i = 0; i < take; ++i)
      for (int c = 0; c < clf.modes; ++c)
        out(at + i, c) = static_cast<double>(
            p.data()[static_cast<std::size_t>(i * clf.modes + c)]);
  }
  return out;
}

template <typename S>
Eigen::MatrixXd classifier_features(const EvalClassifier<S>& clf,
                                    const Tensor<S>& x, Index batch = 256) {
  NoGradGuard ng;
  const Index n = x.dim(0);
  const Index f = clf.feature_dim();
  Eigen::MatrixXd out(n, f);
  const Index chw = x.size() / n;
  for (Index at = 0; at < n; at += batch) {
    const Index take = std::min(batch, n - at);
    std::vector<S> buf(x.data().begin() + at * chw,
                       x.data().begin() + (at + take) * chw);
    auto xb = Tensor<S>::from_data({take, x.dim(1), x.dim(2), x.dim(3)},
                                   std::move(buf));
    auto feat = clf.features(xb);
    for (Index i = 0; i < take; ++i)
      for (Index j = 0; j < f; ++j)
        out(at + i, j) =
            static_cast<double>(feat.data()[static_cast<std::size_t>(i * f + j)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inception score: exp(mean KL(p(y|x) || p(y))) per split.
// ---------------------------------------------------------------------------

struct IsResult {
  double mean = 0.0;
  double stddev = 0.0;
  Index n = 0;
};

inline IsResult inception_score(const Eigen::MatrixXd& probs, int splits = 10) {
  const Index n = probs.rows();
  const Index c = probs.cols();
  if (n < 1) throw ValueError("inception_score: no samples");
  if (splits < 1) throw ValueError("inception_score: splits must be >= 1");
  for (Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (Index j = 0; j < c; ++j) {
      if (probs(i, j) < -1e-9) {
        throw ValueError("inception_score: probabilities must be non-negative");
      }
      row += probs(i, j);
    }
    if (std::abs(row - 1.0) > 1e-6) {
      throw ValueError("inception_score: row " + std::to_string(i) +
                       " is not on the simplex");
    }
  }
  const int k = static_cast<int>(std::min<Index>(splits, n));
  std::vector<double> scores;
  Index at = 0;
  for (int s = 0; s < k; ++s) {
    const Index take = n / k + (s < n % k ? 1 : 0);
    Eigen::VectorXd marginal = Eigen::VectorXd::Zero(c);
    for (Index i = 0; i < take; ++i) marginal += probs.row(at + i).transpose();
    marginal /= static_cast<double>(take);
    double mean_kl = 0.0;
    constexpr double kEps = 1e-12;
    for (Index i = 0; i < take; ++i) {
      double kl = 0.0;
      for (Index j = 0; j < c; ++j) {
        const double p = probs(at + i, j);
        if (p > 0.0) kl += p * std::log(p / std::max(marginal(j), kEps));
      }
      mean_kl += kl;
    }
    mean_kl /= static_cast<double>(take);
    scores.push_back(std::exp(mean_kl));
    at += take;
  }
  IsResult r;
  r.n = n;
  for (double s : scores) r.mean += s;
  r.mean /= static_cast<double>(scores.size());
  for (double s : scores) r.stddev += (s - r.mean) * (s - r.mean);
  r.stddev = scores.size() > 1
                 ? std::sqrt(r.stddev / static_cast<double>(scores.size() - 1))
                 : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian feature fits.
// ---------------------------------------------------------------------------

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // symmetric PSD (symmetrized on construction)
  Index n = 0;
};

inline FeatureStats compute_feature_stats(const Eigen::MatrixXd& features) {
  const Index n = features.rows();
  if (n < 2) throw ValueError("feature stats: need at least 2 samples");
  FeatureStats s;
  s.n = n;
  s.mean = features.colwise().mean();
  Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

// Symmetric PSD square root via eigendecomposition; negative eigenvalues
// (roundoff) clipped at zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) {
    throw ValueError("psd_sqrt: eigendecomposition failed");
  }
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size()) {
    throw ShapeError("frechet_distance: feature dimension mismatch");
  }
  if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() ||
      !b.cov.allFinite()) {
    throw ValueError("frechet_distance: non-finite statistics");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  // trace sqrt(Ca Cb) via the symmetric form sqrt(Ca^1/2 Cb Ca^1/2).
  Eigen::MatrixXd ra = psd_sqrt(a.cov);
  Eigen::MatrixXd inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (inner + inner.transpose()));
  if (es.info() != Eigen::Success) {
    throw ValueError("frechet_distance: eigendecomposition failed");
  }
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  double d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  if (d < -1e-6) {
    throw ValueError("frechet_distance: result " + std::to_string(d) +
                     " below tolerance; statistics are inconsistent");
  }
  return std::max(d, 0.0);
}

// ---------------------------------------------------------------------------
// Davies-Bouldin index.
// ---------------------------------------------------------------------------

inline double davies_bouldin(const Eigen::MatrixXd& features,
                             const std::vector<Index>& labels) {
  const Index n = features.rows();
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("davies_bouldin: label count mismatch");
  }
  Index k = 0;
  for (Index l : labels) {
    if (l < 0) throw ValueError("davies_bouldin: negative label");
    k = std::max(k, l + 1);
  }
  if (k < 2) throw ValueError("davies_bouldin: need at least 2 clusters");
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(k, features.cols());
  for (Index i = 0; i < n; ++i) {
    centroids.row(labels[static_cast<std::size_t>(i)]) += features.row(i);
    counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]++;
  }
  for (Index c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw ValueError("davies_bouldin: empty cluster " + std::to_string(c));
    }
    centroids.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  // Mean Euclidean distance to the centroid per cluster.
  std::vector<double> scatter(static_cast<std::size_t>(k), 0.0);
  for (Index i = 0; i < n; ++i) {
    const Index c = labels[static_cast<std::size_t>(i)];
    scatter[static_cast<std::size_t>(c)] +=
        (features.row(i) - centroids.row(c)).norm();
  }
  for (Index c = 0; c < k; ++c) {
    scatter[static_cast<std::size_t>(c)] /=
        static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  double total = 0.0;
  for (Index i = 0; i < k; ++i) {
    double worst = -1.0;
    // Ties resolved toward larger j by the >= comparison (no numeric effect).
    for (Index j = 0; j < k; ++j) {
      if (j == i) continue;
      const double sep = (centroids.row(i) - centroids.row(j)).norm();
      if (sep == 0.0) {
        throw ValueError(
            "davies_bouldin: coincident centroids of distinct clusters " +
            std::to_string(i) + " and " + std::to_string(j));
      }
      const double r = (scatter[static_cast<std::size_t>(i)] +
                        scatter[static_cast<std::size_t>(j)]) /
                       sep;
      if (r >= worst) worst = r;
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Likelihood reports in bits per dimension.
// ---------------------------------------------------------------------------

struct NllReport {
  double bits_per_dim = 0.0;
  bool is_bound = false;  // VAE reports the ELBO bound
  Index n = 0;
  Index failures = 0;               // Glow overflow count
  std::vector<Index> failed_indices;
};

inline constexpr double kLn2 = 0.6931471805599453;

// Negative ELBO per dimension; an upper bound on the true NLL.
template <typename S>
NllReport vae_nll_bound(McVae<S>& model, const Tensor<S>& x,
                        const ModalitySelector& h, RngStream& stream) {
  NoGradGuard ng;
  const Index n = x.dim(0);
  const Index dims = x.size() / n;
  auto [mu, logvar] = model.encode(x, h, false);
  Tensor<S> eps = randn<S>(mu.shape(), stream);
  Tensor<S> z = add(mu, mul(exp(mul_scalar(logvar, S(0.5))), eps));
  Tensor<S> xhat = model.decode(z, h, false);
  Tensor<S> recon = bce_loss(reshape(xhat, {n, dims}), reshape(x, {n, dims}));
  Tensor<S> kl = kl_diag_gaussian(mu, logvar);
  NllReport r;
  r.is_bound = true;
  r.n = n;
  r.bits_per_dim = (static_cast<double>(recon.item()) +
                    static_cast<double>(kl.item())) /
                   (static_cast<double>(dims) * kLn2);
  return r;
}

template <typename S>
NllReport pixelcnn_nll(const McPixelCnn<S>& model, const Tensor<S>& x,
                       const ModalitySelector& h) {
  NoGradGuard ng;
  NllReport r;
  r.n = x.dim(0);
  Tensor<S> nats = model.nll_nats(x, h, false);
  r.bits_per_dim = static_cast<double>(nats.item()) / kLn2;
  return r;
}

// Exact likelihood via the inverse chain; samples whose log-determinant
// overflows are excluded and listed.
template <typename S>
NllReport glow_nll(McGlow<S>& model, const Tensor<S>& x,
                   const ModalitySelector& h) {
  NoGradGuard ng;
  const Index n = x.dim(0);
  const Index dims = x.size() / n;
  NllReport r;
  r.n = n;
  double total = 0.0;
  Index ok = 0;
  const Index chw = x.size() / n;
  for (Index i = 0; i < n; ++i) {
    std::vector<S> one(x.data().begin() + i * chw,
                       x.data().begin() + (i + 1) * chw);
    auto xi = Tensor<S>::from_data({1, x.dim(1), x.dim(2), x.dim(3)},
                                   std::move(one));
    ModalitySelector hi({h.labels()[static_cast<std::size_t>(i)]}, h.num_modes());
    bool failed = false;
    double lp = 0.0;
    try {
      Tensor<S> logp = model.log_prob(xi, hi, false);
      lp = static_cast<double>(logp.data()[0]);
      failed = !std::isfinite(lp);
    } catch (const ValueError&) {
      failed = true;  // signaled overflow
    }
    if (failed) {
      r.failures++;
      r.failed_indices.push_back(i);
    } else {
      total += -lp;
      ++ok;
    }
  }
  if (ok == 0) throw ValueError("glow_nll: every sample overflowed");
  r.bits_per_dim = total / (static_cast<double>(ok) * static_cast<double>(dims) * kLn2);
  return r;
}

// Classification accuracy of the evaluation classifier.
template <typename S>
double classifier_accuracy(const EvalClassifier<S>& clf, const Tensor<S>& x,
                           const std::vector<Index>& labels) {
  NoGradGuard ng;
  Eigen::MatrixXd probs = classifier_probs(clf, x);
  Index correct = 0;
  for (Index i = 0; i < probs.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < probs.cols(); ++j) {
      if (probs(i, j) > probs(i, best)) best = j;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

}  // namespace mcgen

#endif  // MCGEN_METRICS_HPP
