#ifndef MCGEN_TRAINING_HPP
#define MCGEN_TRAINING_HPP

#include <optional>
#include <sstream>

#include "mcgen/data.hpp"
#include "mcgen/metrics.hpp"
#include "mcgen/models.hpp"

namespace mcgen {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename S>
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Index t = 0;
  std::vector<Tensor<S>> m, v;  // aligned with the param order

  static Adam make(const ParamRefs<S>& refs, double lr, double beta1,
                   double beta2) {
    if (lr <= 0) throw ConfigError("adam: learning rate must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw ConfigError("adam: betas must lie in [0, 1)");
    }
    Adam a;
    a.lr = lr;
    a.beta1 = beta1;
    a.beta2 = beta2;
    for (const auto& [name, p] : refs.params) {
      a.m.push_back(Tensor<S>::zeros(p.shape()));
      a.v.push_back(Tensor<S>::zeros(p.shape()));
    }
    return a;
  }

  // Bias-corrected update over every param that received a gradient this
  // step; params with no grad are left untouched (their moments too).
  void step(ParamRefs<S>& refs) {
    if (refs.params.size() != m.size()) {
      throw ShapeError("adam: param list does not match optimizer state");
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < refs.params.size(); ++i) {
      auto& [name, p] = refs.params[i];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto mv = m[i].mutable_data();
      auto vv = v[i].mutable_data();
      auto pv = p.mutable_data();
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        if (!std::isfinite(gk)) {
          throw ValueError("adam: non-finite gradient in parameter '" + name +
                           "' (training diverged)");
        }
        const double mk = beta1 * static_cast<double>(mv[k]) + (1.0 - beta1) * gk;
        const double vk =
            beta2 * static_cast<double>(vv[k]) + (1.0 - beta2) * gk * gk;
        mv[k] = static_cast<S>(mk);
        vv[k] = static_cast<S>(vk);
        pv[k] = static_cast<S>(static_cast<double>(pv[k]) -
                               lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps));
      }
    }
  }
};

// Spec-level free-function form of the update.
template <typename S>
void adam_step(ParamRefs<S>& params, Adam<S>& state) {
  state.step(params);
}

// ---------------------------------------------------------------------------
// Training configuration and loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  Index batch_size = 128;
  double lr = -1.0;     // negative: use the model family default
  double beta1 = -1.0;  // negative: family default
  double beta2 = -1.0;
  std::string loss_id;  // informational; set from the family default
  int epochs = 10;
  std::uint64_t seed = 0;
  std::string model_id = "mcvae";
  std::string dataset_dir;
  // Diagnostics / ablations.
  bool sequential_modes = false;  // per-mode sequential oracle (tests only)
  std::string codebook_mode = "uniform";  // uniform | ones
  std::string ablate_mc;                  // "", "g", "d"

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (codebook_mode != "uniform" && codebook_mode != "ones") {
      throw ConfigError("train: codebook mode must be uniform|ones");
    }
    if (!ablate_mc.empty() && ablate_mc != "g" && ablate_mc != "d") {
      throw ConfigError("train: --ablate-mc takes g or d");
    }
  }
};

// Family defaults mirror the training hyperparameter table: Adam, batch 128,
// lr 3e-4 with betas (0.9, 0.999) everywhere except the adversarial models
// (hinge loss, lr 2e-4, betas (0.5, 0.999)).
inline void apply_family_defaults(TrainConfig& cfg) {
  const ModelId id = parse_model_id(cfg.model_id);
  const bool gan = id.family == ModelFamily::Gan;
  if (cfg.lr < 0) cfg.lr = gan ? 2e-4 : 3e-4;
  if (cfg.beta1 < 0) cfg.beta1 = gan ? 0.5 : 0.9;
  if (cfg.beta2 < 0) cfg.beta2 = 0.999;
  if (cfg.loss_id.empty()) {
    switch (id.family) {
      case ModelFamily::Gan:
        cfg.loss_id = "Hinge";
        break;
      case ModelFamily::Vae:
        cfg.loss_id = "BCE";
        break;
      default:
        cfg.loss_id = "NLL";
        break;
    }
  }
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> recon, kl, d_loss, g_loss;

  std::string line() const {
    std::ostringstream os;
    os << "epoch=" << epoch << " loss=" << loss;
    if (recon) os << " recon=" << *recon;
    if (kl) os << " kl=" << *kl;
    if (d_loss) os << " d_loss=" << *d_loss;
    if (g_loss) os << " g_loss=" << *g_loss;
    return os.str();
  }
};

template <typename S>
struct TrainerState {
  TrainConfig cfg;
  ModelHyper hyper;
  Index epochs_done = 0;
  std::optional<McVae<S>> vae;
  std::optional<McGan<S>> gan;
  std::optional<McPixelCnn<S>> pcnn;
  std::optional<McGlow<S>> glow;
  std::optional<EvalClassifier<S>> clf;
  std::optional<Adam<S>> opt;           // single-objective families
  std::optional<Adam<S>> opt_g, opt_d;  // adversarial pair

  ParamRefs<S> params() const {
    if (vae) return vae->params();
    if (gan) return gan->params();
    if (pcnn) return pcnn->params();
    if (glow) return glow->params();
    if (clf) return clf->params();
    throw Error("trainer: no model");
  }
  std::vector<std::pair<std::string, Codebook*>> books() {
    if (vae) return vae->books();
    if (gan) return gan->books();
    if (pcnn) return pcnn->books();
    if (glow) return glow->books();
    if (clf) return clf->books();
    throw Error("trainer: no model");
  }
};

template <typename S>
ModelHyper hyper_from_dataset(const TrainConfig& cfg, const Dataset<S>& ds) {
  ModelHyper h;
  const ModelId id = parse_model_id(cfg.model_id);
  h.modes = ds.modes;
  h.channels = static_cast<int>(ds.images.dim(1));
  h.image = ds.images.dim(2);
  h.cond = id.cond;
  h.ones_codebooks = cfg.codebook_mode == "ones";
  if (cfg.ablate_mc == "g") h.mc_on_g = false;
  if (cfg.ablate_mc == "d") h.mc_on_d = false;
  return h;
}

template <typename S>
TrainerState<S> make_trainer(TrainConfig cfg, const Dataset<S>& ds) {
  cfg.validate();
  apply_family_defaults(cfg);
  TrainerState<S> st;
  st.cfg = cfg;
  st.hyper = hyper_from_dataset(cfg, ds);
  const ModelId id = parse_model_id(cfg.model_id);
  switch (id.family) {
    case ModelFamily::Vae:
      st.vae = McVae<S>::build(st.hyper, cfg.seed);
      st.opt = Adam<S>::make(st.vae->params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
    case ModelFamily::Gan: {
      st.gan = McGan<S>::build(st.hyper, cfg.seed);
      st.opt_g = Adam<S>::make(st.gan->g_params(), cfg.lr, cfg.beta1, cfg.beta2);
      st.opt_d = Adam<S>::make(st.gan->d_params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
    }
    case ModelFamily::PixelCnn:
      st.pcnn = McPixelCnn<S>::build(st.hyper, cfg.seed);
      st.opt = Adam<S>::make(st.pcnn->params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
    case ModelFamily::Glow:
      st.glow = McGlow<S>::build(st.hyper, cfg.seed);
      st.opt = Adam<S>::make(st.glow->params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
    case ModelFamily::Classifier:
      st.clf = EvalClassifier<S>::build(st.hyper.modes, st.hyper.channels,
                                        st.hyper.image, cfg.seed);
      st.opt = Adam<S>::make(st.clf->params(), cfg.lr, cfg.beta1, cfg.beta2);
      break;
  }
  return st;
}

namespace train_detail {

template <typename S>
std::vector<Index> epoch_order(const TrainerState<S>& st, Index n, int epoch) {
  auto shuffle = RngStream::derive(st.cfg.seed, "shuffle",
                                   static_cast<std::uint64_t>(epoch));
  auto perm = shuffle.permutation(n);
  return perm;
}

inline void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) {
    throw ValueError(std::string(what) + ": non-finite loss (training diverged)");
  }
}

}  // namespace train_detail

// One pass over the training split. Deterministic given (seed, epoch).
template <typename S>
EpochRecord run_epoch(TrainerState<S>& st, const Dataset<S>& ds, int epoch) {
  EpochRecord rec;
  rec.epoch = epoch;
  const ModelId id = parse_model_id(st.cfg.model_id);
  // The evaluation classifier trains on every sample (metric protocol); the
  // generative models see the training split only.
  std::vector<Index> pool = id.family == ModelFamily::Classifier
                                ? [&] {
                                    std::vector<Index> all(
                                        static_cast<std::size_t>(ds.count()));
                                    for (Index i = 0; i < ds.count(); ++i)
                                      all[static_cast<std::size_t>(i)] = i;
                                    return all;
                                  }()
                                : ds.indices(false);
  auto order = train_detail::epoch_order(st, static_cast<Index>(pool.size()), epoch);
  auto noise = RngStream::derive(st.cfg.seed, "noise",
                                 static_cast<std::uint64_t>(epoch));
  const Index n = static_cast<Index>(pool.size());
  const Index bs = st.cfg.batch_size;
  double loss_sum = 0.0, recon_sum = 0.0, kl_sum = 0.0, d_sum = 0.0, g_sum = 0.0;
  Index batches = 0;

  for (Index at = 0; at < n; at += bs) {
    const Index take = std::min(bs, n - at);
    std::vector<Index> idx;
    idx.reserve(static_cast<std::size_t>(take));
    for (Index i = 0; i < take; ++i) {
      idx.push_back(pool[static_cast<std::size_t>(order[static_cast<std::size_t>(at + i)])]);
    }
    Tensor<S> xb = ds.gather(idx);
    std::vector<Index> yb = ds.gather_labels(idx);
    ModalitySelector h(yb, ds.modes);
    ++batches;

    if (st.vae) {
      auto refs = st.vae->params();
      refs.zero_grad();
      double batch_loss, batch_recon, batch_kl;
      if (st.cfg.sequential_modes) {
        // Per-mode sequential oracle: weight each mode's loss by its batch
        // share. Matches the mixed-mode batch exactly for norm-free models.
        Tensor<S> total;
        batch_recon = batch_kl = 0.0;
        for (int c = 0; c < ds.modes; ++c) {
          std::vector<Index> rows;
          for (Index i = 0; i < take; ++i) {
            if (yb[static_cast<std::size_t>(i)] == c) rows.push_back(i);
          }
          if (rows.empty()) continue;
          std::vector<Index> sub;
          for (Index r : rows) sub.push_back(idx[static_cast<std::size_t>(r)]);
          Tensor<S> xc = ds.gather(sub);
          ModalitySelector hc(std::vector<Index>(rows.size(), c), ds.modes);
          auto parts = vae_loss(*st.vae, xc, hc, noise);
          const S w = static_cast<S>(static_cast<double>(rows.size()) /
                                     static_cast<double>(take));
          Tensor<S> scaled = mul_scalar(parts.loss, w);
          total = total.defined() ? add(total, scaled) : scaled;
          batch_recon += parts.recon * static_cast<double>(w);
          batch_kl += parts.kl * static_cast<double>(w);
        }
        batch_loss = total.item();
        train_detail::check_finite(batch_loss, "vae");
        backward(total);
      } else {
        auto parts = vae_loss(*st.vae, xb, h, noise);
        batch_loss = static_cast<double>(parts.loss.item());
        batch_recon = parts.recon;
        batch_kl = parts.kl;
        train_detail::check_finite(batch_loss, "vae");
        backward(parts.loss);
      }
      st.opt->step(refs);
      loss_sum += batch_loss;
      recon_sum += batch_recon;
      kl_sum += batch_kl;
    } else if (st.gan) {
      // Real images live in the tanh range.
      Tensor<S> xr = add_scalar(mul_scalar(xb, S(2)), S(-1));
      // Discriminator step.
      auto d_refs = st.gan->d_params();
      d_refs.zero_grad();
      {
        Tensor<S> z = randn<S>({take, st.hyper.latent}, noise);
        Tensor<S> fake = st.gan->g.forward(z, h, true);
        Tensor<S> rs = st.gan->d.forward(xr, h, true);
        Tensor<S> fs = st.gan->d.forward(fake.detach(), h, true);
        Tensor<S> d_loss = hinge_d_loss(rs, fs);
        const double dl = static_cast<double>(d_loss.item());
        train_detail::check_finite(dl, "gan_d");
        backward(d_loss);
        st.opt_d->step(d_refs);
        d_sum += dl;
        loss_sum += dl;
      }
      // Generator step.
      auto g_refs = st.gan->g_params();
      g_refs.zero_grad();
      {
        Tensor<S> z = randn<S>({take, st.hyper.latent}, noise);
        Tensor<S> fake = st.gan->g.forward(z, h, true);
        Tensor<S> fs = st.gan->d.forward(fake, h, true);
        Tensor<S> g_loss = hinge_g_loss(fs);
        const double gl = static_cast<double>(g_loss.item());
        train_detail::check_finite(gl, "gan_g");
        backward(g_loss);
        st.opt_g->step(g_refs);
        g_sum += gl;
        loss_sum += gl;
      }
    } else if (st.pcnn) {
      auto refs = st.pcnn->params();
      refs.zero_grad();
      Tensor<S> loss = st.pcnn->nll_nats(xb, h, true);
      const double l = static_cast<double>(loss.item());
      train_detail::check_finite(l, "pixelcnn");
      backward(loss);
      st.opt->step(refs);
      loss_sum += l;
    } else if (st.glow) {
      auto refs = st.glow->params();
      refs.zero_grad();
      const Index dims = xb.size() / take;
      Tensor<S> logp = st.glow->log_prob(xb, h, true);
      Tensor<S> loss = mul_scalar(mean(logp), S(-1.0 / static_cast<double>(dims)));
      const double l = static_cast<double>(loss.item());
      train_detail::check_finite(l, "glow");
      backward(loss);
      st.opt->step(refs);
      loss_sum += l;
    } else if (st.clf) {
      auto refs = st.clf->params();
      refs.zero_grad();
      Tensor<S> loss = cross_entropy_logits(st.clf->logits(xb), yb);
      const double l = static_cast<double>(loss.item());
      train_detail::check_finite(l, "classifier");
      backward(loss);
      st.opt->step(refs);
      loss_sum += l;
    }
  }

  const double denom = std::max<double>(1.0, static_cast<double>(batches));
  rec.loss = loss_sum / denom;
  if (st.vae) {
    rec.recon = recon_sum / denom;
    rec.kl = kl_sum / denom;
  }
  if (st.gan) {
    rec.d_loss = d_sum / denom;
    rec.g_loss = g_sum / denom;
  }
  st.epochs_done = epoch + 1;
  return rec;
}

}  // namespace mcgen

#endif  // MCGEN_TRAINING_HPP
