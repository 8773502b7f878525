#ifndef MCGEN_MODELS_VAE_HPP
#define MCGEN_MODELS_VAE_HPP

#include "mcgen/losses.hpp"
#include "mcgen/models/common.hpp"

namespace mcgen {

// Convolutional VAE with a controller at every parametric layer (three
// stride-2 encoder convs, two 3x3 convs standing in for the residual stage,
// mirrored decoder) and the latent masked after reparameterization. The same
// class covers the unconditional backbone (cond=None) and the concatenated
// embedding baseline (cond=Embed).
template <typename S>
struct McVae {
  ModelHyper hyper;
  std::vector<McWrappedLayer<S>> enc;
  Linear<S> fc_mu, fc_logvar;
  std::optional<Codebook> latent_book;
  std::optional<Embedding<S>> embed;
  Linear<S> dec_fc;
  std::optional<BatchNorm<S>> dec_bn;
  std::optional<Codebook> dec_entry_book;
  std::vector<McWrappedLayer<S>> dec;
  ConvTranspose2d<S> dec_out;

  Index base_spatial() const { return hyper.image / 8; }
  Index feat_dim() const { return 64 * base_spatial() * base_spatial(); }

  static McVae build(const ModelHyper& h, std::uint64_t seed) {
    if (h.image % 8 != 0 || h.image < 8) {
      throw ConfigError("mcvae: image size must be a positive multiple of 8");
    }
    McVae m;
    m.hyper = h;
    auto init = init_stream(seed);
    const bool mc = h.cond == Conditioning::Mc;
    const bool em = h.cond == Conditioning::Embed;
    const Index in_c = h.channels + (em ? h.embed_dim : 0);
    auto stage = [&](auto layer, Index out_ch) {
      McWrappedLayer<S> l;
      l.inner = std::move(layer);
      if (h.use_norm) l.norm = BatchNorm<S>::make(out_ch);
      l.act = Act::Relu;
      return l;
    };
    m.enc.push_back(stage(Conv2d<S>::make(in_c, 16, 4, 2, 1, init), 16));
    m.enc.push_back(stage(Conv2d<S>::make(16, 32, 4, 2, 1, init), 32));
    m.enc.push_back(stage(Conv2d<S>::make(32, 64, 4, 2, 1, init), 64));
    m.enc.push_back(stage(Conv2d<S>::make(64, 64, 3, 1, 1, init), 64));
    m.enc.push_back(stage(Conv2d<S>::make(64, 64, 3, 1, 1, init), 64));
    const Index feat = m.feat_dim();
    m.fc_mu = Linear<S>::make(feat, h.latent, init);
    m.fc_logvar = Linear<S>::make(feat, h.latent, init);
    m.dec_fc = Linear<S>::make(h.latent + (em ? h.embed_dim : 0), feat, init);
    if (h.use_norm) m.dec_bn = BatchNorm<S>::make(64);
    m.dec.push_back(stage(Conv2d<S>::make(64, 64, 3, 1, 1, init), 64));
    m.dec.push_back(stage(Conv2d<S>::make(64, 64, 3, 1, 1, init), 64));
    m.dec.push_back(stage(ConvTranspose2d<S>::make(64, 32, 4, 2, 1, init), 32));
    m.dec.push_back(stage(ConvTranspose2d<S>::make(32, 16, 4, 2, 1, init), 16));
    m.dec_out = ConvTranspose2d<S>::make(16, h.channels, 4, 2, 1, init);
    if (em) m.embed = Embedding<S>::make(h.modes, h.embed_dim, init);
    if (mc) {
      std::uint64_t idx = 0;
      for (std::size_t i = 0; i < m.enc.size(); ++i) {
        m.enc[i].set_book(draw_book(h, seed, idx++,
                                    static_cast<int>(m.enc[i].out_channels()),
                                    "enc." + std::to_string(i)));
      }
      m.latent_book =
          draw_book(h, seed, idx++, static_cast<int>(h.latent), "latent");
      m.dec_entry_book = draw_book(h, seed, idx++, 64, "dec.entry");
      for (std::size_t i = 0; i < m.dec.size(); ++i) {
        m.dec[i].set_book(draw_book(h, seed, idx++,
                                    static_cast<int>(m.dec[i].out_channels()),
                                    "dec." + std::to_string(i)));
      }
    }
    return m;
  }

  // weights: optional (N, C) simplex rows for the embedding path; defaults to
  // the selector's one-hot rows.
  Tensor<S> embed_input(const ModalitySelector& h,
                        const Tensor<S>* weights) const {
    Tensor<S> w = weights ? *weights : one_hot_tensor<S>(h);
    return embed->forward(w);
  }

  std::pair<Tensor<S>, Tensor<S>> encode(const Tensor<S>& x,
                                         const ModalitySelector& h,
                                         bool training,
                                         const Tensor<S>* weights = nullptr) {
    const ModalitySelector* sel = hyper.cond == Conditioning::Mc ? &h : nullptr;
    Tensor<S> t = x;
    if (hyper.cond == Conditioning::Embed) {
      Tensor<S> e = embed_input(h, weights);
      t = concat<S>({t, tile_spatial(e, x.dim(2), x.dim(3))}, 1);
    }
    for (auto& l : enc) t = l.forward(t, sel, training);
    t = reshape(t, {x.dim(0), feat_dim()});
    return {fc_mu.forward(t), fc_logvar.forward(t)};
  }

  Tensor<S> decode(const Tensor<S>& z, const ModalitySelector& h, bool training,
                   const Tensor<S>* weights = nullptr) {
    const ModalitySelector* sel = hyper.cond == Conditioning::Mc ? &h : nullptr;
    Tensor<S> t = z;
    if (hyper.cond == Conditioning::Mc) t = latent_mask(latent_book, h, t);
    if (hyper.cond == Conditioning::Embed) {
      t = concat<S>({t, embed_input(h, weights)}, 1);
    }
    t = dec_fc.forward(t);
    const Index s0 = base_spatial();
    t = reshape(t, {z.dim(0), 64, s0, s0});
    if (dec_bn) t = dec_bn->forward(t, training);
    t = relu(t);
    if (dec_entry_book) {
      Tensor<S> m = mask_tensor<S>(*dec_entry_book, h);
      t = mul(t, reshape(m, {z.dim(0), 64, 1, 1}));
    }
    for (auto& l : dec) t = l.forward(t, sel, training);
    return sigmoid(dec_out.forward(t));
  }

  ParamRefs<S> params() const {
    ParamRefs<S> r;
    for (std::size_t i = 0; i < enc.size(); ++i) {
      enc[i].collect("enc." + std::to_string(i), r);
    }
    fc_mu.collect("fc_mu", r);
    fc_logvar.collect("fc_logvar", r);
    dec_fc.collect("dec.fc", r);
    if (dec_bn) dec_bn->collect("dec.bn", r);
    for (std::size_t i = 0; i < dec.size(); ++i) {
      dec[i].collect("dec." + std::to_string(i), r);
    }
    dec_out.collect("dec.out", r);
    if (embed) embed->collect("embed", r);
    return r;
  }

  std::vector<std::pair<std::string, Codebook*>> books() {
    std::vector<std::pair<std::string, Codebook*>> out;
    for (std::size_t i = 0; i < enc.size(); ++i) {
      enc[i].collect_books("enc." + std::to_string(i), out);
    }
    if (latent_book) out.emplace_back("latent", &*latent_book);
    if (dec_entry_book) out.emplace_back("dec.entry", &*dec_entry_book);
    for (std::size_t i = 0; i < dec.size(); ++i) {
      dec[i].collect_books("dec." + std::to_string(i), out);
    }
    return out;
  }
};

template <typename S>
struct VaeLossParts {
  Tensor<S> loss;
  double recon = 0.0;
  double kl = 0.0;
};

// ELBO pieces over a (possibly mixed-mode) batch: per-sample BCE plus KL,
// averaged over the batch, so each mode contributes in proportion to its
// share of the batch. The latent controller masks z after reparameterization.
template <typename S>
VaeLossParts<S> vae_loss(McVae<S>& model, const Tensor<S>& x,
                         const ModalitySelector& h, RngStream& stream,
                         const Tensor<S>* weights = nullptr) {
  const Index n = x.dim(0);
  auto [mu, logvar] = model.encode(x, h, true, weights);
  Tensor<S> eps = randn<S>(mu.shape(), stream);
  Tensor<S> z = add(mu, mul(exp(mul_scalar(logvar, S(0.5))), eps));
  Tensor<S> xhat = model.decode(z, h, true, weights);
  const Index dims = xhat.size() / n;
  Tensor<S> recon =
      bce_loss(reshape(xhat, {n, dims}), reshape(x.detach(), {n, dims}));
  Tensor<S> kl = kl_diag_gaussian(mu, logvar);
  VaeLossParts<S> parts;
  parts.recon = static_cast<double>(recon.item());
  parts.kl = static_cast<double>(kl.item());
  parts.loss = add(recon, kl);
  return parts;
}

// Decodes N(0, I) draws through the requested modes' subnetworks; batch rows
// are ordered mode-major (all samples of modes[0] first).
template <typename S>
Tensor<S> vae_sample(McVae<S>& model, const std::vector<Index>& modes,
                     Index n_per_mode, RngStream& stream,
                     const Tensor<S>* weights = nullptr) {
  NoGradGuard ng;
  std::vector<Index> labels;
  for (Index m : modes) {
    if (m < 0 || m >= model.hyper.modes) {
      throw ValueError("sample: unknown mode id " + std::to_string(m));
    }
    for (Index i = 0; i < n_per_mode; ++i) labels.push_back(m);
  }
  ModalitySelector h(labels, model.hyper.modes);
  Tensor<S> z = randn<S>({h.batch_size(), model.hyper.latent}, stream);
  return model.decode(z, h, false, weights);
}

}  // namespace mcgen

#endif  // MCGEN_MODELS_VAE_HPP
