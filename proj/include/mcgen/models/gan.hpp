#ifndef MCGEN_MODELS_GAN_HPP
#define MCGEN_MODELS_GAN_HPP

#include "mcgen/losses.hpp"
#include "mcgen/models/common.hpp"

namespace mcgen {

// Generator: latent -> (128, M/8, M/8) map, three upsample stages of two
// masked 3x3 convs each, plain tanh head. Controllers mask channels after
// each conv's BN+ReLU.
template <typename S>
struct GanGenerator {
  ModelHyper hyper;
  Linear<S> fc;
  std::optional<BatchNorm<S>> fc_bn;
  std::optional<Codebook> fc_book;
  std::vector<McWrappedLayer<S>> stages;  // 6 convs, upsample before 0, 2, 4
  BatchNorm<S> head_bn;
  Conv2d<S> head_conv;
  std::optional<Embedding<S>> embed;

  Index base_spatial() const { return hyper.image / 8; }

  static GanGenerator build(const ModelHyper& h, std::uint64_t seed,
                            RngStream& init) {
    GanGenerator g;
    g.hyper = h;
    const bool em = h.cond == Conditioning::Embed;
    const bool mc = h.cond == Conditioning::Mc && h.mc_on_g;
    const Index s0 = h.image / 8;
    g.fc = Linear<S>::make(h.latent + (em ? h.embed_dim : 0), 128 * s0 * s0, init);
    g.fc_bn = BatchNorm<S>::make(128);
    const Index chans[4] = {128, 64, 32, 16};
    for (int stg = 0; stg < 3; ++stg) {
      for (int j = 0; j < 2; ++j) {
        const Index in_c = j == 0 ? chans[stg] : chans[stg + 1];
        McWrappedLayer<S> l;
        l.inner = Conv2d<S>::make(in_c, chans[stg + 1], 3, 1, 1, init);
        l.norm = BatchNorm<S>::make(chans[stg + 1]);
        l.act = Act::Relu;
        g.stages.push_back(std::move(l));
      }
    }
    g.head_bn = BatchNorm<S>::make(16);
    g.head_conv = Conv2d<S>::make(16, h.channels, 3, 1, 1, init);
    if (em) g.embed = Embedding<S>::make(h.modes, h.embed_dim, init);
    if (mc) {
      std::uint64_t idx = 0;
      g.fc_book = draw_book(h, seed, 100 + idx++, 128, "g.fc");
      for (std::size_t i = 0; i < g.stages.size(); ++i) {
        g.stages[i].set_book(draw_book(h, seed, 100 + idx++,
                                       static_cast<int>(g.stages[i].out_channels()),
                                       "g." + std::to_string(i)));
      }
    }
    return g;
  }

  // z (N, latent) -> image (N, n_c, M, M) in [-1, 1].
  Tensor<S> forward(const Tensor<S>& z, const ModalitySelector& h, bool training,
                    const Tensor<S>* weights = nullptr) {
    const bool mc = hyper.cond == Conditioning::Mc && hyper.mc_on_g;
    const ModalitySelector* sel = mc ? &h : nullptr;
    Tensor<S> t = z;
    if (hyper.cond == Conditioning::Embed) {
      Tensor<S> w = weights ? *weights : one_hot_tensor<S>(h);
      t = concat<S>({t, embed->forward(w)}, 1);
    }
    t = fc.forward(t);
    const Index s0 = base_spatial();
    t = reshape(t, {z.dim(0), 128, s0, s0});
    t = fc_bn->forward(t, training);
    t = relu(t);
    if (fc_book) {
      Tensor<S> m = mask_tensor<S>(*fc_book, h);
      t = mul(t, reshape(m, {z.dim(0), 128, 1, 1}));
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (i % 2 == 0) t = nearest_upsample2x(t);
      t = stages[i].forward(t, sel, training);
    }
    t = head_bn.forward(t, training);
    t = relu(t);
    return tanh(head_conv.forward(t));
  }

  void collect(const std::string& p, ParamRefs<S>& r) const {
    fc.collect(p + ".fc", r);
    if (fc_bn) fc_bn->collect(p + ".fc_bn", r);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      stages[i].collect(p + "." + std::to_string(i), r);
    }
    head_bn.collect(p + ".head_bn", r);
    head_conv.collect(p + ".head_conv", r);
    if (embed) embed->collect(p + ".embed", r);
  }
  void collect_books(const std::string& p,
                     std::vector<std::pair<std::string, Codebook*>>& out) {
    if (fc_book) out.emplace_back(p + ".fc", &*fc_book);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      stages[i].collect_books(p + "." + std::to_string(i), out);
    }
  }
};

// Discriminator: four stages of two spectrally normalized masked 3x3 convs
// (average-pool downsampling after the first three), global sum pooling, and
// a spectrally normalized linear score head.
template <typename S>
struct GanDiscriminator {
  ModelHyper hyper;
  std::vector<McWrappedLayer<S>> stages;  // 8 convs; pool after 1, 3, 5
  Linear<S> head;
  SpectralState<S> head_sn;
  std::optional<Embedding<S>> embed;

  static GanDiscriminator build(const ModelHyper& h, std::uint64_t seed,
                                RngStream& init) {
    GanDiscriminator d;
    d.hyper = h;
    const bool em = h.cond == Conditioning::Embed;
    const bool mc = h.cond == Conditioning::Mc && h.mc_on_d;
    const Index in0 = h.channels + (em ? h.embed_dim : 0);
    const Index chans[5] = {in0, 16, 32, 64, 128};
    for (int stg = 0; stg < 4; ++stg) {
      for (int j = 0; j < 2; ++j) {
        const Index in_c = j == 0 ? chans[stg] : chans[stg + 1];
        McWrappedLayer<S> l;
        l.inner = Conv2d<S>::make(in_c, chans[stg + 1], 3, 1, 1, init);
        l.act = Act::Relu;
        l.sn = make_spectral_state<S>(chans[stg + 1], init);
        d.stages.push_back(std::move(l));
      }
    }
    d.head = Linear<S>::make(128, 1, init);
    d.head_sn = make_spectral_state<S>(1, init);
    if (em) d.embed = Embedding<S>::make(h.modes, h.embed_dim, init);
    if (mc) {
      std::uint64_t idx = 0;
      for (std::size_t i = 0; i < d.stages.size(); ++i) {
        d.stages[i].set_book(draw_book(h, seed, 200 + idx++,
                                       static_cast<int>(d.stages[i].out_channels()),
                                       "d." + std::to_string(i)));
      }
    }
    return d;
  }

  // x (N, n_c, M, M) in [-1, 1] -> scores (N, 1).
  Tensor<S> forward(const Tensor<S>& x, const ModalitySelector& h, bool training,
                    const Tensor<S>* weights = nullptr) {
    const bool mc = hyper.cond == Conditioning::Mc && hyper.mc_on_d;
    const ModalitySelector* sel = mc ? &h : nullptr;
    Tensor<S> t = x;
    if (hyper.cond == Conditioning::Embed) {
      Tensor<S> w = weights ? *weights : one_hot_tensor<S>(h);
      Tensor<S> e = embed->forward(w);
      t = concat<S>({t, tile_spatial(e, x.dim(2), x.dim(3))}, 1);
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
      t = stages[i].forward(t, sel, training);
      if (i == 1 || i == 3 || i == 5) t = avg_pool2d(t, 2, 2);
    }
    t = global_sum_pool(t);
    Tensor<S> w2 = head.weight;
    Tensor<S> wn = spectral_normalize(w2, 1, head_sn, training);
    return linear(t, wn, head.bias);
  }

  void collect(const std::string& p, ParamRefs<S>& r) const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      stages[i].collect(p + "." + std::to_string(i), r);
    }
    head.collect(p + ".head", r);
    r.add_buffer(p + ".head.sn_u", head_sn.u);
    if (embed) embed->collect(p + ".embed", r);
  }
  void collect_books(const std::string& p,
                     std::vector<std::pair<std::string, Codebook*>>& out) {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      stages[i].collect_books(p + "." + std::to_string(i), out);
    }
  }
};

template <typename S>
struct McGan {
  ModelHyper hyper;
  GanGenerator<S> g;
  GanDiscriminator<S> d;

  static McGan build(const ModelHyper& h, std::uint64_t seed) {
    if (h.image % 8 != 0 || h.image < 8) {
      throw ConfigError("mcgan: image size must be a positive multiple of 8");
    }
    McGan m;
    m.hyper = h;
    auto init = init_stream(seed);
    m.g = GanGenerator<S>::build(h, seed, init);
    m.d = GanDiscriminator<S>::build(h, seed, init);
    return m;
  }

  ParamRefs<S> params() const {
    ParamRefs<S> r;
    g.collect("g", r);
    d.collect("d", r);
    return r;
  }
  ParamRefs<S> g_params() const {
    ParamRefs<S> r;
    g.collect("g", r);
    return r;
  }
  ParamRefs<S> d_params() const {
    ParamRefs<S> r;
    d.collect("d", r);
    return r;
  }
  std::vector<std::pair<std::string, Codebook*>> books() {
    std::vector<std::pair<std::string, Codebook*>> out;
    g.collect_books("g", out);
    d.collect_books("d", out);
    return out;
  }
};

template <typename S>
struct GanLossParts {
  Tensor<S> d_loss;
  Tensor<S> g_loss;
};

// Hinge objectives. Real samples use their own labels; generated samples run
// the discriminator under the generator's requested modes (the per-mode
// subnetwork judging fakes of its own mode). Fresh z for each player.
template <typename S>
GanLossParts<S> gan_losses(McGan<S>& model, const Tensor<S>& x_real,
                           const ModalitySelector& h, RngStream& stream,
                           const Tensor<S>* weights = nullptr) {
  GanLossParts<S> parts;
  const Index n = x_real.dim(0);
  {
    Tensor<S> z = randn<S>({n, model.hyper.latent}, stream);
    Tensor<S> fake = model.g.forward(z, h, true, weights);
    Tensor<S> real_scores = model.d.forward(x_real, h, true, weights);
    Tensor<S> fake_scores = model.d.forward(fake.detach(), h, true, weights);
    parts.d_loss = hinge_d_loss(real_scores, fake_scores);
  }
  {
    Tensor<S> z = randn<S>({n, model.hyper.latent}, stream);
    Tensor<S> fake = model.g.forward(z, h, true, weights);
    Tensor<S> fake_scores = model.d.forward(fake, h, true, weights);
    parts.g_loss = hinge_g_loss(fake_scores);
  }
  return parts;
}

template <typename S>
Tensor<S> gan_sample(McGan<S>& model, const std::vector<Index>& modes,
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
  Tensor<S> img = model.g.forward(z, h, false, weights);
  // Map the tanh range back to [0, 1] image space.
  return mul_scalar(add_scalar(img, S(1)), S(0.5));
}

}  // namespace mcgen

#endif  // MCGEN_MODELS_GAN_HPP
