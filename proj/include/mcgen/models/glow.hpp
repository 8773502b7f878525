#ifndef MCGEN_MODELS_GLOW_HPP
#define MCGEN_MODELS_GLOW_HPP

#include "mcgen/losses.hpp"
#include "mcgen/models/common.hpp"

namespace mcgen {

// Affine coupling over channel halves. Controllers live only inside the s,t
// network; the last conv starts at zero so the layer opens as the identity.
// Non-finite scales (exp overflow) are signaled, never clipped.
template <typename S>
struct McCoupling {
  bool swap_halves = false;
  McWrappedLayer<S> nn1;  // 3x3, half -> hidden
  McWrappedLayer<S> nn2;  // 1x1, hidden -> hidden
  Conv2d<S> nn3;          // 3x3, hidden -> channels (zero-init)
  Index channels = 0;

  static McCoupling make(const ModelHyper& h, Index channels, bool swap,
                         std::uint64_t seed, std::uint64_t book_base,
                         RngStream& init, const std::string& id) {
    if (channels % 2 != 0) {
      throw ShapeError("coupling: channel count must be even");
    }
    McCoupling c;
    c.swap_halves = swap;
    c.channels = channels;
    const Index half = channels / 2;
    const Index hid = h.glow_hidden;
    c.nn1.inner = Conv2d<S>::make(half, hid, 3, 1, 1, init);
    c.nn1.act = Act::Relu;
    c.nn2.inner = Conv2d<S>::make(hid, hid, 1, 1, 0, init);
    c.nn2.act = Act::Relu;
    c.nn3 = Conv2d<S>::make(hid, channels, 3, 1, 1, init);
    for (auto& v : c.nn3.weight.mutable_data()) v = S(0);
    if (h.cond == Conditioning::Mc) {
      c.nn1.set_book(draw_book(h, seed, book_base, static_cast<int>(hid),
                               id + ".nn1"));
      c.nn2.set_book(draw_book(h, seed, book_base + 1, static_cast<int>(hid),
                               id + ".nn2"));
    }
    return c;
  }

  // s, t from the untouched half.
  std::pair<Tensor<S>, Tensor<S>> scale_shift(const Tensor<S>& x1,
                                              const ModalitySelector* h,
                                              bool training) {
    Tensor<S> t = nn1.forward(x1, h, training);
    t = nn2.forward(t, h, training);
    t = nn3.forward(t);
    Tensor<S> s = slice(t, 1, 0, channels / 2);
    Tensor<S> sh = slice(t, 1, channels / 2, channels / 2);
    if (!all_finite(s) || !all_finite(sh)) {
      throw ValueError("coupling: non-finite scale/shift (overflow)");
    }
    return {s, sh};
  }

  std::pair<Tensor<S>, Tensor<S>> split(const Tensor<S>& x) const {
    const Index half = channels / 2;
    Tensor<S> a = slice(x, 1, 0, half);
    Tensor<S> b = slice(x, 1, half, half);
    if (swap_halves) std::swap(a, b);
    return {a, b};
  }
  Tensor<S> join(const Tensor<S>& a, const Tensor<S>& b) const {
    return swap_halves ? concat<S>({b, a}, 1) : concat<S>({a, b}, 1);
  }

  // y1 = x1, y2 = x2 ⊙ exp(s) + t; log_det (N) = sum of s per sample.
  std::pair<Tensor<S>, Tensor<S>> forward(const Tensor<S>& x,
                                          const ModalitySelector* h,
                                          bool training) {
    auto [x1, x2] = split(x);
    auto [s, t] = scale_shift(x1, h, training);
    Tensor<S> es = exp(s);
    if (!all_finite(es)) {
      throw ValueError("coupling: non-finite scale (overflow in exp)");
    }
    Tensor<S> y2 = add(mul(x2, es), t);
    const Index n = x.dim(0);
    Tensor<S> log_det = sum(reshape(s, {n, s.size() / n}), 1);
    return {join(x1, y2), log_det};
  }

  // x2 = (y2 - t) ⊙ exp(-s); log_det (N) = -sum of s per sample.
  std::pair<Tensor<S>, Tensor<S>> inverse(const Tensor<S>& y,
                                          const ModalitySelector* h,
                                          bool training) {
    auto [y1, y2] = split(y);
    auto [s, t] = scale_shift(y1, h, training);
    Tensor<S> ens = exp(neg(s));
    if (!all_finite(ens)) {
      throw ValueError("coupling: non-finite scale (overflow in exp)");
    }
    Tensor<S> x2 = mul(sub(y2, t), ens);
    const Index n = y.dim(0);
    Tensor<S> log_det = neg(sum(reshape(s, {n, s.size() / n}), 1));
    return {join(y1, x2), log_det};
  }

  void collect(const std::string& p, ParamRefs<S>& r) const {
    nn1.collect(p + ".nn1", r);
    nn2.collect(p + ".nn2", r);
    nn3.collect(p + ".nn3", r);
  }
  void collect_books(const std::string& p,
                     std::vector<std::pair<std::string, Codebook*>>& out) {
    nn1.collect_books(p + ".nn1", out);
    nn2.collect_books(p + ".nn2", out);
  }
};

// Coupling stack over space-to-depth squeezed images with a standard normal
// base; exact log-likelihood via the inverse chain.
template <typename S>
struct McGlow {
  ModelHyper hyper;
  std::vector<McCoupling<S>> couplings;

  static McGlow build(const ModelHyper& h, std::uint64_t seed) {
    if (h.image % 2 != 0) {
      throw ConfigError("mcglow: image side must be even for squeezing");
    }
    McGlow m;
    m.hyper = h;
    auto init = init_stream(seed);
    const Index ch = 4 * h.channels;
    for (int i = 0; i < h.couplings; ++i) {
      m.couplings.push_back(McCoupling<S>::make(
          h, ch, i % 2 == 1, seed, 400 + 2 * static_cast<std::uint64_t>(i),
          init, "coupling." + std::to_string(i)));
    }
    return m;
  }

  // Data -> latent; returns (z, per-sample log |det dz/dx|).
  std::pair<Tensor<S>, Tensor<S>> inverse(const Tensor<S>& x,
                                          const ModalitySelector& h,
                                          bool training) {
    const ModalitySelector* sel =
        hyper.cond == Conditioning::Mc ? &h : nullptr;
    Tensor<S> t = space_to_depth2(x);
    Tensor<S> total;
    for (std::size_t i = couplings.size(); i-- > 0;) {
      auto [next, ld] = couplings[i].inverse(t, sel, training);
      t = next;
      total = total.defined() ? add(total, ld) : ld;
    }
    return {t, total};
  }

  // Latent -> data.
  Tensor<S> forward(const Tensor<S>& z, const ModalitySelector& h,
                    bool training) {
    const ModalitySelector* sel =
        hyper.cond == Conditioning::Mc ? &h : nullptr;
    Tensor<S> t = z;
    for (auto& c : couplings) {
      auto [next, ld] = c.forward(t, sel, training);
      t = next;
    }
    return depth_to_space2(t);
  }

  // Per-sample log p(x) = log N(z; 0, I) + log |det dz/dx|.
  Tensor<S> log_prob(const Tensor<S>& x, const ModalitySelector& h,
                     bool training) {
    auto [z, log_det] = inverse(x, h, training);
    return add(standard_normal_logp(z), log_det);
  }

  Tensor<S> sample(const std::vector<Index>& modes, Index n_per_mode,
                   RngStream& stream) {
    NoGradGuard ng;
    std::vector<Index> lab;
    for (Index m : modes) {
      if (m < 0 || m >= hyper.modes) {
        throw ValueError("sample: unknown mode id " + std::to_string(m));
      }
      for (Index i = 0; i < n_per_mode; ++i) lab.push_back(m);
    }
    ModalitySelector h(lab, hyper.modes);
    const Index side = hyper.image / 2;
    Tensor<S> z = randn<S>({h.batch_size(), 4 * hyper.channels, side, side}, stream);
    Tensor<S> x = forward(z, h, false);
    return clamp(x, S(0), S(1));
  }

  ParamRefs<S> params() const {
    ParamRefs<S> r;
    for (std::size_t i = 0; i < couplings.size(); ++i) {
      couplings[i].collect("coupling." + std::to_string(i), r);
    }
    return r;
  }
  std::vector<std::pair<std::string, Codebook*>> books() {
    std::vector<std::pair<std::string, Codebook*>> out;
    for (std::size_t i = 0; i < couplings.size(); ++i) {
      couplings[i].collect_books("coupling." + std::to_string(i), out);
    }
    return out;
  }
};

}  // namespace mcgen

#endif  // MCGEN_MODELS_GLOW_HPP
