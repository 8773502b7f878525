#ifndef MCGEN_MODELS_PIXELCNN_HPP
#define MCGEN_MODELS_PIXELCNN_HPP

#include "mcgen/losses.hpp"
#include "mcgen/models/common.hpp"

namespace mcgen {

// Raster-order causal convolution. Type A zeroes the center tap (first layer,
// no self-dependence); type B keeps it. The mask is a constant factor on the
// weight, so masked taps stay zero under training as well.
template <typename S>
struct MaskedConv2d {
  Conv2d<S> conv;
  Tensor<S> mask;  // same shape as conv.weight, entries 0/1
  char type = 'B';

  static MaskedConv2d make(Index in, Index out, Index k, char type,
                           RngStream& stream) {
    if (type != 'A' && type != 'B') {
      throw ValueError("masked conv: type must be 'A' or 'B'");
    }
    if (k % 2 == 0) {
      throw ValueError("masked conv: non-causal kernel configuration (even size)");
    }
    MaskedConv2d m;
    m.conv = Conv2d<S>::make(in, out, k, 1, k / 2, stream);
    m.type = type;
    const Index mid = k / 2;
    std::vector<S> mv(static_cast<std::size_t>(out * in * k * k), S(0));
    for (Index o = 0; o < out; ++o)
      for (Index c = 0; c < in; ++c)
        for (Index y = 0; y < k; ++y)
          for (Index x = 0; x < k; ++x) {
            const bool keep = y < mid || (y == mid && x < mid) ||
                              (y == mid && x == mid && type == 'B');
            if (keep)
              mv[static_cast<std::size_t>(((o * in + c) * k + y) * k + x)] = S(1);
          }
    m.mask = Tensor<S>::from_data({out, in, k, k}, std::move(mv));
    return m;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return conv2d(x, mul(conv.weight, mask), conv.bias, 1, conv.pad);
  }
  void collect(const std::string& p, ParamRefs<S>& r) const {
    conv.collect(p, r);
  }
};

// Gated activation unit with the controller on the tanh branch only:
//   y = {tanh(W_f * x) ⊙ (h x e)} ⊙ sigmoid(W_g * x)
// The 1x1 residual projection stays unmasked.
template <typename S>
struct McGatedBlock {
  MaskedConv2d<S> f_conv, g_conv;
  std::optional<Codebook> book;
  Conv2d<S> res_proj;

  static McGatedBlock make(Index channels, Index k, RngStream& stream) {
    McGatedBlock b;
    b.f_conv = MaskedConv2d<S>::make(channels, channels, k, 'B', stream);
    b.g_conv = MaskedConv2d<S>::make(channels, channels, k, 'B', stream);
    b.res_proj = Conv2d<S>::make(channels, channels, 1, 1, 0, stream);
    return b;
  }

  Tensor<S> gated(const Tensor<S>& x, const ModalitySelector* h,
                  bool /*training*/) const {
    Tensor<S> t = tanh(f_conv.forward(x));
    if (book) {
      if (!h) throw ValueError("gated block: modality selector required");
      Tensor<S> m = mask_tensor<S>(*book, *h);
      t = mul(t, reshape(m, {x.dim(0), t.dim(1), 1, 1}));
    }
    return mul(t, sigmoid(g_conv.forward(x)));
  }

  Tensor<S> forward(const Tensor<S>& x, const ModalitySelector* h,
                    bool training) const {
    return add(x, res_proj.forward(gated(x, h, training)));
  }

  void collect(const std::string& p, ParamRefs<S>& r) const {
    f_conv.collect(p + ".f", r);
    g_conv.collect(p + ".g", r);
    res_proj.collect(p + ".res", r);
  }
  void collect_books(const std::string& p,
                     std::vector<std::pair<std::string, Codebook*>>& out) {
    if (book) out.emplace_back(p, &*book);
  }
};

// Small autoregressive stack: type-A entry conv, gated blocks, 1x1 head to
// per-sub-pixel level logits (N, levels, H, W); grayscale only at desk scale.
template <typename S>
struct McPixelCnn {
  ModelHyper hyper;
  MaskedConv2d<S> entry;
  std::vector<McGatedBlock<S>> blocks;
  Conv2d<S> head1, head2;

  static McPixelCnn build(const ModelHyper& h, std::uint64_t seed) {
    if (h.channels != 1) {
      throw ConfigError("mcpixelcnn: grayscale images only");
    }
    McPixelCnn m;
    m.hyper = h;
    auto init = init_stream(seed);
    const Index ch = h.pcnn_hidden;
    m.entry = MaskedConv2d<S>::make(1, ch, 5, 'A', init);
    for (int i = 0; i < 3; ++i) {
      m.blocks.push_back(McGatedBlock<S>::make(ch, 3, init));
    }
    m.head1 = Conv2d<S>::make(ch, ch, 1, 1, 0, init);
    m.head2 = Conv2d<S>::make(ch, h.levels, 1, 1, 0, init);
    if (h.cond == Conditioning::Mc) {
      for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        m.blocks[i].book = draw_book(h, seed, 300 + i, static_cast<int>(ch),
                                     "block." + std::to_string(i));
      }
    }
    return m;
  }

  Tensor<S> logits(const Tensor<S>& x, const ModalitySelector& h,
                   bool training) const {
    const ModalitySelector* sel =
        hyper.cond == Conditioning::Mc ? &h : nullptr;
    Tensor<S> t = entry.forward(x);
    for (const auto& b : blocks) t = b.forward(t, sel, training);
    t = relu(t);
    t = relu(head1.forward(t));
    return head2.forward(t);
  }

  // Mean negative log likelihood (nats per sub-pixel) of levels-quantized
  // pixels under the autoregressive factorization.
  Tensor<S> nll_nats(const Tensor<S>& x, const ModalitySelector& h,
                     bool training) const {
    Tensor<S> lg = logits(x, h, training);
    const Index n = x.dim(0), hh = x.dim(2), ww = x.dim(3);
    const Index L = hyper.levels;
    // (N, L, H, W) -> rows of (pixel, level) pairs.
    std::vector<Index> labels;
    labels.reserve(static_cast<std::size_t>(n * hh * ww));
    auto xv = x.data();
    for (Index i = 0; i < n; ++i) {
      for (Index p = 0; p < hh * ww; ++p) {
        const double v = static_cast<double>(
            xv[static_cast<std::size_t>((i * 1 * hh * ww) + p)]);
        Index level = static_cast<Index>(std::floor(v * static_cast<double>(L - 1) + 0.5));
        level = std::min<Index>(std::max<Index>(level, 0), L - 1);
        labels.push_back(level);
      }
    }
    // Reorder logits to (N*H*W, L).
    std::vector<S> rows(static_cast<std::size_t>(n * hh * ww * L));
    auto lv = lg.data();
    for (Index i = 0; i < n; ++i)
      for (Index l = 0; l < L; ++l)
        for (Index p = 0; p < hh * ww; ++p)
          rows[static_cast<std::size_t>((i * hh * ww + p) * L + l)] =
              lv[static_cast<std::size_t>(((i * L + l) * hh * ww) + p)];
    auto ln = lg.node();
    Tensor<S> flat = Tensor<S>::make_op(
        {n * hh * ww, L}, std::move(rows), "pcnn_rows", {lg},
        [ln, n, hh, ww, L](const std::vector<S>& g) {
          ln->ensure_grad();
          for (Index i = 0; i < n; ++i)
            for (Index l = 0; l < L; ++l)
              for (Index p = 0; p < hh * ww; ++p)
                ln->grad[static_cast<std::size_t>(((i * L + l) * hh * ww) + p)] +=
                    g[static_cast<std::size_t>((i * hh * ww + p) * L + l)];
        });
    return cross_entropy_logits(flat, labels);
  }

  // Raster-order ancestral sampling.
  Tensor<S> sample(const std::vector<Index>& modes, Index n_per_mode,
                   RngStream& stream) const {
    NoGradGuard ng;
    std::vector<Index> lab;
    for (Index m : modes) {
      if (m < 0 || m >= hyper.modes) {
        throw ValueError("sample: unknown mode id " + std::to_string(m));
      }
      for (Index i = 0; i < n_per_mode; ++i) lab.push_back(m);
    }
    ModalitySelector h(lab, hyper.modes);
    const Index n = h.batch_size(), side = hyper.image;
    Tensor<S> img = Tensor<S>::zeros({n, 1, side, side});
    for (Index y = 0; y < side; ++y) {
      for (Index x = 0; x < side; ++x) {
        Tensor<S> lg = logits(img, h, false);
        auto lv = lg.data();
        for (Index i = 0; i < n; ++i) {
          std::vector<double> probs(static_cast<std::size_t>(hyper.levels));
          double mx = -1e300;
          for (Index l = 0; l < hyper.levels; ++l) {
            mx = std::max(mx, static_cast<double>(lv[static_cast<std::size_t>(
                                  ((i * hyper.levels + l) * side + y) * side + x)]));
          }
          double z = 0.0;
          for (Index l = 0; l < hyper.levels; ++l) {
            const double e = std::exp(
                static_cast<double>(lv[static_cast<std::size_t>(
                    ((i * hyper.levels + l) * side + y) * side + x)]) -
                mx);
            probs[static_cast<std::size_t>(l)] = e;
            z += e;
          }
          for (auto& p : probs) p /= z;
          const Index level = stream.categorical(probs);
          img.mutable_data()[static_cast<std::size_t>((i * side + y) * side + x)] =
              static_cast<S>(static_cast<double>(level) /
                             static_cast<double>(hyper.levels - 1));
        }
      }
    }
    return img;
  }

  ParamRefs<S> params() const {
    ParamRefs<S> r;
    entry.collect("entry", r);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].collect("block." + std::to_string(i), r);
    }
    head1.collect("head1", r);
    head2.collect("head2", r);
    return r;
  }
  std::vector<std::pair<std::string, Codebook*>> books() {
    std::vector<std::pair<std::string, Codebook*>> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].collect_books("block." + std::to_string(i), out);
    }
    return out;
  }
};

}  // namespace mcgen

#endif  // MCGEN_MODELS_PIXELCNN_HPP
