#ifndef MCGEN_MODELS_COMMON_HPP
#define MCGEN_MODELS_COMMON_HPP

#include <string>
#include <vector>

#include "mcgen/mc.hpp"

namespace mcgen {

// How class information enters a model: masked subnetworks, nothing (the
// unconditional backbone), or trainable embeddings concatenated at the first
// layer.
enum class Conditioning { Mc, None, Embed };

inline std::string conditioning_name(Conditioning c) {
  switch (c) {
    case Conditioning::Mc:
      return "mc";
    case Conditioning::None:
      return "none";
    case Conditioning::Embed:
      return "embed";
  }
  return "?";
}

inline Conditioning conditioning_from(const std::string& s) {
  if (s == "mc") return Conditioning::Mc;
  if (s == "none") return Conditioning::None;
  if (s == "embed") return Conditioning::Embed;
  throw ConfigError("unknown conditioning '" + s + "'");
}

struct ModelHyper {
  int modes = 8;
  int channels = 1;   // image channels
  Index image = 16;   // square side; divisible by 8 for the conv stacks
  Index latent = 32;
  int embed_dim = 32;
  Conditioning cond = Conditioning::Mc;
  bool use_norm = true;    // batch norm in VAE stacks (off only in tests)
  bool mc_on_g = true;     // GAN ablations
  bool mc_on_d = true;
  // Uniform codebooks by default; all-ones books make every MC model expose
  // its backbone while keeping the mask op in the graph.
  bool ones_codebooks = false;
  Index levels = 256;      // PixelCNN output levels per sub-pixel
  int couplings = 4;       // Glow stack depth
  Index glow_hidden = 16;
  Index pcnn_hidden = 32;
};

// Seed scheme: every consumer derives its own substream so draws never shift
// between conditioning variants (parameter init must align between an MC
// model and its backbone for the reduction property).
inline RngStream init_stream(std::uint64_t seed) {
  return RngStream::derive(seed, "init");
}
inline RngStream codebook_stream(std::uint64_t seed, std::uint64_t layer) {
  return RngStream::derive(seed, "codebook", layer);
}

// Draws the book for MC layer number `idx` (width = that layer's output
// channels); the ones mode installs the diagnostic all-ones book instead.
inline Codebook draw_book(const ModelHyper& h, std::uint64_t seed,
                          std::uint64_t idx, int width,
                          const std::string& layer_id) {
  if (h.ones_codebooks) {
    return Codebook::all_ones(h.modes, width, layer_id);
  }
  auto stream = codebook_stream(seed, idx);
  return sample_codebook(h.modes, width, stream, layer_id, seed);
}

// Trainable mode embeddings (C, E) combined by one-hot or simplex weights.
template <typename S>
struct Embedding {
  Tensor<S> table;  // (C, E)

  static Embedding make(int modes, int dim, RngStream& stream) {
    Embedding e;
    e.table = randn<S>({modes, dim}, stream, 0.0, kInitStd);
    e.table.set_requires_grad(true);
    return e;
  }
  int modes() const { return static_cast<int>(table.dim(0)); }
  Index dim() const { return table.dim(1); }

  // weights: (N, C) rows on the simplex (one-hot during training).
  Tensor<S> forward(const Tensor<S>& weights) const {
    if (weights.rank() != 2 || weights.dim(1) != table.dim(0)) {
      throw ShapeError("embedding: weights " + shape_str(weights.shape()) +
                       " do not match table " + shape_str(table.shape()));
    }
    for (S v : weights.data()) {
      if (v < S(0)) throw ValueError("embedding: negative mode weight");
    }
    return matmul(weights, table);
  }
  void collect(const std::string& prefix, ParamRefs<S>& r) const {
    r.add_param(prefix + ".table", table);
  }
};

template <typename S>
Tensor<S> one_hot_tensor(const ModalitySelector& h) {
  auto oh = h.one_hot();
  std::vector<S> vals(oh.begin(), oh.end());
  return Tensor<S>::from_data({h.batch_size(), h.num_modes()}, std::move(vals));
}

// (N, E) -> (N, E, H, W) spatial tiling for channel concatenation.
template <typename S>
Tensor<S> tile_spatial(const Tensor<S>& e, Index hgt, Index wdt) {
  auto r = reshape(e, {e.dim(0), e.dim(1), 1, 1});
  auto ones = Tensor<S>::ones({e.dim(0), e.dim(1), hgt, wdt});
  return mul(r, ones);
}

// Selected rows as (N, latent) mask values; identity when book is absent.
template <typename S>
Tensor<S> latent_mask(const std::optional<Codebook>& book,
                      const ModalitySelector& h, const Tensor<S>& z) {
  if (!book) return z;
  Tensor<S> m = mask_tensor<S>(*book, h);
  return mul(z, m);
}

}  // namespace mcgen

#endif  // MCGEN_MODELS_COMMON_HPP
