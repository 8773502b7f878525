#ifndef MCGEN_MC_HPP
#define MCGEN_MC_HPP

#include <optional>
#include <string>
#include <variant>

#include "mcgen/bigint.hpp"
#include "mcgen/codebook.hpp"
#include "mcgen/nn.hpp"
#include "mcgen/spectral.hpp"

namespace mcgen {

enum class Act { None, Relu, Tanh, Sigmoid };

template <typename S>
Tensor<S> activate(Act a, const Tensor<S>& x) {
  switch (a) {
    case Act::None:
      return x;
    case Act::Relu:
      return relu(x);
    case Act::Tanh:
      return tanh(x);
    case Act::Sigmoid:
      return sigmoid(x);
  }
  throw ValueError("activate: unknown activation");
}

// A parametric layer with its post-activation representation masked by the
// selected codeword rows: mask order is fixed as op -> norm -> activation ->
// mask, so batch-norm statistics come from unmasked pre-activations and the
// mask also zeros sigmoid outputs. A layer without a codebook is the
// unconditional backbone layer.
template <typename S>
struct McWrappedLayer {
  std::variant<Linear<S>, Conv2d<S>, ConvTranspose2d<S>> inner;
  std::optional<BatchNorm<S>> norm;
  Act act = Act::None;
  std::optional<Codebook> book;
  std::optional<SpectralState<S>> sn;
  int sn_iters = 1;

  Index out_channels() const {
    return std::visit([](const auto& l) { return l.out_channels(); }, inner);
  }
  Index in_channels() const {
    return std::visit([](const auto& l) { return l.in_channels(); }, inner);
  }

  const Tensor<S>& weight() const {
    return std::visit([](const auto& l) -> const Tensor<S>& { return l.weight; },
                      inner);
  }

  void set_book(Codebook b) {
    if (b.width() != out_channels()) {
      throw ShapeError("mc layer: codebook width " + std::to_string(b.width()) +
                       " does not match " + std::to_string(out_channels()) +
                       " output channels");
    }
    book = std::move(b);
  }

  Tensor<S> forward(const Tensor<S>& x, const ModalitySelector* h,
                    bool training) {
    Tensor<S> y;
    if (sn) {
      // Normalize the (out x rest) flattening of the weight, then run the op
      // with the normalized tensor.
      y = std::visit(
          [&](auto& l) {
            using L = std::decay_t<decltype(l)>;
            const Tensor<S>& w = l.weight;
            Tensor<S> w2 = reshape(w, {w.dim(0), w.size() / w.dim(0)});
            Tensor<S> wn = spectral_normalize(w2, sn_iters, *sn, training);
            Tensor<S> wr = reshape(wn, w.shape());
            if constexpr (std::is_same_v<L, Linear<S>>) {
              return linear(x, wr, l.bias);
            } else if constexpr (std::is_same_v<L, Conv2d<S>>) {
              return conv2d(x, wr, l.bias, l.stride, l.pad);
            } else {
              return conv_transpose2d(x, wr, l.bias, l.stride, l.pad);
            }
          },
          inner);
    } else {
      y = std::visit([&](auto& l) { return l.forward(x); }, inner);
    }
    if (norm) y = norm->forward(y, training);
    y = activate(act, y);
    if (book) {
      if (h == nullptr) {
        throw ValueError("mc layer: modality selector required");
      }
      if (book->width() != y.dim(1)) {
        throw ShapeError("mc layer: codebook width " +
                         std::to_string(book->width()) +
                         " does not match output channels " +
                         std::to_string(y.dim(1)));
      }
      Tensor<S> mask = mask_tensor<S>(*book, *h);
      if (y.rank() == 4) mask = reshape(mask, {y.dim(0), y.dim(1), 1, 1});
      y = mul(y, mask);
    }
    return y;
  }

  void collect(const std::string& prefix, ParamRefs<S>& r) const {
    std::visit([&](const auto& l) { l.collect(prefix, r); }, inner);
    if (norm) norm->collect(prefix + ".bn", r);
    if (sn) r.add_buffer(prefix + ".sn_u", sn->u);
  }
  void collect_books(const std::string& prefix,
                     std::vector<std::pair<std::string, Codebook*>>& out) {
    if (book) out.emplace_back(prefix, &*book);
  }
};

// The spec-level entry point; identical to McWrappedLayer::forward.
template <typename S>
Tensor<S> mc_forward(McWrappedLayer<S>& layer, const Tensor<S>& x,
                     const ModalitySelector& h, bool training = true) {
  return layer.forward(x, &h, training);
}

template <typename S>
struct EffectiveSubnetwork {
  Tensor<S> weight;  // W masked to the mode's effective computation path
  double density;    // exact nonzero fraction of the mask
};

// Effective weight of mode c: W ⊙ outer(e_c, prev_row) with e_c over output
// channels (broadcast across kernel positions for conv weights). Without a
// previous controller the mask is e_c broadcast over all input slots.
template <typename S>
EffectiveSubnetwork<S> effective_subnetwork(
    const McWrappedLayer<S>& layer, int mode,
    const Codeword* prev_row = nullptr) {
  if (!layer.book) {
    throw ValueError("effective_subnetwork: layer has no codebook");
  }
  const Codeword& e = layer.book->row(mode);  // throws on bad mode
  const Tensor<S>& w = layer.weight();
  const bool transposed = std::holds_alternative<ConvTranspose2d<S>>(layer.inner);
  // Axis of the output channels inside the weight tensor.
  const int out_axis = transposed ? 1 : 0;
  const int in_axis = transposed ? 0 : 1;
  const Index out_ch = w.dim(out_axis);
  const Index in_ch = w.dim(in_axis);
  if (static_cast<Index>(e.size()) != out_ch) {
    throw ShapeError("effective_subnetwork: codeword width mismatch");
  }
  if (prev_row && static_cast<Index>(prev_row->size()) != in_ch) {
    throw ShapeError("effective_subnetwork: previous codeword has " +
                     std::to_string(prev_row->size()) + " bits, layer has " +
                     std::to_string(in_ch) + " input channels");
  }
  std::vector<S> masked(w.data().begin(), w.data().end());
  Index kernel = 1;
  for (int i = 2; i < w.rank(); ++i) kernel *= w.dim(i);
  const Index d0 = w.dim(0), d1 = w.dim(1);
  double ones_out = 0.0, ones_in = 0.0;
  for (auto b : e) ones_out += b;
  if (prev_row) {
    for (auto b : *prev_row) ones_in += b;
  } else {
    ones_in = static_cast<double>(in_ch);
  }
  for (Index i = 0; i < d0; ++i) {
    for (Index j = 0; j < d1; ++j) {
      const Index oc = transposed ? j : i;
      const Index icp = transposed ? i : j;
      const bool keep =
          e[static_cast<std::size_t>(oc)] &&
          (!prev_row || (*prev_row)[static_cast<std::size_t>(icp)]);
      if (!keep) {
        S* base = masked.data() + (i * d1 + j) * kernel;
        std::fill(base, base + kernel, S(0));
      }
    }
  }
  const double density = (ones_out / static_cast<double>(out_ch)) *
                         (ones_in / static_cast<double>(in_ch));
  return {Tensor<S>::from_data(w.shape(), std::move(masked)), density};
}

// Exact decimal count of distinct subnetworks a width-D controller indexes.
inline std::string count_subnetworks(int width) {
  if (width < 1) throw ValueError("count_subnetworks: width must be >= 1");
  return pow2_decimal(width);
}

}  // namespace mcgen

#endif  // MCGEN_MC_HPP
