#ifndef MCGEN_NN_HPP
#define MCGEN_NN_HPP

#include <string>
#include <utility>
#include <vector>

#include "mcgen/kernels.hpp"
#include "mcgen/rng.hpp"
#include "mcgen/tensor.hpp"

namespace mcgen {

// Named handles to a model's trainable parameters and persistent buffers.
// Handles share storage with the owning module, so optimizers and checkpoint
// loading mutate the live model.
template <typename S>
struct ParamRefs {
  std::vector<std::pair<std::string, Tensor<S>>> params;
  std::vector<std::pair<std::string, Tensor<S>>> buffers;

  void add_param(const std::string& name, const Tensor<S>& t) {
    params.emplace_back(name, t);
  }
  void add_buffer(const std::string& name, const Tensor<S>& t) {
    buffers.emplace_back(name, t);
  }
  Index param_count() const {
    Index n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
  }
  void zero_grad() {
    for (auto& [name, t] : params) t.zero_grad();
  }
};

// Weights drawn from N(0, 0.02^2), biases zero.
inline constexpr double kInitStd = 0.02;

template <typename S>
struct Linear {
  Tensor<S> weight;  // (out, in)
  Tensor<S> bias;    // (out)

  static Linear make(Index in, Index out, RngStream& stream) {
    Linear l;
    l.weight = randn<S>({out, in}, stream, 0.0, kInitStd);
    l.weight.set_requires_grad(true);
    l.bias = Tensor<S>::zeros({out});
    l.bias.set_requires_grad(true);
    return l;
  }
  Index in_features() const { return weight.dim(1); }
  Index out_features() const { return weight.dim(0); }
  // Channel-named aliases so wrapped layers can treat all inner ops uniformly.
  Index in_channels() const { return in_features(); }
  Index out_channels() const { return out_features(); }
  Tensor<S> forward(const Tensor<S>& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamRefs<S>& r) const {
    r.add_param(prefix + ".weight", weight);
    r.add_param(prefix + ".bias", bias);
  }
};

template <typename S>
struct Conv2d {
  Tensor<S> weight;  // (out, in, k, k)
  Tensor<S> bias;    // (out)
  Index stride = 1;
  Index pad = 0;

  static Conv2d make(Index in, Index out, Index k, Index stride, Index pad,
                     RngStream& stream) {
    Conv2d c;
    c.weight = randn<S>({out, in, k, k}, stream, 0.0, kInitStd);
    c.weight.set_requires_grad(true);
    c.bias = Tensor<S>::zeros({out});
    c.bias.set_requires_grad(true);
    c.stride = stride;
    c.pad = pad;
    return c;
  }
  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }
  Tensor<S> forward(const Tensor<S>& x) const {
    return conv2d(x, weight, bias, stride, pad);
  }
  void collect(const std::string& prefix, ParamRefs<S>& r) const {
    r.add_param(prefix + ".weight", weight);
    r.add_param(prefix + ".bias", bias);
  }
};

template <typename S>
struct ConvTranspose2d {
  Tensor<S> weight;  // (in, out, k, k)
  Tensor<S> bias;    // (out)
  Index stride = 1;
  Index pad = 0;

  static ConvTranspose2d make(Index in, Index out, Index k, Index stride,
                              Index pad, RngStream& stream) {
    ConvTranspose2d c;
    c.weight = randn<S>({in, out, k, k}, stream, 0.0, kInitStd);
    c.weight.set_requires_grad(true);
    c.bias = Tensor<S>::zeros({out});
    c.bias.set_requires_grad(true);
    c.stride = stride;
    c.pad = pad;
    return c;
  }
  Index in_channels() const { return weight.dim(0); }
  Index out_channels() const { return weight.dim(1); }
  Tensor<S> forward(const Tensor<S>& x) const {
    return conv_transpose2d(x, weight, bias, stride, pad);
  }
  void collect(const std::string& prefix, ParamRefs<S>& r) const {
    r.add_param(prefix + ".weight", weight);
    r.add_param(prefix + ".bias", bias);
  }
};

template <typename S>
struct BatchNorm {
  Tensor<S> gamma, beta;
  Tensor<S> running_mean, running_var, batches_tracked;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm make(Index channels) {
    BatchNorm b;
    b.gamma = Tensor<S>::ones({channels});
    b.gamma.set_requires_grad(true);
    b.beta = Tensor<S>::zeros({channels});
    b.beta.set_requires_grad(true);
    b.running_mean = Tensor<S>::zeros({channels});
    b.running_var = Tensor<S>::ones({channels});
    b.batches_tracked = Tensor<S>::zeros({1});
    return b;
  }
  Tensor<S> forward(const Tensor<S>& x, bool training) {
    return batch_norm(x, gamma, beta, running_mean, running_var,
                      batches_tracked, training, momentum, eps);
  }
  void collect(const std::string& prefix, ParamRefs<S>& r) const {
    r.add_param(prefix + ".gamma", gamma);
    r.add_param(prefix + ".beta", beta);
    r.add_buffer(prefix + ".running_mean", running_mean);
    r.add_buffer(prefix + ".running_var", running_var);
    r.add_buffer(prefix + ".batches_tracked", batches_tracked);
  }
};

}  // namespace mcgen

#endif  // MCGEN_NN_HPP
