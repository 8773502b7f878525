#ifndef MCGEN_SPECTRAL_HPP
#define MCGEN_SPECTRAL_HPP

#include "mcgen/kernels.hpp"
#include "mcgen/tensor.hpp"

namespace mcgen {

// Persisted left singular vector estimate for one weight.
template <typename S>
struct SpectralState {
  Tensor<S> u;  // (out_dim)
};

template <typename S>
SpectralState<S> make_spectral_state(Index out_dim, RngStream& stream) {
  auto u = randn<S>({out_dim}, stream);
  double norm = 0.0;
  for (S v : u.data()) norm += static_cast<double>(v) * static_cast<double>(v);
  norm = std::sqrt(norm);
  for (auto& v : u.mutable_data()) v = static_cast<S>(v / norm);
  return SpectralState<S>{u};
}

// Power-iteration spectral normalization of a 2-D weight (out x rest); the
// persisted u vector is advanced in place. The returned tensor is W / sigma
// with gradient flowing through both W and the sigma estimate (u, v are
// treated as constants, matching the usual SN training rule). With
// update_state=false the stored u is used read-only (evaluation mode).
template <typename S>
Tensor<S> spectral_normalize(const Tensor<S>& w, int iters,
                             SpectralState<S>& state, bool update_state = true) {
  if (w.rank() != 2) {
    throw ShapeError("spectral_normalize: rank-2 weight required, got " +
                     shape_str(w.shape()));
  }
  if (iters < 1) throw ValueError("spectral_normalize: iters must be >= 1");
  const Index rows = w.dim(0), cols = w.dim(1);
  if (state.u.size() != rows) {
    throw ShapeError("spectral_normalize: state size does not match weight");
  }
  CMapMat<S> W(w.data().data(), rows, cols);
  Eigen::Matrix<S, Eigen::Dynamic, 1> u(rows), v(cols);
  for (Index i = 0; i < rows; ++i) u(i) = state.u.data()[static_cast<std::size_t>(i)];
  const int rounds = update_state ? iters : 1;
  for (int it = 0; it < rounds; ++it) {
    v.noalias() = W.transpose() * u;
    S vn = v.norm();
    if (vn == S(0)) {
      throw ValueError("spectral_normalize: degenerate (zero) weight matrix");
    }
    v /= vn;
    if (!update_state) break;  // evaluation: derive v from the stored u only
    u.noalias() = W * v;
    S un = u.norm();
    if (un == S(0)) {
      throw ValueError("spectral_normalize: degenerate (zero) weight matrix");
    }
    u /= un;
  }
  if (update_state) {
    for (Index i = 0; i < rows; ++i) {
      state.u.mutable_data()[static_cast<std::size_t>(i)] = u(i);
    }
  }
  // sigma = u^T W v as a graph op over W with u, v frozen.
  std::vector<S> uv(static_cast<std::size_t>(rows));
  std::vector<S> vv(static_cast<std::size_t>(cols));
  for (Index i = 0; i < rows; ++i) uv[static_cast<std::size_t>(i)] = u(i);
  for (Index i = 0; i < cols; ++i) vv[static_cast<std::size_t>(i)] = v(i);
  S sigma_val = u.dot(W * v);
  if (sigma_val == S(0)) {
    throw ValueError("spectral_normalize: zero spectral norm estimate");
  }
  auto wn = w.node();
  Tensor<S> sigma = Tensor<S>::make_op(
      {1, 1}, {sigma_val}, "sn_sigma", {w},
      [wn, uv = std::move(uv), vv = std::move(vv), rows, cols](
          const std::vector<S>& g) {
        wn->ensure_grad();
        for (Index i = 0; i < rows; ++i) {
          for (Index j = 0; j < cols; ++j) {
            wn->grad[static_cast<std::size_t>(i * cols + j)] +=
                g[0] * uv[static_cast<std::size_t>(i)] *
                vv[static_cast<std::size_t>(j)];
          }
        }
      });
  return div(w, sigma);
}

}  // namespace mcgen

#endif  // MCGEN_SPECTRAL_HPP
