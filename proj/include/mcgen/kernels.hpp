#ifndef MCGEN_KERNELS_HPP
#define MCGEN_KERNELS_HPP

#include <Eigen/Dense>
#include <optional>
#include <string_view>

#include "mcgen/tensor.hpp"

namespace mcgen {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<MatX<S>>;
template <typename S>
using CMapMat = Eigen::Map<const MatX<S>>;

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m * n));
  CMapMat<S> A(a.data().data(), m, k);
  CMapMat<S> B(b.data().data(), k, n);
  MapMat<S>(out.data(), m, n).noalias() = A * B;
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make_op(
      {m, n}, std::move(out), "matmul", {a, b},
      [an, bn, m, k, n](const std::vector<S>& g) {
        CMapMat<S> G(g.data(), m, n);
        CMapMat<S> A(an->value.data(), m, k);
        CMapMat<S> B(bn->value.data(), k, n);
        if (an->requires_grad) {
          an->ensure_grad();
          MapMat<S>(an->grad.data(), m, k).noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          MapMat<S>(bn->grad.data(), k, n).noalias() += A.transpose() * G;
        }
      });
}

// y = x * w^T + b with x (N,K), w (D,K), b (D).
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(w.shape()));
  }
  const Index n = x.dim(0), k = x.dim(1), d = w.dim(0);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != d)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) +
                     " incompatible with weight " + shape_str(w.shape()));
  }
  std::vector<S> out(static_cast<std::size_t>(n * d));
  {
    CMapMat<S> X(x.data().data(), n, k);
    CMapMat<S> W(w.data().data(), d, k);
    MapMat<S> Y(out.data(), n, d);
    Y.noalias() = X * W.transpose();
    if (b.defined()) Y.rowwise() += CMapMat<S>(b.data().data(), 1, d).row(0);
  }
  auto xn = x.node();
  auto wn = w.node();
  std::vector<Tensor<S>> ins = {x, w};
  auto bnode = b.defined() ? b.node() : nullptr;
  if (b.defined()) ins.push_back(b);
  return Tensor<S>::make_op(
      {n, d}, std::move(out), "linear", std::move(ins),
      [xn, wn, bnode, n, k, d](const std::vector<S>& g) {
        CMapMat<S> G(g.data(), n, d);
        CMapMat<S> X(xn->value.data(), n, k);
        CMapMat<S> W(wn->value.data(), d, k);
        if (xn->requires_grad) {
          xn->ensure_grad();
          MapMat<S>(xn->grad.data(), n, k).noalias() += G * W;
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          MapMat<S>(wn->grad.data(), d, k).noalias() += G.transpose() * X;
        }
        if (bnode && bnode->requires_grad) {
          bnode->ensure_grad();
          MapMat<S> db(bnode->grad.data(), 1, d);
          db.noalias() += G.colwise().sum();
        }
      });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: rank-2 tensor required");
  const Index m = x.dim(0), n = x.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m * n));
  CMapMat<S> X(x.data().data(), m, n);
  MapMat<S>(out.data(), n, m) = X.transpose();
  auto xn = x.node();
  return Tensor<S>::make_op({n, m}, std::move(out), "transpose", {x},
                            [xn, m, n](const std::vector<S>& g) {
                              xn->ensure_grad();
                              CMapMat<S> G(g.data(), n, m);
                              MapMat<S>(xn->grad.data(), m, n) += G.transpose();
                            });
}

// ---------------------------------------------------------------------------
// Convolution core (im2col lowering; shared by conv2d and conv_transpose2d)
// ---------------------------------------------------------------------------

namespace conv_detail {

struct ConvGeom {
  Index n, ic, h, w;    // conv input
  Index oc, kh, kw;     // kernel
  Index stride, pad;
  Index ho, wo;         // conv output
  Index rows() const { return ic * kh * kw; }
  Index cols() const { return n * ho * wo; }
};

inline ConvGeom make_geom(const Shape& x, const Shape& wt, Index stride,
                          Index pad, const char* op) {
  if (x.size() != 4 || wt.size() != 4) {
    throw ShapeError(std::string(op) + ": rank-4 input and weight required");
  }
  if (x[1] != wt[1]) {
    throw ShapeError(std::string(op) + ": input channels " + shape_str(x) +
                     " do not match weight " + shape_str(wt));
  }
  if (stride < 1 || pad < 0) {
    throw ValueError(std::string(op) + ": invalid stride/pad");
  }
  ConvGeom g{x[0], x[1], x[2], x[3], wt[0], wt[2], wt[3], stride, pad, 0, 0};
  const Index ho = (g.h + 2 * pad - g.kh) / stride + 1;
  const Index wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw || ho < 1 || wo < 1) {
    throw ShapeError(std::string(op) + ": kernel larger than padded input");
  }
  g.ho = ho;
  g.wo = wo;
  return g;
}

// cols(r, n*ho*wo + oy*wo + ox) = x[n, ic, oy*s - p + kh, ox*s - p + kw]
template <typename S>
void im2col(const S* x, const ConvGeom& g, S* cols) {
  const Index hw = g.ho * g.wo;
  const Index total_cols = g.cols();
  parallel_for(g.n, [&](Index n0, Index n1) {
    for (Index n = n0; n < n1; ++n) {
      for (Index ic = 0; ic < g.ic; ++ic) {
        const S* xc = x + (n * g.ic + ic) * g.h * g.w;
        for (Index kh = 0; kh < g.kh; ++kh) {
          for (Index kw = 0; kw < g.kw; ++kw) {
            const Index r = (ic * g.kh + kh) * g.kw + kw;
            S* dst = cols + r * total_cols + n * hw;
            for (Index oy = 0; oy < g.ho; ++oy) {
              const Index iy = oy * g.stride - g.pad + kh;
              for (Index ox = 0; ox < g.wo; ++ox) {
                const Index ix = ox * g.stride - g.pad + kw;
                dst[oy * g.wo + ox] =
                    (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                        ? xc[iy * g.w + ix]
                        : S(0);
              }
            }
          }
        }
      }
    }
  });
}

// Adjoint of im2col: scatter-add columns back into the input layout.
template <typename S>
void col2im(const S* cols, const ConvGeom& g, S* x) {
  const Index hw = g.ho * g.wo;
  const Index total_cols = g.cols();
  parallel_for(g.n, [&](Index n0, Index n1) {
    for (Index n = n0; n < n1; ++n) {
      for (Index ic = 0; ic < g.ic; ++ic) {
        S* xc = x + (n * g.ic + ic) * g.h * g.w;
        for (Index kh = 0; kh < g.kh; ++kh) {
          for (Index kw = 0; kw < g.kw; ++kw) {
            const Index r = (ic * g.kh + kh) * g.kw + kw;
            const S* src = cols + r * total_cols + n * hw;
            for (Index oy = 0; oy < g.ho; ++oy) {
              const Index iy = oy * g.stride - g.pad + kh;
              if (iy < 0 || iy >= g.h) continue;
              for (Index ox = 0; ox < g.wo; ++ox) {
                const Index ix = ox * g.stride - g.pad + kw;
                if (ix < 0 || ix >= g.w) continue;
                xc[iy * g.w + ix] += src[oy * g.wo + ox];
              }
            }
          }
        }
      }
    }
  });
}

// (N,C,H,W) -> (C, N*H*W) and back; the GEMM view of feature maps.
template <typename S>
void gather_channels(const S* x, Index n, Index c, Index hw, S* out) {
  parallel_for(n, [&](Index n0, Index n1) {
    for (Index i = n0; i < n1; ++i) {
      for (Index ch = 0; ch < c; ++ch) {
        std::memcpy(out + ch * n * hw + i * hw, x + (i * c + ch) * hw,
                    static_cast<std::size_t>(hw) * sizeof(S));
      }
    }
  });
}

template <typename S>
void scatter_channels_add(const S* mat, Index n, Index c, Index hw, S* x) {
  parallel_for(n, [&](Index n0, Index n1) {
    for (Index i = n0; i < n1; ++i) {
      for (Index ch = 0; ch < c; ++ch) {
        const S* src = mat + ch * n * hw + i * hw;
        S* dst = x + (i * c + ch) * hw;
        for (Index k = 0; k < hw; ++k) dst[k] += src[k];
      }
    }
  });
}

// Column-blocked GEMM out = A * B with disjoint output blocks per worker.
template <typename S>
void gemm_cols(const CMapMat<S>& a, const CMapMat<S>& b, MapMat<S> out) {
  const Index n = b.cols();
  parallel_for(n, [&](Index c0, Index c1) {
    if (c1 > c0) {
      out.middleCols(c0, c1 - c0).noalias() = a * b.middleCols(c0, c1 - c0);
    }
  });
}

// y[n,oc,pos] = sum_r w[oc,r] * cols[r, n*hw+pos]
template <typename S>
std::vector<S> forward(const S* x, const S* w, const ConvGeom& g) {
  std::vector<S> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  im2col(x, g, cols.data());
  std::vector<S> ymat(static_cast<std::size_t>(g.oc * g.cols()));
  gemm_cols<S>(CMapMat<S>(w, g.oc, g.rows()),
               CMapMat<S>(cols.data(), g.rows(), g.cols()),
               MapMat<S>(ymat.data(), g.oc, g.cols()));
  std::vector<S> y(static_cast<std::size_t>(g.n * g.oc * g.ho * g.wo));
  scatter_channels_add(ymat.data(), g.n, g.oc, g.ho * g.wo, y.data());
  return y;
}

// dx = col2im(w^T * gmat); the adjoint map used directly by conv_transpose2d.
template <typename S>
std::vector<S> dinput(const S* gy, const S* w, const ConvGeom& g) {
  std::vector<S> gmat(static_cast<std::size_t>(g.oc * g.cols()));
  gather_channels(gy, g.n, g.oc, g.ho * g.wo, gmat.data());
  std::vector<S> dcols(static_cast<std::size_t>(g.rows() * g.cols()));
  MatX<S> wt = CMapMat<S>(w, g.oc, g.rows()).transpose();
  gemm_cols<S>(CMapMat<S>(wt.data(), g.rows(), g.oc),
               CMapMat<S>(gmat.data(), g.oc, g.cols()),
               MapMat<S>(dcols.data(), g.rows(), g.cols()));
  std::vector<S> dx(static_cast<std::size_t>(g.n * g.ic * g.h * g.w), S(0));
  col2im(dcols.data(), g, dx.data());
  return dx;
}

// dw = gmat * cols^T, a single GEMM so the reduction order is fixed.
template <typename S>
std::vector<S> dweight(const S* x, const S* gy, const ConvGeom& g) {
  std::vector<S> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  im2col(x, g, cols.data());
  std::vector<S> gmat(static_cast<std::size_t>(g.oc * g.cols()));
  gather_channels(gy, g.n, g.oc, g.ho * g.wo, gmat.data());
  std::vector<S> dw(static_cast<std::size_t>(g.oc * g.rows()));
  MapMat<S>(dw.data(), g.oc, g.rows()).noalias() =
      CMapMat<S>(gmat.data(), g.oc, g.cols()) *
      CMapMat<S>(cols.data(), g.rows(), g.cols()).transpose();
  return dw;
}

template <typename S>
std::vector<S> channel_sums(const S* gy, Index n, Index c, Index hw) {
  std::vector<S> db(static_cast<std::size_t>(c), S(0));
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const S* src = gy + (i * c + ch) * hw;
      S acc = S(0);
      for (Index k = 0; k < hw; ++k) acc += src[k];
      db[static_cast<std::size_t>(ch)] += acc;
    }
  }
  return db;
}

}  // namespace conv_detail

// x (N,IC,H,W), w (OC,IC,KH,KW), optional b (OC).
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 Index stride, Index pad) {
  using namespace conv_detail;
  const ConvGeom g = make_geom(x.shape(), w.shape(), stride, pad, "conv2d");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != g.oc)) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) +
                     " does not match output channels");
  }
  std::vector<S> y = forward(x.data().data(), w.data().data(), g);
  if (b.defined()) {
    const Index hw = g.ho * g.wo;
    auto bv = b.data();
    for (Index n = 0; n < g.n; ++n)
      for (Index oc = 0; oc < g.oc; ++oc) {
        S* dst = y.data() + (n * g.oc + oc) * hw;
        for (Index k = 0; k < hw; ++k) dst[k] += bv[static_cast<std::size_t>(oc)];
      }
  }
  auto xn = x.node();
  auto wn = w.node();
  auto bnode = b.defined() ? b.node() : nullptr;
  std::vector<Tensor<S>> ins = {x, w};
  if (b.defined()) ins.push_back(b);
  return Tensor<S>::make_op(
      {g.n, g.oc, g.ho, g.wo}, std::move(y), "conv2d", std::move(ins),
      [xn, wn, bnode, g](const std::vector<S>& gy) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          auto dx = dinput(gy.data(), wn->value.data(), g);
          for (std::size_t i = 0; i < dx.size(); ++i) xn->grad[i] += dx[i];
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          auto dw = dweight(xn->value.data(), gy.data(), g);
          for (std::size_t i = 0; i < dw.size(); ++i) wn->grad[i] += dw[i];
        }
        if (bnode && bnode->requires_grad) {
          bnode->ensure_grad();
          auto db = channel_sums(gy.data(), g.n, g.oc, g.ho * g.wo);
          for (std::size_t i = 0; i < db.size(); ++i) bnode->grad[i] += db[i];
        }
      });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, Index stride,
                 Index pad) {
  return conv2d(x, w, Tensor<S>(), stride, pad);
}

// x (N,A,H,W), w (A,B,KH,KW), optional b (B); the exact adjoint of conv2d
// with the same weight tensor: <conv2d(u;w), v> == <u, conv_transpose2d(v;w)>.
template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w,
                           const Tensor<S>& b, Index stride, Index pad) {
  using namespace conv_detail;
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv_transpose2d: rank-4 input and weight required");
  }
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("conv_transpose2d: input channels " +
                     shape_str(x.shape()) + " do not match weight " +
                     shape_str(w.shape()));
  }
  if (stride < 1 || pad < 0) {
    throw ValueError("conv_transpose2d: invalid stride/pad");
  }
  const Index a = w.dim(0), bb = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const Index ho = (x.dim(2) - 1) * stride - 2 * pad + kh;
  const Index wo = (x.dim(3) - 1) * stride - 2 * pad + kw;
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv_transpose2d: output collapses to zero size");
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != bb)) {
    throw ShapeError("conv_transpose2d: bias does not match output channels");
  }
  // Geometry of the underlying conv: conv input = this op's output.
  ConvGeom g{x.dim(0), bb, ho, wo, a, kh, kw, stride, pad, x.dim(2), x.dim(3)};
  std::vector<S> y = dinput(x.data().data(), w.data().data(), g);
  if (b.defined()) {
    const Index hw = ho * wo;
    auto bv = b.data();
    for (Index n = 0; n < g.n; ++n)
      for (Index c = 0; c < bb; ++c) {
        S* dst = y.data() + (n * bb + c) * hw;
        for (Index k = 0; k < hw; ++k) dst[k] += bv[static_cast<std::size_t>(c)];
      }
  }
  auto xn = x.node();
  auto wn = w.node();
  auto bnode = b.defined() ? b.node() : nullptr;
  std::vector<Tensor<S>> ins = {x, w};
  if (b.defined()) ins.push_back(b);
  return Tensor<S>::make_op(
      {g.n, bb, ho, wo}, std::move(y), "conv_transpose2d", std::move(ins),
      [xn, wn, bnode, g, bb, ho, wo](const std::vector<S>& gy) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          auto dx = forward(gy.data(), wn->value.data(), g);
          for (std::size_t i = 0; i < dx.size(); ++i) xn->grad[i] += dx[i];
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          auto dw = dweight(gy.data(), xn->value.data(), g);
          for (std::size_t i = 0; i < dw.size(); ++i) wn->grad[i] += dw[i];
        }
        if (bnode && bnode->requires_grad) {
          bnode->ensure_grad();
          auto db = channel_sums(gy.data(), g.n, bb, ho * wo);
          for (std::size_t i = 0; i < db.size(); ++i) bnode->grad[i] += db[i];
        }
      });
}

template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, Index stride,
                           Index pad) {
  return conv_transpose2d(x, w, Tensor<S>(), stride, pad);
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Functional batch norm over the channel axis of (N,C) or (N,C,H,W) input.
// Running statistics and the batch counter are plain buffers owned by the
// caller and updated in train mode.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, Tensor<S>& running_mean,
                     Tensor<S>& running_var, Tensor<S>& batches_tracked,
                     bool training, double momentum = 0.1, double eps = 1e-5) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batch_norm: rank-2 or rank-4 input required, got " +
                     shape_str(x.shape()));
  }
  const Index c = x.dim(1);
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw ShapeError("batch_norm: parameter size does not match " +
                     std::to_string(c) + " channels");
  }
  const Index n = x.dim(0);
  const Index hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const Index m = n * hw;  // elements per channel
  if (m < 1) throw ShapeError("batch_norm: empty batch");

  std::vector<S> mean_v(static_cast<std::size_t>(c));
  std::vector<S> invstd_v(static_cast<std::size_t>(c));
  auto xv = x.data();
  if (training) {
    for (Index ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        const S* src = &xv[static_cast<std::size_t>((i * c + ch) * hw)];
        for (Index k = 0; k < hw; ++k) acc += static_cast<double>(src[k]);
      }
      const double mu = acc / static_cast<double>(m);
      double var = 0.0;
      for (Index i = 0; i < n; ++i) {
        const S* src = &xv[static_cast<std::size_t>((i * c + ch) * hw)];
        for (Index k = 0; k < hw; ++k) {
          const double d = static_cast<double>(src[k]) - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);  // biased, used for normalization
      mean_v[static_cast<std::size_t>(ch)] = static_cast<S>(mu);
      invstd_v[static_cast<std::size_t>(ch)] =
          static_cast<S>(1.0 / std::sqrt(var + eps));
      const double unbiased = m > 1 ? var * m / (m - 1.0) : var;
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      rm[static_cast<std::size_t>(ch)] = static_cast<S>(
          (1.0 - momentum) * rm[static_cast<std::size_t>(ch)] + momentum * mu);
      rv[static_cast<std::size_t>(ch)] =
          static_cast<S>((1.0 - momentum) * rv[static_cast<std::size_t>(ch)] +
                         momentum * unbiased);
    }
    batches_tracked.mutable_data()[0] += S(1);
  } else {
    if (batches_tracked.data()[0] == S(0)) {
      throw ValueError(
          "batch_norm: eval mode requested before any training batch "
          "initialized the running statistics");
    }
    for (Index ch = 0; ch < c; ++ch) {
      mean_v[static_cast<std::size_t>(ch)] =
          running_mean.data()[static_cast<std::size_t>(ch)];
      invstd_v[static_cast<std::size_t>(ch)] = static_cast<S>(
          1.0 /
          std::sqrt(static_cast<double>(
                        running_var.data()[static_cast<std::size_t>(ch)]) +
                    eps));
    }
  }

  std::vector<S> xhat(static_cast<std::size_t>(x.size()));
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  auto gv = gamma.data();
  auto bv = beta.data();
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const std::size_t base = static_cast<std::size_t>((i * c + ch) * hw);
      const S mu = mean_v[static_cast<std::size_t>(ch)];
      const S is = invstd_v[static_cast<std::size_t>(ch)];
      const S ga = gv[static_cast<std::size_t>(ch)];
      const S be = bv[static_cast<std::size_t>(ch)];
      for (Index k = 0; k < hw; ++k) {
        const S h = (xv[base + static_cast<std::size_t>(k)] - mu) * is;
        xhat[base + static_cast<std::size_t>(k)] = h;
        out[base + static_cast<std::size_t>(k)] = ga * h + be;
      }
    }
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return Tensor<S>::make_op(
      x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
      [xn, gn, bn, xhat = std::move(xhat), invstd_v = std::move(invstd_v), n, c,
       hw, m, training](const std::vector<S>& g) {
        // Per-channel reductions first.
        std::vector<S> sum_g(static_cast<std::size_t>(c), S(0));
        std::vector<S> sum_gx(static_cast<std::size_t>(c), S(0));
        for (Index i = 0; i < n; ++i) {
          for (Index ch = 0; ch < c; ++ch) {
            const std::size_t base = static_cast<std::size_t>((i * c + ch) * hw);
            S a = S(0), b2 = S(0);
            for (Index k = 0; k < hw; ++k) {
              a += g[base + static_cast<std::size_t>(k)];
              b2 += g[base + static_cast<std::size_t>(k)] *
                    xhat[base + static_cast<std::size_t>(k)];
            }
            sum_g[static_cast<std::size_t>(ch)] += a;
            sum_gx[static_cast<std::size_t>(ch)] += b2;
          }
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (Index ch = 0; ch < c; ++ch)
            gn->grad[static_cast<std::size_t>(ch)] +=
                sum_gx[static_cast<std::size_t>(ch)];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (Index ch = 0; ch < c; ++ch)
            bn->grad[static_cast<std::size_t>(ch)] +=
                sum_g[static_cast<std::size_t>(ch)];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (Index i = 0; i < n; ++i) {
            for (Index ch = 0; ch < c; ++ch) {
              const std::size_t base =
                  static_cast<std::size_t>((i * c + ch) * hw);
              const S ga = gn->value[static_cast<std::size_t>(ch)];
              const S is = invstd_v[static_cast<std::size_t>(ch)];
              if (training) {
                const S mg = sum_g[static_cast<std::size_t>(ch)] / S(m);
                const S mgx = sum_gx[static_cast<std::size_t>(ch)] / S(m);
                for (Index k = 0; k < hw; ++k) {
                  const std::size_t idx = base + static_cast<std::size_t>(k);
                  xn->grad[idx] += ga * is * (g[idx] - mg - xhat[idx] * mgx);
                }
              } else {
                for (Index k = 0; k < hw; ++k) {
                  const std::size_t idx = base + static_cast<std::size_t>(k);
                  xn->grad[idx] += ga * is * g[idx];
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling / upsampling
// ---------------------------------------------------------------------------

namespace pool_detail {
inline void check_pool(const Shape& x, Index k, Index s, const char* op) {
  if (x.size() != 4) throw ShapeError(std::string(op) + ": rank-4 input required");
  if (k < 1 || s < 1) throw ValueError(std::string(op) + ": invalid kernel/stride");
  if (x[2] < k || x[3] < k) {
    throw ShapeError(std::string(op) + ": window larger than input " +
                     shape_str(x));
  }
}
}  // namespace pool_detail

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, Index k, Index s) {
  pool_detail::check_pool(x.shape(), k, s, "max_pool2d");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = (h - k) / s + 1, wo = (w - k) / s + 1;
  std::vector<S> out(static_cast<std::size_t>(n * c * ho * wo));
  std::vector<Index> arg(out.size());
  auto xv = x.data();
  for (Index i = 0; i < n * c; ++i) {
    const S* src = &xv[static_cast<std::size_t>(i * h * w)];
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        Index best = (oy * s) * w + (ox * s);
        S bv = src[best];
        for (Index dy = 0; dy < k; ++dy) {
          for (Index dx = 0; dx < k; ++dx) {
            const Index idx = (oy * s + dy) * w + (ox * s + dx);
            if (src[idx] > bv) {  // first max wins ties
              bv = src[idx];
              best = idx;
            }
          }
        }
        const std::size_t o = static_cast<std::size_t>((i * ho + oy) * wo + ox);
        out[o] = bv;
        arg[o] = i * h * w + best;
      }
    }
  }
  auto xn = x.node();
  return Tensor<S>::make_op({n, c, ho, wo}, std::move(out), "max_pool2d", {x},
                            [xn, arg = std::move(arg)](const std::vector<S>& g) {
                              xn->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i)
                                xn->grad[static_cast<std::size_t>(arg[i])] += g[i];
                            });
}

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, Index k, Index s) {
  pool_detail::check_pool(x.shape(), k, s, "avg_pool2d");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = (h - k) / s + 1, wo = (w - k) / s + 1;
  const S scale = S(1) / static_cast<S>(k * k);
  std::vector<S> out(static_cast<std::size_t>(n * c * ho * wo));
  auto xv = x.data();
  for (Index i = 0; i < n * c; ++i) {
    const S* src = &xv[static_cast<std::size_t>(i * h * w)];
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        S acc = S(0);
        for (Index dy = 0; dy < k; ++dy)
          for (Index dx = 0; dx < k; ++dx)
            acc += src[(oy * s + dy) * w + (ox * s + dx)];
        out[static_cast<std::size_t>((i * ho + oy) * wo + ox)] = acc * scale;
      }
    }
  }
  auto xn = x.node();
  return Tensor<S>::make_op(
      {n, c, ho, wo}, std::move(out), "avg_pool2d", {x},
      [xn, n, c, h, w, ho, wo, k, s, scale](const std::vector<S>& g) {
        xn->ensure_grad();
        for (Index i = 0; i < n * c; ++i) {
          S* dst = &xn->grad[static_cast<std::size_t>(i * h * w)];
          for (Index oy = 0; oy < ho; ++oy)
            for (Index ox = 0; ox < wo; ++ox) {
              const S gv =
                  g[static_cast<std::size_t>((i * ho + oy) * wo + ox)] * scale;
              for (Index dy = 0; dy < k; ++dy)
                for (Index dx = 0; dx < k; ++dx)
                  dst[(oy * s + dy) * w + (ox * s + dx)] += gv;
            }
        }
      });
}

template <typename S>
Tensor<S> global_sum_pool(const Tensor<S>& x) {
  if (x.rank() != 4) throw ShapeError("global_sum_pool: rank-4 input required");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<S> out(static_cast<std::size_t>(n * c), S(0));
  auto xv = x.data();
  for (Index i = 0; i < n * c; ++i) {
    const S* src = &xv[static_cast<std::size_t>(i * hw)];
    S acc = S(0);
    for (Index k = 0; k < hw; ++k) acc += src[k];
    out[static_cast<std::size_t>(i)] = acc;
  }
  auto xn = x.node();
  return Tensor<S>::make_op({n, c}, std::move(out), "global_sum_pool", {x},
                            [xn, hw](const std::vector<S>& g) {
                              xn->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                S* dst = &xn->grad[i * static_cast<std::size_t>(hw)];
                                for (Index k = 0; k < hw; ++k) dst[k] += g[i];
                              }
                            });
}

template <typename S>
Tensor<S> nearest_upsample2x(const Tensor<S>& x) {
  if (x.rank() != 4) throw ShapeError("nearest_upsample2x: rank-4 input required");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<S> out(static_cast<std::size_t>(n * c * 4 * h * w));
  auto xv = x.data();
  for (Index i = 0; i < n * c; ++i) {
    const S* src = &xv[static_cast<std::size_t>(i * h * w)];
    S* dst = &out[static_cast<std::size_t>(i * 4 * h * w)];
    for (Index y = 0; y < h; ++y)
      for (Index xq = 0; xq < w; ++xq) {
        const S v = src[y * w + xq];
        dst[(2 * y) * 2 * w + 2 * xq] = v;
        dst[(2 * y) * 2 * w + 2 * xq + 1] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xq] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xq + 1] = v;
      }
  }
  auto xn = x.node();
  return Tensor<S>::make_op(
      {n, c, 2 * h, 2 * w}, std::move(out), "nearest_upsample2x", {x},
      [xn, n, c, h, w](const std::vector<S>& g) {
        xn->ensure_grad();
        for (Index i = 0; i < n * c; ++i) {
          S* dst = &xn->grad[static_cast<std::size_t>(i * h * w)];
          const S* src = &g[static_cast<std::size_t>(i * 4 * h * w)];
          for (Index y = 0; y < h; ++y)
            for (Index xq = 0; xq < w; ++xq) {
              dst[y * w + xq] += src[(2 * y) * 2 * w + 2 * xq] +
                                 src[(2 * y) * 2 * w + 2 * xq + 1] +
                                 src[(2 * y + 1) * 2 * w + 2 * xq] +
                                 src[(2 * y + 1) * 2 * w + 2 * xq + 1];
            }
        }
      });
}

// (N,C,H,W) -> (N,4C,H/2,W/2); out[n, c*4 + dy*2 + dx, y, x] = in[n, c, 2y+dy, 2x+dx].
template <typename S>
Tensor<S> space_to_depth2(const Tensor<S>& x) {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("space_to_depth2: rank-4 input with even H, W required, got " +
                     shape_str(x.shape()));
  }
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = h / 2, wo = w / 2;
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  auto xv = x.data();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index dy = 0; dy < 2; ++dy)
        for (Index dx = 0; dx < 2; ++dx) {
          const Index oc = ch * 4 + dy * 2 + dx;
          for (Index y = 0; y < ho; ++y)
            for (Index xx = 0; xx < wo; ++xx) {
              out[static_cast<std::size_t>(((b * 4 * c + oc) * ho + y) * wo + xx)] =
                  xv[static_cast<std::size_t>(((b * c + ch) * h + 2 * y + dy) * w +
                                              2 * xx + dx)];
            }
        }
  auto xn = x.node();
  return Tensor<S>::make_op(
      {n, 4 * c, ho, wo}, std::move(out), "space_to_depth2", {x},
      [xn, n, c, h, w, ho, wo](const std::vector<S>& g) {
        xn->ensure_grad();
        for (Index b = 0; b < n; ++b)
          for (Index ch = 0; ch < c; ++ch)
            for (Index dy = 0; dy < 2; ++dy)
              for (Index dx = 0; dx < 2; ++dx) {
                const Index oc = ch * 4 + dy * 2 + dx;
                for (Index y = 0; y < ho; ++y)
                  for (Index xx = 0; xx < wo; ++xx) {
                    xn->grad[static_cast<std::size_t>(
                        ((b * c + ch) * h + 2 * y + dy) * w + 2 * xx + dx)] +=
                        g[static_cast<std::size_t>(((b * 4 * c + oc) * ho + y) * wo +
                                                   xx)];
                  }
              }
      });
}

template <typename S>
Tensor<S> depth_to_space2(const Tensor<S>& x) {
  if (x.rank() != 4 || x.dim(1) % 4 != 0) {
    throw ShapeError("depth_to_space2: channel count must be divisible by 4, got " +
                     shape_str(x.shape()));
  }
  const Index n = x.dim(0), c4 = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index c = c4 / 4;
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  auto xv = x.data();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index dy = 0; dy < 2; ++dy)
        for (Index dx = 0; dx < 2; ++dx) {
          const Index ic = ch * 4 + dy * 2 + dx;
          for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) {
              out[static_cast<std::size_t>(((b * c + ch) * 2 * h + 2 * y + dy) * 2 * w +
                                           2 * xx + dx)] =
                  xv[static_cast<std::size_t>(((b * c4 + ic) * h + y) * w + xx)];
            }
        }
  auto xn = x.node();
  return Tensor<S>::make_op(
      {n, c, 2 * h, 2 * w}, std::move(out), "depth_to_space2", {x},
      [xn, n, c, c4, h, w](const std::vector<S>& g) {
        xn->ensure_grad();
        for (Index b = 0; b < n; ++b)
          for (Index ch = 0; ch < c; ++ch)
            for (Index dy = 0; dy < 2; ++dy)
              for (Index dx = 0; dx < 2; ++dx) {
                const Index ic = ch * 4 + dy * 2 + dx;
                for (Index y = 0; y < h; ++y)
                  for (Index xx = 0; xx < w; ++xx) {
                    xn->grad[static_cast<std::size_t>(((b * c4 + ic) * h + y) * w + xx)] +=
                        g[static_cast<std::size_t>(
                            ((b * c + ch) * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx)];
                  }
              }
      });
}

// ---------------------------------------------------------------------------
// Name-based dispatch over the kernel inventory
// ---------------------------------------------------------------------------

struct KernelAttrs {
  Index stride = 1;
  Index pad = 0;
  Index kernel = 2;
  int axis = 0;
  Index start = 0;
  Index len = 0;
  Shape shape;
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Uniform entry point mirroring the kernel inventory. Stateful kernels
// (batch_norm) take their buffers at the end of `inputs`:
//   batch_norm: {x, gamma, beta, running_mean, running_var, batches_tracked}
template <typename S>
Tensor<S> apply_kernel(std::string_view op, std::vector<Tensor<S>> inputs,
                       const KernelAttrs& attrs = {}) {
  auto want = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ValueError(std::string(op) + ": expected " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
    }
  };
  if (op == "matmul") {
    want(2);
    return matmul(inputs[0], inputs[1]);
  }
  if (op == "conv2d") {
    if (inputs.size() == 2) return conv2d(inputs[0], inputs[1], attrs.stride, attrs.pad);
    want(3);
    return conv2d(inputs[0], inputs[1], inputs[2], attrs.stride, attrs.pad);
  }
  if (op == "conv_transpose2d") {
    if (inputs.size() == 2)
      return conv_transpose2d(inputs[0], inputs[1], attrs.stride, attrs.pad);
    want(3);
    return conv_transpose2d(inputs[0], inputs[1], inputs[2], attrs.stride, attrs.pad);
  }
  if (op == "batch_norm") {
    want(6);
    return batch_norm(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4],
                      inputs[5], attrs.training, attrs.momentum, attrs.eps);
  }
  if (op == "relu") {
    want(1);
    return relu(inputs[0]);
  }
  if (op == "tanh") {
    want(1);
    return tanh(inputs[0]);
  }
  if (op == "sigmoid") {
    want(1);
    return sigmoid(inputs[0]);
  }
  if (op == "add") {
    want(2);
    return add(inputs[0], inputs[1]);
  }
  if (op == "sub") {
    want(2);
    return sub(inputs[0], inputs[1]);
  }
  if (op == "mul") {
    want(2);
    return mul(inputs[0], inputs[1]);
  }
  if (op == "exp") {
    want(1);
    return exp(inputs[0]);
  }
  if (op == "log") {
    want(1);
    return log(inputs[0]);
  }
  if (op == "max_pool2d") {
    want(1);
    return max_pool2d(inputs[0], attrs.kernel, attrs.stride);
  }
  if (op == "avg_pool2d") {
    want(1);
    return avg_pool2d(inputs[0], attrs.kernel, attrs.stride);
  }
  if (op == "global_sum_pool") {
    want(1);
    return global_sum_pool(inputs[0]);
  }
  if (op == "nearest_upsample") {
    want(1);
    return nearest_upsample2x(inputs[0]);
  }
  if (op == "reshape") {
    want(1);
    return reshape(inputs[0], attrs.shape);
  }
  if (op == "concat") {
    return concat(inputs, attrs.axis);
  }
  if (op == "slice") {
    want(1);
    return slice(inputs[0], attrs.axis, attrs.start, attrs.len);
  }
  if (op == "sum") {
    want(1);
    return attrs.shape.empty() ? sum(inputs[0]) : sum(inputs[0], attrs.axis);
  }
  if (op == "mean") {
    want(1);
    return attrs.shape.empty() ? mean(inputs[0]) : mean(inputs[0], attrs.axis);
  }
  if (op == "softmax") {
    want(1);
    return softmax(inputs[0], attrs.axis);
  }
  throw ValueError("unknown kernel id: " + std::string(op));
}

// Row argmax of a (N,C) tensor; plain values, no graph participation.
template <typename S>
std::vector<Index> argmax_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("argmax_rows: rank-2 input required");
  const Index n = x.dim(0), c = x.dim(1);
  std::vector<Index> out(static_cast<std::size_t>(n));
  auto xv = x.data();
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    S bv = xv[static_cast<std::size_t>(i * c)];
    for (Index j = 1; j < c; ++j) {
      const S v = xv[static_cast<std::size_t>(i * c + j)];
      if (v > bv) {
        bv = v;
        best = j;
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace mcgen

#endif  // MCGEN_KERNELS_HPP
