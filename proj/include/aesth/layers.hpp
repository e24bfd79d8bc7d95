#pragma once

// Forward/backward kernels for the primitives the model is built from.
// Each forward optionally fills a context that its backward consumes; a
// backward called with an unfilled context throws UsageError.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "aesth/tensor.hpp"

namespace aesth {

// ---------------------------------------------------------------------------
// conv2d

struct ConvGeometry {
  Index stride = 1;
  Index pad = 0;
};

/// Output extent of a convolution or pooling window sweep.
inline Index sweep_extent(Index in, Index window, Index stride, Index pad) {
  const Index span = in + 2 * pad - window;
  return span < 0 ? 0 : span / stride + 1;
}

template <typename Scalar>
struct Conv2dContext {
  bool valid = false;
  Shape input_shape;
  Tensor<Scalar> weight;
  ConvGeometry geom;
  Index out_h = 0, out_w = 0;
  std::vector<RowMatrix<Scalar>> columns;  // per sample, (Cin*k*k) x (out_h*out_w)
};

template <typename Scalar>
struct Conv2dGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

namespace detail {

template <typename Scalar>
void im2col(const Scalar* x, Index channels, Index h, Index w, Index k, const ConvGeometry& g,
            Index oh, Index ow, RowMatrix<Scalar>& cols) {
  cols.resize(channels * k * k, oh * ow);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* src = x + c * h * w;
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        Scalar* dst = cols.row((c * k + ki) * k + kj).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          Scalar* row = dst + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + ow, Scalar(0));
            continue;
          }
          const Scalar* line = src + iy * w;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            row[ox] = (ix >= 0 && ix < w) ? line[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Index channels, Index h, Index w, Index k,
            const ConvGeometry& g, Index oh, Index ow, Scalar* x) {
  for (Index c = 0; c < channels; ++c) {
    Scalar* dst = x + c * h * w;
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Scalar* src = cols.row((c * k + ki) * k + kj).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= h) continue;
          Scalar* line = dst + iy * w;
          const Scalar* row = src + oy * ow;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < w) line[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of x (N x Cin x H x W) with w (Cout x Cin x k x k), k odd,
/// plus a per-channel bias. Zero padding of `geom.pad` on every side.
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                              const Tensor<Scalar>& b, ConvGeometry geom,
                              Conv2dContext<Scalar>* ctx = nullptr) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require_rank(b, 1, "conv2d bias");
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k || b.dim(0) != cout)
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  if (k % 2 == 0) throw DimensionError("conv2d: kernel extent must be odd");
  if (geom.stride < 1 || geom.pad < 0) throw DimensionError("conv2d: invalid stride/pad");
  const Index oh = sweep_extent(h, k, geom.stride, geom.pad);
  const Index ow = sweep_extent(wd, k, geom.stride, geom.pad);
  if (oh < 1 || ow < 1) throw DimensionError("conv2d: non-positive output extent");

  Tensor<Scalar> y({n, cout, oh, ow});
  Eigen::Map<const RowMatrix<Scalar>> wmat(w.data(), cout, cin * k * k);
  if (ctx) {
    ctx->columns.resize(static_cast<std::size_t>(n));
  }
  RowMatrix<Scalar> local;
  for (Index s = 0; s < n; ++s) {
    RowMatrix<Scalar>& cols = ctx ? ctx->columns[static_cast<std::size_t>(s)] : local;
    detail::im2col(x.plane(s, 0), cin, h, wd, k, geom, oh, ow, cols);
    Eigen::Map<RowMatrix<Scalar>> out(y.plane(s, 0), cout, oh * ow);
    out.noalias() = wmat * cols;
    out.colwise() += b.values();
  }
  if (ctx) {
    ctx->valid = true;
    ctx->input_shape = x.shape();
    ctx->weight = w;
    ctx->geom = geom;
    ctx->out_h = oh;
    ctx->out_w = ow;
  }
  return y;
}

/// Exact gradients of conv2d_forward. When `need_input_grad` is false the
/// returned input gradient is left empty.
template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Conv2dContext<Scalar>& ctx,
                                    const Tensor<Scalar>& grad_out, bool need_input_grad = true) {
  if (!ctx.valid) throw UsageError("conv2d_backward: missing forward context");
  const Index n = ctx.input_shape[0], cin = ctx.input_shape[1];
  const Index h = ctx.input_shape[2], wd = ctx.input_shape[3];
  const Index cout = ctx.weight.dim(0), k = ctx.weight.dim(2);
  if (grad_out.shape() != Shape{n, cout, ctx.out_h, ctx.out_w})
    throw DimensionError("conv2d_backward: grad_out " + shape_string(grad_out.shape()));

  Conv2dGrads<Scalar> g;
  g.weight = Tensor<Scalar>::zeros_like(ctx.weight);
  g.bias = Tensor<Scalar>({cout});
  if (need_input_grad) g.input = Tensor<Scalar>(ctx.input_shape);
  Eigen::Map<RowMatrix<Scalar>> gw(g.weight.data(), cout, cin * k * k);
  Eigen::Map<const RowMatrix<Scalar>> wmat(ctx.weight.data(), cout, cin * k * k);
  RowMatrix<Scalar> gcols;
  for (Index s = 0; s < n; ++s) {
    Eigen::Map<const RowMatrix<Scalar>> go(grad_out.plane(s, 0), cout, ctx.out_h * ctx.out_w);
    const RowMatrix<Scalar>& cols = ctx.columns[static_cast<std::size_t>(s)];
    gw.noalias() += go * cols.transpose();
    g.bias.values() += go.rowwise().sum();
    if (need_input_grad) {
      gcols.noalias() = wmat.transpose() * go;
      detail::col2im(gcols, cin, h, wd, k, ctx.geom, ctx.out_h, ctx.out_w, g.input.plane(s, 0));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// maxpool2d

template <typename Scalar>
struct MaxPoolContext {
  bool valid = false;
  Shape input_shape;
  Shape output_shape;
  std::vector<Index> argmax;  // flat offset within the input plane, one per output element
};

/// Max over window x window blocks moving by `stride`. Ties resolve to the
/// first maximum in row-major scan order.
template <typename Scalar>
Tensor<Scalar> maxpool2d_forward(const Tensor<Scalar>& x, Index window, Index stride,
                                 MaxPoolContext<Scalar>* ctx = nullptr) {
  require_rank(x, 4, "maxpool2d input");
  if (window < 1 || stride < 1) throw DimensionError("maxpool2d: window and stride must be >= 1");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window > h || window > w)
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                         shape_string(x.shape()));
  const Index oh = sweep_extent(h, window, stride, 0);
  const Index ow = sweep_extent(w, window, stride, 0);
  Tensor<Scalar> y({n, c, oh, ow});
  if (ctx) ctx->argmax.assign(static_cast<std::size_t>(y.size()), 0);
  Index out_i = 0;
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar* in = x.plane(s, ch);
      Scalar* out = y.plane(s, ch);
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox, ++out_i) {
          Index best = oy * stride * w + ox * stride;
          Scalar best_v = in[best];
          for (Index dy = 0; dy < window; ++dy) {
            const Index row = (oy * stride + dy) * w;
            for (Index dx = 0; dx < window; ++dx) {
              const Index idx = row + ox * stride + dx;
              if (in[idx] > best_v) {
                best_v = in[idx];
                best = idx;
              }
            }
          }
          out[oy * ow + ox] = best_v;
          if (ctx) ctx->argmax[static_cast<std::size_t>(out_i)] = best;
        }
      }
    }
  }
  if (ctx) {
    ctx->valid = true;
    ctx->input_shape = x.shape();
    ctx->output_shape = y.shape();
  }
  return y;
}

namespace detail {

/// Scatter-add of pooled gradients to their recorded argmax positions.
template <typename Scalar>
Tensor<Scalar> route_to_argmax(const Shape& input_shape, const Shape& output_shape,
                               const std::vector<Index>& argmax, const Tensor<Scalar>& grad_out) {
  if (grad_out.shape() != output_shape)
    throw DimensionError("pool backward: grad_out " + shape_string(grad_out.shape()) +
                         ", expected " + shape_string(output_shape));
  Tensor<Scalar> gx(input_shape);
  const Index planes = output_shape[0] * output_shape[1];
  const Index out_plane = output_shape[2] * output_shape[3];
  const Index in_plane = input_shape[2] * input_shape[3];
  for (Index p = 0; p < planes; ++p) {
    Scalar* dst = gx.data() + p * in_plane;
    const Scalar* src = grad_out.data() + p * out_plane;
    const Index* arg = argmax.data() + p * out_plane;
    for (Index i = 0; i < out_plane; ++i) dst[arg[i]] += src[i];
  }
  return gx;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const MaxPoolContext<Scalar>& ctx, const Tensor<Scalar>& grad_out) {
  if (!ctx.valid) throw UsageError("maxpool2d_backward: missing forward context");
  return detail::route_to_argmax(ctx.input_shape, ctx.output_shape, ctx.argmax, grad_out);
}

// ---------------------------------------------------------------------------
// affine

template <typename Scalar>
struct AffineContext {
  bool valid = false;
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
};

template <typename Scalar>
struct AffineGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

/// y = x w + b with b broadcast over rows.
template <typename Scalar>
Tensor<Scalar> affine_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                              const Tensor<Scalar>& b, AffineContext<Scalar>* ctx = nullptr) {
  require_rank(x, 2, "affine input");
  require_rank(w, 2, "affine weight");
  require_rank(b, 1, "affine bias");
  if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
    throw DimensionError("affine: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  Tensor<Scalar> y({x.dim(0), w.dim(1)});
  y.matrix().noalias() = x.matrix() * w.matrix();
  y.matrix().rowwise() += b.values().transpose();
  if (ctx) {
    ctx->valid = true;
    ctx->input = x;
    ctx->weight = w;
  }
  return y;
}

template <typename Scalar>
AffineGrads<Scalar> affine_backward(const AffineContext<Scalar>& ctx, const Tensor<Scalar>& grad_out) {
  if (!ctx.valid) throw UsageError("affine_backward: missing forward context");
  if (grad_out.shape() != Shape{ctx.input.dim(0), ctx.weight.dim(1)})
    throw DimensionError("affine_backward: grad_out " + shape_string(grad_out.shape()));
  AffineGrads<Scalar> g;
  g.input = Tensor<Scalar>(ctx.input.shape());
  g.weight = Tensor<Scalar>(ctx.weight.shape());
  g.bias = Tensor<Scalar>({ctx.weight.dim(1)});
  g.input.matrix().noalias() = grad_out.matrix() * ctx.weight.matrix().transpose();
  g.weight.matrix().noalias() = ctx.input.matrix().transpose() * grad_out.matrix();
  g.bias.values() = grad_out.matrix().colwise().sum().transpose();
  return g;
}

// ---------------------------------------------------------------------------
// relu

template <typename Scalar>
struct ReluContext {
  bool valid = false;
  Tensor<Scalar> input;
};

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x, ReluContext<Scalar>* ctx = nullptr) {
  Tensor<Scalar> y = x;
  y.values() = x.values().cwiseMax(Scalar(0));
  if (ctx) {
    ctx->valid = true;
    ctx->input = x;
  }
  return y;
}

/// Subgradient 0 at exactly 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const ReluContext<Scalar>& ctx, const Tensor<Scalar>& grad_out) {
  if (!ctx.valid) throw UsageError("relu_backward: missing forward context");
  require_same_shape(ctx.input, grad_out, "relu_backward");
  Tensor<Scalar> gx = grad_out;
  gx.values() = (ctx.input.values().array() > Scalar(0)).select(grad_out.values(), Scalar(0));
  return gx;
}

// ---------------------------------------------------------------------------
// softmax

template <typename Scalar>
struct SoftmaxContext {
  bool valid = false;
  Tensor<Scalar> output;
};

/// Row-wise softmax of an N x K logit matrix, max-subtracted.
template <typename Scalar>
Tensor<Scalar> softmax_forward(const Tensor<Scalar>& c, SoftmaxContext<Scalar>* ctx = nullptr) {
  require_rank(c, 2, "softmax");
  if (!c.all_finite()) throw NumericError("softmax: non-finite logit");
  Tensor<Scalar> p(c.shape());
  auto in = c.matrix();
  auto out = p.matrix();
  for (Index i = 0; i < c.dim(0); ++i) {
    const Scalar m = in.row(i).maxCoeff();
    out.row(i) = (in.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  if (ctx) {
    ctx->valid = true;
    ctx->output = p;
  }
  return p;
}

/// Vector-Jacobian product: g_c = p * (g_p - <g_p, p>) per row.
template <typename Scalar>
Tensor<Scalar> softmax_backward(const SoftmaxContext<Scalar>& ctx, const Tensor<Scalar>& grad_out) {
  if (!ctx.valid) throw UsageError("softmax_backward: missing forward context");
  require_same_shape(ctx.output, grad_out, "softmax_backward");
  Tensor<Scalar> gc(grad_out.shape());
  auto p = ctx.output.matrix();
  auto g = grad_out.matrix();
  auto out = gc.matrix();
  for (Index i = 0; i < p.rows(); ++i) {
    const Scalar dot = g.row(i).dot(p.row(i));
    out.row(i) = p.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
  }
  return gc;
}

// ---------------------------------------------------------------------------
// concat

/// Row-wise [a | b] for a (N x D1) and b (N x D2).
template <typename Scalar>
Tensor<Scalar> concat_forward(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_rank(a, 2, "concat");
  require_rank(b, 2, "concat");
  if (a.dim(0) != b.dim(0))
    throw DimensionError("concat: row counts " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  Tensor<Scalar> y({a.dim(0), a.dim(1) + b.dim(1)});
  y.matrix().leftCols(a.dim(1)) = a.matrix();
  y.matrix().rightCols(b.dim(1)) = b.matrix();
  return y;
}

/// Splits a concat gradient back into its two parts; `left_cols` is D1.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> concat_backward(const Tensor<Scalar>& grad_out, Index left_cols) {
  require_rank(grad_out, 2, "concat_backward");
  if (left_cols < 0 || left_cols > grad_out.dim(1))
    throw DimensionError("concat_backward: split column out of range");
  Tensor<Scalar> ga({grad_out.dim(0), left_cols});
  Tensor<Scalar> gb({grad_out.dim(0), grad_out.dim(1) - left_cols});
  ga.matrix() = grad_out.matrix().leftCols(left_cols);
  gb.matrix() = grad_out.matrix().rightCols(gb.dim(1));
  return {std::move(ga), std::move(gb)};
}

}  // namespace aesth
