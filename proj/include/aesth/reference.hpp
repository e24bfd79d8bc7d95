#pragma once
// Naive reference implementations used as oracles by `aesth verify` and the
// unit tests. Written as direct loops over the textbook definitions, sharing
// no code with the optimized kernels.

#include <cmath>
#include <limits>
#include <vector>

#include "aesth/roi.hpp"
#include "aesth/tensor.hpp"

namespace aesth::reference {

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b, Index stride,
                      Index pad) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), k = w.dim(2);
  const Index oh = (h + 2 * pad - k) / stride + 1;
  const Index ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<Scalar> y({n, cout, oh, ow});
  for (Index s = 0; s < n; ++s)
    for (Index o = 0; o < cout; ++o)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          Scalar acc = b(o);
          for (Index c = 0; c < cin; ++c)
            for (Index u = 0; u < k; ++u)
              for (Index v = 0; v < k; ++v) {
                const Index yy = i * stride - pad + u;
                const Index xx = j * stride - pad + v;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += w(o, c, u, v) * x(s, c, yy, xx);
              }
          y(s, o, i, j) = acc;
        }
  return y;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x, Index window, Index stride) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = (h - window) / stride + 1;
  const Index ow = (w - window) / stride + 1;
  Tensor<Scalar> y({n, c, oh, ow});
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          Scalar m = -std::numeric_limits<Scalar>::infinity();
          for (Index u = 0; u < window; ++u)
            for (Index v = 0; v < window; ++v) m = std::max(m, x(s, ch, i * stride + u, j * stride + v));
          y(s, ch, i, j) = m;
        }
  return y;
}

/// Max over [floor(m*E/out), ceil((m+1)*E/out)) computed in floating point.
template <typename Scalar>
Scalar window_max(const Tensor<Scalar>& x, Index s, Index ch, Index y0, Index x0, Index eh, Index ew, Index n,
                  Index m, Index out_h, Index out_w) {
  const auto lo = [](Index i, Index e, Index bins) {
    return static_cast<Index>(std::floor(static_cast<double>(i) * static_cast<double>(e) / static_cast<double>(bins)));
  };
  const auto hi = [](Index i, Index e, Index bins) {
    const auto v = static_cast<Index>(
        std::ceil(static_cast<double>(i + 1) * static_cast<double>(e) / static_cast<double>(bins)));
    return v < e ? v : e;
  };
  Scalar best = -std::numeric_limits<Scalar>::infinity();
  for (Index yy = lo(n, eh, out_h); yy < hi(n, eh, out_h); ++yy)
    for (Index xx = lo(m, ew, out_w); xx < hi(m, ew, out_w); ++xx) best = std::max(best, x(s, ch, y0 + yy, x0 + xx));
  return best;
}

template <typename Scalar>
Tensor<Scalar> roi_maxpool(const Tensor<Scalar>& x, const std::vector<Region>& regions, Index tau, Index out_h,
                           Index out_w) {
  const auto map = [tau](Index v) {
    return static_cast<Index>(std::floor(static_cast<double>(v) / static_cast<double>(tau) + 0.5));
  };
  Tensor<Scalar> y({static_cast<Index>(regions.size()), x.dim(1), out_h, out_w});
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const Region& g = regions[r];
    const Index fx0 = map(g.x0), fy0 = map(g.y0), fx1 = map(g.x1), fy1 = map(g.y1);
    for (Index ch = 0; ch < x.dim(1); ++ch)
      for (Index n = 0; n < out_h; ++n)
        for (Index m = 0; m < out_w; ++m)
          y(static_cast<Index>(r), ch, n, m) =
              window_max(x, g.batch_index, ch, fy0, fx0, fy1 - fy0, fx1 - fx0, n, m, out_h, out_w);
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> adaptive_maxpool(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  Tensor<Scalar> y({x.dim(0), x.dim(1), out_h, out_w});
  for (Index s = 0; s < x.dim(0); ++s)
    for (Index ch = 0; ch < x.dim(1); ++ch)
      for (Index n = 0; n < out_h; ++n)
        for (Index m = 0; m < out_w; ++m) y(s, ch, n, m) = window_max(x, s, ch, 0, 0, x.dim(2), x.dim(3), n, m, out_h, out_w);
  return y;
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Tensor<Scalar> c({a.dim(0), b.dim(1)});
  for (Index i = 0; i < a.dim(0); ++i)
    for (Index j = 0; j < b.dim(1); ++j) {
      Scalar acc = 0;
      for (Index k = 0; k < a.dim(1); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

/// Fractional ranks by counting: 1 + #less + (#equal - 1) / 2.
inline std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

}  // namespace aesth::reference
