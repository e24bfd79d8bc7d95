#pragma once

// Region-of-interest pooling over padded feature maps.
//
// A Region locates the true image inside a zero-padded canvas in input-pixel
// coordinates. It is mapped onto a feature map of downsampling ratio tau and
// split into an out_h x out_w grid of bins; bin m along an axis of mapped
// extent E covers [floor(m*E/out), ceil((m+1)*E/out)), end clamped to E.
// Nothing outside the mapped rectangle is ever read, so the pooled output of
// a padded canvas depends only on the image features.

#include <atomic>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "aesth/tensor.hpp"

namespace aesth {

struct Region {
  Index batch_index = 0;
  Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  Index width() const { return x1 - x0; }
  Index height() const { return y1 - y0; }
  friend bool operator==(const Region&, const Region&) = default;
};

struct RoiPoolSpec {
  Index downsample = 1;  // tau: stride product of every layer before the pool
  Index out_h = 32;
  Index out_w = 32;
};

namespace testing_hooks {
/// Mutation switch used by `aesth verify --mutate-roi` to prove that the
/// isolation checks can fail: bins then extend one column past their end
/// without clamping.
inline std::atomic<bool> corrupt_roi_bins{false};
}  // namespace testing_hooks

/// round(x / tau) with halves rounded away from zero.
inline Index round_div(Index x, Index tau) {
  if (tau <= 0) throw UsageError("map_coords: downsampling ratio must be >= 1");
  if (x < 0) throw UsageError("map_coords: coordinates must be non-negative");
  return (2 * x + tau) / (2 * tau);
}

/// Image-space pixel coordinates to feature-map coordinates.
inline std::pair<Index, Index> map_coords(Index x, Index y, Index tau) {
  return {round_div(x, tau), round_div(y, tau)};
}

/// Rectangle on the feature map, half-open.
struct FeatureRect {
  Index x0, y0, x1, y1;
};

inline FeatureRect map_region(const Region& r, Index tau, Index map_h, Index map_w) {
  const auto [fx0, fy0] = map_coords(r.x0, r.y0, tau);
  const auto [fx1, fy1] = map_coords(r.x1, r.y1, tau);
  if (fx1 <= fx0 || fy1 <= fy0)
    throw DegenerateRegionError("roi: region (" + std::to_string(r.x0) + "," + std::to_string(r.y0) +
                                "," + std::to_string(r.x1) + "," + std::to_string(r.y1) +
                                ") maps to an empty feature rectangle at tau=" + std::to_string(tau));
  if (fx1 > map_w || fy1 > map_h)
    throw DimensionError("roi: mapped region exceeds the " + std::to_string(map_h) + "x" +
                         std::to_string(map_w) + " feature map");
  return {fx0, fy0, fx1, fy1};
}

/// Half-open bin [first, second) of bin m of `bins` over an extent.
inline std::pair<Index, Index> bin_range(Index m, Index extent, Index bins) {
  const Index start = (m * extent) / bins;
  Index end = ((m + 1) * extent + bins - 1) / bins;
  if (testing_hooks::corrupt_roi_bins.load(std::memory_order_relaxed)) return {start, end + 1};
  return {start, std::min(end, extent)};
}

template <typename Scalar>
struct RoiPoolContext {
  bool valid = false;
  Shape input_shape;
  Shape output_shape;
  std::vector<Index> argmax;  // absolute offset into the feature tensor
};

namespace detail {

inline void check_regions(const std::vector<Region>& regions, Index batch) {
  if (regions.empty()) throw DimensionError("roi: no regions");
  for (const Region& r : regions)
    if (r.batch_index < 0 || r.batch_index >= batch)
      throw DimensionError("roi: batch index " + std::to_string(r.batch_index) + " out of range");
}

}  // namespace detail

/// ROI max pooling. Output is R x C x out_h x out_w for R regions.
template <typename Scalar>
Tensor<Scalar> roi_maxpool_forward(const Tensor<Scalar>& features, const std::vector<Region>& regions,
                                   const RoiPoolSpec& spec, RoiPoolContext<Scalar>* ctx = nullptr) {
  require_rank(features, 4, "roi_maxpool features");
  if (spec.out_h < 1 || spec.out_w < 1) throw DimensionError("roi_maxpool: output extents must be >= 1");
  detail::check_regions(regions, features.dim(0));
  const Index c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const Index nr = static_cast<Index>(regions.size());
  Tensor<Scalar> y({nr, c, spec.out_h, spec.out_w});
  if (ctx) ctx->argmax.assign(static_cast<std::size_t>(y.size()), 0);

  std::vector<std::pair<Index, Index>> xbins(static_cast<std::size_t>(spec.out_w));
  std::vector<std::pair<Index, Index>> ybins(static_cast<std::size_t>(spec.out_h));
  for (Index r = 0; r < nr; ++r) {
    const Region& reg = regions[static_cast<std::size_t>(r)];
    const FeatureRect fr = map_region(reg, spec.downsample, h, w);
    for (Index m = 0; m < spec.out_w; ++m) {
      auto [s, e] = bin_range(m, fr.x1 - fr.x0, spec.out_w);
      xbins[static_cast<std::size_t>(m)] = {fr.x0 + s, std::min(fr.x0 + e, w)};
    }
    for (Index n = 0; n < spec.out_h; ++n) {
      auto [s, e] = bin_range(n, fr.y1 - fr.y0, spec.out_h);
      ybins[static_cast<std::size_t>(n)] = {fr.y0 + s, std::min(fr.y0 + e, h)};
    }
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar* in = features.plane(reg.batch_index, ch);
      const Index base = in - features.data();
      Scalar* out = y.plane(r, ch);
      Index* arg = ctx ? ctx->argmax.data() + (out - y.data()) : nullptr;
      for (Index n = 0; n < spec.out_h; ++n) {
        const auto [ys, ye] = ybins[static_cast<std::size_t>(n)];
        for (Index m = 0; m < spec.out_w; ++m) {
          const auto [xs, xe] = xbins[static_cast<std::size_t>(m)];
          Index best = ys * w + xs;
          Scalar best_v = in[best];
          for (Index yy = ys; yy < ye; ++yy) {
            const Scalar* row = in + yy * w;
            for (Index xx = xs; xx < xe; ++xx) {
              if (row[xx] > best_v) {
                best_v = row[xx];
                best = yy * w + xx;
              }
            }
          }
          out[n * spec.out_w + m] = best_v;
          if (arg) arg[n * spec.out_w + m] = base + best;
        }
      }
    }
  }
  if (ctx) {
    ctx->valid = true;
    ctx->input_shape = features.shape();
    ctx->output_shape = y.shape();
  }
  return y;
}

/// Routes pooled gradients to the recorded argmax locations. Every location
/// outside all mapped regions receives exactly zero.
template <typename Scalar>
Tensor<Scalar> roi_maxpool_backward(const RoiPoolContext<Scalar>& ctx, const Tensor<Scalar>& grad_out) {
  if (!ctx.valid) throw UsageError("roi_maxpool_backward: missing forward context");
  if (grad_out.shape() != ctx.output_shape)
    throw DimensionError("roi_maxpool_backward: grad_out " + shape_string(grad_out.shape()));
  Tensor<Scalar> gx(ctx.input_shape);
  for (Index i = 0; i < grad_out.size(); ++i)
    gx.data()[ctx.argmax[static_cast<std::size_t>(i)]] += grad_out.data()[i];
  return gx;
}

/// Max pooling to a fixed grid over the whole map, using the same bin rule
/// as roi_maxpool_forward with the full map as the region.
template <typename Scalar>
Tensor<Scalar> adaptive_maxpool_forward(const Tensor<Scalar>& features, Index out_h, Index out_w,
                                        RoiPoolContext<Scalar>* ctx = nullptr) {
  require_rank(features, 4, "adaptive_maxpool");
  std::vector<Region> full;
  full.reserve(static_cast<std::size_t>(features.dim(0)));
  for (Index n = 0; n < features.dim(0); ++n) full.push_back({n, 0, 0, features.dim(3), features.dim(2)});
  return roi_maxpool_forward(features, full, RoiPoolSpec{1, out_h, out_w}, ctx);
}

template <typename Scalar>
Tensor<Scalar> adaptive_maxpool_backward(const RoiPoolContext<Scalar>& ctx, const Tensor<Scalar>& grad_out) {
  return roi_maxpool_backward(ctx, grad_out);
}

// ---------------------------------------------------------------------------
// ROI align

/// Winning bilinear sample of each output bin: four taps and their weights.
template <typename Scalar>
struct AlignTap {
  Index offset[4];
  Scalar weight[4];
};

template <typename Scalar>
struct RoiAlignContext {
  bool valid = false;
  Shape input_shape;
  Shape output_shape;
  std::vector<AlignTap<Scalar>> taps;
};

/// Interpolation-based variant of ROI pooling.
///
/// Region corners map by exact division by tau. Feature pixel j sits at
/// continuous coordinate j. Each bin is sampled on a samples_per_bin^2 grid of
/// bin-interior points; each sample is bilinearly interpolated with its
/// coordinate clamped to the pixels the region covers, and the bin takes the
/// maximum sample.
template <typename Scalar>
Tensor<Scalar> roi_align_forward(const Tensor<Scalar>& features, const std::vector<Region>& regions,
                                 const RoiPoolSpec& spec, Index samples_per_bin = 2,
                                 RoiAlignContext<Scalar>* ctx = nullptr) {
  require_rank(features, 4, "roi_align features");
  if (spec.out_h < 1 || spec.out_w < 1) throw DimensionError("roi_align: output extents must be >= 1");
  if (samples_per_bin < 1) throw UsageError("roi_align: samples_per_bin must be >= 1");
  if (spec.downsample < 1) throw UsageError("roi_align: downsampling ratio must be >= 1");
  detail::check_regions(regions, features.dim(0));
  const Index c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const Index nr = static_cast<Index>(regions.size());
  Tensor<Scalar> y({nr, c, spec.out_h, spec.out_w});
  if (ctx) ctx->taps.assign(static_cast<std::size_t>(y.size()), AlignTap<Scalar>{});

  struct Axis {
    Index lo, hi;
    Scalar start, bin;
  };
  auto axis = [&](Index a0, Index a1, Index extent, Index bins) {
    const Scalar s = Scalar(a0) / Scalar(spec.downsample);
    const Scalar e = Scalar(a1) / Scalar(spec.downsample);
    if (!(e > s)) throw DegenerateRegionError("roi_align: empty region");
    if (e > Scalar(extent)) throw DimensionError("roi_align: region exceeds the feature map");
    const Index lo = static_cast<Index>(std::floor(s));
    const Index hi = static_cast<Index>(std::ceil(e)) - 1;
    return Axis{lo, hi, s, (e - s) / Scalar(bins)};
  };
  // Interpolation position along one axis: left tap, right tap, right weight.
  auto locate = [](Scalar u, const Axis& ax, Index& i0, Index& i1, Scalar& frac) {
    u = std::clamp(u, Scalar(ax.lo), Scalar(ax.hi));
    i0 = static_cast<Index>(std::floor(u));
    i1 = std::min(i0 + 1, ax.hi);
    frac = u - Scalar(i0);
  };

  const Index sp = samples_per_bin;
  for (Index r = 0; r < nr; ++r) {
    const Region& reg = regions[static_cast<std::size_t>(r)];
    const Axis ax = axis(reg.x0, reg.x1, w, spec.out_w);
    const Axis ay = axis(reg.y0, reg.y1, h, spec.out_h);
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar* in = features.plane(reg.batch_index, ch);
      const Index base = in - features.data();
      Scalar* out = y.plane(r, ch);
      const Index out_base = out - y.data();
      for (Index n = 0; n < spec.out_h; ++n) {
        for (Index m = 0; m < spec.out_w; ++m) {
          Scalar best_v = -std::numeric_limits<Scalar>::infinity();
          AlignTap<Scalar> best{};
          for (Index sy = 0; sy < sp; ++sy) {
            const Scalar v = ay.start + Scalar(n) * ay.bin + (Scalar(sy) + Scalar(0.5)) * ay.bin / Scalar(sp);
            Index y0, y1;
            Scalar fy;
            locate(v, ay, y0, y1, fy);
            for (Index sx = 0; sx < sp; ++sx) {
              const Scalar u =
                  ax.start + Scalar(m) * ax.bin + (Scalar(sx) + Scalar(0.5)) * ax.bin / Scalar(sp);
              Index x0, x1;
              Scalar fx;
              locate(u, ax, x0, x1, fx);
              const AlignTap<Scalar> tap{{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1},
                                         {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx}};
              Scalar val = 0;
              for (int t = 0; t < 4; ++t) val += tap.weight[t] * in[tap.offset[t]];
              if (val > best_v) {
                best_v = val;
                best = tap;
              }
            }
          }
          out[n * spec.out_w + m] = best_v;
          if (ctx) {
            for (auto& o : best.offset) o += base;
            ctx->taps[static_cast<std::size_t>(out_base + n * spec.out_w + m)] = best;
          }
        }
      }
    }
  }
  if (ctx) {
    ctx->valid = true;
    ctx->input_shape = features.shape();
    ctx->output_shape = y.shape();
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> roi_align_backward(const RoiAlignContext<Scalar>& ctx, const Tensor<Scalar>& grad_out) {
  if (!ctx.valid) throw UsageError("roi_align_backward: missing forward context");
  if (grad_out.shape() != ctx.output_shape)
    throw DimensionError("roi_align_backward: grad_out " + shape_string(grad_out.shape()));
  Tensor<Scalar> gx(ctx.input_shape);
  for (Index i = 0; i < grad_out.size(); ++i) {
    const AlignTap<Scalar>& tap = ctx.taps[static_cast<std::size_t>(i)];
    for (int t = 0; t < 4; ++t) gx.data()[tap.offset[t]] += tap.weight[t] * grad_out.data()[i];
  }
  return gx;
}

}  // namespace aesth
