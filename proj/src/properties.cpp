#include "aesth/properties.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>

#include "aesth/checkpoint.hpp"
#include "aesth/error.hpp"
#include "aesth/gradcheck.hpp"
#include "aesth/reference.hpp"
#include "aesth/synth.hpp"
#include "aesth/training.hpp"

namespace aesth {

namespace {

struct Outcome {
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

Outcome within(double measured, double tolerance, std::string detail = {}) {
  return {measured <= tolerance, measured, tolerance, std::move(detail)};
}

Outcome holds(bool ok, std::string detail = {}) { return {ok, ok ? 0.0 : 1.0, 0.0, std::move(detail)}; }

struct Property {
  const char* name;
  const char* scope;
  std::function<Outcome(Rng&, const VerifyOptions&)> run;
};

Index pick(Rng& rng, Index lo, Index hi) { return rng.uniform_int(lo, hi); }

Tensord random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensord t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Shuffled arithmetic sequence in [-1, 1]: no two entries closer than 2/size.
Tensord distinct_tensor(Shape shape, Rng& rng) {
  Tensord t(std::move(shape));
  const Index n = t.size();
  for (Index i = 0; i < n; ++i) t.data()[i] = n > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
  for (Index i = n - 1; i > 0; --i) std::swap(t.data()[i], t.data()[pick(rng, 0, i)]);
  return t;
}

double max_abs_diff(const Tensord& a, const Tensord& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  if (a.size() == 0) return 0.0;
  return (a.values() - b.values()).cwiseAbs().maxCoeff();
}

double dot(const Tensord& a, const Tensord& b) { return a.values().dot(b.values()); }

std::string count_detail(const char* what, Index n) {
  std::ostringstream os;
  os << n << ' ' << what;
  return os.str();
}

// --- oracle -----------------------------------------------------------------

Outcome conv2d_oracle(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Index k = 2 * pick(rng, 0, 2) + 1, stride = pick(rng, 1, 2), pad = pick(rng, 0, k / 2);
    const Index n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const Index h = pick(rng, k, 9), w = pick(rng, k, 9);
    const Tensord x = random_tensor({n, cin, h, w}, rng), wt = random_tensor({cout, cin, k, k}, rng);
    const Tensord b = random_tensor({cout}, rng);
    worst = std::max(worst, max_abs_diff(conv2d_forward(x, wt, b, {stride, pad}), reference::conv2d(x, wt, b, stride, pad)));
  }
  return within(worst, 1e-12, "100 random instances");
}

Outcome maxpool_oracle(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Index window = pick(rng, 1, 3), stride = pick(rng, 1, 3);
    const Tensord x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, window, 10), pick(rng, window, 10)}, rng);
    worst = std::max(worst, max_abs_diff(maxpool2d_forward(x, window, stride), reference::maxpool2d(x, window, stride)));
  }
  return within(worst, 1e-12, "100 random instances");
}

std::vector<Region> random_regions(Rng& rng, Index batch, Index map_h, Index map_w, Index tau, Index count) {
  std::vector<Region> regions;
  while (static_cast<Index>(regions.size()) < count) {
    Region r;
    r.batch_index = pick(rng, 0, batch - 1);
    r.x0 = pick(rng, 0, map_w * tau - 1);
    r.x1 = pick(rng, r.x0 + 1, map_w * tau);
    r.y0 = pick(rng, 0, map_h * tau - 1);
    r.y1 = pick(rng, r.y0 + 1, map_h * tau);
    if (round_div(r.x1, tau) > round_div(r.x0, tau) && round_div(r.y1, tau) > round_div(r.y0, tau)) regions.push_back(r);
  }
  return regions;
}

Outcome roi_maxpool_oracle(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Index tau = pick(rng, 1, 4), mh = pick(rng, 2, 12), mw = pick(rng, 2, 12);
    const Tensord x = random_tensor({2, pick(rng, 1, 3), mh, mw}, rng);
    const auto regions = random_regions(rng, 2, mh, mw, tau, pick(rng, 1, 3));
    const Index oh = pick(rng, 1, 6), ow = pick(rng, 1, 6);
    worst = std::max(worst, max_abs_diff(roi_maxpool_forward(x, regions, RoiPoolSpec{tau, oh, ow}),
                                         reference::roi_maxpool(x, regions, tau, oh, ow)));
  }
  return within(worst, 1e-12, "100 random instances");
}

Outcome adaptive_pool_oracle(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Tensord x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 12), pick(rng, 1, 12)}, rng);
    const Index oh = pick(rng, 1, 6), ow = pick(rng, 1, 6);
    worst = std::max(worst, max_abs_diff(adaptive_maxpool_forward(x, oh, ow), reference::adaptive_maxpool(x, oh, ow)));
  }
  return within(worst, 1e-12, "100 random instances");
}

Outcome matmul_oracle(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Index m = pick(rng, 1, 8), k = pick(rng, 1, 8), n = pick(rng, 1, 8);
    const Tensord a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    worst = std::max(worst, max_abs_diff(matmul(a, b), reference::matmul(a, b)));
  }
  return within(worst, 1e-12, "100 random instances");
}

Outcome softmax_normalization(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Tensord c = random_tensor({pick(rng, 1, 4), pick(rng, 2, 12)}, rng, -20.0, 20.0);
    Tensord shifted = c;
    shifted.values().array() += rng.uniform(-50.0, 50.0);
    const Tensord p = softmax_forward(c);
    for (Index i = 0; i < p.dim(0); ++i) worst = std::max(worst, std::abs(p.matrix().row(i).sum() - 1.0));
    worst = std::max(worst, max_abs_diff(p, softmax_forward(shifted)));
  }
  return within(worst, 1e-12, "row sums and shift invariance, 100 instances");
}

// --- gradient ---------------------------------------------------------------

constexpr double kOpTolerance = 1e-6;
constexpr double kModelTolerance = 1e-4;
const GradcheckOptions kCheck{1e-5, 1e-6, {}};

// Runs `instances` gradchecks of the scalar maps produced by `make`; returns the worst.
Outcome op_gradcheck(int instances, const std::function<std::vector<std::pair<std::function<double(const Tensord&, Tensord*)>, Tensord>>(Rng&)>& make,
                     Rng& rng) {
  double worst = 0.0;
  Index checked = 0;
  for (int i = 0; i < instances; ++i)
    for (auto& [f, x] : make(rng)) {
      const GradcheckReport rep = gradcheck(f, x, kCheck);
      worst = std::max(worst, rep.max_rel_error);
      checked += rep.checked;
    }
  return within(worst, kOpTolerance, count_detail("coordinates", checked));
}

using Probe = std::pair<std::function<double(const Tensord&, Tensord*)>, Tensord>;

Outcome conv2d_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(5, [](Rng& r) {
    const Index k = 2 * pick(r, 0, 1) + 1, stride = pick(r, 1, 2), pad = pick(r, 0, k / 2);
    const Index cin = pick(r, 1, 3), cout = pick(r, 1, 3);
    const Tensord x = random_tensor({2, cin, pick(r, k, 7), pick(r, k, 7)}, r);
    const Tensord w = random_tensor({cout, cin, k, k}, r), b = random_tensor({cout}, r);
    const ConvGeometry g{stride, pad};
    const Tensord ref = random_tensor(conv2d_forward(x, w, b, g).shape(), r);
    auto run = [=](const Tensord& xx, const Tensord& ww, const Tensord& bb, Conv2dGrads<double>* grads) {
      Conv2dContext<double> ctx;
      const double v = dot(ref, conv2d_forward(xx, ww, bb, g, grads ? &ctx : nullptr));
      if (grads) *grads = conv2d_backward(ctx, ref);
      return v;
    };
    return std::vector<Probe>{
        {[=](const Tensord& v, Tensord* gr) { Conv2dGrads<double> cg; double f = run(v, w, b, gr ? &cg : nullptr); if (gr) *gr = cg.input; return f; }, x},
        {[=](const Tensord& v, Tensord* gr) { Conv2dGrads<double> cg; double f = run(x, v, b, gr ? &cg : nullptr); if (gr) *gr = cg.weight; return f; }, w},
        {[=](const Tensord& v, Tensord* gr) { Conv2dGrads<double> cg; double f = run(x, w, v, gr ? &cg : nullptr); if (gr) *gr = cg.bias; return f; }, b}};
  }, rng);
}

Outcome maxpool_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(10, [](Rng& r) {
    const Index window = pick(r, 2, 3), stride = pick(r, 1, window);
    const Tensord x = distinct_tensor({2, 2, pick(r, window, 8), pick(r, window, 8)}, r);
    const Tensord ref = random_tensor(maxpool2d_forward(x, window, stride).shape(), r);
    return std::vector<Probe>{{[=](const Tensord& v, Tensord* gr) {
                                 MaxPoolContext<double> ctx;
                                 const double f = dot(ref, maxpool2d_forward(v, window, stride, gr ? &ctx : nullptr));
                                 if (gr) *gr = maxpool2d_backward(ctx, ref);
                                 return f;
                               },
                               x}};
  }, rng);
}

Outcome roi_maxpool_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(10, [](Rng& r) {
    const Index tau = pick(r, 1, 3), mh = pick(r, 3, 10), mw = pick(r, 3, 10);
    const Tensord x = distinct_tensor({2, 2, mh, mw}, r);
    const auto regions = random_regions(r, 2, mh, mw, tau, 2);
    const RoiPoolSpec spec{tau, pick(r, 1, 5), pick(r, 1, 5)};
    const Tensord ref = random_tensor(roi_maxpool_forward(x, regions, spec).shape(), r);
    return std::vector<Probe>{{[=](const Tensord& v, Tensord* gr) {
                                 RoiPoolContext<double> ctx;
                                 const double f = dot(ref, roi_maxpool_forward(v, regions, spec, gr ? &ctx : nullptr));
                                 if (gr) *gr = roi_maxpool_backward(ctx, ref);
                                 return f;
                               },
                               x}};
  }, rng);
}

Outcome adaptive_pool_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(10, [](Rng& r) {
    const Tensord x = distinct_tensor({1, 2, pick(r, 2, 9), pick(r, 2, 9)}, r);
    const Index oh = pick(r, 1, 4), ow = pick(r, 1, 4);
    const Tensord ref = random_tensor({1, 2, oh, ow}, r);
    return std::vector<Probe>{{[=](const Tensord& v, Tensord* gr) {
                                 RoiPoolContext<double> ctx;
                                 const double f = dot(ref, adaptive_maxpool_forward(v, oh, ow, gr ? &ctx : nullptr));
                                 if (gr) *gr = adaptive_maxpool_backward(ctx, ref);
                                 return f;
                               },
                               x}};
  }, rng);
}

std::vector<Index> align_selection(const RoiAlignContext<double>& ctx) {
  std::vector<Index> sig;
  for (const auto& t : ctx.taps) sig.insert(sig.end(), std::begin(t.offset), std::end(t.offset));
  return sig;
}

// The winning sample of a bin flips where two samples tie; instances whose
// finite-difference steps change any selection are resampled.
Outcome roi_align_gradient(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  Index checked = 0;
  int resampled = 0;
  for (int done = 0; done < 10;) {
    const Index tau = pick(rng, 1, 3), mh = pick(rng, 3, 9), mw = pick(rng, 3, 9);
    const Tensord x = random_tensor({2, 2, mh, mw}, rng);
    const auto regions = random_regions(rng, 2, mh, mw, tau, 2);
    const RoiPoolSpec spec{tau, pick(rng, 1, 4), pick(rng, 1, 4)};
    const Index samples = pick(rng, 1, 2);
    const Tensord ref = random_tensor(roi_align_forward(x, regions, spec, samples).shape(), rng);
    std::vector<Index> base;
    bool kink = false;
    auto f = [&](const Tensord& v, Tensord* gr) {
      RoiAlignContext<double> ctx;
      const double val = dot(ref, roi_align_forward(v, regions, spec, samples, &ctx));
      if (gr) {
        base = align_selection(ctx);
        *gr = roi_align_backward(ctx, ref);
      } else if (align_selection(ctx) != base) {
        kink = true;
      }
      return val;
    };
    const GradcheckReport rep = gradcheck(f, x, kCheck);
    if (kink) {
      if (++resampled > 200) return {false, 1.0, kOpTolerance, "could not sample a tie-free instance"};
      continue;
    }
    worst = std::max(worst, rep.max_rel_error);
    checked += rep.checked;
    ++done;
  }
  return within(worst, kOpTolerance,
                count_detail("coordinates", checked) + ", " + count_detail("near-tie instances resampled", resampled));
}

Outcome affine_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(5, [](Rng& r) {
    const Index n = pick(r, 1, 4), d = pick(r, 1, 6), m = pick(r, 1, 6);
    const Tensord x = random_tensor({n, d}, r), w = random_tensor({d, m}, r), b = random_tensor({m}, r);
    const Tensord ref = random_tensor({n, m}, r);
    auto run = [=](const Tensord& xx, const Tensord& ww, const Tensord& bb, AffineGrads<double>* g) {
      AffineContext<double> ctx;
      const double v = dot(ref, affine_forward(xx, ww, bb, g ? &ctx : nullptr));
      if (g) *g = affine_backward(ctx, ref);
      return v;
    };
    return std::vector<Probe>{
        {[=](const Tensord& v, Tensord* gr) { AffineGrads<double> g; double f = run(v, w, b, gr ? &g : nullptr); if (gr) *gr = g.input; return f; }, x},
        {[=](const Tensord& v, Tensord* gr) { AffineGrads<double> g; double f = run(x, v, b, gr ? &g : nullptr); if (gr) *gr = g.weight; return f; }, w},
        {[=](const Tensord& v, Tensord* gr) { AffineGrads<double> g; double f = run(x, w, v, gr ? &g : nullptr); if (gr) *gr = g.bias; return f; }, b}};
  }, rng);
}

Outcome relu_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(5, [](Rng& r) {
    Tensord x = random_tensor({3, 7}, r);
    for (Index i = 0; i < x.size(); ++i)
      while (std::abs(x.data()[i]) < 1e-4) x.data()[i] = r.uniform(-1.0, 1.0);
    const Tensord ref = random_tensor({3, 7}, r);
    return std::vector<Probe>{{[=](const Tensord& v, Tensord* gr) {
                                 ReluContext<double> ctx;
                                 const double f = dot(ref, relu_forward(v, gr ? &ctx : nullptr));
                                 if (gr) *gr = relu_backward(ctx, ref);
                                 return f;
                               },
                               x}};
  }, rng);
}

Outcome softmax_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(5, [](Rng& r) {
    const Tensord c = random_tensor({pick(r, 1, 4), pick(r, 2, 10)}, r, -3.0, 3.0);
    const Tensord ref = random_tensor(c.shape(), r);
    return std::vector<Probe>{{[=](const Tensord& v, Tensord* gr) {
                                 SoftmaxContext<double> ctx;
                                 const double f = dot(ref, softmax_forward(v, gr ? &ctx : nullptr));
                                 if (gr) *gr = softmax_backward(ctx, ref);
                                 return f;
                               },
                               c}};
  }, rng);
}

Outcome concat_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(5, [](Rng& r) {
    const Index n = pick(r, 1, 4), d1 = pick(r, 1, 5), d2 = pick(r, 1, 5);
    const Tensord a = random_tensor({n, d1}, r), b = random_tensor({n, d2}, r);
    const Tensord ref = random_tensor({n, d1 + d2}, r);
    return std::vector<Probe>{
        {[=](const Tensord& v, Tensord* gr) { if (gr) *gr = concat_backward(ref, d1).first; return dot(ref, concat_forward(v, b)); }, a},
        {[=](const Tensord& v, Tensord* gr) { if (gr) *gr = concat_backward(ref, d1).second; return dot(ref, concat_forward(a, v)); }, b}};
  }, rng);
}

ScoreDistribution random_distribution(Rng& rng, Index bins) {
  Eigen::VectorXd p(bins);
  for (Index i = 0; i < bins; ++i) p[i] = rng.uniform(0.0, 1.0) < 0.2 ? 0.0 : rng.uniform();
  if (p.sum() == 0.0) p[0] = 1.0;
  return ScoreDistribution(p / p.sum());
}

Outcome emd_loss_gradient(Rng& rng, const VerifyOptions&) {
  return op_gradcheck(10, [](Rng& r) {
    const Index n = pick(r, 1, 4), k = pick(r, 2, 10);
    const Tensord logits = random_tensor({n, k}, r, -2.0, 2.0);
    std::vector<ScoreDistribution> targets;
    for (Index i = 0; i < n; ++i) targets.push_back(random_distribution(r, k));
    return std::vector<Probe>{{[=](const Tensord& v, Tensord* gr) { return emd_batch_loss(v, targets, gr); }, logits}};
  }, rng);
}

// Every ReLU sign and every max / align selection of a forward pass. Equal
// signatures at x and x +- h mean the finite difference saw no kink.
std::vector<Index> activation_signature(const ForwardCache& cache) {
  std::vector<Index> sig;
  for (const SampleCache& s : cache.samples) {
    for (const auto& r : s.relu)
      for (Index i = 0; i < r.input.size(); ++i) sig.push_back(r.input.data()[i] > 0.0);
    if (s.theme_relu.valid)
      for (Index i = 0; i < s.theme_relu.input.size(); ++i) sig.push_back(s.theme_relu.input.data()[i] > 0.0);
    for (const auto* a : {&s.roi.argmax, &s.pool3.argmax, &s.pool4.argmax, &s.head_pool.argmax}) sig.insert(sig.end(), a->begin(), a->end());
    for (const auto& t : s.align.taps) sig.insert(sig.end(), std::begin(t.offset), std::end(t.offset));
  }
  return sig;
}

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.canvas = 24;
  mc.stem1 = 3;
  mc.stem2 = 4;
  mc.roi_out = 4;
  mc.block1 = 4;
  mc.block2 = 4;
  mc.block3 = 4;
  mc.head_grid = 1;
  mc.themes = 3;
  mc.theme_width = 3;
  mc.bins = 5;
  return mc;
}

Tensord flatten(const ModelParams& p) {
  std::vector<double> v;
  for (const auto& e : p.entries()) v.insert(v.end(), e.tensor->data(), e.tensor->data() + e.tensor->size());
  return Tensord({static_cast<Index>(v.size())}, Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()))));
}

ModelParams unflatten(const ModelParams& like, const Tensord& x) {
  ModelParams q = like;
  Index o = 0;
  for (auto& e : q.entries()) {
    std::copy(x.data() + o, x.data() + o + e.tensor->size(), e.tensor->data());
    o += e.tensor->size();
  }
  return q;
}

// Full network plus batch EMD loss on a 2-sample batch, resampling parameters
// and inputs until no finite-difference step crosses a kink.
Outcome model_gradient(ModelVariant variant, PoolingKind pooling, Rng& rng) {
  ModelConfig mc = tiny_config();
  mc.variant = variant;
  mc.pooling = pooling;
  int resampled = 0;
  for (int attempt = 0; attempt < 25; ++attempt) {
    ModelParams p = init_params(mc, rng.next());
    for (auto& e : p.entries())
      if (e.name.ends_with(".bias"))
        for (Index i = 0; i < e.tensor->size(); ++i) e.tensor->data()[i] = rng.uniform(0.0, 0.2);
    PaddedBatch b;
    b.canvas = random_tensor({2, 3, mc.canvas, mc.canvas}, rng, 0.0, 1.0);
    if (uses_roi(variant)) {
      b.regions = {{0, 0, 0, pick(rng, 8, mc.canvas), pick(rng, 8, mc.canvas)}, {1, 0, 0, pick(rng, 8, mc.canvas), pick(rng, 8, mc.canvas)}};
      for (Index n = 0; n < 2; ++n) {
        const Region& r = b.regions[static_cast<std::size_t>(n)];
        for (Index c = 0; c < 3; ++c)
          for (Index y = 0; y < mc.canvas; ++y)
            for (Index x = 0; x < mc.canvas; ++x)
              if (x >= r.x1 || y >= r.y1) b.canvas(n, c, y, x) = 0.0;
      }
    } else {
      b.regions = {{0, 0, 0, mc.canvas, mc.canvas}, {1, 0, 0, mc.canvas, mc.canvas}};
    }
    b.themes = {static_cast<ThemeId>(pick(rng, 0, 2)), static_cast<ThemeId>(pick(rng, 0, 2))};
    b.targets = {random_distribution(rng, mc.bins), random_distribution(rng, mc.bins)};

    std::vector<Index> base_sig;
    bool kink = false;
    auto f = [&](const Tensord& x, Tensord* grad) {
      const ModelParams q = unflatten(p, x);
      ForwardResult fr = forward(q, b, variant, true, 1);
      Tensord gl;
      const double loss = emd_batch_loss(fr.logits, b.targets, grad ? &gl : nullptr);
      const std::vector<Index> sig = activation_signature(fr.cache);
      if (grad) {
        base_sig = sig;
        *grad = flatten(backward(q, fr.cache, gl, 1));
      } else if (sig != base_sig) {
        kink = true;
      }
      return loss;
    };
    const GradcheckReport rep = gradcheck(f, flatten(p), kCheck);
    if (kink) {
      ++resampled;
      continue;
    }
    return within(rep.max_rel_error, kModelTolerance,
                  count_detail("parameters", rep.checked) + ", " + count_detail("kinked instances resampled", resampled));
  }
  return {false, 1.0, kModelTolerance, "every sampled instance crossed a kink"};
}

// --- isolation --------------------------------------------------------------

struct IsolationCase {
  Tensord features;
  std::vector<Region> regions;
  RoiPoolSpec spec;
  std::vector<bool> inside;  // per feature element
};

IsolationCase isolation_case(Rng& rng, bool align) {
  IsolationCase c;
  const Index tau = pick(rng, 1, 4), mh = pick(rng, 4, 14), mw = pick(rng, 4, 14);
  c.features = random_tensor({1, pick(rng, 1, 3), mh, mw}, rng);
  c.regions = random_regions(rng, 1, mh, mw, tau, 1);
  c.spec = RoiPoolSpec{tau, pick(rng, 1, 6), pick(rng, 1, 6)};
  const Region& r = c.regions[0];
  Index x0, y0, x1, y1;
  if (align) {
    x0 = r.x0 / tau;
    y0 = r.y0 / tau;
    x1 = (r.x1 + tau - 1) / tau;
    y1 = (r.y1 + tau - 1) / tau;
  } else {
    const FeatureRect fr = map_region(r, tau, mh, mw);
    x0 = fr.x0, y0 = fr.y0, x1 = fr.x1, y1 = fr.y1;
  }
  c.inside.assign(static_cast<std::size_t>(c.features.size()), false);
  for (Index ch = 0; ch < c.features.dim(1); ++ch)
    for (Index y = y0; y < y1; ++y)
      for (Index x = x0; x < x1; ++x) c.inside[static_cast<std::size_t>((ch * mh + y) * mw + x)] = true;
  return c;
}

template <typename Fwd>
Outcome isolation_trials(Rng& rng, int trials, bool align, Fwd&& fwd) {
  int violations = 0;
  for (int t = 0; t < trials; ++t) {
    IsolationCase c = isolation_case(rng, align);
    const Tensord before = fwd(c.features, c.regions, c.spec);
    Tensord perturbed = c.features;
    for (Index i = 0; i < perturbed.size(); ++i)
      if (!c.inside[static_cast<std::size_t>(i)]) perturbed.data()[i] = rng.uniform(2.0, 3.0);
    if (!(fwd(perturbed, c.regions, c.spec) == before)) ++violations;
  }
  return {violations == 0, static_cast<double>(violations), 0.0,
          count_detail("trials", trials) + ", " + count_detail("outputs changed", violations)};
}

Outcome roi_isolation(Rng& rng, const VerifyOptions&) {
  return isolation_trials(rng, 1000, false, [](const Tensord& x, const std::vector<Region>& r, const RoiPoolSpec& s) {
    return roi_maxpool_forward(x, r, s);
  });
}

Outcome roi_align_isolation(Rng& rng, const VerifyOptions&) {
  return isolation_trials(rng, 1000, true, [](const Tensord& x, const std::vector<Region>& r, const RoiPoolSpec& s) {
    return roi_align_forward(x, r, s, 2);
  });
}

Outcome roi_padding_gradient(Rng& rng, const VerifyOptions&) {
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    IsolationCase c = isolation_case(rng, false);
    RoiPoolContext<double> ctx;
    const Tensord y = roi_maxpool_forward(c.features, c.regions, c.spec, &ctx);
    const Tensord g = roi_maxpool_backward(ctx, random_tensor(y.shape(), rng));
    for (Index i = 0; i < g.size(); ++i)
      if (!c.inside[static_cast<std::size_t>(i)] && g.data()[i] != 0.0) {
        ++violations;
        break;
      }
  }
  return {violations == 0, static_cast<double>(violations), 0.0,
          "1000 trials, " + count_detail("with non-zero padding gradient", violations)};
}

// --- invariance -------------------------------------------------------------

Image random_image(Rng& rng, Index w, Index h) {
  Image img(w, h);
  for (double& v : img.pixels()) v = std::round(rng.uniform() * 255.0) / 255.0;
  return img;
}

Outcome canvas_invariance(Rng& rng, const VerifyOptions& opt, PoolingKind pooling) {
  ModelConfig small;
  small.pooling = pooling;
  ModelParams p128 = init_params(small, rng.next());
  for (auto& e : p128.entries())
    if (e.name.ends_with(".bias"))
      for (Index i = 0; i < e.tensor->size(); ++i) e.tensor->data()[i] = rng.uniform(-0.05, 0.1);
  ModelParams p160 = p128;
  p160.config.canvas = 160;
  double worst = 0.0;
  for (int chunk = 0; chunk < 5; ++chunk) {
    std::vector<BatchSample> samples;
    for (int i = 0; i < 10; ++i)
      samples.push_back({random_image(rng, pick(rng, 8, 128), pick(rng, 8, 128)),
                         ScoreDistribution(Eigen::VectorXd::Constant(10, 0.1)), static_cast<ThemeId>(pick(rng, 0, 3))});
    const Tensord a = forward(p128, make_batch(samples, TransformMode::pad, 128), ModelVariant::pad_roi_theme, false, opt.threads).logits;
    const Tensord b = forward(p160, make_batch(samples, TransformMode::pad, 160), ModelVariant::pad_roi_theme, false, opt.threads).logits;
    worst = std::max(worst, max_abs_diff(softmax_forward(a), softmax_forward(b)));
    worst = std::max(worst, max_abs_diff(a, b));
  }
  return within(worst, 1e-12, "50 images, canvas 128 vs 160, logits and distributions");
}

Outcome pad_size_invariance(Rng& rng, const VerifyOptions& opt) { return canvas_invariance(rng, opt, PoolingKind::max); }
Outcome pad_size_invariance_align(Rng& rng, const VerifyOptions& opt) { return canvas_invariance(rng, opt, PoolingKind::align); }

Outcome theme_blind_invariance(Rng& rng, const VerifyOptions& opt) {
  ModelConfig mc;
  mc.canvas = 64;
  const ModelParams p = init_params(mc, rng.next());
  bool same = true;
  std::vector<BatchSample> samples;
  for (int i = 0; i < 4; ++i) samples.push_back({random_image(rng, pick(rng, 8, 64), pick(rng, 8, 64)), ScoreDistribution(Eigen::VectorXd::Constant(10, 0.1)), 0});
  const Tensord base = forward(p, make_batch(samples, TransformMode::pad, 64), ModelVariant::pad_roi, false, opt.threads).logits;
  for (ThemeId t = 1; t < mc.themes; ++t) {
    for (auto& s : samples) s.theme = t;
    same = same && forward(p, make_batch(samples, TransformMode::pad, 64), ModelVariant::pad_roi, false, opt.threads).logits == base;
  }
  return holds(same, "pad_roi logits bit-identical across all themes");
}

Outcome padding_band_invariance(Rng& rng, const VerifyOptions& opt) {
  ModelConfig mc;
  mc.canvas = 96;
  const ModelParams p = init_params(mc, rng.next());
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Image img = random_image(rng, pick(rng, 8, 90), pick(rng, 8, 90));
    PaddedBatch b = make_batch({{img, ScoreDistribution(Eigen::VectorXd::Constant(10, 0.1)), 1}}, TransformMode::pad, mc.canvas);
    const Tensord before = forward(p, b, ModelVariant::pad_roi_theme, false, opt.threads).logits;
    const Index xe = stem_footprint_end(mc, img.width()), ye = stem_footprint_end(mc, img.height());
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < mc.canvas; ++y)
        for (Index x = 0; x < mc.canvas; ++x)
          if (x >= xe || y >= ye) b.canvas(0, c, y, x) = rng.uniform();
    worst = std::max(worst, max_abs_diff(before, forward(p, b, ModelVariant::pad_roi_theme, false, opt.threads).logits));
  }
  return within(worst, 0.0, "10 images, padding beyond the stem footprint randomized");
}

// --- metrics ----------------------------------------------------------------

Eigen::VectorXd one_hot(Index i, Index k) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(k);
  v[i] = 1.0;
  return v;
}

Outcome emd_one_hot(Rng&, const VerifyOptions&) {
  int mismatches = 0;
  for (Index k = 2; k <= 12; ++k)
    for (Index i = 0; i < k; ++i)
      for (Index j = 0; j < k; ++j)
        if (emd(one_hot(i, k), one_hot(j, k), 1) != static_cast<double>(std::abs(i - j)) / static_cast<double>(k)) ++mismatches;
  return {mismatches == 0, static_cast<double>(mismatches), 0.0, "EMD(r=1) of one-hot pairs equals |i-j|/K exactly, K=2..12"};
}

Outcome kl_one_hot_uniform(Rng&, const VerifyOptions&) {
  double worst = 0.0;
  for (Index k = 2; k <= 20; ++k)
    for (Index i = 0; i < k; ++i)
      worst = std::max(worst, std::abs(kl_divergence(one_hot(i, k), Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k))) -
                                       std::log(static_cast<double>(k))));
  return within(worst, 1e-12, "KL(one-hot || uniform) = ln K, K=2..20");
}

Outcome dist_std_uniform(Rng&, const VerifyOptions&) {
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(10, 0.1);
  return within(std::max(std::abs(dist_std(u) - 2.87228), std::abs(dist_mean(u) - 5.5) > 1e-12 ? 1.0 : 0.0), 1e-5,
                "uniform over 1..10: std 2.87228, mean 5.5");
}

Outcome rank_correlation_oracle(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Index n = pick(rng, 3, 40);
    std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    do {
      for (auto& v : x) v = static_cast<double>(pick(rng, 0, 5));
      for (auto& v : y) v = static_cast<double>(pick(rng, 0, 5)) + (rng.uniform() < 0.5 ? 0.5 : 0.0);
    } while (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
             std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; }));
    const Eigen::Map<const Eigen::VectorXd> ex(x.data(), n), ey(y.data(), n);
    worst = std::max({worst, std::abs(srcc(ex, ey) - reference::spearman(x, y)), std::abs(plcc(ex, ey) - reference::pearson(x, y))});
  }
  return within(worst, 1e-12, "100 tied sequences against the O(n^2) rank oracle");
}

Outcome emd_gradient_zero_at_match(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const ScoreDistribution p = random_distribution(rng, 10);
    worst = std::max({worst, emd(p, p, 1), emd(p, p, 2), emd2_grad_probs(p.probs(), p.probs()).cwiseAbs().maxCoeff()});
  }
  return within(worst, 0.0, "EMD and its gradient vanish at identical distributions");
}

// --- data -------------------------------------------------------------------

Outcome pad_lossless(Rng& rng, const VerifyOptions&) {
  bool ok = true;
  for (int t = 0; t < 50; ++t) {
    const Image img = random_image(rng, pick(rng, 1, 64), pick(rng, 1, 64));
    const PaddedImage p = pad_image(img, 64);
    const Region& r = p.region;
    ok = ok && r.x0 == 0 && r.y0 == 0 && crop(p.canvas, r.x0, r.y0, r.width(), r.height()) == img;
    for (Index y = 0; y < 64 && ok; ++y)
      for (Index x = 0; x < 64; ++x)
        if ((x >= r.x1 || y >= r.y1) && (p.canvas.at(x, y, 0) != 0.0 || p.canvas.at(x, y, 1) != 0.0 || p.canvas.at(x, y, 2) != 0.0)) ok = false;
  }
  return holds(ok, "50 images: crop by region restores the image, padding is zero");
}

Outcome augment_frequency(Rng& rng, const VerifyOptions&) {
  const Image img = random_image(rng, 16, 12);
  const std::vector<Image> views = test_time_views(img);
  std::array<int, kViewCount> hits{};
  const int draws = 6000;
  for (int i = 0; i < draws; ++i) {
    const Image v = augment(img, rng);
    for (int k = 0; k < kViewCount; ++k)
      if (v == views[static_cast<std::size_t>(k)]) {
        ++hits[static_cast<std::size_t>(k)];
        break;
      }
  }
  double worst = 0.0;
  for (int h : hits) worst = std::max(worst, std::abs(static_cast<double>(h) / draws - 1.0 / kViewCount));
  return within(worst, 0.02, "6000 draws, each view within 1/6 +- 0.02");
}

Outcome resize_ramp(Rng& rng, const VerifyOptions&) {
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Index w = pick(rng, 2, 40), h = pick(rng, 1, 10), ow = pick(rng, 1, 60), oh = pick(rng, 1, 12);
    const double a = rng.uniform(-0.01, 0.01), c = 0.5;
    Image img(w, h);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        for (Index ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c + a * static_cast<double>(x);
    const Image out = resize_bilinear(img, ow, oh);
    for (Index y = 0; y < oh; ++y)
      for (Index x = 0; x < ow; ++x) {
        const double u = std::clamp((static_cast<double>(x) + 0.5) * static_cast<double>(w) / static_cast<double>(ow) - 0.5, 0.0,
                                    static_cast<double>(w - 1));
        worst = std::max(worst, std::abs(out.at(x, y, 0) - (c + a * u)));
      }
  }
  return within(worst, 1e-12, "linear ramps reproduced at half-pixel source coordinates");
}

Outcome synth_determinism(Rng& rng, const VerifyOptions&) {
  SynthConfig cfg;
  cfg.count = 12;
  cfg.seed = rng.next();
  const SynthDataset a = synth_generate(cfg), b = synth_generate(cfg);
  bool same = true;
  for (std::size_t i = 0; i < a.records.size(); ++i)
    same = same && a.records[i].raster->rgb == b.records[i].raster->rgb && a.records[i].votes.counts == b.records[i].votes.counts &&
           a.records[i].theme == b.records[i].theme;
  cfg.seed += 1;
  const SynthDataset c = synth_generate(cfg);
  return holds(same && c.records[0].raster->rgb != a.records[0].raster->rgb, "same seed bit-identical, new seed differs");
}

Outcome synth_theme_contrast(Rng& rng, const VerifyOptions&) {
  SynthConfig cfg;
  cfg.count = 400;
  cfg.min_extent = 8;
  cfg.max_extent = 16;
  cfg.seed = rng.next();
  const SynthDataset d = synth_generate(cfg);
  double even = 0, odd = 0;
  int ne = 0, no = 0;
  bool votes_ok = true;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    votes_ok = votes_ok && d.records[i].votes.total() == cfg.voters;
    if (d.latents[i].blur != 2) continue;
    const double m = dist_mean(normalize_votes(d.records[i].votes)) - (d.latents[i].period - 10.0) / 4.0;
    (d.latents[i].theme % 2 == 0 ? even : odd) += m;
    ++(d.latents[i].theme % 2 == 0 ? ne : no);
  }
  return holds(votes_ok && ne > 0 && no > 0 && even / ne > odd / no,
               "every histogram has 50 votes; blur 2 scores higher under even themes");
}

// --- training ---------------------------------------------------------------

Outcome lr_schedule(Rng&, const VerifyOptions&) {
  const OptimizerConfig o;
  double worst = std::max(std::abs(lr_at(o, 0, ParamGroup::conv) - 1e-3), std::abs(lr_at(o, 25, ParamGroup::head) - 2.5e-3));
  for (Index e = 0; e < 60; ++e) worst = std::max(worst, std::abs(lr_at(o, e, ParamGroup::head) - 10.0 * lr_at(o, e, ParamGroup::conv)));
  return within(worst, 1e-15, "base 1e-3 halved every 10 epochs, head group 10x");
}

Outcome sgd_recurrence(Rng& rng, const VerifyOptions&) {
  const Tensord w0 = random_tensor({5}, rng), g = random_tensor({5}, rng);
  Tensord w = w0, v = Tensord::zeros_like(w0);
  const double lr = 0.01;
  sgd_update(w, g, v, lr, 0.9, 0.0);
  sgd_update(w, g, v, lr, 0.9, 0.0);
  Tensord expect = w0;
  expect.values() -= lr * g.values() + lr * 1.9 * g.values();
  Tensord plain = w0, v2 = Tensord::zeros_like(w0);
  sgd_update(plain, g, v2, lr, 0.0, 0.0);
  Tensord plain_expect = w0;
  plain_expect.values() -= lr * g.values();
  return within(std::max(max_abs_diff(w, expect), max_abs_diff(plain, plain_expect)), 1e-15,
                "two momentum steps and the plain step match the hand recurrence");
}

Outcome checkpoint_roundtrip(Rng& rng, const VerifyOptions&) {
  const ModelParams p = init_params(tiny_config(), rng.next());
  const auto path = std::filesystem::temp_directory_path() /
                    ("aesth-verify-" + std::to_string(rng.next()) + ".ckpt");
  save_checkpoint(path, p);
  const ModelParams q = load_checkpoint(path);
  std::error_code ec;
  std::filesystem::remove(path, ec);
  bool same = q.config == p.config;
  auto a = p.entries();
  auto b = q.entries();
  for (std::size_t i = 0; i < a.size() && same; ++i) same = a[i].name == b[i].name && *a[i].tensor == *b[i].tensor;
  return holds(same, "save then load is bit-identical");
}

Outcome evaluate_oracle_predictor(Rng& rng, const VerifyOptions&) {
  std::vector<ScoreDistribution> truth;
  for (int i = 0; i < 30; ++i) truth.push_back(random_distribution(rng, 10));
  const MetricReport r = summarize_predictions(truth, truth);
  const double dev = std::max({r.euclidean, r.kl, r.js, r.chi2, r.emd_r1, r.emd_r2, r.cosine, r.mse_mean,
                               std::abs(r.srcc_mean.value_or(0.0) - 1.0), std::abs(r.plcc_mean.value_or(0.0) - 1.0)});
  return within(dev, 1e-12, "ground truth fed back: divergences 0, correlations 1");
}

Outcome visual_feature_width(Rng&, const VerifyOptions&) {
  const ModelConfig mc;
  return holds(mc.visual_features() == 2048, "default widths give 2048 visual features");
}

const std::vector<Property>& registry() {
  static const std::vector<Property> props = {
      {"conv2d_oracle", "oracle", conv2d_oracle},
      {"maxpool2d_oracle", "oracle", maxpool_oracle},
      {"roi_maxpool_oracle", "oracle", roi_maxpool_oracle},
      {"adaptive_maxpool_oracle", "oracle", adaptive_pool_oracle},
      {"matmul_oracle", "oracle", matmul_oracle},
      {"softmax_normalization", "oracle", softmax_normalization},
      {"conv2d_gradient", "gradient", conv2d_gradient},
      {"maxpool2d_gradient", "gradient", maxpool_gradient},
      {"roi_maxpool_gradient", "gradient", roi_maxpool_gradient},
      {"adaptive_maxpool_gradient", "gradient", adaptive_pool_gradient},
      {"roi_align_gradient", "gradient", roi_align_gradient},
      {"affine_gradient", "gradient", affine_gradient},
      {"relu_gradient", "gradient", relu_gradient},
      {"softmax_gradient", "gradient", softmax_gradient},
      {"concat_gradient", "gradient", concat_gradient},
      {"emd_loss_gradient", "gradient", emd_loss_gradient},
      {"model_gradient_pad_roi_theme", "gradient",
       [](Rng& r, const VerifyOptions&) { return model_gradient(ModelVariant::pad_roi_theme, PoolingKind::max, r); }},
      {"model_gradient_roi_align", "gradient",
       [](Rng& r, const VerifyOptions&) { return model_gradient(ModelVariant::pad_roi_theme, PoolingKind::align, r); }},
      {"model_gradient_resize", "gradient",
       [](Rng& r, const VerifyOptions&) { return model_gradient(ModelVariant::resize, PoolingKind::max, r); }},
      {"roi_isolation", "isolation", roi_isolation},
      {"roi_padding_gradient_zero", "isolation", roi_padding_gradient},
      {"roi_align_isolation", "isolation", roi_align_isolation},
      {"pad_size_invariance", "invariance", pad_size_invariance},
      {"pad_size_invariance_align", "invariance", pad_size_invariance_align},
      {"theme_blind_invariance", "invariance", theme_blind_invariance},
      {"padding_band_invariance", "invariance", padding_band_invariance},
      {"emd_one_hot_closed_form", "metrics", emd_one_hot},
      {"kl_one_hot_uniform", "metrics", kl_one_hot_uniform},
      {"dist_std_uniform", "metrics", dist_std_uniform},
      {"rank_correlation_oracle", "metrics", rank_correlation_oracle},
      {"emd_identity", "metrics", emd_gradient_zero_at_match},
      {"pad_lossless", "data", pad_lossless},
      {"augment_frequency", "data", augment_frequency},
      {"resize_ramp", "data", resize_ramp},
      {"synth_determinism", "data", synth_determinism},
      {"synth_theme_contrast", "data", synth_theme_contrast},
      {"lr_schedule", "training", lr_schedule},
      {"sgd_recurrence", "training", sgd_recurrence},
      {"checkpoint_roundtrip", "training", checkpoint_roundtrip},
      {"evaluate_oracle_predictor", "training", evaluate_oracle_predictor},
      {"visual_feature_width", "training", visual_feature_width},
  };
  return props;
}

}  // namespace

const std::vector<std::string>& property_scopes() {
  static const std::vector<std::string> scopes = {"oracle", "gradient", "isolation", "invariance", "metrics", "data", "training"};
  return scopes;
}

std::vector<PropertyResult> run_properties(const VerifyOptions& options) {
  const auto& scopes = property_scopes();
  if (options.scope != "all" && std::find(scopes.begin(), scopes.end(), options.scope) == scopes.end())
    throw UsageError("verify: unknown scope '" + options.scope + "'");
  std::vector<PropertyResult> results;
  std::uint64_t index = 0;
  for (const Property& p : registry()) {
    ++index;
    if (options.scope != "all" && options.scope != p.scope) continue;
    // Each property draws from its own stream so scopes can run independently.
    Rng rng(derive_seed(options.seed, index));
    PropertyResult r;
    r.name = p.name;
    r.scope = p.scope;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Outcome o = p.run(rng, options);
      r.passed = o.passed;
      r.measured = o.measured;
      r.tolerance = o.tolerance;
      r.detail = o.detail;
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(std::move(r));
  }
  return results;
}

nlohmann::ordered_json to_json(const PropertyResult& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["scope"] = r.scope;
  j["passed"] = r.passed;
  j["measured"] = r.measured;
  j["tolerance"] = r.tolerance;
  j["detail"] = r.detail;
  return j;
}

}  // namespace aesth
