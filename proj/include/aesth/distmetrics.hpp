#pragma once

// Score distributions over K ordered bins, the EMD training loss, and the
// evaluation metrics (distribution distances, moment summaries, correlations).
//
// Metric functions accept any Eigen vector expressions, so they compose with
// rows of prediction matrices without copies.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "aesth/error.hpp"

namespace aesth {

/// Raw rating counts over K ordered scores (score i+1 lives in counts[i]).
struct VoteHistogram {
  std::vector<std::int64_t> counts;

  Eigen::Index bins() const { return static_cast<Eigen::Index>(counts.size()); }
  std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
};

/// Probability vector over K ordered scores.
class ScoreDistribution {
 public:
  static constexpr double kTolerance = 1e-9;

  ScoreDistribution() = default;

  /// Validates non-negativity and unit mass within kTolerance.
  explicit ScoreDistribution(Eigen::VectorXd probs) : probs_(std::move(probs)) {
    if (probs_.size() < 1) throw DimensionError("ScoreDistribution: empty");
    if (!probs_.allFinite()) throw NumericError("ScoreDistribution: non-finite probability");
    if ((probs_.array() < 0).any()) throw RangeError("ScoreDistribution: negative probability");
    if (std::abs(probs_.sum() - 1.0) > kTolerance)
      throw RangeError("ScoreDistribution: mass " + std::to_string(probs_.sum()) + " != 1");
  }

  const Eigen::VectorXd& probs() const { return probs_; }
  Eigen::Index bins() const { return probs_.size(); }
  double operator[](Eigen::Index i) const { return probs_[i]; }

  Eigen::VectorXd cdf() const {
    Eigen::VectorXd c(probs_.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < probs_.size(); ++i) c[i] = (acc += probs_[i]);
    return c;
  }

 private:
  Eigen::VectorXd probs_;
};

/// p_i = v_i / v.
inline ScoreDistribution normalize_votes(const VoteHistogram& h) {
  if (h.counts.empty()) throw EmptyHistogramError("normalize_votes: no bins");
  for (auto v : h.counts)
    if (v < 0) throw RangeError("normalize_votes: negative vote count");
  const std::int64_t total = h.total();
  if (total < 1) throw EmptyHistogramError("normalize_votes: histogram has no votes");
  Eigen::VectorXd p(h.bins());
  for (Eigen::Index i = 0; i < h.bins(); ++i)
    p[i] = static_cast<double>(h.counts[static_cast<std::size_t>(i)]) / static_cast<double>(total);
  return ScoreDistribution(std::move(p));
}

namespace detail {

template <typename A, typename B>
void require_same_bins(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q, const char* what) {
  if (p.size() != q.size())
    throw DimensionError(std::string(what) + ": " + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()) + " bins");
}

}  // namespace detail

/// Earth mover's distance over CDFs: ((1/K) sum_k |CDF_p(k) - CDF_q(k)|^r)^(1/r).
template <typename A, typename B>
double emd(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q, int r) {
  detail::require_same_bins(p, q, "emd");
  if (r < 1) throw UsageError("emd: exponent r must be >= 1");
  double cp = 0.0, cq = 0.0, acc = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    cp += p[k];
    cq += q[k];
    const double d = std::abs(cp - cq);
    acc += r == 1 ? d : (r == 2 ? d * d : std::pow(d, r));
  }
  const double mean = acc / static_cast<double>(p.size());
  return r == 1 ? mean : (r == 2 ? std::sqrt(mean) : std::pow(mean, 1.0 / r));
}

inline double emd(const ScoreDistribution& p, const ScoreDistribution& q, int r) {
  return emd(p.probs(), q.probs(), r);
}

/// Gradient of EMD(r=2) with respect to the predicted probabilities. Zero
/// where the loss itself is zero (the square root is not differentiable there).
template <typename A, typename B>
Eigen::VectorXd emd2_grad_probs(const Eigen::MatrixBase<A>& predicted, const Eigen::MatrixBase<B>& target) {
  detail::require_same_bins(predicted, target, "emd2_grad_probs");
  const Eigen::Index k = predicted.size();
  Eigen::VectorXd diff(k);
  double cp = 0.0, cq = 0.0, acc = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    cp += predicted[i];
    cq += target[i];
    diff[i] = cp - cq;
    acc += diff[i] * diff[i];
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(k);
  const double loss = std::sqrt(acc / static_cast<double>(k));
  if (loss == 0.0) return g;
  // dL/dp_i = (1 / (K L)) * sum_{k >= i} D_k
  double tail = 0.0;
  for (Eigen::Index i = k - 1; i >= 0; --i) {
    tail += diff[i];
    g[i] = tail / (static_cast<double>(k) * loss);
  }
  return g;
}

/// Gradient of EMD(r=2)(softmax(c), target) with respect to the logits c,
/// given predicted = softmax(c).
template <typename A, typename B>
Eigen::VectorXd emd_loss_grad(const Eigen::MatrixBase<A>& predicted, const Eigen::MatrixBase<B>& target) {
  const Eigen::VectorXd gp = emd2_grad_probs(predicted, target);
  const double dot = gp.dot(predicted.derived().template cast<double>());
  return predicted.cwiseProduct((gp.array() - dot).matrix());
}

struct Divergences {
  double euclidean = 0.0;
  double kl = 0.0;
  double js = 0.0;
  double chi2 = 0.0;
  double cosine_distance = 0.0;
};

/// Added to a log argument or denominator only when the unsmoothed term is
/// undefined (a zero in the reference distribution).
inline constexpr double kDivergenceEpsilon = 1e-12;

/// KL(p || q) = sum p_i log(p_i / q_i); terms with p_i = 0 contribute 0.
template <typename A, typename B>
double kl_divergence(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q) {
  detail::require_same_bins(p, q, "kl_divergence");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    const double qi = q[i] > 0.0 ? q[i] : q[i] + kDivergenceEpsilon;
    acc += p[i] * std::log(p[i] / qi);
  }
  return std::max(acc, 0.0);
}

template <typename A, typename B>
Divergences divergences(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q) {
  detail::require_same_bins(p, q, "divergences");
  Divergences d;
  d.euclidean = (p - q).norm();
  d.kl = kl_divergence(p, q);
  const Eigen::VectorXd m = 0.5 * (p + q);
  d.js = 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m);
  double chi = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double den = p[i] + q[i];
    const double diff = p[i] - q[i];
    if (diff == 0.0) continue;
    chi += diff * diff / (den > 0.0 ? den : den + kDivergenceEpsilon);
  }
  d.chi2 = chi;
  const double norms = p.norm() * q.norm();
  d.cosine_distance = norms > 0.0 ? std::max(0.0, 1.0 - p.dot(q) / norms) : 1.0;
  return d;
}

inline Divergences divergences(const ScoreDistribution& p, const ScoreDistribution& q) {
  return divergences(p.probs(), q.probs());
}

/// Mean score with scores 1..K.
template <typename A>
double dist_mean(const Eigen::MatrixBase<A>& p) {
  double mu = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) mu += static_cast<double>(i + 1) * p[i];
  return mu;
}

/// Standard deviation of the score, sqrt(E[s^2] - mu^2) clamped at 0.
template <typename A>
double dist_std(const Eigen::MatrixBase<A>& p) {
  double mu = 0.0, m2 = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double s = static_cast<double>(i + 1);
    mu += s * p[i];
    m2 += s * s * p[i];
  }
  return std::sqrt(std::max(0.0, m2 - mu * mu));
}

inline double dist_mean(const ScoreDistribution& p) { return dist_mean(p.probs()); }
inline double dist_std(const ScoreDistribution& p) { return dist_std(p.probs()); }

// ---------------------------------------------------------------------------
// Correlations over per-record scalar summaries.

namespace detail {

template <typename A, typename B>
void require_paired(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y, const char* what) {
  if (x.size() != y.size())
    throw DimensionError(std::string(what) + ": lengths " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
  if (x.size() < 2) throw DimensionError(std::string(what) + ": need at least two samples");
}

}  // namespace detail

/// Fractional ranks (1-based); tied values share the average of their ranks.
template <typename A>
Eigen::VectorXd fractional_ranks(const Eigen::MatrixBase<A>& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && x[order[static_cast<std::size_t>(j + 1)]] == x[order[static_cast<std::size_t>(i)]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index t = i; t <= j; ++t) ranks[order[static_cast<std::size_t>(t)]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Sample Pearson correlation.
template <typename A, typename B>
double plcc(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
  detail::require_paired(x, y, "plcc");
  if (x.maxCoeff() == x.minCoeff() || y.maxCoeff() == y.minCoeff())
    throw UndefinedCorrelationError("plcc: constant sequence");
  const Eigen::VectorXd xc = x.template cast<double>().array() - x.template cast<double>().mean();
  const Eigen::VectorXd yc = y.template cast<double>().array() - y.template cast<double>().mean();
  const double sxx = xc.squaredNorm(), syy = yc.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("plcc: constant sequence");
  return xc.dot(yc) / std::sqrt(sxx * syy);
}

/// Spearman correlation: Pearson correlation of fractional ranks.
template <typename A, typename B>
double srcc(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
  detail::require_paired(x, y, "srcc");
  try {
    return plcc(fractional_ranks(x), fractional_ranks(y));
  } catch (const UndefinedCorrelationError&) {
    throw UndefinedCorrelationError("srcc: constant sequence");
  }
}

template <typename A, typename B>
double mse(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
  detail::require_paired(x, y, "mse");
  return (x - y).squaredNorm() / static_cast<double>(x.size());
}

}  // namespace aesth
