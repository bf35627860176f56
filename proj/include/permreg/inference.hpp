#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "permreg/candidates.hpp"
#include "permreg/errors.hpp"
#include "permreg/numerics.hpp"
#include "permreg/parallel.hpp"
#include "permreg/permutations.hpp"
#include "permreg/rng.hpp"

namespace permreg {

// ----------------------------------------------------------------------------
// Pivot and sufficient statistics
// ----------------------------------------------------------------------------

// F-pivot for the pair (P, beta): ratio of the fitted-space discrepancy to
// the residual variance,
//   T = (|| M_{PX} Y - P X beta ||^2 / p) / (|| (I - M_{PX}) Y ||^2 / (n-p)).
// When (P, beta) generated the data, T follows F_{p, n-p} exactly for any
// noise scale.
inline double test_statistic(const Vector& y, const Matrix& x, const SparsePermutation& pi,
                             const Vector& beta) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (y.size() != n) throw LengthMismatch("test_statistic: response length");
  if (beta.size() != p) throw LengthMismatch("test_statistic: beta length");
  if (pi.n() != n) throw LengthMismatch("test_statistic: permutation size");
  if (n <= p) throw DomainError("test_statistic: need n > p");
  const Matrix px = pi.permute_rows(x);
  const Matrix q = orthonormal_basis(px);
  const Vector fitted = q * (q.transpose() * y);
  const double num = (fitted - px * beta).squaredNorm() / p;
  const double den = (y - fitted).squaredNorm() / (n - p);
  return num / den;
}

struct SuffStats {
  Vector s1;        // fitted values M_{PX} Y
  double s2 = 0.0;  // residual norm || (I - M_{PX}) Y ||
};

// Sufficient statistics for (beta, sigma) under a fixed permutation; the
// conditional law of Y given them is uniform on a sphere slice and is what
// the Monte Carlo calibration resamples from.
inline SuffStats sufficient_stats(const Vector& y, const Matrix& x,
                                  const SparsePermutation& pi) {
  if (y.size() != x.rows()) throw LengthMismatch("sufficient_stats: response length");
  if (pi.n() != x.rows()) throw LengthMismatch("sufficient_stats: permutation size");
  const Matrix q = orthonormal_basis(pi.permute_rows(x));
  SuffStats s;
  s.s1 = q * (q.transpose() * y);
  s.s2 = (y - s.s1).norm();
  return s;
}

// ----------------------------------------------------------------------------
// Best fit within a candidate set
// ----------------------------------------------------------------------------

namespace detail {

// Orthonormal bases of span(PX) for every candidate, computed once.
class CandidateProjections {
 public:
  CandidateProjections(const Matrix& x, const CandidateSet& cs) : cs_(&cs) {
    bases_.reserve(cs.size());
    for (const auto& pi : cs.uniques()) bases_.push_back(orthonormal_basis(pi.permute_rows(x)));
  }

  const Matrix& basis(int i) const { return bases_.at(i); }

  // Index of the candidate whose column span leaves the smallest residual.
  // Ties go to the smaller displacement, then to candidate order; the order
  // is first-appearance order of the draws, so the result is reproducible.
  int best_index(const Vector& y, double* rss_out = nullptr) const {
    int best = -1;
    double best_rss = std::numeric_limits<double>::infinity();
    int best_d = std::numeric_limits<int>::max();
    for (int i = 0; i < cs_->size(); ++i) {
      const Matrix& q = bases_[i];
      const double rss = (y - q * (q.transpose() * y)).squaredNorm();
      const int d = cs_->unique(i).hamming_distance();
      if (rss < best_rss || (rss == best_rss && d < best_d)) {
        best = i;
        best_rss = rss;
        best_d = d;
      }
    }
    if (rss_out != nullptr) *rss_out = best_rss;
    return best;
  }

 private:
  const CandidateSet* cs_;
  std::vector<Matrix> bases_;
};

}  // namespace detail

struct BestFit {
  int index = -1;
  double rss = 0.0;
  int hamming = 0;
};

inline BestFit best_fit_in_set(const Vector& y, const Matrix& x, const CandidateSet& cs) {
  if (cs.size() == 0) throw EmptySet("best_fit_in_set: empty candidate set");
  if (y.size() != x.rows()) throw LengthMismatch("best_fit_in_set: response length");
  const detail::CandidateProjections proj(x, cs);
  BestFit bf;
  bf.index = proj.best_index(y, &bf.rss);
  bf.hamming = cs.unique(bf.index).hamming_distance();
  return bf;
}

// ----------------------------------------------------------------------------
// Conditional Monte Carlo sparsity test
// ----------------------------------------------------------------------------
//
// Statistic: D(Y) = displacement of the best-fitting candidate.  Under a
// null permutation P the law of Y given the sufficient statistics is known,
// so the null distribution of D is simulated exactly: synthetic responses
//   Y*_m = s1 + s2 * (I - M_{PX}) u*_m / || (I - M_{PX}) u*_m ||
// share the observed sufficient statistics, and D(Y*_m) calibrates the
// critical value.  The composite null takes the largest critical value over
// every candidate at the null sparsity level ("localized null"): the test
// rejects only if the observed displacement beats all of them.

struct SparsityTestConfig {
  int k0 = 0;
  double alpha = 0.05;
  int M = 200;
  std::uint64_t seed = 0;
  int threads = 0;

  bool operator==(const SparsityTestConfig&) const = default;
};

struct SparsityTestReport {
  SparsityTestConfig config;
  int d_obs = 0;
  int c_hat = -1;
  std::vector<int> per_null_quantiles;
  double p_value = 1.0;
  bool reject = false;
  int null_set_size = 0;
  bool degenerate_null = false;

  bool operator==(const SparsityTestReport&) const = default;
};

// Stream for calibration draw m under the null candidate at position
// null_index.  Chained off substream 1 of the seed so calibration noise is
// independent of the candidate-generation streams (seed, 1..L).
inline RngStream calibration_stream(std::uint64_t seed, int null_index, int m) {
  return RngStream(seed, 0)
      .fork(1)
      .fork(static_cast<std::uint64_t>(null_index))
      .fork(static_cast<std::uint64_t>(m));
}

namespace detail {

inline void check_test_config(const SparsityTestConfig& cfg) {
  if (cfg.k0 < 0) throw DomainError("sparsity_test: k0 must be non-negative");
  if (!(cfg.alpha > 0.0) || !(cfg.alpha < 1.0))
    throw DomainError("sparsity_test: alpha must lie in (0, 1)");
  // (M+1) * alpha >= 1 keeps the calibration order statistic strictly inside
  // the simulated sample; below that the test can never reject.
  if (cfg.M < 1 || (cfg.M + 1) * cfg.alpha < 1.0)
    throw DomainError("sparsity_test: M too small for the requested alpha (need (M+1)*alpha >= 1)");
}

// Conservative finite-sample order statistic: the ceil((1-alpha)(M+1))-th
// smallest of the M simulated values (clamped to the sample).
inline int mc_order_statistic(const std::vector<int>& sorted, double alpha) {
  const int m = static_cast<int>(sorted.size());
  int idx = static_cast<int>(std::ceil((1.0 - alpha) * (m + 1)));
  idx = std::clamp(idx, 1, m);
  return sorted[idx - 1];
}

}  // namespace detail

// Critical value for a single null candidate: the conservative (1-alpha)
// order statistic of the simulated displacement distribution.
inline int conditional_mc_quantile(const Vector& y, const Matrix& x, const CandidateSet& cs,
                                   int null_index, const SparsityTestConfig& cfg) {
  detail::check_test_config(cfg);
  if (null_index < 0 || null_index >= cs.size())
    throw DomainError("conditional_mc_quantile: null index out of range");
  const int n = static_cast<int>(x.rows());
  const detail::CandidateProjections proj(x, cs);
  const Matrix& q = proj.basis(null_index);
  const Vector s1 = q * (q.transpose() * y);
  const double s2 = (y - s1).norm();
  std::vector<int> sample(cfg.M);
  parallel_for(cfg.M, cfg.threads, [&](int m) {
    const Vector u = gaussian_vector(calibration_stream(cfg.seed, null_index, m), n);
    const Vector r = u - q * (q.transpose() * u);
    const double rn = r.norm();
    Vector ystar = s1;
    if (s2 > 0.0 && rn > 0.0) ystar += (s2 / rn) * r;
    sample[m] = cs.unique(proj.best_index(ystar)).hamming_distance();
  });
  std::sort(sample.begin(), sample.end());
  return detail::mc_order_statistic(sample, cfg.alpha);
}

// Full composite test.  An empty localized null (no candidate is k0-sparse)
// is itself decisive evidence against the null within the candidate set:
// the report flags the degeneracy and rejects with c_hat = -1, p_value = 0.
inline SparsityTestReport sparsity_test(const Vector& y, const Matrix& x,
                                        const CandidateSet& cs,
                                        const SparsityTestConfig& cfg) {
  detail::check_test_config(cfg);
  if (cs.size() == 0) throw EmptySet("sparsity_test: empty candidate set");
  if (y.size() != x.rows()) throw LengthMismatch("sparsity_test: response length");
  const int n = static_cast<int>(x.rows());

  SparsityTestReport rep;
  rep.config = cfg;

  const detail::CandidateProjections proj(x, cs);
  rep.d_obs = cs.unique(proj.best_index(y)).hamming_distance();

  std::vector<int> null_indices;
  for (int i = 0; i < cs.size(); ++i)
    if (cs.unique(i).hamming_distance() <= cfg.k0) null_indices.push_back(i);
  rep.null_set_size = static_cast<int>(null_indices.size());

  if (null_indices.empty()) {
    rep.degenerate_null = true;
    rep.reject = true;
    rep.c_hat = -1;
    rep.p_value = 0.0;
    return rep;
  }

  // Simulate all null samples; the (null, m) grid is flattened so threads
  // stay busy even with a single null candidate.
  const int nulls = static_cast<int>(null_indices.size());
  std::vector<std::vector<int>> samples(nulls, std::vector<int>(cfg.M));
  parallel_for(nulls * cfg.M, cfg.threads, [&](int t) {
    const int j = t / cfg.M;
    const int m = t % cfg.M;
    const int idx = null_indices[j];
    const Matrix& q = proj.basis(idx);
    const Vector s1 = q * (q.transpose() * y);
    const double s2 = (y - s1).norm();
    const Vector u = gaussian_vector(calibration_stream(cfg.seed, idx, m), n);
    const Vector r = u - q * (q.transpose() * u);
    const double rn = r.norm();
    Vector ystar = s1;
    if (s2 > 0.0 && rn > 0.0) ystar += (s2 / rn) * r;
    samples[j][m] = cs.unique(proj.best_index(ystar)).hamming_distance();
  });
  for (auto& s : samples) std::sort(s.begin(), s.end());

  rep.per_null_quantiles.resize(nulls);
  int c_hat = -1;
  for (int j = 0; j < nulls; ++j) {
    rep.per_null_quantiles[j] = detail::mc_order_statistic(samples[j], cfg.alpha);
    c_hat = std::max(c_hat, rep.per_null_quantiles[j]);
  }
  rep.c_hat = c_hat;
  rep.reject = rep.d_obs > rep.c_hat;

  // Smallest rejecting level on the dyadic grid 1/2, 1/4, ... down to the
  // Monte Carlo resolution 1/(M+1); 1.0 when no level on the grid rejects.
  rep.p_value = 1.0;
  for (double a = 0.5; a * (cfg.M + 1) >= 1.0; a *= 0.5) {
    int c = -1;
    for (int j = 0; j < nulls; ++j) c = std::max(c, detail::mc_order_statistic(samples[j], a));
    if (rep.d_obs > c)
      rep.p_value = a;
    else
      break;
  }
  return rep;
}

// ----------------------------------------------------------------------------
// Confidence regions for the coefficients
// ----------------------------------------------------------------------------
//
// For each candidate permutation, the set { beta : T(Y, (P, beta)) <= q }
// is an ellipsoid in closed form; the confidence region is the union over
// the candidate set.  Coverage transfers from the candidate set: if the
// true permutation is among the candidates, the union covers beta0 with
// probability at least alpha (the F-pivot is exact).

struct Ellipsoid {
  SparsePermutation pi;
  Vector center;
  Matrix shape;          // positive definite; membership via quadratic form
  double radius_sq = 0.0;
};

struct ConfidenceRegion {
  double alpha = 0.95;   // target coverage
  std::vector<Ellipsoid> pieces;
};

inline ConfidenceRegion coef_region(const Vector& y, const Matrix& x, const CandidateSet& cs,
                                    double alpha) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (y.size() != n) throw LengthMismatch("coef_region: response length");
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw DomainError("coef_region: alpha must lie in (0, 1)");
  if (n <= p) throw DomainError("coef_region: need n > p");
  if (cs.size() == 0) throw EmptySet("coef_region: empty candidate set");

  const double fq = f_quantile(p, n - p, alpha);
  const Matrix shape = x.transpose() * x;  // (PX)^T (PX) is the same for every P
  ConfidenceRegion region;
  region.alpha = alpha;
  region.pieces.reserve(cs.size());
  for (const auto& pi : cs.uniques()) {
    const OlsFit fit = ols_fit(pi.permute_rows(x), y);
    Ellipsoid e;
    e.pi = pi;
    e.center = fit.coef;
    e.shape = shape;
    e.radius_sq = static_cast<double>(p) / (n - p) * fit.rss * fq;
    region.pieces.push_back(std::move(e));
  }
  return region;
}

enum class PartialMode { Joint, Beta1Only };

// Confidence region with a nuisance block Z: either a joint ellipsoid for
// (beta1, beta2) or, after projecting Z out, an ellipsoid for beta1 alone.
// In both cases the denominator is the residual of the full fit on
// [PX, Z], so the pivot stays exactly F-distributed.
inline ConfidenceRegion partial_coef_region(const Vector& y, const Matrix& x, const Matrix& z,
                                            const CandidateSet& cs, double alpha,
                                            PartialMode mode) {
  const int n = static_cast<int>(x.rows());
  const int p1 = static_cast<int>(x.cols());
  const int p2 = static_cast<int>(z.cols());
  if (y.size() != n || z.rows() != n) throw LengthMismatch("partial_coef_region: lengths");
  if (p2 < 1) throw DomainError("partial_coef_region: empty nuisance block");
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw DomainError("partial_coef_region: alpha must lie in (0, 1)");
  if (n <= p1 + p2) throw DomainError("partial_coef_region: need n > p1 + p2");
  if (cs.size() == 0) throw EmptySet("partial_coef_region: empty candidate set");

  ConfidenceRegion region;
  region.alpha = alpha;
  region.pieces.reserve(cs.size());

  if (mode == PartialMode::Joint) {
    const double fq = f_quantile(p1 + p2, n - p1 - p2, alpha);
    Matrix w(n, p1 + p2);
    w.rightCols(p2) = z;
    for (const auto& pi : cs.uniques()) {
      w.leftCols(p1) = pi.permute_rows(x);
      const OlsFit fit = ols_fit(w, y);
      Ellipsoid e;
      e.pi = pi;
      e.center = fit.coef;
      e.shape = w.transpose() * w;
      e.radius_sq = static_cast<double>(p1 + p2) / (n - p1 - p2) * fit.rss * fq;
      region.pieces.push_back(std::move(e));
    }
    return region;
  }

  const double fq = f_quantile(p1, n - p1 - p2, alpha);
  const Matrix qz = orthonormal_basis(z);
  const Vector y_perp = y - qz * (qz.transpose() * y);
  Matrix w(n, p1 + p2);
  w.rightCols(p2) = z;
  for (const auto& pi : cs.uniques()) {
    const Matrix px = pi.permute_rows(x);
    w.leftCols(p1) = px;
    const double rss_full = residual_norm_sq(w, y);
    const Matrix x_perp = px - qz * (qz.transpose() * px);
    const OlsFit fit = ols_fit(x_perp, y_perp);
    Ellipsoid e;
    e.pi = pi;
    e.center = fit.coef;
    e.shape = x_perp.transpose() * x_perp;
    e.radius_sq = static_cast<double>(p1) / (n - p1 - p2) * rss_full * fq;
    region.pieces.push_back(std::move(e));
  }
  return region;
}

// Membership with a tiny absolute slack so boundary points survive the
// round trip through serialization.
inline bool coef_region_membership(const ConfidenceRegion& region, const Vector& beta) {
  for (const auto& e : region.pieces) {
    if (beta.size() != e.center.size())
      throw DimMismatch("coef_region_membership: dimension mismatch");
    const Vector d = beta - e.center;
    const double q = d.dot(e.shape * d);
    if (q <= e.radius_sq + 1e-12) return true;
  }
  return false;
}

struct VolumeEstimate {
  double volume = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

// Monte Carlo volume of the union: hit rate under uniform sampling from the
// tightest axis-aligned box that contains every ellipsoid.  The standard
// error is the binomial one scaled by the box volume.
inline VolumeEstimate region_volume_mc(const ConfidenceRegion& region, RngStream rng,
                                       int samples) {
  if (region.pieces.empty()) throw EmptyRegion("region_volume_mc: region has no pieces");
  if (samples < 1000) throw DomainError("region_volume_mc: need at least 1000 samples");
  const int dim = static_cast<int>(region.pieces.front().center.size());

  Vector lo = Vector::Constant(dim, std::numeric_limits<double>::infinity());
  Vector hi = Vector::Constant(dim, -std::numeric_limits<double>::infinity());
  for (const auto& e : region.pieces) {
    if (e.center.size() != dim) throw DimMismatch("region_volume_mc: mixed dimensions");
    // Axis extent of { d : d^T S d <= r^2 } along coordinate i is
    // sqrt(r^2 * (S^{-1})_{ii}).
    const Matrix sinv = e.shape.ldlt().solve(Matrix::Identity(dim, dim));
    for (int i = 0; i < dim; ++i) {
      const double ext = std::sqrt(std::max(0.0, e.radius_sq * sinv(i, i)));
      lo[i] = std::min(lo[i], e.center[i] - ext);
      hi[i] = std::max(hi[i], e.center[i] + ext);
    }
  }

  double box_vol = 1.0;
  for (int i = 0; i < dim; ++i) box_vol *= std::max(0.0, hi[i] - lo[i]);

  int hits = 0;
  Vector point(dim);
  for (int s = 0; s < samples; ++s) {
    for (int i = 0; i < dim; ++i) point[i] = lo[i] + rng.next_uniform() * (hi[i] - lo[i]);
    if (coef_region_membership(region, point)) ++hits;
  }
  const double rate = static_cast<double>(hits) / samples;
  VolumeEstimate est;
  est.volume = box_vol * rate;
  est.std_error = box_vol * std::sqrt(rate * (1.0 - rate) / samples);
  est.samples = samples;
  return est;
}

}  // namespace permreg
