#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>

#include "permreg/errors.hpp"
#include "permreg/rng.hpp"

namespace permreg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ----------------------------------------------------------------------------
// Projections and least squares
// ----------------------------------------------------------------------------

// Orthonormal basis Q of the column span of A (thin, n x p).  A must have
// full column rank: the smallest diagonal of the pivoted R factor must
// exceed 1e-10 times the largest, otherwise RankDeficient is thrown.
inline Matrix orthonormal_basis(const Matrix& a) {
  const Eigen::Index n = a.rows();
  const Eigen::Index p = a.cols();
  if (n < 1 || p < 1) throw DomainError("orthonormal_basis: empty matrix");
  if (p > n) throw RankDeficient("orthonormal_basis: more columns than rows");
  if (!a.allFinite()) throw NonFinite("orthonormal_basis: non-finite entries");

  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  const Matrix r = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
  double dmax = 0.0;
  double dmin = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double d = std::abs(r(j, j));
    dmax = std::max(dmax, d);
    dmin = std::min(dmin, d);
  }
  if (!(dmin > 1e-10 * dmax) || dmax == 0.0)
    throw RankDeficient("orthonormal_basis: rank-deficient matrix");

  Matrix q = qr.householderQ() * Matrix::Identity(n, p);
  return q;
}

// Squared norm of the projection of v onto the orthogonal complement of
// span(A), i.e. the residual sum of squares of regressing v on A.
inline double residual_norm_sq(const Matrix& a, const Vector& v) {
  if (v.size() != a.rows())
    throw LengthMismatch("residual_norm_sq: vector length does not match rows");
  const Matrix q = orthonormal_basis(a);
  const Vector r = v - q * (q.transpose() * v);
  return r.squaredNorm();
}

struct OlsFit {
  Vector coef;
  double rss = 0.0;
};

// Least squares fit of v on the columns of A.  Same rank requirement as
// orthonormal_basis.
inline OlsFit ols_fit(const Matrix& a, const Vector& v) {
  if (v.size() != a.rows()) throw LengthMismatch("ols_fit: vector length does not match rows");
  if (!v.allFinite()) throw NonFinite("ols_fit: non-finite entries");
  const Matrix q = orthonormal_basis(a);  // validates rank and finiteness
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  OlsFit fit;
  fit.coef = qr.solve(v);
  fit.rss = (v - a * fit.coef).squaredNorm();
  return fit;
}

// ----------------------------------------------------------------------------
// Gaussian sampling
// ----------------------------------------------------------------------------

// Stream is taken by value: the same (seed, stream) pair always yields the
// same vector, no matter what the caller did with its copy before.
inline Vector gaussian_vector(RngStream rng, int n) {
  if (n < 1) throw DomainError("gaussian_vector: n must be positive");
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.next_gaussian();
  return v;
}

inline Matrix gaussian_matrix(RngStream rng, int rows, int cols) {
  if (rows < 1 || cols < 1) throw DomainError("gaussian_matrix: dimensions must be positive");
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.next_gaussian();
  return m;
}

// ----------------------------------------------------------------------------
// F distribution
// ----------------------------------------------------------------------------
//
// Implemented from scratch on top of the regularized incomplete beta
// function (continued fraction, modified Lentz) so the library carries no
// statistics dependency.  Quantiles are obtained by bracketing and
// bisection, which is robust for every (d1, d2) we care about.

namespace detail {

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for the incomplete beta function (Lentz's algorithm).
inline double beta_cont_frac(double a, double b, double x) {
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0))
    throw DomainError("regularized_incomplete_beta: shape parameters must be positive");
  if (!(x >= 0.0) || !(x <= 1.0))
    throw DomainError("regularized_incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) - detail::log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cont_frac(a, b, x) / a;
  return 1.0 - front * detail::beta_cont_frac(b, a, 1.0 - x) / b;
}

// CDF of the F distribution with (d1, d2) degrees of freedom.
inline double f_cdf(int d1, int d2, double x) {
  if (d1 < 1 || d2 < 1) throw DomainError("f_cdf: degrees of freedom must be >= 1");
  if (!(x == x)) throw DomainError("f_cdf: x is NaN");
  if (x <= 0.0) return 0.0;
  const double a = 0.5 * d1;
  const double b = 0.5 * d2;
  const double t = d1 * x / (d1 * x + d2);
  return regularized_incomplete_beta(a, b, t);
}

// Quantile of the F distribution: smallest x with F_cdf(x) >= q.  Bracketed
// bisection; accurate to full double precision on the scales used here.
inline double f_quantile(int d1, int d2, double q) {
  if (d1 < 1 || d2 < 1) throw DomainError("f_quantile: degrees of freedom must be >= 1");
  if (!(q > 0.0) || !(q < 1.0)) throw DomainError("f_quantile: q must lie in (0, 1)");
  double lo = 0.0;
  double hi = 1.0;
  int guard = 0;
  while (f_cdf(d1, d2, hi) < q) {
    hi *= 2.0;
    if (++guard > 400) throw DomainError("f_quantile: bracket expansion failed");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (f_cdf(d1, d2, mid) < q)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace permreg
