#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "permreg/assignment.hpp"
#include "permreg/errors.hpp"
#include "permreg/numerics.hpp"
#include "permreg/permutations.hpp"
#include "permreg/rng.hpp"

namespace permreg {

// ----------------------------------------------------------------------------
// Data-driven penalty selection
// ----------------------------------------------------------------------------
//
// The surrogate penalties (lam1, lam2) are valid inside a window controlled
// by three quantities: the largest diagonal residual, an operator-norm
// perturbation term, and the gap of the repro objective between its
// minimizer and the runner-up.  None of them is observable, so each one is
// replaced by a plug-in estimate:
//
//   B_diag_hat  largest squared residual of the observed fit,
//   eta_op_hat  the closed-form perturbation bound with ||Y||^2 substituted
//               for the population constant everywhere it appears,
//   Delta_F_hat smallest positive objective increase over random two-row
//               swaps applied to an unpenalized LAP baseline.
//
// The final budget keeps a 10% safety margin below the estimated window:
//   b = 0.9 * max(0, Delta_F_hat / (2k) - eta_op_hat),
//   lam1 = max(b / 2, resid_null_hat / k),
//   lam2 = b / (2 * max(B_diag_hat, 1e-12)).
// The floor on lam1 is a containment threshold at the noise scale.  An
// assignment that displaces d rows must recover at least lam1 * d of
// residual to beat the identity, so lam1 at the level of the null residual
// divided by k keeps noise-driven reshuffles out while leaving genuine
// k-row repairs (whose gains sit at the signal scale) strictly profitable.
// The observed residual cannot serve as that scale directly: under a real
// mismatch it contains the misfit a repair would recover, and a floor
// proportional to it cancels the very gains it should preserve.  Instead
// the floor drops the 2k largest squared residuals (the rows a mismatch
// can contaminate), rescales for the trimming, and inflates by a
// chi-square upper-tail factor at level xi.  Without any floor a zero
// budget (small samples make the perturbation bound infinite) would leave
// the assignment completely unregularized, and its minimizer then wanders
// far outside the sparsity class on almost every draw.

struct TuningReport {
  double xi = 0.05;
  int k = 0;
  double b_diag_hat = 0.0;
  double eta_op_hat = 0.0;
  double delta_f_hat = 0.0;
  double resid_sq_hat = 0.0;
  double resid_null_hat = 0.0;
  double budget_b = 0.0;
  double lam1 = 0.0;
  double lam2 = 0.0;
  int swaps_tried = 0;
  // True when the selected budget is strictly positive, i.e. the estimated
  // window admits a non-trivial penalty.
  bool window_ok = false;

  bool operator==(const TuningReport&) const = default;
};

namespace detail {

// Plug-in perturbation bound.  Returns +infinity when the denominator is
// not positive, which happens for small n - p relative to k.
inline double eta_op_plugin(double y_norm_sq, int n, int p, int k, double xi) {
  const double lw = std::log((4.0 * k + 2.0) / xi);
  const double w = k + 2.0 * std::sqrt(k * lw) + 2.0 * lw;
  const double inner = (n - p) - 2.0 * std::sqrt((n - p) * std::log(2.0 / xi));
  if (!(inner > 0.0)) return std::numeric_limits<double>::infinity();
  const double denom = std::sqrt(inner) - 2.0 * std::sqrt(w);
  if (!(denom > 0.0)) return std::numeric_limits<double>::infinity();
  return 8.0 * y_norm_sq * std::sqrt(w) / denom;
}

inline TuningReport select_lambdas_design(const ReproDesign& d, int k, double xi,
                                          RngStream rng, int n_swaps) {
  check_design(d);
  if (k < 1) throw DomainError("select_lambdas: k must be at least 1");
  if (!(xi > 0.0) || !(xi < 1.0)) throw DomainError("select_lambdas: xi must lie in (0, 1)");
  if (n_swaps < 1) throw DomainError("select_lambdas: n_swaps must be positive");

  TuningReport rep;
  rep.xi = xi;
  rep.k = k;

  Matrix span(d.design.rows(), d.design.cols() + 1);
  span.leftCols(d.design.cols()) = d.design;
  span.col(d.design.cols()) = d.noise;
  const Matrix q = orthonormal_basis(span);
  const Vector m = q * (q.transpose() * d.response);
  std::vector<double> sq(static_cast<std::size_t>(d.lap_n));
  for (int i = 0; i < d.lap_n; ++i) {
    const double gap = d.response[i] - m[i];
    sq[static_cast<std::size_t>(i)] = gap * gap;
  }
  rep.b_diag_hat = *std::max_element(sq.begin(), sq.end());
  rep.resid_sq_hat = std::accumulate(sq.begin(), sq.end(), 0.0);

  // Null-scale residual: trim the rows a k-sparse mismatch can contaminate,
  // rescale, and take a chi-square upper-tail envelope on what is left.
  const int dof = std::max(d.lap_n - static_cast<int>(q.cols()), 1);
  const int trim = std::min(2 * k, std::max(d.lap_n - static_cast<int>(q.cols()) - 2, 0));
  std::sort(sq.begin(), sq.end());
  const double kept = std::accumulate(sq.begin(), sq.end() - trim, 0.0);
  const double t = std::log(1.0 / xi);
  const double infl = 1.0 + 2.0 * std::sqrt(t / dof) + 2.0 * t / dof;
  rep.resid_null_hat =
      kept * (static_cast<double>(d.lap_n) / (d.lap_n - trim)) * infl;

  rep.eta_op_hat = eta_op_plugin(d.response.squaredNorm(), static_cast<int>(d.design.rows()),
                                 static_cast<int>(d.design.cols()), k, xi);

  // Gap estimate around the single-pass unpenalized LAP baseline.
  const LapSolution base =
      lap_pass(d, refit_scores(d, SparsePermutation::identity(d.lap_n)), 0.0, 0.0);
  const SparsePermutation base_pi = base.assignment.inverse();
  const double f_base = repro_objective_design(d, base_pi);
  double min_pos = std::numeric_limits<double>::infinity();
  for (int s = 0; s < n_swaps; ++s) {
    const int i = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(d.lap_n)));
    int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(d.lap_n - 1)));
    if (j >= i) ++j;
    const SparsePermutation swapped =
        SparsePermutation::transposition(d.lap_n, i, j).compose(base_pi);
    const double diff = repro_objective_design(d, swapped) - f_base;
    if (diff > 0.0) min_pos = std::min(min_pos, diff);
  }
  rep.swaps_tried = n_swaps;
  rep.delta_f_hat = std::isfinite(min_pos) ? min_pos : 0.0;

  const double slack = rep.delta_f_hat / (2.0 * k) - rep.eta_op_hat;
  rep.budget_b = 0.9 * std::max(0.0, slack);
  rep.lam1 = std::max(rep.budget_b / 2.0, rep.resid_null_hat / k);
  rep.lam2 = rep.budget_b / (2.0 * std::max(rep.b_diag_hat, 1e-12));
  rep.window_ok = rep.budget_b > 0.0;
  return rep;
}

}  // namespace detail

inline TuningReport select_lambdas(const Vector& y, const Matrix& x, const Vector& ustar,
                                   int k, double xi, RngStream rng, int n_swaps = 50) {
  ReproDesign d{x, y, ustar, static_cast<int>(x.rows()), static_cast<int>(x.cols())};
  return detail::select_lambdas_design(d, k, xi, rng, n_swaps);
}

// ----------------------------------------------------------------------------
// Separation constants and candidate-set error bounds
// ----------------------------------------------------------------------------

constexpr BigCount kBruteForceGuard = 1'000'000;

// Signal separation of the design over the class P_{n,k}:
//   C_min = min over P != P0 of
//     || (I - P M_X P^T) P0 X b0 ||^2 / (n * max(d(P0, I) - d(P, I), 1)).
// Zero means the instance is not identifiable within the class.
inline double c_min_bruteforce(const Matrix& x, const Vector& beta0,
                               const SparsePermutation& pi0, int k) {
  const int n = static_cast<int>(x.rows());
  if (beta0.size() != x.cols()) throw LengthMismatch("c_min_bruteforce: beta0 length");
  if (pi0.n() != n) throw LengthMismatch("c_min_bruteforce: permutation size");
  const PermutationClass cls(n, k);
  if (count_class(cls) > kBruteForceGuard)
    throw ClassTooLarge("c_min_bruteforce: class exceeds the brute-force guard");

  const Vector signal = pi0.apply(x * beta0);
  const Matrix q = orthonormal_basis(x);
  const int d0 = pi0.hamming_distance();
  double best = std::numeric_limits<double>::infinity();
  for_each_in_class(cls, [&](const SparsePermutation& pi) {
    if (pi == pi0) return;
    const Vector back = pi.inverse().apply(signal);
    const Vector proj = pi.apply(q * (q.transpose() * back));
    const double num = (signal - proj).squaredNorm();
    const int denom_d = std::max(d0 - pi.hamming_distance(), 1);
    best = std::min(best, num / (n * denom_d));
  });
  return best;
}

namespace detail {

// Derangement numbers in double precision (exact until they saturate).
inline std::vector<double> derangement_table_double(int m) {
  std::vector<double> d(static_cast<std::size_t>(m) + 1);
  d[0] = 1.0;
  if (m >= 1) d[1] = 0.0;
  for (int t = 2; t <= m; ++t) d[t] = (t - 1.0) * (d[t - 1] + d[t - 2]);
  return d;
}

inline double binomial_double(int n, int m) {
  if (m < 0 || m > n) return 0.0;
  m = std::min(m, n - m);
  double r = 1.0;
  for (int t = 1; t <= m; ++t) r = r * (n - m + t) / t;
  return r;
}

inline double class_count_double(int n, int k) {
  const auto dr = derangement_table_double(k);
  double s = 0.0;
  for (int d = 0; d <= k; ++d) s += binomial_double(n, d) * dr[d];
  return s;
}

}  // namespace detail

// Non-coverage bound Delta(gamma) for the repro candidate set: a union bound
// over the class (counted by the number of fixed rows m) of two large
// deviation terms, plus a cap-volume term.  Psi(x) = x - 1 - log x.
inline double delta_gamma_bound(int n, int p, int k, double sigma0, double c_min,
                                double gamma) {
  if (n < 2 || p < 1 || n <= p + 1) throw DomainError("delta_gamma_bound: need n > p + 1");
  if (k < 0 || k > n) throw DomainError("delta_gamma_bound: k must lie in [0, n]");
  if (!(sigma0 > 0.0)) throw DomainError("delta_gamma_bound: sigma0 must be positive");
  if (!(c_min > 0.0)) throw DomainError("delta_gamma_bound: c_min must be positive");
  if (!(gamma > 0.0) || !(gamma <= 0.25))
    throw DomainError("delta_gamma_bound: gamma must lie in (0, 1/4]");

  const double loge = 1.0 - std::log(gamma);  // log(e / gamma)
  const double sig2 = sigma0 * sigma0;
  const double arg1 = std::max(1.0, c_min * loge / (2.0 * sig2 * gamma));
  const double arg2 = std::max(1.0, c_min * loge * loge / (16.0 * sig2));
  const auto psi = [](double x) { return x - 1.0 - std::log(x); };
  const double e1 = std::exp(-0.5 * n * psi(arg1));
  const double e2 = std::exp(-0.5 * n * psi(arg2));

  const auto dr = detail::derangement_table_double(k);
  double sum = 0.0;
  for (int m = n - k; m <= n; ++m)
    sum += detail::binomial_double(n, m) * dr[n - m] * (e1 + e2);

  const double count = detail::class_count_double(n, k);
  const double cap = std::pow(3.14159265358979323846 / 2.0, n - p - 2) * count *
                     std::pow(gamma * loge, 0.5 * (n - p - 1));
  return sum + cap;
}

// Resolution parameter matched to L repro draws.
inline double gamma_l(int n, int L) {
  if (n < 2) throw DomainError("gamma_l: need n >= 2");
  if (L < 2) throw DomainError("gamma_l: need L >= 2");
  const double g = std::pow((n - 1.0) * std::log(std::exp(1.0) * L) / L, 1.0 / (n - 1.0));
  return std::min(0.25, g);
}

// Candidate-set non-coverage bound after L draws:
//   delta_L = Delta(gamma_L) + (1 - gamma_L^{n-1} / (n-1))^L.
inline double delta_l_bound(int n, int p, int k, double sigma0, double c_min, int L) {
  const double g = gamma_l(n, L);
  const double miss = std::pow(1.0 - std::pow(g, n - 1.0) / (n - 1.0), L);
  return delta_gamma_bound(n, p, k, sigma0, c_min, g) + miss;
}

// ----------------------------------------------------------------------------
// Population constants for a known instance
// ----------------------------------------------------------------------------

struct TheoryConstants {
  double xi = 0.05;
  double c_min = 0.0;
  double b_y = 0.0;
  double b_diag = 0.0;
  double eta_op = 0.0;
  double delta_under = 0.0;

  bool operator==(const TheoryConstants&) const = default;
};

// Evaluates the population versions of the tuning constants for an instance
// with known (pi0, beta0, sigma0).  Diagnostic only: real data never has
// access to these.
inline TheoryConstants theory_constants(const Matrix& x, const Vector& beta0,
                                        const SparsePermutation& pi0, double sigma0, int k,
                                        double xi) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (!(sigma0 > 0.0)) throw DomainError("theory_constants: sigma0 must be positive");
  if (!(xi > 0.0) || !(xi < 1.0)) throw DomainError("theory_constants: xi must lie in (0, 1)");
  if (n - p < 2) throw DomainError("theory_constants: need n - p >= 2");

  TheoryConstants tc;
  tc.xi = xi;
  tc.c_min = c_min_bruteforce(x, beta0, pi0, k);

  const Vector signal = pi0.apply(x * beta0);
  const double snorm = signal.norm();
  const double l2 = std::log(2.0 / xi);
  tc.b_y = snorm * snorm + 2.0 * sigma0 * snorm * std::sqrt(2.0 * l2) +
           sigma0 * sigma0 * (n + 2.0 * std::sqrt(n * l2) + 2.0 * l2);

  const Matrix q = orthonormal_basis(x);
  const Vector resid = signal - q * (q.transpose() * signal);
  const double rnorm = resid.norm();
  const double l16 = std::log(16.0 * n / xi);
  tc.b_diag = rnorm * rnorm + sigma0 * sigma0 +
              2.0 * sigma0 * rnorm * std::sqrt(2.0 * l16) +
              2.0 * sigma0 * sigma0 * (std::sqrt(l16) + l16);

  tc.eta_op = detail::eta_op_plugin(tc.b_y, n, p, k, xi);

  const double mk = detail::class_count_double(n, k);
  const double theta1 = std::pow(xi / (6.0 * mk), 1.0 / (n - p - 1.0));
  const double gamma1 = std::cos(theta1);
  const double l6 = std::log(6.0 / xi);
  const double bu = 1.0 + 2.0 * std::sqrt(l6 / n) + 2.0 * l6 / n;
  tc.delta_under = (1.0 - gamma1 * gamma1) * tc.c_min -
                   2.0 * sigma0 * std::sqrt(tc.c_min * bu) - sigma0 * sigma0 * bu;
  return tc;
}

// ----------------------------------------------------------------------------
// Sharpness of the identifiability threshold
// ----------------------------------------------------------------------------

struct Counterexample {
  Matrix x;
  Vector beta0;
  Vector beta1;
  SparsePermutation pi1;
};

// Explicit non-identifiable instance for any (n, p, k) with k >= 2, p < n
// and n - 2k <= p - 1: a full-rank design X and distinct coefficient
// vectors with P1 X b1 = X b0 exactly (all entries are small integers or
// halves, so the identity holds in floating point without rounding).
inline Counterexample counterexample(int n, int p, int k) {
  if (k < 2) throw DomainError("counterexample: need k >= 2");
  if (p < 1 || p >= n) throw DomainError("counterexample: need 1 <= p < n");
  if (n - 2 * k > p - 1)
    throw DomainError("counterexample: need n - 2k <= p - 1; above the threshold the class is identifiable");

  Counterexample ce;
  ce.pi1 = SparsePermutation::transposition(n, 0, 1);
  ce.x = Matrix::Zero(n, p);
  ce.beta0 = Vector::Zero(p);
  ce.beta1 = Vector::Zero(p);

  if (p == 1) {
    ce.x(0, 0) = 1.0;
    ce.x(1, 0) = -1.0;
    ce.beta0[0] = 1.0;
    ce.beta1[0] = -1.0;
    return ce;
  }

  // Rows 0 and 1 live in span{e0, e1} and are swapped; all other rows are
  // orthogonal to e0, so shifting beta along e0 only affects the swapped
  // pair.  The remaining rows walk through the rest of the basis to keep X
  // full rank, with surplus rows repeating e1.
  ce.x(0, 0) = 1.0;
  ce.x(0, 1) = 1.0;   // e0 + e1
  ce.x(1, 0) = -1.0;
  ce.x(1, 1) = 1.0;   // e1 - e0
  const int t = std::max(n - 2 * k, 0);
  int next_basis = 1;
  for (int r = 2; r < n; ++r) {
    int col;
    if (r - 2 < t) {
      col = 1 + (r - 2);  // e1, ..., e_t
    } else if (next_basis < p) {
      col = next_basis;
    } else {
      col = 1;  // filler
    }
    ce.x(r, col) = 1.0;
    next_basis = std::max(next_basis, col + 1);
  }

  ce.beta0[0] = -0.5;
  ce.beta0[1] = 0.5;
  ce.beta1[0] = 0.5;
  ce.beta1[1] = 0.5;
  return ce;
}

}  // namespace permreg
