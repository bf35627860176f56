#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "permreg/assignment.hpp"
#include "permreg/errors.hpp"
#include "permreg/numerics.hpp"
#include "permreg/parallel.hpp"
#include "permreg/permutations.hpp"
#include "permreg/rng.hpp"
#include "permreg/tuning.hpp"

namespace permreg {

// ----------------------------------------------------------------------------
// Repro-sample candidate sets
// ----------------------------------------------------------------------------
//
// Each draw l = 1..L generates an artificial noise vector u*_l and records
// the permutation that best explains the observed response when u*_l is
// offered as an extra regressor.  The set of distinct minimizers across
// draws is the candidate set; with enough draws it contains the true
// permutation with high probability, and every downstream inference step
// (sparsity test, confidence regions) only ever looks inside it.

enum class SolverKind { SurrogateLap, BruteForce };

struct LambdaConfig {
  bool auto_tune = true;
  double lam1 = 0.0;
  double lam2 = 0.0;

  static LambdaConfig automatic() { return {}; }
  static LambdaConfig fixed(double l1, double l2) { return {false, l1, l2}; }

  bool operator==(const LambdaConfig&) const = default;
};

struct ReproConfig {
  int L = 100;
  int k = 2;
  LambdaConfig lambdas = LambdaConfig::automatic();
  SolverKind solver = SolverKind::SurrogateLap;
  std::uint64_t seed = 0;
  double tune_xi = 0.05;
  int tune_swaps = 50;
  int threads = 0;  // 0 = all hardware threads

  bool operator==(const ReproConfig&) const = default;
};

struct DesignVariant {
  enum class Kind { Plain, Partial, Ridge };
  Kind kind = Kind::Plain;
  Matrix z;              // nuisance block (Partial)
  double ridge_lambda = 0.0;

  static DesignVariant plain() { return {}; }
  static DesignVariant partial(Matrix nuisance) {
    DesignVariant v;
    v.kind = Kind::Partial;
    v.z = std::move(nuisance);
    return v;
  }
  static DesignVariant ridge(double lambda) {
    if (!(lambda > 0.0)) throw DomainError("DesignVariant::ridge: lambda must be positive");
    DesignVariant v;
    v.kind = Kind::Ridge;
    v.ridge_lambda = lambda;
    return v;
  }
};

// Provenance of one repro draw.
struct DrawRecord {
  std::uint64_t stream = 0;     // stream id that produced u*_l (the draw index)
  int unique_index = -1;        // position of the minimizer in uniques()
  double objective = 0.0;       // repro objective at the recorded minimizer
  bool sparsity_violation = false;

  bool operator==(const DrawRecord&) const = default;
};

class CandidateSet {
 public:
  CandidateSet() : n_(0), k_(0) {}
  CandidateSet(int n, int k) : n_(n), k_(k) {}

  int n() const { return n_; }
  int k() const { return k_; }
  int size() const { return static_cast<int>(uniques_.size()); }
  int total_draws() const { return static_cast<int>(draws_.size()); }

  const std::vector<SparsePermutation>& uniques() const { return uniques_; }
  const std::vector<int>& multiplicities() const { return multiplicities_; }
  const std::vector<DrawRecord>& draws() const { return draws_; }

  const SparsePermutation& unique(int i) const { return uniques_.at(i); }
  int multiplicity(int i) const { return multiplicities_.at(i); }

  // Smallest repro objective among the draws that produced unique i.
  double min_objective(int i) const { return min_objectives_.at(i); }

  int index_of(const SparsePermutation& pi) const {
    const auto it = lookup_.find(pi);
    return it == lookup_.end() ? -1 : it->second;
  }
  bool contains(const SparsePermutation& pi) const { return index_of(pi) >= 0; }

  // Records one draw; uniques keep first-appearance order.
  void push_draw(const SparsePermutation& pi, std::uint64_t stream, double objective,
                 bool violation) {
    if (pi.n() != n_) throw LengthMismatch("CandidateSet: permutation size mismatch");
    int idx = index_of(pi);
    if (idx < 0) {
      idx = size();
      uniques_.push_back(pi);
      multiplicities_.push_back(0);
      min_objectives_.push_back(std::numeric_limits<double>::infinity());
      lookup_.emplace(pi, idx);
    }
    ++multiplicities_[idx];
    min_objectives_[idx] = std::min(min_objectives_[idx], objective);
    draws_.push_back({stream, idx, objective, violation});
  }

  bool operator==(const CandidateSet& rhs) const {
    return n_ == rhs.n_ && k_ == rhs.k_ && uniques_ == rhs.uniques_ &&
           multiplicities_ == rhs.multiplicities_ && draws_ == rhs.draws_;
  }

 private:
  int n_;
  int k_;
  std::vector<SparsePermutation> uniques_;
  std::vector<int> multiplicities_;
  std::vector<double> min_objectives_;
  std::vector<DrawRecord> draws_;
  std::map<SparsePermutation, int> lookup_;
};

// Assembles the regression layout for one draw under the requested variant.
//
//   Plain:   response Y on [X, u*], permutation moves the rows of X.
//   Partial: response Y on [X, Z, u*], permutation moves the X block only.
//   Ridge:   response (Y, 0_p) on [X; sqrt(lambda) I_p] plus noise (u*, 0_p);
//            the assignment still acts on the first n rows only.
inline ReproDesign make_repro_design(const Vector& y, const Matrix& x,
                                     const DesignVariant& variant, const Vector& ustar) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (y.size() != n) throw LengthMismatch("make_repro_design: response length");
  if (ustar.size() != n) throw LengthMismatch("make_repro_design: noise length");

  ReproDesign d;
  switch (variant.kind) {
    case DesignVariant::Kind::Plain:
      d.design = x;
      d.response = y;
      d.noise = ustar;
      d.lap_n = n;
      d.perm_cols = p;
      break;
    case DesignVariant::Kind::Partial: {
      if (variant.z.rows() != n) throw LengthMismatch("make_repro_design: nuisance rows");
      if (variant.z.cols() < 1) throw DomainError("make_repro_design: empty nuisance block");
      d.design.resize(n, p + variant.z.cols());
      d.design.leftCols(p) = x;
      d.design.rightCols(variant.z.cols()) = variant.z;
      d.response = y;
      d.noise = ustar;
      d.lap_n = n;
      d.perm_cols = p;
      break;
    }
    case DesignVariant::Kind::Ridge: {
      if (!(variant.ridge_lambda > 0.0))
        throw DomainError("make_repro_design: ridge lambda must be positive");
      d.design.resize(n + p, p);
      d.design.topRows(n) = x;
      d.design.bottomRows(p) = std::sqrt(variant.ridge_lambda) * Matrix::Identity(p, p);
      d.response = Vector::Zero(n + p);
      d.response.head(n) = y;
      d.noise = Vector::Zero(n + p);
      d.noise.head(n) = ustar;
      d.lap_n = n;
      d.perm_cols = p;
      break;
    }
  }
  return d;
}

namespace detail {

struct DrawResult {
  SparsePermutation pi;
  double objective = 0.0;
  bool violation = false;
};

inline DrawResult solve_one_draw(const Vector& y, const Matrix& x,
                                 const DesignVariant& variant, const ReproConfig& cfg,
                                 std::uint64_t draw_index) {
  const int n = static_cast<int>(x.rows());
  const Vector ustar = gaussian_vector(RngStream(cfg.seed, draw_index), n);
  const ReproDesign d = make_repro_design(y, x, variant, ustar);

  DrawResult out;
  if (cfg.k == 0) {
    // P_{n,0} contains only the identity; nothing to search.
    out.pi = SparsePermutation::identity(n);
    out.objective = repro_objective_design(d, out.pi);
    return out;
  }

  if (cfg.solver == SolverKind::BruteForce) {
    const PermutationClass cls(n, cfg.k);
    if (count_class(cls) > kBruteForceGuard)
      throw ClassTooLarge("generate_candidates: class exceeds the brute-force guard");
    double best = std::numeric_limits<double>::infinity();
    SparsePermutation best_pi = SparsePermutation::identity(n);
    for_each_in_class(cls, [&](const SparsePermutation& pi) {
      const double f = repro_objective_design(d, pi);
      if (f < best) {
        best = f;
        best_pi = pi;
      }
    });
    out.pi = best_pi;
    out.objective = best;
    return out;
  }

  double lam1 = cfg.lambdas.lam1;
  double lam2 = cfg.lambdas.lam2;
  if (cfg.lambdas.auto_tune) {
    const TuningReport rep = select_lambdas_design(
        d, cfg.k, cfg.tune_xi, RngStream(cfg.seed, draw_index).fork(1), cfg.tune_swaps);
    lam1 = rep.lam1;
    lam2 = rep.lam2;
  }
  const SurrogateResult sr = surrogate_argmin_design(d, lam1, lam2, cfg.k);
  out.pi = sr.assignment;
  out.objective = repro_objective_design(d, sr.assignment);
  out.violation = sr.sparsity_violation;
  return out;
}

}  // namespace detail

// Generates the candidate set from L independent repro draws.  Draw l uses
// the noise stream (seed, l), so extending L keeps all earlier draws
// unchanged, and the result does not depend on the thread count.
inline CandidateSet generate_candidates(const Vector& y, const Matrix& x,
                                        const DesignVariant& variant, const ReproConfig& cfg) {
  const int n = static_cast<int>(x.rows());
  if (y.size() != n) throw LengthMismatch("generate_candidates: response length");
  if (cfg.L < 1) throw DomainError("generate_candidates: L must be positive");
  if (cfg.k < 0 || cfg.k > n) throw DomainError("generate_candidates: k must lie in [0, n]");
  if (!cfg.lambdas.auto_tune &&
      (!(cfg.lambdas.lam1 >= 0.0) || !(cfg.lambdas.lam2 >= 0.0)))
    throw DomainError("generate_candidates: penalties must be non-negative");

  std::vector<detail::DrawResult> results(cfg.L);
  parallel_for(cfg.L, cfg.threads, [&](int i) {
    results[i] = detail::solve_one_draw(y, x, variant, cfg, static_cast<std::uint64_t>(i) + 1);
  });

  CandidateSet cs(n, cfg.k);
  for (int i = 0; i < cfg.L; ++i)
    cs.push_draw(results[i].pi, static_cast<std::uint64_t>(i) + 1, results[i].objective,
                 results[i].violation);
  return cs;
}

// ----------------------------------------------------------------------------
// Oracle recovery and candidate-set summaries
// ----------------------------------------------------------------------------

struct OracleFit {
  SparsePermutation pi;
  Vector beta;
  double sigma = 0.0;
  double rss = 0.0;
};

// Exact least-squares recovery over P_{n,k} when the realized noise
// direction is known: minimizes || (I - M_{(PX, u)}) Y ||^2 by enumeration
// and reads (beta, sigma) off the winning fit.  Requires the identifiable
// regime n - 2k >= p.
inline OracleFit oracle_recover(const Vector& y, const Matrix& x, const Vector& u_rel, int k) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (y.size() != n || u_rel.size() != n) throw LengthMismatch("oracle_recover: lengths");
  if (k < 0 || k > n) throw DomainError("oracle_recover: k must lie in [0, n]");
  if (n - 2 * k < p)
    throw IdentifiabilityViolated("oracle_recover: requires n - 2k >= p");
  const PermutationClass cls(n, k);
  if (count_class(cls) > kBruteForceGuard)
    throw ClassTooLarge("oracle_recover: class exceeds the brute-force guard");

  Matrix full(n, p + 1);
  full.col(p) = u_rel;
  double best = std::numeric_limits<double>::infinity();
  SparsePermutation best_pi = SparsePermutation::identity(n);
  for_each_in_class(cls, [&](const SparsePermutation& pi) {
    full.leftCols(p) = pi.permute_rows(x);
    const double f = residual_norm_sq(full, y);
    if (f < best) {
      best = f;
      best_pi = pi;
    }
  });

  full.leftCols(p) = best_pi.permute_rows(x);
  const OlsFit fit = ols_fit(full, y);
  OracleFit out;
  out.pi = best_pi;
  out.beta = fit.coef.head(p);
  out.sigma = fit.coef[p];
  out.rss = fit.rss;
  return out;
}

// psi = 1 - d(best candidate, truth)/n, where "best" means closest in
// Hamming distance; equals 1 exactly when the truth itself was drawn.
inline double matching_fraction(const CandidateSet& cs, const SparsePermutation& truth) {
  if (cs.size() == 0) throw EmptySet("matching_fraction: empty candidate set");
  if (truth.n() != cs.n()) throw LengthMismatch("matching_fraction: permutation size");
  int best = truth.n() + 1;
  for (const auto& pi : cs.uniques()) best = std::min(best, hamming_distance(pi, truth));
  return 1.0 - static_cast<double>(best) / cs.n();
}

// Candidates consistent with the null sparsity level k0, in candidate order.
inline std::vector<SparsePermutation> localized_null(const CandidateSet& cs, int k0) {
  if (k0 < 0) throw DomainError("localized_null: k0 must be non-negative");
  std::vector<SparsePermutation> out;
  for (const auto& pi : cs.uniques())
    if (pi.hamming_distance() <= k0) out.push_back(pi);
  return out;
}

}  // namespace permreg
