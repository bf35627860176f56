#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "permreg/candidates.hpp"
#include "permreg/errors.hpp"
#include "permreg/inference.hpp"
#include "permreg/numerics.hpp"
#include "permreg/parallel.hpp"
#include "permreg/permutations.hpp"
#include "permreg/rng.hpp"

namespace permreg {

// ----------------------------------------------------------------------------
// Scenario definition
// ----------------------------------------------------------------------------

// Default coefficient pattern: cycles through 0.5, -1, 2.
inline Vector default_beta0(int p) {
  if (p < 1) throw DomainError("default_beta0: p must be positive");
  const double cycle[3] = {0.5, -1.0, 2.0};
  Vector b(p);
  for (int j = 0; j < p; ++j) b[j] = cycle[j % 3];
  return b;
}

struct ScenarioConfig {
  int n = 30;
  int p = 3;
  int k_true = 0;       // displacement of the data-generating permutation
  int k_search = 2;     // sparsity bound used by the candidate search
  double sigma0 = 0.1;
  int L = 50;
  int M = 200;
  double alpha_test = 0.05;
  double alpha_coef = 0.95;
  int reps = 200;
  std::uint64_t seed = 0;
  Vector beta0;         // empty = default_beta0(p)
  LambdaConfig lambdas = LambdaConfig::automatic();
  SolverKind solver = SolverKind::SurrogateLap;
  int volume_samples = 4096;
  int threads = 0;
  double budget_seconds = 0.0;  // 0 = PERMREG_BUDGET_SECONDS env or 900
};

struct Instance {
  Matrix x;
  SparsePermutation pi0;
  Vector u_rel;
  Vector y;
};

namespace detail {

inline void hash_bytes(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;  // FNV-1a
  }
}

inline void hash_i64(std::uint64_t& h, std::int64_t v) { hash_bytes(h, &v, sizeof(v)); }
inline void hash_f64(std::uint64_t& h, double v) { hash_bytes(h, &v, sizeof(v)); }

// Hash of the data-generating process only: fields that do not affect the
// generated data (L, M, alpha, ...) are excluded, so the same instances can
// be re-analyzed under different inference settings.
inline std::uint64_t scenario_hash(const ScenarioConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  hash_i64(h, cfg.n);
  hash_i64(h, cfg.p);
  hash_i64(h, cfg.k_true);
  hash_f64(h, cfg.sigma0);
  const Vector b = cfg.beta0.size() > 0 ? cfg.beta0 : default_beta0(cfg.p);
  for (int j = 0; j < b.size(); ++j) hash_f64(h, b[j]);
  return h;
}

inline void check_scenario(const ScenarioConfig& cfg) {
  if (cfg.n < 2 || cfg.p < 1 || cfg.n <= cfg.p)
    throw DomainError("ScenarioConfig: need n > p >= 1");
  if (cfg.k_true < 0 || cfg.k_true > cfg.n || cfg.k_true == 1)
    throw DomainError("ScenarioConfig: k_true must be 0 or in {2, ..., n}");
  if (cfg.k_search < 0 || cfg.k_search > cfg.n)
    throw DomainError("ScenarioConfig: k_search must lie in [0, n]");
  if (!(cfg.sigma0 > 0.0)) throw DomainError("ScenarioConfig: sigma0 must be positive");
  if (cfg.reps < 1) throw DomainError("ScenarioConfig: reps must be positive");
  if (cfg.beta0.size() > 0 && cfg.beta0.size() != cfg.p)
    throw DomainError("ScenarioConfig: beta0 length must equal p");
}

}  // namespace detail

// Instance for replication rep (0-based).  The design X and the true
// permutation are drawn once per scenario (streams keyed by seed xor the
// DGP hash) and shared by every replication; only the noise is fresh.
inline Instance generate_instance(const ScenarioConfig& cfg, int rep) {
  detail::check_scenario(cfg);
  if (rep < 0) throw DomainError("generate_instance: rep must be non-negative");
  const std::uint64_t base = cfg.seed ^ detail::scenario_hash(cfg);

  Instance inst;
  inst.x = gaussian_matrix(RngStream(base, 1), cfg.n, cfg.p);
  inst.pi0 = cfg.k_true == 0
                 ? SparsePermutation::identity(cfg.n)
                 : random_k_sparse(RngStream(base, 2), PermutationClass(cfg.n, cfg.k_true),
                                   cfg.k_true);
  inst.u_rel = gaussian_vector(RngStream(base, 1000).fork(static_cast<std::uint64_t>(rep)),
                               cfg.n);
  const Vector beta = cfg.beta0.size() > 0 ? cfg.beta0 : default_beta0(cfg.p);
  inst.y = inst.pi0.apply(inst.x * beta) + cfg.sigma0 * inst.u_rel;
  return inst;
}

// ----------------------------------------------------------------------------
// Scenario execution
// ----------------------------------------------------------------------------

struct RepRecord {
  int rep = 0;
  int candidate_set_size = 0;
  bool contains_truth = false;
  double matching_fraction = 0.0;
  int d_obs = 0;
  bool reject = false;
  double p_value = 1.0;
  bool coef_covered = false;
  double region_volume = 0.0;

  bool operator==(const RepRecord&) const = default;
};

struct ScenarioAggregates {
  double mean_candidate_set_size = 0.0;
  double contain_rate = 0.0;
  double mean_matching_fraction = 0.0;
  double reject_rate = 0.0;
  double coverage_rate = 0.0;
  double mean_region_volume = 0.0;

  bool operator==(const ScenarioAggregates&) const = default;
};

struct ScenarioResult {
  ScenarioConfig config;
  std::vector<RepRecord> records;
  ScenarioAggregates aggregates;
};

namespace detail {

inline double scenario_budget_seconds(const ScenarioConfig& cfg) {
  if (cfg.budget_seconds > 0.0) return cfg.budget_seconds;
  if (const char* env = std::getenv("PERMREG_BUDGET_SECONDS")) {
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    if (end != env && v > 0.0) return v;
  }
  return 900.0;
}

// Crude work estimate in floating point operations; deliberately generous
// so that only clearly hopeless configurations are refused up front.  The
// dominant terms are one LAP plus ~50 swap evaluations per draw and one
// best-fit scan per calibration sample.
inline double scenario_cost_estimate(const ScenarioConfig& cfg) {
  const double n = cfg.n;
  const double per_draw = 40.0 * n * n * n + 60.0 * 50.0 * n * cfg.p * cfg.p;
  const double candidates = cfg.L * per_draw;
  const double calibration = static_cast<double>(cfg.M) * cfg.L * n * cfg.p * 4.0;
  const double volume = static_cast<double>(cfg.volume_samples) * cfg.L * cfg.p * cfg.p;
  return cfg.reps * (candidates + calibration + volume);
}

}  // namespace detail

// Runs every replication of a scenario: candidate set, sparsity test at
// k0 = 0, coefficient region coverage of the true beta0 and its Monte Carlo
// volume.  Refuses configurations whose estimated cost exceeds the time
// budget (PERMREG_BUDGET_SECONDS, default 900 seconds).
inline ScenarioResult run_scenario(const ScenarioConfig& cfg) {
  detail::check_scenario(cfg);

  const double flops = detail::scenario_cost_estimate(cfg);
  const double budget = detail::scenario_budget_seconds(cfg);
  constexpr double kFlopsPerSecond = 2e8;  // deliberately pessimistic
  if (flops / kFlopsPerSecond > budget)
    throw BudgetExceeded("run_scenario: estimated cost " +
                         std::to_string(flops / kFlopsPerSecond) +
                         "s exceeds budget " + std::to_string(budget) + "s");

  const std::uint64_t base = cfg.seed ^ detail::scenario_hash(cfg);
  const Vector beta = cfg.beta0.size() > 0 ? cfg.beta0 : default_beta0(cfg.p);

  ScenarioResult result;
  result.config = cfg;
  result.records.resize(cfg.reps);

  parallel_for(cfg.reps, cfg.threads, [&](int rep) {
    const Instance inst = generate_instance(cfg, rep);

    ReproConfig rc;
    rc.L = cfg.L;
    rc.k = cfg.k_search;
    rc.lambdas = cfg.lambdas;
    rc.solver = cfg.solver;
    rc.seed = RngStream(base, 3).fork(static_cast<std::uint64_t>(rep)).next_u64();
    rc.threads = 1;  // parallelism lives at the replication level
    const CandidateSet cs = generate_candidates(inst.y, inst.x, DesignVariant::plain(), rc);

    SparsityTestConfig tc;
    tc.k0 = 0;
    tc.alpha = cfg.alpha_test;
    tc.M = cfg.M;
    tc.seed = RngStream(base, 4).fork(static_cast<std::uint64_t>(rep)).next_u64();
    tc.threads = 1;
    const SparsityTestReport test = sparsity_test(inst.y, inst.x, cs, tc);

    const ConfidenceRegion region = coef_region(inst.y, inst.x, cs, cfg.alpha_coef);
    const VolumeEstimate vol = region_volume_mc(
        region, RngStream(base, 5).fork(static_cast<std::uint64_t>(rep)), cfg.volume_samples);

    RepRecord& rec = result.records[rep];
    rec.rep = rep;
    rec.candidate_set_size = cs.size();
    rec.contains_truth = cs.contains(inst.pi0);
    rec.matching_fraction = matching_fraction(cs, inst.pi0);
    rec.d_obs = test.d_obs;
    rec.reject = test.reject;
    rec.p_value = test.p_value;
    rec.coef_covered = coef_region_membership(region, beta);
    rec.region_volume = vol.volume;
  });

  ScenarioAggregates& agg = result.aggregates;
  for (const auto& r : result.records) {
    agg.mean_candidate_set_size += r.candidate_set_size;
    agg.contain_rate += r.contains_truth ? 1.0 : 0.0;
    agg.mean_matching_fraction += r.matching_fraction;
    agg.reject_rate += r.reject ? 1.0 : 0.0;
    agg.coverage_rate += r.coef_covered ? 1.0 : 0.0;
    agg.mean_region_volume += r.region_volume;
  }
  const double inv = 1.0 / cfg.reps;
  agg.mean_candidate_set_size *= inv;
  agg.contain_rate *= inv;
  agg.mean_matching_fraction *= inv;
  agg.reject_rate *= inv;
  agg.coverage_rate *= inv;
  agg.mean_region_volume *= inv;
  return result;
}

// ----------------------------------------------------------------------------
// Local mismatch injection
// ----------------------------------------------------------------------------

struct MismatchResult {
  Vector y;
  SparsePermutation pi;
};

// Shuffles floor(rate * n) rows (rounded down to an even count) by swapping
// disjoint pairs whose timestamps differ by at most `window`.  Mirrors how
// alignment errors arise in merged time series: records drift by a few
// steps, they do not teleport.  Throws InfeasibleWindow when the requested
// number of feasible disjoint pairs cannot be formed.
inline MismatchResult inject_local_mismatch(const Vector& y, const std::vector<double>& timestamps,
                                            double rate, double window, RngStream rng) {
  const int n = static_cast<int>(y.size());
  if (static_cast<int>(timestamps.size()) != n)
    throw LengthMismatch("inject_local_mismatch: timestamps length");
  if (!(rate >= 0.0) || !(rate <= 1.0))
    throw DomainError("inject_local_mismatch: rate must lie in [0, 1]");
  if (!(window > 0.0)) throw DomainError("inject_local_mismatch: window must be positive");

  int m = static_cast<int>(std::floor(rate * n));
  m -= m % 2;
  MismatchResult out;
  if (m == 0) {
    out.y = y;
    out.pi = SparsePermutation::identity(n);
    return out;
  }

  const int need = m / 2;
  std::vector<int> unused(n);
  std::iota(unused.begin(), unused.end(), 0);
  std::vector<std::pair<int, int>> moved;
  moved.reserve(m);
  int formed = 0;
  const int max_attempts = 100 * need + 1000;
  for (int attempt = 0; attempt < max_attempts && formed < need; ++attempt) {
    const int ai = static_cast<int>(rng.next_below(unused.size()));
    const int i = unused[ai];
    std::vector<int> feasible;
    for (int b = 0; b < static_cast<int>(unused.size()); ++b) {
      const int j = unused[b];
      if (j != i && std::abs(timestamps[i] - timestamps[j]) <= window) feasible.push_back(j);
    }
    if (feasible.empty()) continue;
    const int j = feasible[rng.next_below(feasible.size())];
    moved.emplace_back(i, j);
    moved.emplace_back(j, i);
    unused.erase(std::remove_if(unused.begin(), unused.end(),
                                [&](int v) { return v == i || v == j; }),
                 unused.end());
    ++formed;
  }
  if (formed < need)
    throw InfeasibleWindow("inject_local_mismatch: cannot form enough pairs within the window");

  out.pi = SparsePermutation::from_moved(n, std::move(moved));
  out.y = out.pi.apply(y);
  return out;
}

// ----------------------------------------------------------------------------
// Synthetic hourly fixture
// ----------------------------------------------------------------------------
//
// A self-contained stand-in for merged sensor data: hourly index, a strong
// linear signal in p covariates, and optionally a fraction of responses
// swapped within a few hours of their true slot.

struct FixtureSpec {
  int n = 1000;
  int p = 10;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  double mismatch_rate = 0.0;
  double window = 3.0;
};

struct HourlyFixture {
  Vector hours;
  Matrix x;
  Vector y;
  SparsePermutation truth;  // applied mismatch (identity if rate = 0)
};

inline HourlyFixture make_hourly_fixture(const FixtureSpec& spec) {
  if (spec.n < 4 || spec.p < 1 || spec.n <= spec.p)
    throw DomainError("make_hourly_fixture: need n > p");
  if (!(spec.sigma > 0.0)) throw DomainError("make_hourly_fixture: sigma must be positive");

  HourlyFixture f;
  f.hours.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) f.hours[i] = i;
  f.x = gaussian_matrix(RngStream(spec.seed, 10), spec.n, spec.p);
  const Vector beta = default_beta0(spec.p);
  const Vector u = gaussian_vector(RngStream(spec.seed, 11), spec.n);
  Vector clean = f.x * beta + spec.sigma * u;

  if (spec.mismatch_rate > 0.0) {
    std::vector<double> ts(f.hours.data(), f.hours.data() + spec.n);
    const MismatchResult mm = inject_local_mismatch(clean, ts, spec.mismatch_rate, spec.window,
                                                    RngStream(spec.seed, 12));
    f.y = mm.y;
    f.truth = mm.pi;
  } else {
    f.y = clean;
    f.truth = SparsePermutation::identity(spec.n);
  }
  return f;
}

// CSV with header hour,y,x1..xp; full round-trip precision.
inline void write_fixture_csv(std::ostream& os, const HourlyFixture& f) {
  const int n = static_cast<int>(f.x.rows());
  const int p = static_cast<int>(f.x.cols());
  os << "hour,y";
  for (int j = 0; j < p; ++j) os << ",x" << (j + 1);
  os << "\n";
  char buf[64];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", f.hours[i]);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", f.y[i]);
    os << ',' << buf;
    for (int j = 0; j < p; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", f.x(i, j));
      os << ',' << buf;
    }
    os << "\n";
  }
}

}  // namespace permreg
