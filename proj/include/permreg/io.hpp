#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "permreg/candidates.hpp"
#include "permreg/errors.hpp"
#include "permreg/inference.hpp"
#include "permreg/permutations.hpp"
#include "permreg/simulate.hpp"
#include "permreg/tuning.hpp"

namespace permreg {

using Json = nlohmann::json;

// ----------------------------------------------------------------------------
// Small helpers
// ----------------------------------------------------------------------------

inline const Json& jfield(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("json: missing field '") + key + "'");
  return *it;
}

// Doubles that may be infinite are encoded as the strings "inf"/"-inf"/"nan"
// (bare JSON has no spelling for them); finite values stay plain numbers and
// round-trip exactly.
inline Json json_real(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0.0 ? "inf" : "-inf";
}

inline double real_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw SchemaError("json: expected a real number");
}

inline Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw SchemaError("json: expected an array of numbers");
  Vector v(static_cast<int>(j.size()));
  for (int i = 0; i < v.size(); ++i) v[i] = real_from_json(j[i]);
  return v;
}

// Square matrices are stored flat in row-major order next to their side
// length (the layout used by the region pieces).
inline Json square_matrix_to_json(const Matrix& m) {
  Json a = Json::array();
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  return a;
}

inline Matrix square_matrix_from_json(const Json& j, int dim) {
  if (!j.is_array() || static_cast<int>(j.size()) != dim * dim)
    throw SchemaError("json: square matrix payload has wrong length");
  Matrix m(dim, dim);
  int t = 0;
  for (int i = 0; i < dim; ++i)
    for (int c = 0; c < dim; ++c) m(i, c) = real_from_json(j[t++]);
  return m;
}

// ----------------------------------------------------------------------------
// Permutations and candidate sets
// ----------------------------------------------------------------------------

inline void to_json(Json& j, const SparsePermutation& p) {
  Json moved = Json::array();
  for (const auto& [i, t] : p.moved()) moved.push_back(Json::array({i, t}));
  j = Json{{"n", p.n()}, {"moved", std::move(moved)}};
}

inline void from_json(const Json& j, SparsePermutation& p) {
  const int n = jfield(j, "n").get<int>();
  const Json& moved = jfield(j, "moved");
  if (!moved.is_array()) throw SchemaError("permutation: 'moved' must be an array");
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(moved.size());
  for (const auto& e : moved) {
    if (!e.is_array() || e.size() != 2) throw SchemaError("permutation: bad moved pair");
    pairs.emplace_back(e[0].get<int>(), e[1].get<int>());
  }
  try {
    p = SparsePermutation::from_moved(n, std::move(pairs));
  } catch (const Error& err) {
    throw SchemaError(std::string("permutation: ") + err.what());
  }
}

inline void to_json(Json& j, const DrawRecord& d) {
  j = Json{{"stream", d.stream},
           {"unique_index", d.unique_index},
           {"objective", json_real(d.objective)},
           {"sparsity_violation", d.sparsity_violation}};
}

inline void from_json(const Json& j, DrawRecord& d) {
  d.stream = jfield(j, "stream").get<std::uint64_t>();
  d.unique_index = jfield(j, "unique_index").get<int>();
  d.objective = real_from_json(jfield(j, "objective"));
  d.sparsity_violation = jfield(j, "sparsity_violation").get<bool>();
}

inline void to_json(Json& j, const CandidateSet& cs) {
  Json uniques = Json::array();
  for (int i = 0; i < cs.size(); ++i) {
    uniques.push_back(Json{{"permutation", cs.unique(i)},
                           {"multiplicity", cs.multiplicity(i)},
                           {"min_objective", json_real(cs.min_objective(i))},
                           {"hamming", cs.unique(i).hamming_distance()}});
  }
  j = Json{{"n", cs.n()}, {"k", cs.k()}, {"uniques", std::move(uniques)}, {"draws", cs.draws()}};
}

inline void from_json(const Json& j, CandidateSet& cs) {
  const int n = jfield(j, "n").get<int>();
  const int k = jfield(j, "k").get<int>();
  const Json& uniques = jfield(j, "uniques");
  const Json& draws = jfield(j, "draws");
  if (!uniques.is_array() || !draws.is_array())
    throw SchemaError("candidate set: 'uniques' and 'draws' must be arrays");

  std::vector<SparsePermutation> perms;
  perms.reserve(uniques.size());
  for (const auto& u : uniques) perms.push_back(jfield(u, "permutation").get<SparsePermutation>());

  cs = CandidateSet(n, k);
  for (const auto& dj : draws) {
    const DrawRecord d = dj.get<DrawRecord>();
    if (d.unique_index < 0 || d.unique_index >= static_cast<int>(perms.size()))
      throw SchemaError("candidate set: draw references an unknown unique");
    cs.push_draw(perms[d.unique_index], d.stream, d.objective, d.sparsity_violation);
  }
  if (cs.uniques() != perms)
    throw SchemaError("candidate set: uniques are not in first-appearance order of the draws");
  for (int i = 0; i < cs.size(); ++i) {
    const int mult = jfield(uniques[i], "multiplicity").get<int>();
    if (mult != cs.multiplicity(i))
      throw SchemaError("candidate set: stored multiplicity disagrees with the draws");
  }
}

// ----------------------------------------------------------------------------
// Sparsity test
// ----------------------------------------------------------------------------

inline void to_json(Json& j, const SparsityTestConfig& c) {
  j = Json{{"k0", c.k0},
           {"alpha", c.alpha},
           {"M", c.M},
           {"seed", c.seed},
           {"threads", c.threads}};
}

inline void from_json(const Json& j, SparsityTestConfig& c) {
  c.k0 = jfield(j, "k0").get<int>();
  c.alpha = real_from_json(jfield(j, "alpha"));
  c.M = jfield(j, "M").get<int>();
  c.seed = jfield(j, "seed").get<std::uint64_t>();
  c.threads = jfield(j, "threads").get<int>();
}

inline void to_json(Json& j, const SparsityTestReport& r) {
  j = Json{{"config", r.config},
           {"d_obs", r.d_obs},
           {"c_hat", r.c_hat},
           {"per_null_quantiles", r.per_null_quantiles},
           {"p_value", json_real(r.p_value)},
           {"reject", r.reject},
           {"null_set_size", r.null_set_size},
           {"degenerate_null", r.degenerate_null}};
}

inline void from_json(const Json& j, SparsityTestReport& r) {
  r.config = jfield(j, "config").get<SparsityTestConfig>();
  r.d_obs = jfield(j, "d_obs").get<int>();
  r.c_hat = jfield(j, "c_hat").get<int>();
  r.per_null_quantiles = jfield(j, "per_null_quantiles").get<std::vector<int>>();
  r.p_value = real_from_json(jfield(j, "p_value"));
  r.reject = jfield(j, "reject").get<bool>();
  r.null_set_size = jfield(j, "null_set_size").get<int>();
  r.degenerate_null = jfield(j, "degenerate_null").get<bool>();
}

// ----------------------------------------------------------------------------
// Confidence regions
// ----------------------------------------------------------------------------

inline void to_json(Json& j, const Ellipsoid& e) {
  j = Json{{"permutation", e.pi},
           {"center", vector_to_json(e.center)},
           {"shape", square_matrix_to_json(e.shape)},
           {"radius_sq", json_real(e.radius_sq)}};
}

inline void from_json(const Json& j, Ellipsoid& e) {
  e.pi = jfield(j, "permutation").get<SparsePermutation>();
  e.center = vector_from_json(jfield(j, "center"));
  e.shape = square_matrix_from_json(jfield(j, "shape"), static_cast<int>(e.center.size()));
  e.radius_sq = real_from_json(jfield(j, "radius_sq"));
}

inline void to_json(Json& j, const ConfidenceRegion& r) {
  j = Json{{"alpha", r.alpha}, {"pieces", r.pieces}};
}

inline void from_json(const Json& j, ConfidenceRegion& r) {
  r.alpha = real_from_json(jfield(j, "alpha"));
  r.pieces = jfield(j, "pieces").get<std::vector<Ellipsoid>>();
}

inline void to_json(Json& j, const VolumeEstimate& v) {
  j = Json{{"volume", json_real(v.volume)},
           {"std_error", json_real(v.std_error)},
           {"samples", v.samples}};
}

inline void from_json(const Json& j, VolumeEstimate& v) {
  v.volume = real_from_json(jfield(j, "volume"));
  v.std_error = real_from_json(jfield(j, "std_error"));
  v.samples = jfield(j, "samples").get<int>();
}

// ----------------------------------------------------------------------------
// Tuning
// ----------------------------------------------------------------------------

inline void to_json(Json& j, const TuningReport& r) {
  j = Json{{"xi", json_real(r.xi)},
           {"k", r.k},
           {"b_diag_hat", json_real(r.b_diag_hat)},
           {"eta_op_hat", json_real(r.eta_op_hat)},
           {"eta_op_substitution", "norm_y_squared"},
           {"delta_f_hat", json_real(r.delta_f_hat)},
           {"resid_sq_hat", json_real(r.resid_sq_hat)},
           {"resid_null_hat", json_real(r.resid_null_hat)},
           {"budget_b", json_real(r.budget_b)},
           {"lam1", json_real(r.lam1)},
           {"lam2", json_real(r.lam2)},
           {"swaps_tried", r.swaps_tried},
           {"window_ok", r.window_ok}};
}

inline void from_json(const Json& j, TuningReport& r) {
  r.xi = real_from_json(jfield(j, "xi"));
  r.k = jfield(j, "k").get<int>();
  r.b_diag_hat = real_from_json(jfield(j, "b_diag_hat"));
  r.eta_op_hat = real_from_json(jfield(j, "eta_op_hat"));
  r.delta_f_hat = real_from_json(jfield(j, "delta_f_hat"));
  r.resid_sq_hat = real_from_json(jfield(j, "resid_sq_hat"));
  r.resid_null_hat = real_from_json(jfield(j, "resid_null_hat"));
  r.budget_b = real_from_json(jfield(j, "budget_b"));
  r.lam1 = real_from_json(jfield(j, "lam1"));
  r.lam2 = real_from_json(jfield(j, "lam2"));
  r.swaps_tried = jfield(j, "swaps_tried").get<int>();
  r.window_ok = jfield(j, "window_ok").get<bool>();
}

inline void to_json(Json& j, const TheoryConstants& t) {
  j = Json{{"xi", json_real(t.xi)},
           {"c_min", json_real(t.c_min)},
           {"b_y", json_real(t.b_y)},
           {"b_diag", json_real(t.b_diag)},
           {"eta_op", json_real(t.eta_op)},
           {"delta_under", json_real(t.delta_under)}};
}

inline void from_json(const Json& j, TheoryConstants& t) {
  t.xi = real_from_json(jfield(j, "xi"));
  t.c_min = real_from_json(jfield(j, "c_min"));
  t.b_y = real_from_json(jfield(j, "b_y"));
  t.b_diag = real_from_json(jfield(j, "b_diag"));
  t.eta_op = real_from_json(jfield(j, "eta_op"));
  t.delta_under = real_from_json(jfield(j, "delta_under"));
}

inline void to_json(Json& j, const Counterexample& c) {
  Json rows = Json::array();
  for (int i = 0; i < c.x.rows(); ++i) {
    Json row = Json::array();
    for (int t = 0; t < c.x.cols(); ++t) row.push_back(c.x(i, t));
    rows.push_back(std::move(row));
  }
  j = Json{{"n", static_cast<int>(c.x.rows())},
           {"p", static_cast<int>(c.x.cols())},
           {"x", std::move(rows)},
           {"beta0", vector_to_json(c.beta0)},
           {"beta1", vector_to_json(c.beta1)},
           {"pi1", c.pi1}};
}

// ----------------------------------------------------------------------------
// Scenarios
// ----------------------------------------------------------------------------

inline void to_json(Json& j, const LambdaConfig& c) {
  j = Json{{"auto_tune", c.auto_tune}, {"lam1", json_real(c.lam1)}, {"lam2", json_real(c.lam2)}};
}

inline void from_json(const Json& j, LambdaConfig& c) {
  c.auto_tune = jfield(j, "auto_tune").get<bool>();
  c.lam1 = real_from_json(jfield(j, "lam1"));
  c.lam2 = real_from_json(jfield(j, "lam2"));
}

inline std::string solver_name(SolverKind s) {
  return s == SolverKind::SurrogateLap ? "surrogate_lap" : "brute_force";
}

inline SolverKind solver_from_name(const std::string& s) {
  if (s == "surrogate_lap") return SolverKind::SurrogateLap;
  if (s == "brute_force") return SolverKind::BruteForce;
  throw SchemaError("unknown solver '" + s + "'");
}

inline void to_json(Json& j, const ScenarioConfig& c) {
  j = Json{{"n", c.n},
           {"p", c.p},
           {"k_true", c.k_true},
           {"k_search", c.k_search},
           {"sigma0", json_real(c.sigma0)},
           {"L", c.L},
           {"M", c.M},
           {"alpha_test", json_real(c.alpha_test)},
           {"alpha_coef", json_real(c.alpha_coef)},
           {"reps", c.reps},
           {"seed", c.seed},
           {"beta0", vector_to_json(c.beta0.size() > 0 ? c.beta0 : default_beta0(c.p))},
           {"lambdas", c.lambdas},
           {"solver", solver_name(c.solver)},
           {"volume_samples", c.volume_samples},
           {"threads", c.threads},
           {"budget_seconds", json_real(c.budget_seconds)}};
}

inline void from_json(const Json& j, ScenarioConfig& c) {
  c.n = jfield(j, "n").get<int>();
  c.p = jfield(j, "p").get<int>();
  c.k_true = jfield(j, "k_true").get<int>();
  c.k_search = jfield(j, "k_search").get<int>();
  c.sigma0 = real_from_json(jfield(j, "sigma0"));
  c.L = jfield(j, "L").get<int>();
  c.M = jfield(j, "M").get<int>();
  c.alpha_test = real_from_json(jfield(j, "alpha_test"));
  c.alpha_coef = real_from_json(jfield(j, "alpha_coef"));
  c.reps = jfield(j, "reps").get<int>();
  c.seed = jfield(j, "seed").get<std::uint64_t>();
  c.beta0 = vector_from_json(jfield(j, "beta0"));
  c.lambdas = jfield(j, "lambdas").get<LambdaConfig>();
  c.solver = solver_from_name(jfield(j, "solver").get<std::string>());
  c.volume_samples = jfield(j, "volume_samples").get<int>();
  c.threads = jfield(j, "threads").get<int>();
  c.budget_seconds = real_from_json(jfield(j, "budget_seconds"));
}

inline void to_json(Json& j, const RepRecord& r) {
  j = Json{{"rep", r.rep},
           {"candidate_set_size", r.candidate_set_size},
           {"contains_truth", r.contains_truth},
           {"matching_fraction", json_real(r.matching_fraction)},
           {"d_obs", r.d_obs},
           {"reject", r.reject},
           {"p_value", json_real(r.p_value)},
           {"coef_covered", r.coef_covered},
           {"region_volume", json_real(r.region_volume)}};
}

inline void from_json(const Json& j, RepRecord& r) {
  r.rep = jfield(j, "rep").get<int>();
  r.candidate_set_size = jfield(j, "candidate_set_size").get<int>();
  r.contains_truth = jfield(j, "contains_truth").get<bool>();
  r.matching_fraction = real_from_json(jfield(j, "matching_fraction"));
  r.d_obs = jfield(j, "d_obs").get<int>();
  r.reject = jfield(j, "reject").get<bool>();
  r.p_value = real_from_json(jfield(j, "p_value"));
  r.coef_covered = jfield(j, "coef_covered").get<bool>();
  r.region_volume = real_from_json(jfield(j, "region_volume"));
}

inline void to_json(Json& j, const ScenarioAggregates& a) {
  j = Json{{"mean_candidate_set_size", json_real(a.mean_candidate_set_size)},
           {"contain_rate", json_real(a.contain_rate)},
           {"mean_matching_fraction", json_real(a.mean_matching_fraction)},
           {"reject_rate", json_real(a.reject_rate)},
           {"coverage_rate", json_real(a.coverage_rate)},
           {"mean_region_volume", json_real(a.mean_region_volume)}};
}

inline void from_json(const Json& j, ScenarioAggregates& a) {
  a.mean_candidate_set_size = real_from_json(jfield(j, "mean_candidate_set_size"));
  a.contain_rate = real_from_json(jfield(j, "contain_rate"));
  a.mean_matching_fraction = real_from_json(jfield(j, "mean_matching_fraction"));
  a.reject_rate = real_from_json(jfield(j, "reject_rate"));
  a.coverage_rate = real_from_json(jfield(j, "coverage_rate"));
  a.mean_region_volume = real_from_json(jfield(j, "mean_region_volume"));
}

inline void to_json(Json& j, const ScenarioResult& r) {
  j = Json{{"config", r.config}, {"records", r.records}, {"aggregates", r.aggregates}};
}

inline void from_json(const Json& j, ScenarioResult& r) {
  r.config = jfield(j, "config").get<ScenarioConfig>();
  r.records = jfield(j, "records").get<std::vector<RepRecord>>();
  r.aggregates = jfield(j, "aggregates").get<ScenarioAggregates>();
}

// Per-replication CSV companion of a scenario result.
inline std::string scenario_records_csv(const ScenarioResult& r) {
  std::string out =
      "rep,candidate_set_size,contains_truth,matching_fraction,d_obs,reject,p_value,"
      "coef_covered,region_volume\n";
  char buf[64];
  for (const auto& rec : r.records) {
    out += std::to_string(rec.rep);
    out += ',' + std::to_string(rec.candidate_set_size);
    out += ',' + std::to_string(rec.contains_truth ? 1 : 0);
    std::snprintf(buf, sizeof(buf), "%.17g", rec.matching_fraction);
    out += ',';
    out += buf;
    out += ',' + std::to_string(rec.d_obs);
    out += ',' + std::to_string(rec.reject ? 1 : 0);
    std::snprintf(buf, sizeof(buf), "%.17g", rec.p_value);
    out += ',';
    out += buf;
    out += ',' + std::to_string(rec.coef_covered ? 1 : 0);
    std::snprintf(buf, sizeof(buf), "%.17g", rec.region_volume);
    out += ',';
    out += buf;
    out += '\n';
  }
  return out;
}

}  // namespace permreg
