// Command line front end: candidate sets, sparsity tests, confidence
// regions, penalty tuning, scenario simulation and the identifiability
// counterexample, over CSV inputs.  All artifacts are written atomically
// (temp file + rename) and are byte-for-byte reproducible from --seed apart
// from the generated_at metadata field.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "permreg/candidates.hpp"
#include "permreg/dataset.hpp"
#include "permreg/errors.hpp"
#include "permreg/inference.hpp"
#include "permreg/io.hpp"
#include "permreg/simulate.hpp"
#include "permreg/tuning.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

struct FlagError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

permreg::Json make_meta(const std::string& command, std::uint64_t seed) {
  return permreg::Json{{"tool", "permreg"},
                       {"version", kVersion},
                       {"command", command},
                       {"seed", seed},
                       {"generated_at", timestamp_utc()}};
}

// Atomic write: the destination either keeps its old content or gets the
// complete new content, never a torn file.
void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw permreg::FileError("cannot open '" + tmp + "' for writing");
    out << content;
    if (!out.good()) throw permreg::FileError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw permreg::FileError("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty())
    std::cout << content;
  else
    write_file_atomic(out_path, content);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

permreg::LambdaConfig parse_lambda(const std::string& s) {
  if (s == "auto") return permreg::LambdaConfig::automatic();
  const auto parts = split_list(s);
  if (parts.size() != 2) throw FlagError("--lambda expects 'auto' or two comma-separated values");
  char* end = nullptr;
  const double l1 = std::strtod(parts[0].c_str(), &end);
  if (end == parts[0].c_str() || *end != '\0') throw FlagError("--lambda: bad number");
  const double l2 = std::strtod(parts[1].c_str(), &end);
  if (end == parts[1].c_str() || *end != '\0') throw FlagError("--lambda: bad number");
  if (l1 < 0.0 || l2 < 0.0) throw FlagError("--lambda: penalties must be non-negative");
  return permreg::LambdaConfig::fixed(l1, l2);
}

// Shared ingestion flags.
struct DataArgs {
  std::string input;
  std::string response;
  std::string covariates;
  std::string nuisance;
  bool no_standardize = false;

  void attach(CLI::App* app) {
    app->add_option("--input", input, "input CSV file")->required();
    app->add_option("--response", response, "response column name")->required();
    app->add_option("--covariates", covariates, "comma-separated covariate columns")->required();
    app->add_option("--nuisance-covariates", nuisance,
                    "comma-separated nuisance covariate columns");
    app->add_flag("--no-standardize", no_standardize, "skip variable standardization");
  }

  permreg::Dataset load() const {
    return permreg::ingest_csv(input, response, split_list(covariates), split_list(nuisance),
                               !no_standardize);
  }
};

struct CandidateArgs {
  int k = 2;
  int L = 100;
  std::string lambda = "auto";
  double ridge = 0.0;
  std::uint64_t seed = 0;
  int threads = 0;

  void attach(CLI::App* app) {
    app->add_option("--k", k, "sparsity bound of the search class")->required();
    app->add_option("--L", L, "number of repro draws");
    app->add_option("--lambda", lambda, "penalties: 'auto' or 'l1,l2'");
    app->add_option("--ridge", ridge, "ridge parameter (enables the ridge variant)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--threads", threads, "worker threads (0 = all)");
  }

  permreg::ReproConfig config() const {
    permreg::ReproConfig rc;
    rc.L = L;
    rc.k = k;
    rc.lambdas = parse_lambda(lambda);
    rc.seed = seed;
    rc.threads = threads;
    if (k < 0) throw FlagError("--k must be non-negative");
    if (L < 1) throw FlagError("--L must be positive");
    return rc;
  }

  permreg::DesignVariant variant(const permreg::Dataset& ds) const {
    const bool has_nuisance = ds.z.cols() > 0;
    if (ridge > 0.0 && has_nuisance)
      throw FlagError("--ridge cannot be combined with --nuisance-covariates");
    if (ridge < 0.0) throw FlagError("--ridge must be positive");
    if (ridge > 0.0) return permreg::DesignVariant::ridge(ridge);
    if (has_nuisance) return permreg::DesignVariant::partial(ds.z);
    return permreg::DesignVariant::plain();
  }
};

int run_candidates(const DataArgs& data, const CandidateArgs& cand, const std::string& out) {
  const permreg::Dataset ds = data.load();
  const permreg::CandidateSet cs =
      permreg::generate_candidates(ds.y, ds.x, cand.variant(ds), cand.config());
  permreg::Json j{{"meta", make_meta("candidates", cand.seed)},
                  {"dropped_rows", ds.dropped_rows},
                  {"candidate_set", cs}};
  emit(out, j.dump(2) + "\n");
  return 0;
}

int run_test(const DataArgs& data, const CandidateArgs& cand, int k0, double alpha, int M,
             const std::string& out) {
  if (k0 < 0) throw FlagError("--k0 must be non-negative");
  if (!(alpha > 0.0 && alpha < 1.0)) throw FlagError("--alpha must lie in (0, 1)");
  if (M < 1) throw FlagError("--M must be positive");
  const permreg::Dataset ds = data.load();
  const permreg::CandidateSet cs =
      permreg::generate_candidates(ds.y, ds.x, cand.variant(ds), cand.config());
  permreg::SparsityTestConfig tc;
  tc.k0 = k0;
  tc.alpha = alpha;
  tc.M = M;
  tc.seed = cand.seed;
  tc.threads = cand.threads;
  const permreg::SparsityTestReport rep = permreg::sparsity_test(ds.y, ds.x, cs, tc);
  permreg::Json j{{"meta", make_meta("test", cand.seed)},
                  {"dropped_rows", ds.dropped_rows},
                  {"candidate_set_size", cs.size()},
                  {"report", rep}};
  emit(out, j.dump(2) + "\n");
  return 0;
}

int run_confset(const DataArgs& data, const CandidateArgs& cand, double alpha,
                const std::string& mode, int volume_samples, const std::string& out) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw FlagError("--alpha must lie in (0, 1)");
  const permreg::Dataset ds = data.load();
  const bool has_nuisance = ds.z.cols() > 0;
  if (!has_nuisance && mode != "joint")
    throw FlagError("--mode beta1 requires --nuisance-covariates");
  const permreg::CandidateSet cs =
      permreg::generate_candidates(ds.y, ds.x, cand.variant(ds), cand.config());

  permreg::ConfidenceRegion region;
  if (has_nuisance) {
    const auto pmode =
        mode == "beta1" ? permreg::PartialMode::Beta1Only : permreg::PartialMode::Joint;
    region = permreg::partial_coef_region(ds.y, ds.x, ds.z, cs, alpha, pmode);
  } else {
    region = permreg::coef_region(ds.y, ds.x, cs, alpha);
  }

  permreg::Json j{{"meta", make_meta("confset", cand.seed)},
                  {"dropped_rows", ds.dropped_rows},
                  {"candidate_set_size", cs.size()},
                  {"region", region}};
  if (volume_samples > 0) {
    const permreg::VolumeEstimate vol = permreg::region_volume_mc(
        region, permreg::RngStream(cand.seed, 0).fork(7), volume_samples);
    j["volume"] = vol;
  }
  emit(out, j.dump(2) + "\n");
  return 0;
}

int run_tune(const DataArgs& data, int k, double xi, int swaps, std::uint64_t seed,
             const std::string& out) {
  if (k < 1) throw FlagError("--k must be at least 1");
  if (!(xi > 0.0 && xi < 1.0)) throw FlagError("--xi must lie in (0, 1)");
  if (swaps < 1) throw FlagError("--swaps must be positive");
  const permreg::Dataset ds = data.load();
  // Same streams as draw 1 of the candidate generator, so 'tune' shows the
  // penalties the first repro draw would use.
  const permreg::Vector ustar =
      permreg::gaussian_vector(permreg::RngStream(seed, 1), static_cast<int>(ds.x.rows()));
  const permreg::TuningReport rep = permreg::select_lambdas(
      ds.y, ds.x, ustar, k, xi, permreg::RngStream(seed, 1).fork(1), swaps);
  permreg::Json j{{"meta", make_meta("tune", seed)},
                  {"dropped_rows", ds.dropped_rows},
                  {"report", rep}};
  emit(out, j.dump(2) + "\n");
  return 0;
}

std::string replace_extension(const std::string& path, const std::string& ext) {
  const std::size_t slash = path.find_last_of('/');
  const std::size_t dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return path + ext;
  return path.substr(0, dot) + ext;
}

int run_simulate(const permreg::ScenarioConfig& cfg, const std::string& format,
                 const std::string& out) {
  if (format != "json" && format != "csv") throw FlagError("--format must be json or csv");
  const permreg::ScenarioResult result = permreg::run_scenario(cfg);
  const std::string csv = permreg::scenario_records_csv(result);
  if (format == "csv") {
    emit(out, csv);
    return 0;
  }
  permreg::Json j{{"meta", make_meta("simulate", cfg.seed)}, {"result", result}};
  emit(out, j.dump(2) + "\n");
  if (!out.empty()) write_file_atomic(replace_extension(out, ".csv"), csv);
  return 0;
}

int run_counterexample(int n, int p, int k, const std::string& out) {
  const permreg::Counterexample ce = permreg::counterexample(n, p, k);
  permreg::Json j{{"meta", make_meta("counterexample", 0)}, {"counterexample", ce}};
  emit(out, j.dump(2) + "\n");
  return 0;
}

int run_fixture(const permreg::FixtureSpec& spec, const std::string& out,
                const std::string& truth_out) {
  const permreg::HourlyFixture f = permreg::make_hourly_fixture(spec);
  std::ostringstream csv;
  permreg::write_fixture_csv(csv, f);
  emit(out, csv.str());
  if (!truth_out.empty()) {
    permreg::Json j{{"meta", make_meta("fixture", spec.seed)},
                    {"truth", f.truth},
                    {"displaced_rows", f.truth.hamming_distance()}};
    write_file_atomic(truth_out, j.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-sample inference for sparsely mismatched linear regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  DataArgs data;
  CandidateArgs cand;
  std::string out;
  std::string format = "json";

  auto* cmd_candidates = app.add_subcommand("candidates", "generate the repro candidate set");
  data.attach(cmd_candidates);
  cand.attach(cmd_candidates);
  cmd_candidates->add_option("--out", out, "output path (default: stdout)");

  DataArgs test_data;
  CandidateArgs test_cand;
  int k0 = 0;
  double alpha = 0.05;
  int M = 200;
  std::string test_out;
  auto* cmd_test = app.add_subcommand("test", "conditional Monte Carlo sparsity test");
  test_data.attach(cmd_test);
  test_cand.attach(cmd_test);
  cmd_test->add_option("--k0", k0, "null sparsity level");
  cmd_test->add_option("--alpha", alpha, "test level");
  cmd_test->add_option("--M", M, "Monte Carlo calibration draws");
  cmd_test->add_option("--out", test_out, "output path (default: stdout)");

  DataArgs conf_data;
  CandidateArgs conf_cand;
  double coverage = 0.95;
  std::string mode = "joint";
  int volume_samples = 0;
  std::string conf_out;
  auto* cmd_confset = app.add_subcommand("confset", "union confidence region for the coefficients");
  conf_data.attach(cmd_confset);
  conf_cand.attach(cmd_confset);
  cmd_confset->add_option("--alpha", coverage, "target coverage, e.g. 0.95");
  cmd_confset->add_option("--mode", mode, "joint or beta1 (with a nuisance block)");
  cmd_confset->add_option("--volume-samples", volume_samples,
                          "Monte Carlo samples for the region volume (0 = skip)");
  cmd_confset->add_option("--out", conf_out, "output path (default: stdout)");

  DataArgs tune_data;
  int tune_k = 2;
  double xi = 0.05;
  int swaps = 50;
  std::uint64_t tune_seed = 0;
  std::string tune_out;
  auto* cmd_tune = app.add_subcommand("tune", "data-driven penalty selection");
  tune_data.attach(cmd_tune);
  cmd_tune->add_option("--k", tune_k, "sparsity bound")->required();
  cmd_tune->add_option("--xi", xi, "confidence parameter of the tuning bounds");
  cmd_tune->add_option("--swaps", swaps, "random swaps for the gap estimate");
  cmd_tune->add_option("--seed", tune_seed, "random seed");
  cmd_tune->add_option("--out", tune_out, "output path (default: stdout)");

  permreg::ScenarioConfig scen;
  std::vector<double> scen_beta;
  std::string scen_lambda = "auto";
  std::string scen_solver = "surrogate_lap";
  std::string scen_out;
  auto* cmd_simulate = app.add_subcommand("simulate", "replicate a synthetic scenario");
  cmd_simulate->add_option("--n", scen.n, "sample size");
  cmd_simulate->add_option("--p", scen.p, "number of covariates");
  cmd_simulate->add_option("--k-true", scen.k_true, "true displacement");
  cmd_simulate->add_option("--k", scen.k_search, "sparsity bound of the search");
  cmd_simulate->add_option("--sigma", scen.sigma0, "noise level");
  cmd_simulate->add_option("--L", scen.L, "repro draws per replication");
  cmd_simulate->add_option("--M", scen.M, "calibration draws per replication");
  cmd_simulate->add_option("--alpha", scen.alpha_test, "test level");
  cmd_simulate->add_option("--coverage", scen.alpha_coef, "coefficient region coverage");
  cmd_simulate->add_option("--reps", scen.reps, "number of replications");
  cmd_simulate->add_option("--seed", scen.seed, "random seed");
  cmd_simulate->add_option("--beta0", scen_beta, "true coefficients (repeat the flag)");
  cmd_simulate->add_option("--lambda", scen_lambda, "penalties: 'auto' or 'l1,l2'");
  cmd_simulate->add_option("--solver", scen_solver, "surrogate_lap or brute_force");
  cmd_simulate->add_option("--volume-samples", scen.volume_samples,
                           "Monte Carlo samples for region volumes");
  cmd_simulate->add_option("--threads", scen.threads, "worker threads (0 = all)");
  cmd_simulate->add_option("--format", format, "output format: json or csv");
  cmd_simulate->add_option("--out", scen_out, "output path (default: stdout)");

  int ce_n = 6, ce_p = 3, ce_k = 2;
  std::string ce_out;
  auto* cmd_ce = app.add_subcommand("counterexample",
                                    "non-identifiable instance below the threshold");
  cmd_ce->add_option("--n", ce_n, "sample size")->required();
  cmd_ce->add_option("--p", ce_p, "number of covariates")->required();
  cmd_ce->add_option("--k", ce_k, "sparsity bound")->required();
  cmd_ce->add_option("--out", ce_out, "output path (default: stdout)");

  permreg::FixtureSpec fixture;
  double fixture_rate = 0.0;
  std::string fixture_out, fixture_truth_out;
  auto* cmd_fixture = app.add_subcommand("fixture", "synthetic hourly CSV fixture");
  cmd_fixture->add_option("--n", fixture.n, "rows");
  cmd_fixture->add_option("--p", fixture.p, "covariates");
  cmd_fixture->add_option("--sigma", fixture.sigma, "noise level");
  cmd_fixture->add_option("--seed", fixture.seed, "random seed");
  cmd_fixture->add_option("--mismatch-rate", fixture_rate, "fraction of rows to shuffle");
  cmd_fixture->add_option("--window", fixture.window, "maximum hour distance of a swap");
  cmd_fixture->add_option("--out", fixture_out, "output CSV path (default: stdout)");
  cmd_fixture->add_option("--truth-out", fixture_truth_out,
                          "optional JSON with the applied permutation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }

  try {
    if (cmd_candidates->parsed()) return run_candidates(data, cand, out);
    if (cmd_test->parsed()) return run_test(test_data, test_cand, k0, alpha, M, test_out);
    if (cmd_confset->parsed())
      return run_confset(conf_data, conf_cand, coverage, mode, volume_samples, conf_out);
    if (cmd_tune->parsed())
      return run_tune(tune_data, tune_k, xi, swaps, tune_seed, tune_out);
    if (cmd_simulate->parsed()) {
      if (!scen_beta.empty())
        scen.beta0 = Eigen::Map<const permreg::Vector>(scen_beta.data(),
                                                       static_cast<int>(scen_beta.size()));
      scen.lambdas = parse_lambda(scen_lambda);
      try {
        scen.solver = permreg::solver_from_name(scen_solver);
      } catch (const permreg::SchemaError& e) {
        throw FlagError(e.what());
      }
      return run_simulate(scen, format, scen_out);
    }
    if (cmd_ce->parsed()) return run_counterexample(ce_n, ce_p, ce_k, ce_out);
    if (cmd_fixture->parsed()) {
      fixture.mismatch_rate = fixture_rate;
      return run_fixture(fixture, fixture_out, fixture_truth_out);
    }
  } catch (const FlagError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const permreg::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const permreg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
