// End-to-end acceptance checks.  Each check prints a single [PASS]/[FAIL]
// line with its wall time; the exit status is the number of failures.  The
// statistical checks run at fixed seeds with thresholds chosen so that a
// correct implementation passes with large margin.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "permreg/candidates.hpp"
#include "permreg/inference.hpp"
#include "permreg/io.hpp"
#include "permreg/simulate.hpp"
#include "permreg/tuning.hpp"

using namespace permreg;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

Outcome ok(std::string detail = "") { return {true, std::move(detail)}; }
Outcome fail(std::string detail) { return {false, std::move(detail)}; }

std::string fmt(const char* pattern, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), pattern, a, b);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Assignment solver equals exhaustive search
// ---------------------------------------------------------------------------

Outcome check_lap_exact() {
    RngStream rng(901, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + trial % 6;
        Matrix cost(n, n);
        RngStream local = rng.fork(static_cast<std::uint64_t>(trial));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double v = 10.0 * local.next_uniform() - 5.0;
                if (trial % 3 == 0) v = std::round(v * 4.0) / 4.0;  // force ties
                cost(i, j) = v;
            }
        const LapSolution lap = hungarian_solve(cost);

        std::vector<int> cols(n);
        std::iota(cols.begin(), cols.end(), 0);
        double best = std::numeric_limits<double>::infinity();
        do {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += cost(i, cols[i]);
            best = std::min(best, s);
        } while (std::next_permutation(cols.begin(), cols.end()));

        if (std::abs(lap.objective - best) > 1e-9)
            return fail("trial " + std::to_string(trial) +
                        fmt(": solver %.12g vs exhaustive %.12g", lap.objective, best));
    }
    return ok("1000/1000 exact");
}

// ---------------------------------------------------------------------------
// 2. Class counts equal enumeration for all n <= 8
// ---------------------------------------------------------------------------

Outcome check_counts() {
    for (int n = 1; n <= 8; ++n) {
        std::vector<std::uint64_t> by_distance(n + 1, 0);
        std::vector<int> img(n);
        std::iota(img.begin(), img.end(), 0);
        do {
            int moved = 0;
            for (int i = 0; i < n; ++i) moved += img[i] != i;
            ++by_distance[moved];
        } while (std::next_permutation(img.begin(), img.end()));

        std::uint64_t cumulative = 0;
        for (int k = 0; k <= n; ++k) {
            cumulative += by_distance[k];
            const BigCount got = count_class(PermutationClass(n, k));
            if (got != static_cast<BigCount>(cumulative))
                return fail("mismatch at n=" + std::to_string(n) + " k=" + std::to_string(k));
        }
    }
    return ok("all n <= 8 exact");
}

// ---------------------------------------------------------------------------
// 3. Exhaustive recovery with the realized noise direction
// ---------------------------------------------------------------------------

Outcome check_oracle_recovery() {
    const int n = 10, p = 3, k = 2;
    const Vector beta = default_beta0(p);
    for (int rep = 0; rep < 100; ++rep) {
        const double sigma = rep < 50 ? 0.0 : 0.1;
        RngStream rng(903, static_cast<std::uint64_t>(rep));
        const Matrix x = gaussian_matrix(rng.fork(1), n, p);
        const auto pi0 = random_k_sparse(rng.fork(2), PermutationClass(n, k), k);
        const Vector u = gaussian_vector(rng.fork(3), n);
        const Vector y = pi0.apply(x * beta) + sigma * u;

        const OracleFit fit = oracle_recover(y, x, u, k);
        if (!(fit.pi == pi0)) return fail("rep " + std::to_string(rep) + ": wrong permutation");
        if ((fit.beta - beta).cwiseAbs().maxCoeff() > 1e-8)
            return fail("rep " + std::to_string(rep) + ": beta error too large");
        if (std::abs(fit.sigma - sigma) > 1e-8)
            return fail("rep " + std::to_string(rep) + ": sigma error too large");
    }
    return ok("100/100 recovered");
}

// ---------------------------------------------------------------------------
// 4. Surrogate solver vs exhaustive least squares, auto-tuned penalties
// ---------------------------------------------------------------------------

Outcome check_surrogate_agreement() {
    const int n = 12, p = 2, k = 2;
    RngStream rng(904, 0);
    const Matrix x = gaussian_matrix(rng.fork(1), n, p);
    const Vector beta = default_beta0(p);
    const auto pi0 = random_k_sparse(rng.fork(2), PermutationClass(n, k), k);
    const Vector y = pi0.apply(x * beta) + 0.05 * gaussian_vector(rng.fork(3), n);

    ReproConfig rc;
    rc.L = 200;
    rc.k = k;
    rc.seed = 77;
    rc.threads = 1;
    rc.solver = SolverKind::SurrogateLap;
    const CandidateSet sur = generate_candidates(y, x, DesignVariant::plain(), rc);
    rc.solver = SolverKind::BruteForce;
    const CandidateSet bru = generate_candidates(y, x, DesignVariant::plain(), rc);

    int agree = 0;
    for (int l = 0; l < rc.L; ++l) {
        const auto& ds = sur.draws()[l];
        const auto& db = bru.draws()[l];
        const bool same_pi = sur.uniques()[ds.unique_index] == bru.uniques()[db.unique_index];
        const double tol = 1e-9 * std::max(1.0, std::abs(db.objective));
        if (same_pi || std::abs(ds.objective - db.objective) <= tol) ++agree;
    }
    if (agree < 190) return fail(std::to_string(agree) + "/200 draws agree, need 190");
    return ok(std::to_string(agree) + "/200 draws agree");
}

// ---------------------------------------------------------------------------
// 5. Candidate sets capture the true permutation
// ---------------------------------------------------------------------------

Outcome check_candidate_coverage() {
    const int n = 30, p = 3, k = 2;
    const Vector beta = default_beta0(p);
    int hits = 0;
    for (int rep = 0; rep < 100; ++rep) {
        RngStream rng(905, static_cast<std::uint64_t>(rep));
        const Matrix x = gaussian_matrix(rng.fork(1), n, p);
        const auto pi0 = random_k_sparse(rng.fork(2), PermutationClass(n, k), k);
        const Vector y = pi0.apply(x * beta) + 0.05 * gaussian_vector(rng.fork(3), n);

        ReproConfig rc;
        rc.L = 100;
        rc.k = k;
        rc.seed = rng.fork(4).next_u64();
        rc.threads = 1;
        const CandidateSet cs = generate_candidates(y, x, DesignVariant::plain(), rc);
        if (cs.contains(pi0)) ++hits;
    }
    if (hits < 90) return fail(std::to_string(hits) + "/100 contain the truth, need 90");
    return ok(std::to_string(hits) + "/100 contain the truth");
}

// ---------------------------------------------------------------------------
// 6. Size of the sparsity test under the null
// ---------------------------------------------------------------------------

ScenarioConfig size_power_base() {
    ScenarioConfig cfg;
    cfg.p = 3;
    cfg.alpha_test = 0.05;
    cfg.alpha_coef = 0.95;
    cfg.L = 50;
    cfg.volume_samples = 1000;
    cfg.threads = 1;
    return cfg;
}

Outcome check_test_size() {
    std::string detail;
    for (const double sigma : {0.05, 0.2}) {
        ScenarioConfig cfg = size_power_base();
        cfg.n = 30;
        cfg.k_true = 0;
        cfg.k_search = 2;
        cfg.sigma0 = sigma;
        cfg.M = 200;
        cfg.reps = 200;
        cfg.seed = 906;
        const ScenarioResult res = run_scenario(cfg);
        if (!detail.empty()) detail += ", ";
        detail += fmt("sigma=%.2f rate=%.3f", sigma, res.aggregates.reject_rate);
        if (res.aggregates.reject_rate > 0.08)
            return fail(detail + " exceeds 0.08");
    }
    return ok(detail);
}

// ---------------------------------------------------------------------------
// 7. Power of the sparsity test and its trend in the true displacement
// ---------------------------------------------------------------------------

Outcome check_test_power() {
    std::vector<double> rates;
    std::string detail;
    for (const int k_true : {0, 2, 5}) {
        ScenarioConfig cfg = size_power_base();
        cfg.n = 50;
        cfg.k_true = k_true;
        cfg.k_search = 5;
        cfg.sigma0 = 0.05;
        cfg.M = 100;
        cfg.reps = 100;
        cfg.seed = 907;
        const ScenarioResult res = run_scenario(cfg);
        rates.push_back(res.aggregates.reject_rate);
        if (!detail.empty()) detail += ", ";
        detail += fmt("k_true=%.0f rate=%.2f", k_true, res.aggregates.reject_rate);
    }
    if (rates.back() < 0.8) return fail(detail + "; power at k_true=5 below 0.8");
    int inversions = 0;
    for (std::size_t i = 0; i + 1 < rates.size(); ++i)
        if (rates[i + 1] < rates[i]) ++inversions;
    if (inversions > 1) return fail(detail + "; trend is not monotone");
    return ok(detail);
}

// ---------------------------------------------------------------------------
// 8. Coverage of the coefficient confidence region
// ---------------------------------------------------------------------------

Outcome check_coef_coverage() {
    ScenarioConfig cfg = size_power_base();
    cfg.n = 30;
    cfg.k_true = 2;
    cfg.k_search = 2;
    cfg.sigma0 = 0.1;
    cfg.L = 100;
    cfg.M = 40;
    cfg.alpha_test = 0.5;
    cfg.reps = 200;
    cfg.seed = 908;
    const ScenarioResult res = run_scenario(cfg);
    const double cov = res.aggregates.coverage_rate;
    if (cov < 0.90) return fail(fmt("coverage %.3f below 0.90", cov));
    return ok(fmt("coverage %.3f at level 0.95", cov));
}

// ---------------------------------------------------------------------------
// 9. The pivot follows its reference distribution at the truth
// ---------------------------------------------------------------------------

Outcome check_pivot_distribution() {
    const int n = 25, p = 3, reps = 2000;
    RngStream rng(909, 0);
    const Matrix x = gaussian_matrix(rng.fork(1), n, p);
    const Vector beta = default_beta0(p);
    const auto pi0 = random_k_sparse(rng.fork(2), PermutationClass(n, 4), 4);
    const Vector signal = pi0.apply(x * beta);

    std::vector<double> stats(reps);
    for (int rep = 0; rep < reps; ++rep) {
        const Vector y = signal + 0.3 * gaussian_vector(rng.fork(3).fork(rep), n);
        stats[rep] = test_statistic(y, x, pi0, beta);
    }
    std::sort(stats.begin(), stats.end());
    double ks = 0.0;
    for (int i = 0; i < reps; ++i) {
        const double cdf = f_cdf(p, n - p, stats[i]);
        ks = std::max(ks, std::abs(cdf - (i + 1.0) / reps));
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / reps));
    }
    if (ks >= 0.04) return fail(fmt("KS statistic %.4f, need < 0.04", ks));
    return ok(fmt("KS statistic %.4f over 2000 draws", ks));
}

// ---------------------------------------------------------------------------
// 10. Alias construction below the identifiability threshold
// ---------------------------------------------------------------------------

Outcome check_counterexample() {
    const int triples[3][3] = {{4, 1, 2}, {6, 3, 2}, {7, 4, 2}};
    for (const auto& t : triples) {
        const Counterexample ce = counterexample(t[0], t[1], t[2]);
        const double gap = (ce.pi1.apply(ce.x * ce.beta1) - ce.x * ce.beta0).cwiseAbs().maxCoeff();
        if (gap > 1e-12)
            return fail("(" + std::to_string(t[0]) + "," + std::to_string(t[1]) + "," +
                        std::to_string(t[2]) + fmt("): alias gap %.3g", gap));
        if ((ce.beta0 - ce.beta1).cwiseAbs().maxCoeff() == 0.0)
            return fail("coefficients coincide");
        orthonormal_basis(ce.x);  // throws if rank deficient
        if (ce.pi1.hamming_distance() > 2 * t[2]) return fail("alias permutation too dense");
    }
    return ok("3/3 instances exact");
}

// ---------------------------------------------------------------------------
// 11. Non-coverage bound decreases with the number of draws
// ---------------------------------------------------------------------------

Outcome check_delta_l_monotone() {
    const int n = 12, p = 2, k = 2;
    RngStream rng(911, 0);
    const Matrix x = gaussian_matrix(rng.fork(1), n, p);
    const Vector beta = default_beta0(p);
    const auto pi0 = SparsePermutation::transposition(n, 3, 9);
    const double c_min = c_min_bruteforce(x, beta, pi0, k);
    if (!(c_min > 0.0)) return fail("instance not identifiable");

    double prev = std::numeric_limits<double>::infinity();
    std::string detail;
    for (const int L : {10, 100, 1000, 10000}) {
        const double v = delta_l_bound(n, p, k, 0.05, c_min, L);
        if (!(v <= prev * (1.0 + 1e-12) + 1e-15))
            return fail(fmt("bound rose from %.6g to %.6g", prev, v));
        prev = v;
        if (!detail.empty()) detail += " -> ";
        detail += fmt("%.3g", v);
    }
    return ok(detail);
}

// ---------------------------------------------------------------------------
// 12. Command-line pipeline on clean and shuffled fixtures
// ---------------------------------------------------------------------------

int run_cli(const std::string& args) {
    const char* cli = std::getenv("PERMREG_CLI");
    if (cli == nullptr) return -1;
    const std::string cmd =
        std::string("\"") + cli + "\" " + args + " >accept_cli.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome check_cli_fixture_pipeline() {
    if (std::getenv("PERMREG_CLI") == nullptr) return fail("PERMREG_CLI not set");
    const std::string base = "fixture --n 120 --p 10 --sigma 0.05 --seed 42";
    if (run_cli(base + " --out accept_clean.csv") != 0) return fail("clean fixture failed");
    if (run_cli(base + " --mismatch-rate 0.08 --window 3 --out accept_shuffled.csv") != 0)
        return fail("shuffled fixture failed");

    std::string covs = "x1";
    for (int j = 2; j <= 10; ++j) covs += ",x" + std::to_string(j);
    const std::string analyze = " --response y --covariates " + covs +
                                " --k 12 --L 60 --k0 0 --alpha 0.25 --M 100 --seed 7 --out ";

    if (run_cli("test --input accept_clean.csv" + analyze + "accept_clean.json") != 0)
        return fail("analysis of the clean fixture failed");
    const Json clean = Json::parse(slurp("accept_clean.json"));
    const int set_size = clean.at("candidate_set_size").get<int>();
    const bool clean_reject = clean.at("report").at("reject").get<bool>();

    if (run_cli("test --input accept_shuffled.csv" + analyze + "accept_shuffled.json") != 0)
        return fail("analysis of the shuffled fixture failed");
    const Json shuffled = Json::parse(slurp("accept_shuffled.json"));
    const bool shuffled_reject = shuffled.at("report").at("reject").get<bool>();

    for (const char* f : {"accept_clean.csv", "accept_shuffled.csv", "accept_clean.json",
                          "accept_shuffled.json", "accept_cli.log"})
        std::remove(f);

    if (set_size != 1) return fail("clean fixture candidate set has size " +
                                   std::to_string(set_size) + ", expected 1");
    if (clean_reject) return fail("clean fixture was rejected");
    if (!shuffled_reject) return fail("shuffled fixture was not rejected");
    return ok("clean: single candidate, retained; shuffled: rejected");
}

// ---------------------------------------------------------------------------
// 13. Simulation output is byte reproducible
// ---------------------------------------------------------------------------

Outcome check_simulate_determinism() {
    if (std::getenv("PERMREG_CLI") == nullptr) return fail("PERMREG_CLI not set");
    const std::string args =
        "simulate --n 14 --p 2 --k-true 2 --k 2 --sigma 0.1 --L 10 --M 40 --alpha 0.5"
        " --coverage 0.9 --reps 3 --seed 99 --volume-samples 1000 --threads 1 --format csv";
    if (run_cli(args + " --out accept_sim_a.csv") != 0) return fail("first run failed");
    if (run_cli(args + " --out accept_sim_b.csv") != 0) return fail("second run failed");
    const std::string a = slurp("accept_sim_a.csv");
    const std::string b = slurp("accept_sim_b.csv");
    for (const char* f : {"accept_sim_a.csv", "accept_sim_b.csv", "accept_cli.log"})
        std::remove(f);
    if (a.empty()) return fail("empty output");
    if (a != b) return fail("outputs differ between runs");
    return ok("byte-identical across runs");
}

}  // namespace

int main() {
    struct Item {
        const char* name;
        std::function<Outcome()> fn;
    };
    const std::vector<Item> items = {
        {"assignment solver equals exhaustive search", check_lap_exact},
        {"class counts equal enumeration", check_counts},
        {"exhaustive recovery with realized noise", check_oracle_recovery},
        {"surrogate agrees with exhaustive least squares", check_surrogate_agreement},
        {"candidate sets capture the truth", check_candidate_coverage},
        {"sparsity test holds its size", check_test_size},
        {"sparsity test power and trend", check_test_power},
        {"coefficient region coverage", check_coef_coverage},
        {"pivot matches its reference distribution", check_pivot_distribution},
        {"alias construction is exact", check_counterexample},
        {"draw bound is monotone in L", check_delta_l_monotone},
        {"fixture pipeline via the command line", check_cli_fixture_pipeline},
        {"simulation output is reproducible", check_simulate_determinism},
    };

    int failures = 0;
    int index = 0;
    for (const auto& item : items) {
        ++index;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = item.fn();
        } catch (const std::exception& e) {
            o = fail(std::string("exception: ") + e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d/13 %s (%.1fs)%s%s\n", o.pass ? "PASS" : "FAIL", index, item.name,
                    secs, o.detail.empty() ? "" : ": ", o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    if (failures == 0)
        std::printf("all 13 acceptance checks passed\n");
    else
        std::printf("%d acceptance check(s) failed\n", failures);
    return failures;
}
