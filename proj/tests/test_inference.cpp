#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "permreg/inference.hpp"

using namespace permreg;

namespace {

double ks_distance_f(std::vector<double> sample, int d1, int d2) {
    std::sort(sample.begin(), sample.end());
    const int n = static_cast<int>(sample.size());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double cdf = f_cdf(d1, d2, sample[i]);
        ks = std::max(ks, std::fabs((i + 1.0) / n - cdf));
        ks = std::max(ks, std::fabs(static_cast<double>(i) / n - cdf));
    }
    return ks;
}

CandidateSet push_all(int n, int k, const std::vector<SparsePermutation>& pis) {
    CandidateSet cs(n, k);
    std::uint64_t stream = 1;
    for (const auto& pi : pis) cs.push_draw(pi, stream++, 1.0, false);
    return cs;
}

}  // namespace

TEST_CASE("pivot equals its coefficient-space form", "[inference]") {
    RngStream rng(11, 0);
    const int n = 14, p = 3;
    Matrix x = gaussian_matrix(rng.fork(1), n, p);
    Vector y = gaussian_vector(rng.fork(2), n);
    for (int trial = 0; trial < 8; ++trial) {
        auto pi = random_k_sparse(rng.fork(10 + trial), PermutationClass(n, 3), trial % 2 ? 3 : 2);
        Vector beta = gaussian_vector(rng.fork(50 + trial), p);
        const Matrix px = pi.permute_rows(x);
        const OlsFit fit = ols_fit(px, y);
        const Vector diff = fit.coef - beta;
        const double num = diff.dot((x.transpose() * x) * diff) / p;
        const double den = fit.rss / (n - p);
        REQUIRE(test_statistic(y, x, pi, beta) == Catch::Approx(num / den).epsilon(1e-10));
    }
    REQUIRE_THROWS_AS(
        test_statistic(Vector::Zero(3), gaussian_matrix(rng, 3, 3),
                       SparsePermutation::identity(3), Vector::Zero(3)),
        DomainError);
}

TEST_CASE("pivot at the truth follows the f distribution", "[inference]") {
    RngStream rng(21, 0);
    const int n = 15, p = 3;
    Matrix x = gaussian_matrix(rng.fork(1), n, p);
    Vector beta(p);
    beta << 0.5, -1.0, 2.0;
    auto pi0 = SparsePermutation::transposition(n, 2, 9);
    std::vector<double> ts;
    ts.reserve(600);
    for (int rep = 0; rep < 600; ++rep) {
        Vector y = pi0.apply(x * beta) + 0.7 * gaussian_vector(rng.fork(100 + rep), n);
        ts.push_back(test_statistic(y, x, pi0, beta));
    }
    REQUIRE(ks_distance_f(ts, p, n - p) < 0.08);
}

TEST_CASE("sufficient statistics split the response orthogonally", "[inference]") {
    RngStream rng(33, 0);
    const int n = 12, p = 3;
    Matrix x = gaussian_matrix(rng.fork(1), n, p);
    Vector y = gaussian_vector(rng.fork(2), n);
    auto pi = SparsePermutation::transposition(n, 0, 7);
    SuffStats s = sufficient_stats(y, x, pi);
    const Matrix q = orthonormal_basis(pi.permute_rows(x));
    REQUIRE((s.s1 - q * (q.transpose() * s.s1)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((q.transpose() * (y - s.s1)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(s.s2 == Catch::Approx((y - s.s1).norm()).margin(1e-14));
}

TEST_CASE("best fit breaks ties by displacement then candidate order", "[inference]") {
    // with a constant design every permutation spans the same column space,
    // so all residuals tie exactly and only the tie-break decides
    const int n = 6;
    Matrix x = Matrix::Ones(n, 1);
    Vector y(n);
    y << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
    auto cyc = SparsePermutation::from_moved(n, {{0, 1}, {1, 2}, {2, 0}});
    auto tr1 = SparsePermutation::transposition(n, 1, 4);
    auto tr2 = SparsePermutation::transposition(n, 0, 2);
    auto id = SparsePermutation::identity(n);

    auto with_id = push_all(n, 3, {cyc, tr1, tr2, id});
    BestFit bf = best_fit_in_set(y, x, with_id);
    REQUIRE(with_id.unique(bf.index) == id);
    REQUIRE(bf.hamming == 0);

    auto no_id = push_all(n, 3, {cyc, tr1, tr2});
    bf = best_fit_in_set(y, x, no_id);
    REQUIRE(no_id.unique(bf.index) == tr1);
    REQUIRE(bf.hamming == 2);

    REQUIRE_THROWS_AS(best_fit_in_set(y, x, CandidateSet(n, 3)), EmptySet);
}

TEST_CASE("calibration quantiles match an independent replay", "[inference]") {
    RngStream rng(47, 0);
    const int n = 14, p = 2;
    Matrix x = gaussian_matrix(rng.fork(1), n, p);
    Vector beta(p);
    beta << 1.0, -0.5;
    auto pi0 = SparsePermutation::transposition(n, 3, 10);
    // noise high enough that the draws scatter over several candidates
    Vector y = pi0.apply(x * beta) + 0.6 * gaussian_vector(rng.fork(2), n);

    ReproConfig rc;
    rc.L = 25;
    rc.k = 2;
    rc.seed = 99;
    auto cs = generate_candidates(y, x, DesignVariant::plain(), rc);
    REQUIRE(cs.size() >= 2);

    SparsityTestConfig tc;
    tc.k0 = 2;
    tc.alpha = 0.5;
    tc.M = 40;
    tc.seed = 99;
    tc.threads = 1;
    SparsityTestReport rep = sparsity_test(y, x, cs, tc);
    REQUIRE(rep.null_set_size == cs.size());

    // replay: fresh bases, explicit tie-break, outer loop over draws
    std::vector<Matrix> bases;
    for (const auto& pi : cs.uniques())
        bases.push_back(orthonormal_basis(pi.permute_rows(x)));
    auto best_d = [&](const Vector& v) {
        int best = -1, bd = 0;
        double brss = std::numeric_limits<double>::infinity();
        for (int i = 0; i < cs.size(); ++i) {
            const Vector fit = bases[i] * (bases[i].transpose() * v);
            const double rss = (v - fit).squaredNorm();
            const int d = cs.unique(i).hamming_distance();
            if (rss < brss || (rss == brss && d < bd)) {
                best = i;
                brss = rss;
                bd = d;
            }
        }
        return cs.unique(best).hamming_distance();
    };
    for (int j = 0; j < cs.size(); ++j) {
        std::vector<int> sample;
        const Matrix& q = bases[j];
        const Vector s1 = q * (q.transpose() * y);
        const double s2 = (y - s1).norm();
        for (int m = 0; m < tc.M; ++m) {
            Vector u = gaussian_vector(calibration_stream(tc.seed, j, m), n);
            Vector r = u - q * (q.transpose() * u);
            Vector ystar = s1 + (s2 / r.norm()) * r;

            // synthetic responses share the sufficient statistics
            SuffStats check = sufficient_stats(ystar, x, cs.unique(j));
            REQUIRE((check.s1 - s1).cwiseAbs().maxCoeff() < 1e-9);
            REQUIRE(check.s2 == Catch::Approx(s2).margin(1e-9));

            sample.push_back(best_d(ystar));
        }
        std::sort(sample.begin(), sample.end());
        const int idx = std::clamp(static_cast<int>(std::ceil((1.0 - tc.alpha) * (tc.M + 1))),
                                   1, tc.M);
        REQUIRE(rep.per_null_quantiles[j] == sample[idx - 1]);
        REQUIRE(conditional_mc_quantile(y, x, cs, j, tc) == sample[idx - 1]);
    }
    REQUIRE(rep.c_hat == *std::max_element(rep.per_null_quantiles.begin(),
                                           rep.per_null_quantiles.end()));

    // the flattened loop is thread invariant
    tc.threads = 3;
    REQUIRE(sparsity_test(y, x, cs, tc) == [&] {
        auto r = rep;
        r.config.threads = 3;
        return r;
    }());
}

TEST_CASE("order statistic index arithmetic", "[inference]") {
    std::vector<int> sorted(19);
    for (int i = 0; i < 19; ++i) sorted[i] = i;
    REQUIRE(detail::mc_order_statistic(sorted, 0.05) == 18);  // ceil(0.95*20) = 19
    REQUIRE(detail::mc_order_statistic(sorted, 0.5) == 9);    // ceil(0.5*20) = 10
    std::vector<int> five = {2, 4, 6, 8, 10};
    REQUIRE(detail::mc_order_statistic(five, 0.01) == 10);    // clamped to the max
    REQUIRE(detail::mc_order_statistic(five, 0.99) == 2);     // ceil(0.06) = 1
}

TEST_CASE("empty localized null is decisive", "[inference]") {
    RngStream rng(59, 0);
    const int n = 10, p = 2;
    Matrix x = gaussian_matrix(rng.fork(1), n, p);
    Vector y = gaussian_vector(rng.fork(2), n);
    auto cs = push_all(n, 2, {SparsePermutation::transposition(n, 0, 1),
                              SparsePermutation::transposition(n, 2, 3)});
    SparsityTestConfig tc;
    tc.k0 = 0;
    tc.alpha = 0.5;
    tc.M = 40;
    SparsityTestReport rep = sparsity_test(y, x, cs, tc);
    REQUIRE(rep.degenerate_null);
    REQUIRE(rep.reject);
    REQUIRE(rep.c_hat == -1);
    REQUIRE(rep.p_value == 0.0);
    REQUIRE(rep.null_set_size == 0);
    REQUIRE(rep.per_null_quantiles.empty());
}

TEST_CASE("observed displacement zero never rejects a non-empty null", "[inference]") {
    RngStream rng(61, 0);
    const int n = 14, p = 2;
    Matrix x = gaussian_matrix(rng.fork(1), n, p);
    Vector beta(p);
    beta << 2.0, 1.0;
    Vector y = x * beta + 0.001 * gaussian_vector(rng.fork(2), n);
    ReproConfig rc;
    rc.L = 15;
    rc.k = 2;
    rc.seed = 4;
    auto cs = generate_candidates(y, x, DesignVariant::plain(), rc);
    REQUIRE(cs.contains(SparsePermutation::identity(n)));
    SparsityTestConfig tc;
    tc.k0 = 0;
    tc.alpha = 0.5;
    tc.M = 40;
    SparsityTestReport rep = sparsity_test(y, x, cs, tc);
    REQUIRE(rep.d_obs == 0);
    REQUIRE_FALSE(rep.reject);
    REQUIRE(rep.p_value == 1.0);
}

TEST_CASE("test configuration validation", "[inference]") {
    const int n = 8;
    Matrix x = Matrix::Ones(n, 1);
    Vector y = Vector::LinSpaced(n, 0.0, 1.0);
    auto cs = push_all(n, 2, {SparsePermutation::identity(n)});
    SparsityTestConfig tc;
    tc.alpha = 0.05;
    tc.M = 10;  // (M+1) * alpha = 0.55 < 1
    REQUIRE_THROWS_AS(sparsity_test(y, x, cs, tc), DomainError);
    tc.M = 400;
    tc.alpha = 1.5;
    REQUIRE_THROWS_AS(sparsity_test(y, x, cs, tc), DomainError);
    tc.alpha = 0.05;
    tc.k0 = -1;
    REQUIRE_THROWS_AS(sparsity_test(y, x, cs, tc), DomainError);
    tc.k0 = 0;
    REQUIRE_THROWS_AS(sparsity_test(y, x, CandidateSet(n, 2), tc), EmptySet);
    REQUIRE_THROWS_AS(conditional_mc_quantile(y, x, cs, 5, tc), DomainError);
}

TEST_CASE("coefficient region membership tracks the pivot", "[inference]") {
    RngStream rng(71, 0);
    const int n = 16, p = 3;
    Matrix x = gaussian_matrix(rng.fork(1), n, p);
    Vector beta(p);
    beta << 0.5, -1.0, 2.0;
    auto pi0 = SparsePermutation::transposition(n, 4, 12);
    Vector y = pi0.apply(x * beta) + 0.3 * gaussian_vector(rng.fork(2), n);
    auto cs = push_all(n, 2, {SparsePermutation::identity(n), pi0,
                              SparsePermutation::transposition(n, 0, 1)});
    const double alpha = 0.9;
    ConfidenceRegion region = coef_region(y, x, cs, alpha);
    REQUIRE(region.pieces.size() == 3);
    const double fq = f_quantile(p, n - p, alpha);

    for (int trial = 0; trial < 60; ++trial) {
        Vector cand = beta + 1.5 * gaussian_vector(rng.fork(100 + trial), p);
        bool direct = false;
        for (const auto& e : region.pieces)
            direct = direct || (test_statistic(y, x, e.pi, cand) <= fq);
        REQUIRE(coef_region_membership(region, cand) == direct);
    }
    // every center is inside
    for (const auto& e : region.pieces) REQUIRE(coef_region_membership(region, e.center));
    REQUIRE_THROWS_AS(coef_region_membership(region, Vector::Zero(p + 1)), DimMismatch);
    REQUIRE_THROWS_AS(coef_region(y, x, cs, 1.0), DomainError);
    REQUIRE_THROWS_AS(coef_region(y, x, CandidateSet(n, 2), 0.9), EmptySet);
}

TEST_CASE("partial regions project the nuisance block correctly", "[inference]") {
    RngStream rng(83, 0);
    const int n = 18, p1 = 2, p2 = 2;
    Matrix x = gaussian_matrix(rng.fork(1), n, p1);
    Matrix z = gaussian_matrix(rng.fork(2), n, p2);
    Vector b1(p1), b2(p2);
    b1 << 1.0, -2.0;
    b2 << 0.5, 0.25;
    auto pi0 = SparsePermutation::transposition(n, 1, 9);
    Vector y = pi0.apply(x * b1) + z * b2 + 0.3 * gaussian_vector(rng.fork(3), n);
    auto cs = push_all(n, 2, {SparsePermutation::identity(n), pi0});
    const double alpha = 0.9;

    ConfidenceRegion joint = partial_coef_region(y, x, z, cs, alpha, PartialMode::Joint);
    const double fq_joint = f_quantile(p1 + p2, n - p1 - p2, alpha);
    for (int trial = 0; trial < 40; ++trial) {
        Vector cand = gaussian_vector(rng.fork(200 + trial), p1 + p2);
        cand.head(p1) += b1;
        cand.tail(p2) += b2;
        bool direct = false;
        for (const auto& e : joint.pieces) {
            Matrix w(n, p1 + p2);
            w.leftCols(p1) = e.pi.permute_rows(x);
            w.rightCols(p2) = z;
            const OlsFit fit = ols_fit(w, y);
            const Vector diff = fit.coef - cand;
            const double t = diff.dot((w.transpose() * w) * diff) / (p1 + p2)
                / (fit.rss / (n - p1 - p2));
            direct = direct || (t <= fq_joint);
        }
        REQUIRE(coef_region_membership(joint, cand) == direct);
    }

    ConfidenceRegion marginal = partial_coef_region(y, x, z, cs, alpha, PartialMode::Beta1Only);
    const double fq_marg = f_quantile(p1, n - p1 - p2, alpha);
    // dense-projector replay of the marginal pivot
    const Matrix mz = [&] {
        Matrix qz = orthonormal_basis(z);
        return Matrix(qz * qz.transpose());
    }();
    for (int trial = 0; trial < 40; ++trial) {
        Vector cand = b1 + gaussian_vector(rng.fork(400 + trial), p1);
        bool direct = false;
        for (const auto& e : marginal.pieces) {
            const Matrix px = e.pi.permute_rows(x);
            Matrix w(n, p1 + p2);
            w.leftCols(p1) = px;
            w.rightCols(p2) = z;
            const double rss_full = residual_norm_sq(w, y);
            const Matrix xt = px - mz * px;
            const OlsFit fit = ols_fit(xt, y - mz * y);
            const Vector diff = fit.coef - cand;
            const double t = diff.dot((xt.transpose() * xt) * diff) / p1
                / (rss_full / (n - p1 - p2));
            direct = direct || (t <= fq_marg);
        }
        REQUIRE(coef_region_membership(marginal, cand) == direct);
    }

    REQUIRE_THROWS_AS(partial_coef_region(y, x, Matrix(n, 0), cs, alpha, PartialMode::Joint),
                      DomainError);
}

TEST_CASE("volume estimate recovers known areas", "[inference]") {
    auto one_piece = [](Vector center, Matrix shape, double r_sq) {
        ConfidenceRegion region;
        region.alpha = 0.95;
        Ellipsoid e;
        e.pi = SparsePermutation::identity(4);
        e.center = std::move(center);
        e.shape = std::move(shape);
        e.radius_sq = r_sq;
        region.pieces.push_back(std::move(e));
        return region;
    };
    const double pi_const = 3.14159265358979323846;

    Vector c(2);
    c << 0.3, -0.2;
    ConfidenceRegion circle = one_piece(c, Matrix::Identity(2, 2), 0.49);
    VolumeEstimate est = region_volume_mc(circle, RngStream(1, 0), 60000);
    REQUIRE(est.samples == 60000);
    REQUIRE(est.volume == Catch::Approx(pi_const * 0.49).margin(5.0 * est.std_error + 1e-6));
    REQUIRE(est.std_error > 0.0);
    REQUIRE(est.std_error < 0.02);

    Matrix shape(2, 2);
    shape << 4.0, 0.0, 0.0, 1.0;
    ConfidenceRegion ellipse = one_piece(Vector::Zero(2), shape, 1.0);
    est = region_volume_mc(ellipse, RngStream(2, 0), 60000);
    REQUIRE(est.volume == Catch::Approx(pi_const / 2.0).margin(5.0 * est.std_error + 1e-6));

    // a duplicated piece must not double-count
    ConfidenceRegion dup = circle;
    dup.pieces.push_back(circle.pieces[0]);
    est = region_volume_mc(dup, RngStream(3, 0), 60000);
    REQUIRE(est.volume == Catch::Approx(pi_const * 0.49).margin(5.0 * est.std_error + 1e-6));

    // two disjoint unit circles
    ConfidenceRegion two = one_piece(Vector::Zero(2), Matrix::Identity(2, 2), 1.0);
    Vector far_center(2);
    far_center << 5.0, 0.0;
    two.pieces.push_back(one_piece(far_center, Matrix::Identity(2, 2), 1.0).pieces[0]);
    est = region_volume_mc(two, RngStream(4, 0), 60000);
    REQUIRE(est.volume == Catch::Approx(2.0 * pi_const).margin(5.0 * est.std_error + 1e-6));

    REQUIRE_THROWS_AS(region_volume_mc(ConfidenceRegion{}, RngStream(5, 0), 2000), EmptyRegion);
    REQUIRE_THROWS_AS(region_volume_mc(circle, RngStream(6, 0), 999), DomainError);
}
