#include <cmath>
#include <numeric>

#include <doctest.h>

#include "nuhyp/bundle.hpp"
#include "nuhyp/rng.hpp"
#include "nuhyp/times.hpp"

using namespace nuhyp;

namespace {

Eigen::MatrixXd random_matrix(CounterRng& rng, int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-1, 1);
    return m;
}

Subspace random_subspace(CounterRng& rng, int n, int k) { return Subspace(random_matrix(rng, n, k)); }

// Modified Gram-Schmidt, kept apart from the library's QR path.
Eigen::MatrixXd gram_schmidt(Eigen::MatrixXd m) {
    for (int j = 0; j < m.cols(); ++j) {
        for (int i = 0; i < j; ++i) m.col(j) -= m.col(i).dot(m.col(j)) * m.col(i);
        m.col(j).normalize();
    }
    return m;
}

Subspace line(double x, double y) { return Subspace(Eigen::Vector2d(x, y)); }

} // namespace

TEST_SUITE("bundle") {

TEST_CASE("restricted norms of a diagonal map") {
    Eigen::Matrix2d a = Eigen::Vector2d(3, 0.5).asDiagonal();
    auto full = Subspace::coordinate(2, 0, 2);
    CHECK(mini_norm(a, full) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(restricted_norm(a, full) == doctest::Approx(3).epsilon(1e-15));
    CHECK(mini_norm(a, Subspace::coordinate(2, 0, 1)) == doctest::Approx(3).epsilon(1e-15));
    CHECK(restricted_norm(Eigen::Matrix3d::Identity(), Subspace::coordinate(3, 1, 2)) == doctest::Approx(1.0));
}

TEST_CASE("restricted norms match an independent SVD") {
    CounterRng rng(5);
    for (int t = 0; t < 200; ++t) {
        Eigen::MatrixXd a = random_matrix(rng, 3, 3);
        Eigen::MatrixXd span = random_matrix(rng, 3, 2);
        Subspace u(span);
        Eigen::BDCSVD<Eigen::MatrixXd> svd(a * gram_schmidt(span));
        CHECK(std::abs(mini_norm(a, u) - svd.singularValues()[1]) <= 1e-10);
        CHECK(std::abs(restricted_norm(a, u) - svd.singularValues()[0]) <= 1e-10);
        CHECK(mini_norm(a, u) <= restricted_norm(a, u));
        Subspace l(random_matrix(rng, 3, 1));
        CHECK(mini_norm(a, l) == doctest::Approx(restricted_norm(a, l)).epsilon(1e-14));
    }
}

TEST_CASE("grassmann distance examples") {
    CHECK(grassmann_distance(line(1, 0), line(1, 0)) == 0.0);
    CHECK(grassmann_distance(line(1, 0), line(0, 1)) == doctest::Approx(1.0));
    CHECK(grassmann_distance(line(1, 0), line(1, 1)) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));
    CHECK_THROWS_AS(grassmann_distance(line(1, 0), Subspace::coordinate(2, 0, 2)), Error);
}

TEST_CASE("grassmann distance is a metric") {
    CounterRng rng(99);
    for (int t = 0; t < 1000; ++t) {
        int k = 1 + static_cast<int>(rng.below(3));
        Subspace u = random_subspace(rng, 4, k), v = random_subspace(rng, 4, k), w = random_subspace(rng, 4, k);
        CHECK(grassmann_distance(u, v) == grassmann_distance(v, u));
        CHECK(grassmann_distance(u, u) <= 1e-15);
        CHECK(grassmann_distance(u, w) <= grassmann_distance(u, v) + grassmann_distance(v, w) + 1e-12);
    }
}

TEST_CASE("cone membership") {
    auto e = line(1, 0);
    auto f = line(0, 1);
    CHECK(cone_contains(e, f, 0.5, Eigen::Vector2d(1, 0.4)));
    CHECK_FALSE(cone_contains(e, f, 0.5, Eigen::Vector2d(1, 0.6)));
    CHECK(cone_contains(e, f, 0.5, Eigen::Vector2d(1, 0.5)));
    CHECK_THROWS_AS(cone_contains(e, f, 0.5, Eigen::Vector2d::Zero()), Error);
}

TEST_CASE("oblique decomposition reassembles") {
    CounterRng rng(3);
    Subspace e = random_subspace(rng, 3, 1);
    Subspace f = random_subspace(rng, 3, 2);
    Eigen::VectorXd v = random_matrix(rng, 3, 1);
    auto parts = oblique_decompose(e, f, v);
    CHECK((parts.along_e + parts.along_f - v).norm() <= 1e-13);
    CHECK(grassmann_distance(Subspace(parts.along_e), e) <= 1e-12);
}

TEST_CASE("cat map splitting matches the eigenvectors") {
    auto sys = cat2();
    auto orbit = make_orbit(sys, sys.default_point(), 200, 100);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    const double phi = (std::sqrt(5.0) - 1) / 2;
    Subspace eu = line(1, phi);
    Subspace es = line(-phi, 1);
    for (int j = split.lo(); j <= split.hi(); ++j) {
        CHECK(grassmann_distance(split.e(j), eu) <= 1e-8);
        CHECK(grassmann_distance(split.f(j), es) <= 1e-8);
    }
    CHECK(split.invariance_residual() <= kTolSplit);
    CHECK_THROWS_AS(split.e(split.hi() + 1), Error);
}

TEST_CASE("diag3 splitting is the coordinate axes") {
    auto sys = diag3();
    auto orbit = make_orbit(sys, sys.default_point(), 50, 50);
    auto split = estimate_splitting(sys, orbit, {1, 1, 1}, 10);
    for (int j = split.lo(); j <= split.hi(); ++j) {
        CHECK(grassmann_distance(split.e(j), Subspace::coordinate(3, 0, 1)) <= 1e-12);
        CHECK(grassmann_distance(split.f(j), Subspace::coordinate(3, 1, 1)) <= 1e-12);
        CHECK(grassmann_distance(split.g(j), Subspace::coordinate(3, 2, 1)) <= 1e-12);
    }
    auto l = lyapunov_estimates(orbit, split, 30);
    CHECK(l.chi_e_minus == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(l.chi_f_plus == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    REQUIRE(l.chi_g_plus);
    CHECK(*l.chi_g_plus == doctest::Approx(-std::log(8.0)).epsilon(1e-15));
}

TEST_CASE("skew splitting is invariant") {
    for (double coupling : {0.0, 0.5}) {
        auto sys = skew_nonuniform(12, 2048, coupling);
        auto orbit = make_orbit(sys, sys.default_point(), 1000, 100);
        auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
        CHECK(split.invariance_residual() <= 1e-8);
    }
}

TEST_CASE("settle longer than the orbit") {
    auto sys = cat2();
    auto orbit = make_orbit(sys, sys.default_point(), 20, 20);
    CHECK_THROWS_AS(estimate_splitting(sys, orbit, {1, 1}, 60), Error);
    CHECK_THROWS_AS(estimate_splitting(sys, orbit, {1, 2}, 5), Error);
}

TEST_CASE("cat map exponent") {
    auto sys = cat2();
    auto orbit = make_orbit(sys, sys.default_point(), 1100, 60);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    auto l = lyapunov_estimates(orbit, split, 1000);
    const double target = std::log((3 + std::sqrt(5.0)) / 2);
    CHECK(std::abs(l.chi_e_minus - target) <= 1e-9);
    CHECK(std::abs(l.chi_f_plus + target) <= 1e-9);
}

TEST_CASE("skew exponent within three batch standard errors") {
    const int n = 100000;
    const int batches = 100;
    auto sys = skew_nonuniform(21, n + 400);
    auto orbit = make_orbit(sys, sys.default_point(), n + 60, 100);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    auto logs = step_logs(orbit, split, LogKind::LogMiniE, 1, n);
    std::vector<double> means;
    for (int b = 0; b < batches; ++b) {
        auto first = logs.values.begin() + b * (n / batches);
        means.push_back(std::accumulate(first, first + n / batches, 0.0) / (n / batches));
    }
    double mean = std::accumulate(means.begin(), means.end(), 0.0) / batches;
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    double se = std::sqrt(var / (batches - 1) / batches);
    CHECK(std::abs(mean - 1.1) <= 3 * se);
    auto l = lyapunov_estimates(orbit, split, n);
    CHECK(l.chi_e_minus == doctest::Approx(mean).epsilon(1e-9));
}

} // TEST_SUITE
