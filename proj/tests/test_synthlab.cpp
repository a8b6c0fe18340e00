#include <cmath>
#include <numeric>

#include <doctest.h>

#include "nuhyp/synthlab.hpp"

using namespace nuhyp;

namespace {

using Times = std::vector<std::int64_t>;

SequenceSpec two_valued(std::int64_t n, double p, std::uint64_t seed) {
    SequenceSpec s;
    s.length = n;
    s.bound = 2.0;
    s.small_value = 0.0;
    s.small_gap = 1.0;
    s.small_fraction = p;
    s.big_value = 2.0;
    s.seed = seed;
    return s;
}

CocycleSpec two_state_gap(std::uint64_t seed, std::int64_t window) {
    CocycleSpec c;
    c.block_dims = {1, 1};
    c.rates = {RateProcess::two_state(1.5, -0.5, 0.8), RateProcess::constant(-1.0)};
    c.window = window;
    c.seed = seed;
    return c;
}

// Batch-means standard error of the E-block Birkhoff mean over n steps.
std::pair<double, double> e_block_mean(std::int64_t n, std::uint64_t seed, int batches) {
    auto sys = gen_cocycle(two_state_gap(seed, n + 400));
    auto orbit = make_orbit(sys, sys.default_point(), static_cast<int>(n) + 60, 100);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    auto logs = step_logs(orbit, split, LogKind::LogMiniE, 1, static_cast<int>(n));
    const auto len = n / batches;
    std::vector<double> means;
    for (int b = 0; b < batches; ++b) {
        auto first = logs.values.begin() + b * len;
        means.push_back(std::accumulate(first, first + len, 0.0) / static_cast<double>(len));
    }
    double mean = std::accumulate(means.begin(), means.end(), 0.0) / batches;
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    return {mean, std::sqrt(var / (batches - 1) / batches)};
}

} // namespace

TEST_SUITE("synthlab") {

TEST_CASE("all-small sequences select every time") {
    auto a = gen_sequence(two_valued(300, 1.0, 1));
    for (double v : a) CHECK(v == -1.0);
    CHECK(pliss_select(a, 2.0, 0.0, 1.0).size() == 300);
}

TEST_CASE("small fraction is close to p") {
    auto a = gen_sequence(two_valued(10000, 0.9, 77));
    double frac = static_cast<double>(std::count_if(a.begin(), a.end(), [](double v) { return v < 0.0; })) / 1e4;
    CHECK(std::abs(frac - 0.9) <= 0.01);
}

TEST_CASE("sequences are seeded") {
    CHECK(gen_sequence(two_valued(500, 0.3, 5)) == gen_sequence(two_valued(500, 0.3, 5)));
    CHECK(gen_sequence(two_valued(500, 0.3, 5)) != gen_sequence(two_valued(500, 0.3, 6)));
    auto bad = two_valued(10, 0.5, 1);
    bad.big_value = 3.0;
    CHECK_THROWS_AS(gen_sequence(bad), Error);
}

TEST_CASE("constant cocycle is diag3 on the fiber") {
    CocycleSpec c;
    c.block_dims = {1, 1, 1};
    c.rates = {RateProcess::constant(std::log(4.0)), RateProcess::constant(std::log(2.0)),
               RateProcess::constant(-std::log(8.0))};
    auto sys = gen_cocycle(c);
    Point p = sys.default_point();
    p.coords = Eigen::Vector3d(0.3, -0.2, 0.1);
    Eigen::Vector3d expected(1.2, -0.4, 0.0125);
    CHECK((step(sys, p, Direction::Forward).coords - expected).norm() <= 1e-15);
    Eigen::Matrix3d d = Eigen::Vector3d(4, 2, 0.125).asDiagonal();
    CHECK((tangent_at(sys, p) - d).norm() <= 1e-15);
}

TEST_CASE("gap cocycle splits along coordinate blocks") {
    auto sys = gen_cocycle(two_state_gap(4, 2048));
    auto orbit = make_orbit(sys, sys.default_point(), 600, 100);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    for (int j = split.lo(); j <= split.hi(); ++j) {
        CHECK(grassmann_distance(split.e(j), Subspace::coordinate(2, 0, 1)) == 0.0);
        CHECK(grassmann_distance(split.f(j), Subspace::coordinate(2, 1, 1)) == 0.0);
    }
}

TEST_CASE("two-state exponent and its standard error") {
    auto [mean, se] = e_block_mean(100000, 31, 100);
    CHECK(std::abs(mean - 1.1) <= 3 * se);
    // log-log slope of the standard error against N is -1/2
    std::vector<double> x, y;
    for (std::int64_t n : {1000, 10000, 100000}) {
        double s = 0.0;
        for (std::uint64_t seed = 1; seed <= 4; ++seed) s += e_block_mean(n, 100 + seed, 20).second;
        x.push_back(std::log(static_cast<double>(n)));
        y.push_back(std::log(s / 4));
    }
    double slope = (y[2] - y[0]) / (x[2] - x[0]);
    CHECK(slope == doctest::Approx(-0.5).epsilon(0.3));
    CHECK_THROWS_AS(gen_cocycle(CocycleSpec{{4}, {RateProcess::constant(1.0)}}), Error);
}

TEST_CASE("brute force examples") {
    CHECK(brute_force_times({0, 2, 0, 0}, 1.0, Sense::StrictBelow).times == Times{1, 4});
    CHECK(brute_force_times({1, -1, 1, 1}, 0.0, Sense::NonstrictAbove).times == Times{1, 3, 4});
    CHECK(brute_force_times({1, 2, 3}, 1.0, Sense::StrictBelow).empty());
    CHECK(brute_force_prefix(std::vector<double>(64, 1.9248473), 1.9, Sense::NonstrictAbove) == 64);
    CHECK(brute_force_prefix({std::log(2.0), std::log(0.5), std::log(2.0), std::log(2.0)}, 0.0,
                             Sense::NonstrictAbove) == 4);
    CHECK_THROWS_AS(brute_force_times(std::vector<double>(5000, 0.0), 0.0, Sense::StrictBelow), Error);
}

TEST_CASE("pliss frequency calibration") {
    auto cal = calibrate_pliss_rho(2.0, 0.0, 1.0, 0.3, 400, 20, 9);
    CHECK(cal.rho > 0.0);
    CHECK(cal.rho < 1.0);
    CHECK(cal.worst_ratio >= 0.3);
    auto again = calibrate_pliss_rho(2.0, 0.0, 1.0, 0.3, 400, 20, 9);
    CHECK(again.rho == cal.rho);
    auto stricter = calibrate_pliss_rho(2.0, 0.0, 1.0, 0.6, 400, 20, 9);
    CHECK(stricter.rho >= cal.rho);
    CHECK_THROWS_AS(calibrate_pliss_rho(2.0, 1.0, 0.5, 0.3, 400, 20, 9), Error);
}

TEST_CASE("specs round-trip through json") {
    auto s = two_valued(123, 0.25, 8);
    auto back = sequence_spec_from_json(to_json(s));
    CHECK(back.length == 123);
    CHECK(back.small_fraction == 0.25);
    CHECK(back.seed == 8);
    auto c = two_state_gap(3, 999);
    auto cb = cocycle_spec_from_json(to_json(c));
    CHECK(cb.block_dims == c.block_dims);
    CHECK(cb.rates.size() == 2);
    CHECK(cb.rates[0].at(0.1) == c.rates[0].at(0.1));
    CHECK(cb.window == 999);
}

} // TEST_SUITE
