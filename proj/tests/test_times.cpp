#include <cmath>

#include <doctest.h>

#include "nuhyp/rng.hpp"
#include "nuhyp/synthlab.hpp"
#include "nuhyp/times.hpp"

using namespace nuhyp;

namespace {

StepLogSequence seq(std::vector<double> v, int ell = 1) {
    StepLogSequence s;
    s.values = std::move(v);
    s.ell = ell;
    return s;
}

TimeSet range_set(std::int64_t n) {
    TimeSet t;
    for (std::int64_t i = 1; i <= n; ++i) t.times.push_back(i);
    return t;
}

using Times = std::vector<std::int64_t>;

struct Cat {
    SmoothSystem sys = cat2();
    OrbitSegment orbit = make_orbit(sys, sys.default_point(), 1060, 60);
    SplittingField split = estimate_splitting(sys, orbit, {1, 1}, 60);
};

struct Diag {
    SmoothSystem sys = diag3();
    OrbitSegment orbit = make_orbit(sys, sys.default_point(), 110, 20);
    SplittingField split = estimate_splitting(sys, orbit, {1, 1, 1}, 10);
};

// Values on a half-integer grid make ties (boundary cases) common and exact.
std::vector<double> grid_sequence(CounterRng& rng, std::size_t n) {
    std::vector<double> a(n);
    for (auto& v : a) v = 0.5 * static_cast<double>(static_cast<int>(rng.below(9)) - 4);
    return a;
}

std::vector<double> smooth_sequence(CounterRng& rng, std::size_t n) {
    std::vector<double> a(n);
    for (auto& v : a) v = rng.uniform(-2, 2);
    return a;
}

} // namespace

TEST_SUITE("times") {

TEST_CASE("cat map step logs are constant") {
    Cat c;
    const double lp = std::log((3 + std::sqrt(5.0)) / 2);
    auto e = step_logs(c.orbit, c.split, LogKind::LogMiniE, 1, 1000);
    auto r = step_logs(c.orbit, c.split, LogKind::LogRatio, 1, 1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        CHECK(std::abs(e.values[i] - lp) <= 1e-12);
        CHECK(std::abs(r.values[i] - 2 * lp) <= 1e-12);
    }
    auto e4 = step_logs(c.orbit, c.split, LogKind::LogMiniE, 4, 100);
    CHECK(e4.ell == 4);
    CHECK(std::abs(e4.values[7] - lp) <= 1e-12);
}

TEST_CASE("diag3 step logs") {
    Diag d;
    auto f = step_logs(d.orbit, d.split, LogKind::LogNormF, 1, 50);
    for (double v : f.values) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("block average equals blocked step logs on one-dimensional bundles") {
    auto sys = skew_nonuniform(8, 4096, 0.4);
    auto orbit = make_orbit(sys, sys.default_point(), 1100, 60);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    auto per_step = step_logs(orbit, split, LogKind::LogNormF, 1, 1024);
    for (int ell : {1, 2, 8, 32}) {
        auto direct = step_logs(orbit, split, LogKind::LogNormF, ell, 1024 / ell);
        auto summed = block_average(per_step, ell, 1024 / ell);
        for (std::size_t i = 0; i < direct.size(); ++i) CHECK(std::abs(direct.values[i] - summed.values[i]) <= 1e-12);
    }
    CHECK_THROWS_AS(block_average(per_step, 2, 1000), Error);
}

TEST_CASE("hyperbolic times examples") {
    CHECK(hyperbolic_times(seq(std::vector<double>(50, 0.9624)), 0.9).times == range_set(50).times);
    CHECK(hyperbolic_times(seq({1, -1, 1, 1}), 0.0).times == Times{1, 3, 4});
    CHECK(hyperbolic_times(seq(std::vector<double>(20, 0.7)), 0.7).times == range_set(20).times);
    CHECK_THROWS_AS(hyperbolic_times(seq({}), 0.0), Error);
}

TEST_CASE("averaged domination prefix examples") {
    auto r = seq(std::vector<double>(100, 1.9248473));
    CHECK(averaged_domination_prefix(r, 1.9) == 100);
    CHECK(averaged_domination_prefix(r, 2.0) == 0);
    CHECK(averaged_domination_prefix(seq({std::log(2.0), std::log(0.5), std::log(2.0), std::log(2.0)}), 0.0) == 4);
}

TEST_CASE("hd times examples") {
    Cat c;
    auto e = step_logs(c.orbit, c.split, LogKind::LogMiniE, 1, 1000);
    auto r = step_logs(c.orbit, c.split, LogKind::LogRatio, 1, 1000);
    CHECK(hd_times(e, r, 0.9, 1.9).times == range_set(1000).times);
    CHECK(hd_times(e, r, 0.9, 2.0).empty());
    Diag d;
    auto de = step_logs(d.orbit, d.split, LogKind::LogMiniE, 1, 80);
    auto dr = step_logs(d.orbit, d.split, LogKind::LogRatio, 1, 80);
    CHECK(hd_times(de, dr, 1.0, 0.5).times == range_set(80).times);
}

TEST_CASE("pliss selection examples") {
    CHECK(pliss_select({0, 2, 0, 0}, 2.0, 0.5, 1.0).times == Times{1, 4});
    CHECK(pliss_select(std::vector<double>(30, 0.5), 2.0, 0.5, 1.0).times == range_set(30).times);
    CHECK(pliss_select({1.0, 1.5, 2.0}, 2.0, 0.5, 1.0).empty());
    CHECK_THROWS_AS(pliss_select({0, 3}, 2.0, 0.5, 1.0), Error);
    CHECK_THROWS_AS(pliss_select({0, 1}, 2.0, 1.0, 0.5), Error);
}

TEST_CASE("T_ell examples") {
    Cat c;
    auto e = step_logs(c.orbit, c.split, LogKind::LogMiniE, 1, 1000);
    for (auto& v : e.values) v = -v;
    CHECK(t_ell_times(e, -0.9).times == range_set(1000).times);
    CHECK(t_ell_times(seq(std::vector<double>(10, -0.3)), -0.3).times == range_set(10).times);
    CHECK(t_ell_times(seq({0, 2, 0, 0}), 1.0).times == Times{1, 3, 4});
}

TEST_CASE("density examples") {
    TimeSet evens;
    evens.horizon = 10000;
    for (std::int64_t n = 2; n <= 10000; n += 2) evens.times.push_back(n);
    auto d = density(evens);
    const double tol = 1.0 / static_cast<double>(d.n_min);
    CHECK(std::abs(d.d_lower_est - 0.5) <= tol);
    CHECK(std::abs(d.d_upper_est - 0.5) <= tol);

    TimeSet full = range_set(10000);
    full.horizon = 10000;
    auto df = density(full);
    CHECK(df.d_lower_est == 1.0);
    CHECK(df.d_upper_est == 1.0);

    TimeSet squares;
    squares.horizon = 10000;
    for (std::int64_t k = 1; k * k <= 10000; ++k) squares.times.push_back(k * k);
    auto ds = density(squares);
    CHECK(ds.d_lower_est <= 0.02);
    CHECK(ds.d_upper_est <= 0.02);
}

TEST_CASE("block H examples") {
    CHECK(block_H(seq(std::vector<double>(40, -1.0)), -0.5).member_up_to == 40);
    std::vector<double> t(30, -5.0);
    t[0] = 1.0;
    CHECK(block_H(seq(t), 0.0).member_up_to == 0);
    std::vector<double> alt;
    for (int i = 0; i < 31; ++i) alt.push_back(i % 2 ? 1.0 : -1.0);
    auto v = block_H(seq(alt), 0.0);
    CHECK(v.member_up_to == 31);
    CHECK(v.is_member_truncated);
}

TEST_CASE("block Lambda examples") {
    Cat c;
    auto e = step_logs(c.orbit, c.split, LogKind::LogMiniE, 1, 1000);
    auto f = step_logs(c.orbit, c.split, LogKind::LogNormF, 1, 1000);
    CHECK(block_Lambda(e, f, 0.9, -0.9).member_up_to == 1000);
    CHECK(block_Lambda(e, f, 1.0, -0.9).member_up_to == 0);
    CHECK(block_to_domination_check(e, f, 0.9, -0.9, 1000));
    CHECK(high_density_block(e, seq([&] {
              std::vector<double> r(1000);
              for (int i = 0; i < 1000; ++i) r[i] = e.values[i] - f.values[i];
              return r;
          }()), 0.9, -0.9, 0.99, 1).passes);

    Diag d;
    auto de = step_logs(d.orbit, d.split, LogKind::LogMiniE, 1, 80);
    auto dg = step_logs(d.orbit, d.split, LogKind::LogNormF, 1, 80, BundleKind::E, BundleKind::G);
    CHECK(block_Lambda(de, dg, 1.0, -2.0).member_up_to == 80);
    auto dr = step_logs(d.orbit, d.split, LogKind::LogRatio, 1, 80, BundleKind::E, BundleKind::G);
    for (double theta : {0.1, 0.5, 1.0}) CHECK(high_density_block(de, dr, 1.0, -2.0, theta, 1).passes);
}

TEST_CASE("sparse profile fails the high-density test") {
    std::vector<double> e;
    for (int i = 0; i < 400; ++i) e.push_back(i % 2 ? -3.0 : 2.0);
    auto r = high_density_block(seq(e), seq(std::vector<double>(400, 5.0)), 0.5, -0.5, 0.5, 1);
    CHECK_FALSE(r.passes);
    CHECK(r.stats.d_upper_est < 0.5);
}

TEST_CASE("failing Lambda at n = 1 is vacuous") {
    CHECK(block_to_domination_check(seq({-1, 5, 5}), seq({0, 0, 0}), 0.5, -0.5, 3));
}

TEST_CASE("domination follows from Lambda on random passing traces") {
    CounterRng rng(41);
    int passing = 0;
    for (int t = 0; t < 1000; ++t) {
        const double g1 = rng.uniform(0.1, 2.0);
        const double g2 = g1 - rng.uniform(0.1, 3.0);
        auto n = 1 + rng.below(300);
        auto e = smooth_sequence(rng, n);
        auto f = smooth_sequence(rng, n);
        // shift so every prefix average clears its threshold, with a margin over rounding
        double me = 1e300, mf = -1e300, se = 0, sf = 0;
        for (std::size_t k = 0; k < n; ++k) {
            se += e[k];
            sf += f[k];
            me = std::min(me, se / static_cast<double>(k + 1));
            mf = std::max(mf, sf / static_cast<double>(k + 1));
        }
        for (auto& v : e) v += g1 - me + 1e-9;
        for (auto& v : f) v += g2 - mf - 1e-9;
        auto se_ = seq(e), sf_ = seq(f);
        if (block_Lambda(se_, sf_, g1, g2).is_member_truncated) ++passing;
        CHECK(block_to_domination_check(se_, sf_, g1, g2, static_cast<std::int64_t>(n)));
    }
    CHECK(passing >= 900);
}

TEST_CASE("fast selections equal brute force") {
    CounterRng rng(2718);
    for (int t = 0; t < 1000; ++t) {
        auto n = 1 + rng.below(512);
        auto a = t % 2 ? grid_sequence(rng, n) : smooth_sequence(rng, n);
        double thr = t % 2 ? 0.5 * static_cast<double>(static_cast<int>(rng.below(5)) - 2) : rng.uniform(-1, 1);
        auto s = seq(a);
        CHECK(hyperbolic_times(s, thr).times == brute_force_times(a, thr, Sense::NonstrictAbove).times);
        CHECK(t_ell_times(s, thr).times == brute_force_times(a, thr, Sense::NonstrictBelow).times);
        CHECK(averaged_domination_prefix(s, thr) == brute_force_prefix(a, thr, Sense::NonstrictAbove));
        double eta = thr - 0.5;
        double big_l = *std::max_element(a.begin(), a.end()) + 0.5;
        if (thr < big_l)
            CHECK(pliss_select(a, big_l, eta, thr).times == brute_force_times(a, thr, Sense::StrictBelow).times);
    }
}

TEST_CASE("monotone in thresholds and mirrored") {
    CounterRng rng(7);
    for (int t = 0; t < 500; ++t) {
        auto n = 1 + rng.below(200);
        auto a = t % 2 ? grid_sequence(rng, n) : smooth_sequence(rng, n);
        double lo = rng.uniform(-1, 1);
        double hi = lo + rng.uniform(0, 1);
        auto s = seq(a);
        auto strict = hyperbolic_times(s, hi);
        auto loose = hyperbolic_times(s, lo);
        CHECK(std::includes(loose.times.begin(), loose.times.end(), strict.times.begin(), strict.times.end()));
        auto t_lo = t_ell_times(s, lo);
        auto t_hi = t_ell_times(s, hi);
        CHECK(std::includes(t_hi.times.begin(), t_hi.times.end(), t_lo.times.begin(), t_lo.times.end()));
        std::vector<double> neg(a);
        for (auto& v : neg) v = -v;
        CHECK(t_ell_times(s, lo).times == hyperbolic_times(seq(neg), -lo).times);
    }
}

TEST_CASE("density estimates are ordered frequencies") {
    CounterRng rng(13);
    for (int t = 0; t < 300; ++t) {
        TimeSet ts;
        ts.horizon = 1 + static_cast<std::int64_t>(rng.below(3000));
        double p = rng.uniform();
        for (std::int64_t n = 1; n <= ts.horizon; ++n)
            if (rng.uniform() < p) ts.times.push_back(n);
        auto d = density(ts);
        CHECK(0.0 <= d.d_lower_est);
        CHECK(d.d_lower_est <= d.d_upper_est);
        CHECK(d.d_upper_est <= 1.0);
    }
}

TEST_CASE("intersection and json") {
    TimeSet a, b;
    a.times = {1, 2, 5, 9};
    a.horizon = 10;
    b.times = {2, 3, 9};
    b.horizon = 9;
    auto c = intersect(a, b);
    CHECK(c.times == Times{2, 9});
    CHECK(c.horizon == 9);
    CHECK(to_json(c).at("times").get<Times>() == c.times);
}

} // TEST_SUITE
