// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "nuhyp/grower.hpp"
#include "nuhyp/report.hpp"
#include "nuhyp/rng.hpp"
#include "nuhyp/synthlab.hpp"

using namespace nuhyp;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s %d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

void run(int id, const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
    try {
        auto [ok, detail] = body();
        report(id, name, ok, detail);
    } catch (const std::exception& e) {
        report(id, name, false, std::string("exception: ") + e.what());
    }
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

StepLogSequence seq(std::vector<double> v) {
    StepLogSequence s;
    s.values = std::move(v);
    return s;
}

// O(N^2) oracles written directly from the window definitions.
// window(n, k) = mean of a_{n-k}..a_{n-1}.
double window_mean(const std::vector<double>& a, std::size_t n, std::size_t k) {
    double s = 0.0;
    for (std::size_t j = n - k; j < n; ++j) s += a[j];
    return s / static_cast<double>(k);
}

std::vector<std::int64_t> oracle_times(const std::vector<double>& a, const std::function<bool(double)>& ok) {
    std::vector<std::int64_t> out;
    for (std::size_t n = 1; n <= a.size(); ++n) {
        bool all = true;
        for (std::size_t k = 1; k <= n && all; ++k) all = ok(window_mean(a, n, k));
        if (all) out.push_back(static_cast<std::int64_t>(n));
    }
    return out;
}

std::int64_t oracle_prefix(const std::vector<double>& a, double thr) {
    std::int64_t n = 0;
    while (static_cast<std::size_t>(n) < a.size() && window_mean(a, static_cast<std::size_t>(n + 1),
                                                                 static_cast<std::size_t>(n + 1)) >= thr)
        ++n;
    return n;
}

std::pair<bool, std::string> oracle_equivalence() {
    auto t0 = Clock::now();
    CounterRng rng(20240601);
    int mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
        std::size_t n = 1 + rng.below(512);
        std::vector<double> a(n);
        // half-integer values make equality cases exact and frequent
        for (auto& v : a) v = t % 2 ? 0.5 * (static_cast<double>(rng.below(9)) - 4) : rng.uniform(-2, 2);
        double thr = t % 2 ? 0.5 * (static_cast<double>(rng.below(5)) - 2) : rng.uniform(-1, 1);
        auto s = seq(a);
        mismatches += hyperbolic_times(s, thr).times != oracle_times(a, [&](double m) { return m >= thr; });
        mismatches += t_ell_times(s, thr).times != oracle_times(a, [&](double m) { return m <= thr; });
        mismatches += averaged_domination_prefix(s, thr) != oracle_prefix(a, thr);
        double big_l = std::max(*std::max_element(a.begin(), a.end()), thr) + 0.5;
        mismatches += pliss_select(a, big_l, thr - 0.5, thr).times != oracle_times(a, [&](double m) { return m < thr; });
    }
    double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 60.0,
            std::to_string(mismatches) + " mismatches over 1000 sequences x 4 functions, " + fmt("%.1f s", secs)};
}

std::pair<bool, std::string> cat_time_sets() {
    const int n = 10000;
    auto sys = cat2();
    auto orbit = make_orbit(sys, sys.default_point(), n + 60, 60);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    auto hd = hd_times(step_logs(orbit, split, LogKind::LogMiniE, 1, n),
                       step_logs(orbit, split, LogKind::LogRatio, 1, n), 0.9, 1.9);
    auto ds = density(hd);
    bool full = hd.size() == static_cast<std::size_t>(n);
    for (std::size_t i = 0; full && i < hd.times.size(); ++i) full = hd.times[i] == static_cast<std::int64_t>(i + 1);
    return {full && ds.d_lower_est == 1.0 && ds.d_upper_est == 1.0,
            "|HD| = " + std::to_string(hd.size()) + ", density [" + fmt("%.17g", ds.d_lower_est) + ", " +
                fmt("%.17g", ds.d_upper_est) + "]"};
}

std::pair<bool, std::string> splitting() {
    auto sys = cat2();
    auto orbit = make_orbit(sys, sys.default_point(), 200, 100);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    const double phi = (std::sqrt(5.0) - 1) / 2;
    Subspace eu(Eigen::Vector2d(1, phi)), es(Eigen::Vector2d(-phi, 1));
    double cat = 0.0;
    for (int j = split.lo(); j <= split.hi(); ++j)
        cat = std::max({cat, grassmann_distance(split.e(j), eu), grassmann_distance(split.f(j), es)});

    auto d = diag3();
    auto od = make_orbit(d, d.default_point(), 50, 50);
    auto sd = estimate_splitting(d, od, {1, 1, 1}, 10);
    double diag = 0.0;
    for (int j = sd.lo(); j <= sd.hi(); ++j)
        diag = std::max({diag, grassmann_distance(sd.e(j), Subspace::coordinate(3, 0, 1)),
                         grassmann_distance(sd.f(j), Subspace::coordinate(3, 1, 1)),
                         grassmann_distance(sd.g(j), Subspace::coordinate(3, 2, 1))});
    return {cat <= 1e-8 && diag <= 1e-12, "cat2 " + fmt("%.3g", cat) + ", diag3 " + fmt("%.3g", diag)};
}

std::pair<bool, std::string> cat_manifold() {
    auto t0 = Clock::now();
    const double lp = (3 + std::sqrt(5.0)) / 2;
    auto sys = cat2();
    auto orbit = make_orbit(sys, sys.default_point(), 400, 60);
    auto split = estimate_splitting(sys, orbit, {1, 1}, 60);
    auto hd = hd_times(step_logs(orbit, split, LogKind::LogMiniE, 1, 300),
                       step_logs(orbit, split, LogKind::LogRatio, 1, 300), 0.9, 1.9);
    GrowerParams p;
    p.r = 0.05;
    p.h = 0.005;
    p.a = 0.5;
    p.sigma1 = std::exp(0.9);
    p.sigma2 = std::exp(1.9);
    p.chi = lp;
    p.t_cap = 1.01;
    p.n_max = 300;
    p.tol_c1 = 1e-10;
    auto m = grow_unstable(sys, split, sys.default_point(), p, hd);
    auto v = verify_local_manifold(sys, m, 30);

    // analytic eigenline through the base point
    Eigen::Vector2d dir(1, (std::sqrt(5.0) - 1) / 2);
    dir.normalize();
    Subspace line(dir);
    const auto& mesh = m.mesh;
    double tangent = 0.0;
    for (const auto& node : mesh.nodes) tangent = std::max(tangent, grassmann_distance(mesh.tangent(node), line));
    // Hausdorff distance between the interpolated graph and the segment, both sampled finely
    auto seg_dist = [&](const Eigen::VectorXd& w) {
        double t = std::clamp(w.dot(dir), -p.r, p.r);
        return (w - t * dir).norm();
    };
    double haus = 0.0;
    const int samples = 4001;
    for (int i = 0; i < samples; ++i) {
        double s = -1.0 + 2.0 * i / (samples - 1);
        Eigen::VectorXd u = Eigen::VectorXd::Constant(1, s * mesh.radius);
        auto ev = mesh.evaluate(u);
        if (!ev) return {false, "graph not defined at u = " + fmt("%g", u[0])};
        Eigen::VectorXd w = mesh.frame.frame() * u + mesh.complement * ev->first;
        haus = std::max(haus, seg_dist(w));
        // from the segment point s r dir to the graph point above its projection
        Eigen::VectorXd target = s * p.r * dir;
        Eigen::VectorXd u2 = mesh.frame.frame().transpose() * target;
        u2[0] = std::clamp(u2[0], -mesh.radius, mesh.radius);
        auto ev2 = mesh.evaluate(u2);
        if (!ev2) return {false, "graph not defined at projected u"};
        haus = std::max(haus, (mesh.frame.frame() * u2 + mesh.complement * ev2->first - target).norm());
    }
    double gap = 0.0;
    for (std::size_t i = 2; i < m.convergence_log.size(); ++i)
        gap = std::max({gap, m.convergence_log[i].c0, m.convergence_log[i].c1});
    double secs = seconds_since(t0);
    bool ok = m.status == GrowStatus::Converged && haus <= 1e-6 && tangent <= 1e-6 && m.convergence_log.size() >= 3 &&
              gap < 1e-10 && m.chi == lp && m.t <= 1.01 && v.passed && v.depth == 30 && secs < 10.0;
    return {ok, std::string(to_string(m.status)) + ", Hausdorff " + fmt("%.3g", haus) + ", tangent " +
                    fmt("%.3g", tangent) + ", max gap " + fmt("%.3g", gap) + ", T " + fmt("%.15g", m.t) +
                    ", verify ratio " + fmt("%.15g", v.max_ratio) + ", " + fmt("%.2f s", secs)};
}

std::pair<bool, std::string> skew_f_checks() {
    const double sigma = std::exp(0.5);
    int violations = 0, used = 0;
    std::string notes;
    int shifted = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto sys = skew_nonuniform(seed, 4096);
        // HD times need domination from the base step on; when the orbit starts in
        // the contracting state the base point moves forward along its own orbit.
        auto x0 = sys.default_point();
        OrbitSegment orbit = make_orbit(sys, x0, 1100, 60);
        SplittingField split = estimate_splitting(sys, orbit, {1, 1}, 60);
        TimeSet hd;
        for (int shift = 0; shift <= 200; ++shift) {
            if (shift > 0) {
                x0 = sys.forward(x0);
                orbit = make_orbit(sys, x0, 1100, 60);
                split = estimate_splitting(sys, orbit, {1, 1}, 60);
            }
            hd = hd_times(step_logs(orbit, split, LogKind::LogMiniE, 1, 1000),
                          step_logs(orbit, split, LogKind::LogRatio, 1, 1000), 0.5, 1.0);
            if (!hd.empty()) {
                shifted += shift > 0;
                break;
            }
        }
        if (hd.empty()) return {false, "seed " + std::to_string(seed) + " has no HD times near its base point"};
        auto cal = calibrate_a_r(sys, split, x0, sigma, sigma, 0.5, 1.0, hd);
        GrowerParams g;
        g.a = cal.a;
        g.r = cal.r;
        g.h = cal.r / 10;
        g.sigma1 = g.sigma2 = sigma;
        g.chi = sigma;
        g.n_max = 1000;
        g.tol_c1 = 1e-8;
        g.t_cap = 1e6;
        auto m = grow_unstable(sys, split, x0, g, hd);
        for (const auto& rec : m.f_checks) {
            ++used;
            violations += !rec.cut_ok || !rec.contraction.passed || !rec.alignment.passed;
        }
        // a failed push is a violation even if no check record was made
        if (m.status == GrowStatus::CertificateFailure && m.message.rfind("push", 0) == 0) ++violations;
        if (m.status == GrowStatus::CertificateFailure) notes += " seed " + std::to_string(seed) + ": " + m.message;
    }
    return {violations == 0 && used > 0,
            std::to_string(violations) + " violations at " + std::to_string(used) + " used times over 20 seeds (" +
                std::to_string(shifted) + " base points advanced)" + notes};
}

std::pair<bool, std::string> block_measures() {
    auto t0 = Clock::now();
    auto j = nlohmann::json::parse(R"({
      "analysis": "measure-sweep",
      "system": {"name": "skew-nonuniform"},
      "orbit": {"N": 1000, "B": 60},
      "thresholds": {"gamma1": 0.8, "gamma2": -0.7, "theta": 0.5, "ell": [1, 2, 4, 8, 16, 32, 64]},
      "samples": 1000,
      "seed": 2024
    })");
    auto est = estimate_block_measure(parse_config(j));
    std::vector<FrequencyEstimate> lam, hdb;
    for (const auto& e : est) {
        if (e.quantity == "lambda_block") lam.push_back(e);
        if (e.quantity == "high_density_block") hdb.push_back(e);
    }
    if (lam.size() != 7 || hdb.size() != 7) return {false, "unexpected estimate layout"};
    bool mono = true;
    for (std::size_t i = 1; i < lam.size(); ++i) mono = mono && lam[i].hi >= lam[i - 1].lo;
    double secs = seconds_since(t0);
    bool ok = mono && lam.back().estimate > 0.9 && hdb.back().estimate > 0.5 && secs < 300.0;
    std::string trend;
    for (const auto& e : lam) trend += fmt(" %.3f", e.estimate);
    return {ok, "Lambda by ell:" + trend + "; HD block at 64: " + fmt("%.3f", hdb.back().estimate) +
                    (mono ? "; nondecreasing within CI" : "; CI trend broken") + ", " + fmt("%.0f s", secs)};
}

std::pair<bool, std::string> block_to_domination() {
    CounterRng rng(777);
    int checked = 0, falses = 0;
    while (checked < 1000) {
        std::size_t n = 1 + rng.below(300);
        double g1 = rng.uniform(-1, 1), g2 = g1 - rng.uniform(0.01, 2);
        std::vector<double> e(n), f(n);
        for (std::size_t i = 0; i < n; ++i) {
            e[i] = g1 + rng.uniform(-0.5, 1.5);
            f[i] = g2 + rng.uniform(-1.5, 0.5);
        }
        auto se = seq(e), sf = seq(f);
        auto v = block_Lambda(se, sf, g1, g2);
        if (v.member_up_to == 0) continue;
        ++checked;
        falses += !block_to_domination_check(se, sf, g1, g2, v.member_up_to);
    }
    int systems = 0;
    auto check_system = [&](const SmoothSystem& sys, SplittingDims dims, int settle, int ell, double g1, double g2) {
        auto orbit = make_orbit(sys, sys.default_point(), 64 * ell + 60, 60);
        auto split = estimate_splitting(sys, orbit, dims, settle);
        auto se = step_logs(orbit, split, LogKind::LogMiniE, ell, 64);
        auto sf = step_logs(orbit, split, LogKind::LogNormF, ell, 64);
        auto v = block_Lambda(se, sf, g1, g2);
        ++systems;
        falses += !block_to_domination_check(se, sf, g1, g2, v.member_up_to);
    };
    for (int ell : {1, 4, 16}) {
        check_system(cat2(), {1, 1}, 60, ell, 0.9, -0.9);
        check_system(diag3(), {1, 1, 1}, 10, ell, 1.0, 0.5);
        for (std::uint64_t seed = 1; seed <= 10; ++seed)
            check_system(skew_nonuniform(seed, 4096), {1, 1}, 60, ell, 0.8, -0.7);
    }
    return {falses == 0, std::to_string(falses) + " false of " + std::to_string(checked) + " random traces and " +
                             std::to_string(systems) + " system traces"};
}

std::pair<bool, std::string> nested() {
    GrowerParams q;
    q.r = 0.05;
    q.h = 0.005;
    q.a = 0.5;
    q.sigma1 = q.sigma2 = q.chi = 1.5;
    q.n_max = 40;
    q.tol_c1 = 1e-8;
    auto d = diag3();
    auto od = make_orbit(d, d.default_point(), 80, 20);
    auto sd = estimate_splitting(d, od, {1, 1, 1}, 10);
    auto nr = grow_nested(d, od, sd, d.default_point(), q, {1.0, 0.5, 0.5, 2.0});
    double tan_inner = 0.0, tan_outer = 0.0;
    for (const auto& node : nr.inner.mesh.nodes)
        tan_inner = std::max(tan_inner, grassmann_distance(nr.inner.mesh.tangent(node), Subspace::coordinate(3, 0, 1)));
    for (const auto& node : nr.outer.mesh.nodes)
        tan_outer = std::max(tan_outer, grassmann_distance(nr.outer.mesh.tangent(node), Subspace::coordinate(3, 0, 2)));

    // Inverse system: E+F is contracting there, so the nested unstable pair
    // does not exist; the expanding line is e3 and lies in the invariant plane span(e2, e3).
    auto di = inverse(d);
    auto oi = make_orbit(di, di.default_point(), 80, 20);
    auto si = estimate_splitting(di, oi, {1, 1, 1}, 10);
    bool ordering_rejected = false;
    try {
        grow_nested(di, oi, si, di.default_point(), q, {1.0, 0.5, 0.5, 2.0});
    } catch (const Error& e) {
        ordering_rejected = e.code() == Errc::OrderingViolated;
    }
    auto hd = hd_times(step_logs(oi, si, LogKind::LogMiniE, 1, 40), step_logs(oi, si, LogKind::LogRatio, 1, 40), 1.0,
                       1.0);
    auto g = grow_unstable(di, si, di.default_point(), q, hd);
    double off_plane = 0.0, tan_g = 0.0;
    for (const auto& node : g.mesh.nodes) {
        off_plane = std::max(off_plane, std::abs(g.mesh.displacement(node)[0]));
        tan_g = std::max(tan_g, grassmann_distance(g.mesh.tangent(node), Subspace::coordinate(3, 2, 1)));
    }
    bool ok = nr.inclusion_deviation <= 1e-8 && tan_inner <= 1e-8 && tan_outer <= 1e-8 && ordering_rejected &&
              g.status == GrowStatus::Converged && off_plane <= 1e-8 && tan_g <= 1e-8;
    return {ok, "inclusion " + fmt("%.3g", nr.inclusion_deviation) + ", tangency E " + fmt("%.3g", tan_inner) +
                    ", E+F " + fmt("%.3g", tan_outer) + "; inverse: ordering " +
                    (ordering_rejected ? "rejected" : "accepted") + ", e3 line " + std::string(to_string(g.status)) +
                    " off-plane " + fmt("%.3g", off_plane) + " tangency " + fmt("%.3g", tan_g)};
}

std::pair<bool, std::string> density_sanity() {
    const std::int64_t n = 10000;
    TimeSet evens, squares;
    evens.horizon = squares.horizon = n;
    for (std::int64_t t = 2; t <= n; t += 2) evens.times.push_back(t);
    for (std::int64_t k = 1; k * k <= n; ++k) squares.times.push_back(k * k);
    auto de = density(evens), dq = density(squares);
    bool ok = std::abs(de.d_lower_est - 0.5) <= 1.0 / 32 && std::abs(de.d_upper_est - 0.5) <= 1.0 / 32 &&
              dq.d_lower_est <= 0.02 && dq.d_upper_est <= 0.02;
    return {ok, "evens [" + fmt("%.5f", de.d_lower_est) + ", " + fmt("%.5f", de.d_upper_est) + "], squares [" +
                    fmt("%.5f", dq.d_lower_est) + ", " + fmt("%.5f", dq.d_upper_est) + "]"};
}

} // namespace

int main() {
    auto t0 = Clock::now();
    run(1, "oracle equivalence", oracle_equivalence);
    run(2, "cat map time sets", cat_time_sets);
    run(3, "splitting estimation", splitting);
    run(4, "cat map manifold", cat_manifold);
    run(5, "skew F-checks", skew_f_checks);
    run(6, "block measure trends", block_measures);
    run(7, "block to domination", block_to_domination);
    run(8, "nested manifolds", nested);
    run(9, "density sanity", density_sanity);
    std::printf("%d of 9 criteria failed, %.0f s total\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
