#include "nuhyp/synthlab.hpp"

#include <algorithm>
#include <cmath>

#include "nuhyp/rng.hpp"

namespace nuhyp {

std::vector<double> gen_sequence(const SequenceSpec& spec) {
    if (spec.length < 1) throw Error(Errc::InvalidArgument, "sequence length must be >= 1");
    if (!(spec.small_fraction >= 0.0 && spec.small_fraction <= 1.0))
        throw Error(Errc::InvalidArgument, "small_fraction must lie in [0, 1]");
    if (!(spec.small_gap > 0.0)) throw Error(Errc::InvalidArgument, "small_gap must be positive");
    if (!(spec.big_value > spec.small_value && spec.big_value <= spec.bound))
        throw Error(Errc::InvalidArgument, "big_value must lie in (eta, L]");
    CounterRng rng(spec.seed);
    const double small = spec.small_value - spec.small_gap;
    std::vector<double> a(static_cast<std::size_t>(spec.length));
    for (auto& v : a) v = rng.uniform() < spec.small_fraction ? small : spec.big_value;
    return a;
}

SmoothSystem gen_cocycle(const CocycleSpec& spec) {
    for (int d : spec.block_dims)
        if (d > 3) throw Error(Errc::InvalidArgument, "block dimension " + std::to_string(d) + " exceeds 3");
    SkewSpec s;
    s.block_dims = spec.block_dims;
    s.rates = spec.rates;
    s.coupling = spec.coupling;
    s.window = spec.window;
    s.start = spec.start;
    s.seed = spec.seed;
    return skew_product(s);
}

namespace {

bool compare(double avg, double threshold, Sense sense) {
    switch (sense) {
    case Sense::StrictBelow: return avg < threshold;
    case Sense::NonstrictBelow: return avg <= threshold;
    case Sense::NonstrictAbove: return avg >= threshold;
    }
    return false;
}

void check_budget(const std::vector<double>& a) {
    if (static_cast<std::int64_t>(a.size()) > kBruteForceBudget)
        throw Error(Errc::BudgetExceeded, "brute force limited to N <= 4096, got " + std::to_string(a.size()));
}

} // namespace

TimeSet brute_force_times(const std::vector<double>& a, double threshold, Sense sense) {
    check_budget(a);
    TimeSet ts;
    ts.horizon = static_cast<std::int64_t>(a.size());
    for (std::size_t n = 1; n <= a.size(); ++n) {
        double s = 0.0;
        bool ok = true;
        for (std::size_t k = 1; k <= n && ok; ++k) {
            s += a[n - k];
            ok = compare(s / static_cast<double>(k), threshold, sense);
        }
        if (ok) ts.times.push_back(static_cast<std::int64_t>(n));
    }
    ts.params = {{"rule", "brute-force"}, {"threshold", threshold}};
    return ts;
}

std::int64_t brute_force_prefix(const std::vector<double>& a, double threshold, Sense sense) {
    check_budget(a);
    double s = 0.0;
    for (std::size_t k = 1; k <= a.size(); ++k) {
        s += a[k - 1];
        if (!compare(s / static_cast<double>(k), threshold, sense)) return static_cast<std::int64_t>(k - 1);
    }
    return static_cast<std::int64_t>(a.size());
}

PlissCalibration calibrate_pliss_rho(double big_l, double eta, double zeta, double theta, std::int64_t n, int trials,
                                     std::uint64_t seed, double tol) {
    if (!(eta < zeta && zeta < big_l)) throw Error(Errc::PreconditionViolated, "need eta < zeta < L");
    if (!(theta > 0.0 && theta <= 1.0)) throw Error(Errc::InvalidArgument, "theta must lie in (0, 1]");
    if (n < 1 || trials < 1) throw Error(Errc::InvalidArgument, "need n >= 1 and trials >= 1");

    PlissCalibration cal;
    cal.trials = trials;
    CounterRng root(seed);
    // worst selection ratio over sequences whose realized small frequency exceeds rho
    auto worst_at = [&](double rho, std::uint64_t round) {
        double worst = 1.0;
        for (int t = 0; t < trials; ++t) {
            SequenceSpec spec;
            spec.length = n;
            spec.bound = big_l;
            spec.small_value = eta;
            spec.small_gap = 0.5 * (zeta - eta) + 0.5;
            spec.small_fraction = rho;
            spec.big_value = big_l;
            spec.seed = root.split(round).split(static_cast<std::uint64_t>(t)).next_u64();
            auto a = gen_sequence(spec);
            auto small = std::count_if(a.begin(), a.end(), [&](double v) { return v < eta; });
            if (static_cast<double>(small) <= rho * static_cast<double>(n)) continue;
            auto sel = pliss_select(a, big_l, eta, zeta);
            worst = std::min(worst, static_cast<double>(sel.size()) / static_cast<double>(n));
        }
        return worst;
    };

    double lo = 0.0;
    double hi = 1.0;
    cal.worst_ratio = 1.0;
    std::uint64_t round = 0;
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        double w = worst_at(mid, ++round);
        if (w >= theta) {
            hi = mid;
            cal.worst_ratio = w;
        } else {
            lo = mid;
        }
        ++cal.iterations;
    }
    cal.rho = hi;
    return cal;
}

nlohmann::json to_json(const SequenceSpec& spec) {
    return {{"length", spec.length},
            {"bound", spec.bound},
            {"small_value", spec.small_value},
            {"small_gap", spec.small_gap},
            {"small_fraction", spec.small_fraction},
            {"big_value", spec.big_value},
            {"seed", spec.seed}};
}

SequenceSpec sequence_spec_from_json(const nlohmann::json& j) {
    SequenceSpec s;
    try {
        s.length = j.at("length").get<std::int64_t>();
        s.bound = j.at("bound").get<double>();
        s.small_value = j.at("small_value").get<double>();
        s.small_gap = j.value("small_gap", s.small_gap);
        s.small_fraction = j.at("small_fraction").get<double>();
        s.big_value = j.at("big_value").get<double>();
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("sequence spec: ") + e.what());
    }
    return s;
}

nlohmann::json to_json(const CocycleSpec& spec) {
    nlohmann::json rates = nlohmann::json::array();
    for (const auto& r : spec.rates) rates.push_back(to_json(r));
    return {{"block_dims", spec.block_dims}, {"rates", rates},     {"coupling", spec.coupling},
            {"window", spec.window},         {"start", spec.start}, {"seed", spec.seed}};
}

CocycleSpec cocycle_spec_from_json(const nlohmann::json& j) {
    CocycleSpec s;
    try {
        s.block_dims = j.at("block_dims").get<std::vector<int>>();
        for (const auto& r : j.at("rates")) s.rates.push_back(rate_from_json(r));
        s.coupling = j.value("coupling", s.coupling);
        s.window = j.value("window", s.window);
        s.start = j.value("start", s.start);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("cocycle spec: ") + e.what());
    }
    return s;
}

} // namespace nuhyp
