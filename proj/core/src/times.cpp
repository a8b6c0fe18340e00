#include "nuhyp/times.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nuhyp {

std::string_view to_string(LogKind kind) {
    switch (kind) {
    case LogKind::LogMiniE: return "log-mini-E";
    case LogKind::LogNormF: return "log-norm-F";
    case LogKind::LogRatio: return "log-ratio";
    case LogKind::Custom: return "custom";
    }
    return "?";
}

bool TimeSet::contains(std::int64_t n) const { return std::binary_search(times.begin(), times.end(), n); }

TimeSet intersect(const TimeSet& a, const TimeSet& b) {
    TimeSet out;
    out.horizon = std::min(a.horizon, b.horizon);
    std::set_intersection(a.times.begin(), a.times.end(), b.times.begin(), b.times.end(),
                          std::back_inserter(out.times));
    out.params = {{"intersection_of", nlohmann::json::array({a.params, b.params})}};
    return out;
}

StepLogSequence step_logs(const OrbitSegment& orbit, const SplittingField& split, LogKind kind, int ell, int n_blocks,
                          BundleKind primary, BundleKind partner) {
    if (ell < 1) throw Error(Errc::InvalidArgument, "ell must be >= 1");
    if (n_blocks < 1) throw Error(Errc::EmptySequence, "need at least one block");
    if (kind == LogKind::Custom) throw Error(Errc::InvalidArgument, "custom sequences are built by the caller");
    StepLogSequence seq;
    seq.kind = kind;
    seq.ell = ell;
    seq.values.reserve(static_cast<std::size_t>(n_blocks));
    for (int i = 0; i < n_blocks; ++i) {
        int start = i * ell;
        double v = 0.0;
        if (kind == LogKind::LogMiniE || kind == LogKind::LogRatio)
            v += block_log_norms(orbit, split, primary, start, ell).first;
        if (kind == LogKind::LogNormF || kind == LogKind::LogRatio)
            v += (kind == LogKind::LogRatio ? -1.0 : 1.0) * block_log_norms(orbit, split, partner, start, ell).second;
        seq.values.push_back(v / ell);
    }
    return seq;
}

StepLogSequence block_average(const StepLogSequence& per_step, int ell, int n_blocks) {
    if (per_step.ell != 1) throw Error(Errc::InvalidArgument, "block_average needs a per-step sequence");
    if (ell < 1) throw Error(Errc::InvalidArgument, "ell must be >= 1");
    if (n_blocks < 1) throw Error(Errc::EmptySequence, "need at least one block");
    auto need = static_cast<std::size_t>(ell) * static_cast<std::size_t>(n_blocks);
    if (per_step.values.size() < need)
        throw Error(Errc::LengthMismatch, "need " + std::to_string(need) + " steps, have " +
                                              std::to_string(per_step.values.size()));
    StepLogSequence seq;
    seq.kind = per_step.kind;
    seq.ell = ell;
    seq.values.reserve(static_cast<std::size_t>(n_blocks));
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_blocks); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < static_cast<std::size_t>(ell); ++j) s += per_step.values[i * ell + j];
        seq.values.push_back(s / ell);
    }
    return seq;
}

namespace {

enum class Cmp { AtLeast, Below, AtMost };

void require_nonempty(const std::vector<double>& a) {
    if (a.empty()) throw Error(Errc::EmptySequence, "empty log sequence");
}

// n qualifies iff every window sum of b_j = a_j - t ending at n has the sign
// required by `sense`, i.e. P_n compares to the running extremum of P_0..P_{n-1}.
std::vector<std::int64_t> select_times(const std::vector<double>& a, double t, Cmp sense) {
    require_nonempty(a);
    std::vector<std::int64_t> out;
    double p = 0.0;
    double ext = 0.0; // max (AtLeast) or min (Below / AtMost) of P_0..P_{n-1}
    for (std::size_t i = 0; i < a.size(); ++i) {
        p += a[i] - t;
        bool ok = false;
        switch (sense) {
        case Cmp::AtLeast: ok = p >= ext; break;
        case Cmp::Below: ok = p < ext; break;
        case Cmp::AtMost: ok = p <= ext; break;
        }
        if (ok) out.push_back(static_cast<std::int64_t>(i + 1));
        ext = sense == Cmp::AtLeast ? std::max(ext, p) : std::min(ext, p);
    }
    return out;
}

// Largest n with every prefix sum of a_j - t satisfying `sense`.
std::int64_t prefix_length(const std::vector<double>& a, double t, Cmp sense) {
    require_nonempty(a);
    double p = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        p += a[i] - t;
        bool ok = sense == Cmp::AtLeast ? p >= 0.0 : (sense == Cmp::AtMost ? p <= 0.0 : p < 0.0);
        if (!ok) return static_cast<std::int64_t>(i);
    }
    return static_cast<std::int64_t>(a.size());
}

void require_finite(const std::vector<double>& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a[i])) throw Error(Errc::InvalidArgument, "non-finite value at index " + std::to_string(i));
}

} // namespace

TimeSet hyperbolic_times(const StepLogSequence& seq, double log_lambda1) {
    if (seq.kind != LogKind::LogMiniE && seq.kind != LogKind::Custom)
        throw Error(Errc::PreconditionViolated, "hyperbolic times need a log-mini-E or custom sequence");
    require_finite(seq.values);
    TimeSet ts;
    ts.times = select_times(seq.values, log_lambda1, Cmp::AtLeast);
    ts.horizon = static_cast<std::int64_t>(seq.size());
    ts.params = {{"rule", "hyperbolic"}, {"log_lambda1", log_lambda1}, {"ell", seq.ell}};
    return ts;
}

std::int64_t averaged_domination_prefix(const StepLogSequence& seq_ratio, double log_lambda2) {
    if (seq_ratio.kind != LogKind::LogRatio && seq_ratio.kind != LogKind::Custom)
        throw Error(Errc::PreconditionViolated, "averaged domination needs a log-ratio sequence");
    require_finite(seq_ratio.values);
    return prefix_length(seq_ratio.values, log_lambda2, Cmp::AtLeast);
}

TimeSet hd_times(const StepLogSequence& seq_e, const StepLogSequence& seq_ratio, double log_lambda1,
                 double log_lambda2) {
    if (seq_e.size() != seq_ratio.size())
        throw Error(Errc::LengthMismatch, std::to_string(seq_e.size()) + " vs " + std::to_string(seq_ratio.size()));
    if (seq_e.ell != seq_ratio.ell) throw Error(Errc::LengthMismatch, "sequences use different ell");
    TimeSet ts = hyperbolic_times(seq_e, log_lambda1);
    std::int64_t prefix = averaged_domination_prefix(seq_ratio, log_lambda2);
    ts.times.erase(std::upper_bound(ts.times.begin(), ts.times.end(), prefix), ts.times.end());
    ts.params = {{"rule", "hd"},
                 {"log_lambda1", log_lambda1},
                 {"log_lambda2", log_lambda2},
                 {"ell", seq_e.ell},
                 {"domination_prefix", prefix}};
    return ts;
}

TimeSet pliss_select(const std::vector<double>& a, double big_l, double eta, double zeta) {
    require_nonempty(a);
    require_finite(a);
    if (!(eta < zeta && zeta < big_l))
        throw Error(Errc::PreconditionViolated, "need eta < zeta < L (eta=" + std::to_string(eta) +
                                                    ", zeta=" + std::to_string(zeta) + ", L=" + std::to_string(big_l) +
                                                    ")");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] > big_l)
            throw Error(Errc::PreconditionViolated,
                        "a_" + std::to_string(i) + " = " + std::to_string(a[i]) + " exceeds L = " + std::to_string(big_l));
    TimeSet ts;
    ts.times = select_times(a, zeta, Cmp::Below);
    ts.horizon = static_cast<std::int64_t>(a.size());
    ts.params = {{"rule", "pliss"}, {"L", big_l}, {"eta", eta}, {"zeta", zeta}};
    return ts;
}

TimeSet t_ell_times(const StepLogSequence& trace, double gamma) {
    require_finite(trace.values);
    TimeSet ts;
    ts.times = select_times(trace.values, gamma, Cmp::AtMost);
    ts.horizon = static_cast<std::int64_t>(trace.size());
    ts.params = {{"rule", "t_ell"}, {"gamma", gamma}, {"ell", trace.ell}};
    return ts;
}

std::int64_t density_window_start(std::int64_t horizon) {
    return std::min(horizon, std::max<std::int64_t>(32, (horizon + 1) / 2));
}

DensityStats density(const TimeSet& ts) {
    if (ts.horizon < 1) throw Error(Errc::InvalidArgument, "density needs horizon >= 1");
    DensityStats ds;
    ds.horizon = ts.horizon;
    ds.n_min = density_window_start(ts.horizon);
    ds.prefix_profile.resize(static_cast<std::size_t>(ts.horizon));
    std::size_t idx = 0;
    std::int64_t count = 0;
    ds.d_lower_est = 1.0;
    ds.d_upper_est = 0.0;
    for (std::int64_t n = 1; n <= ts.horizon; ++n) {
        while (idx < ts.times.size() && ts.times[idx] <= n) {
            ++count;
            ++idx;
        }
        double freq = static_cast<double>(count) / static_cast<double>(n);
        ds.prefix_profile[static_cast<std::size_t>(n - 1)] = freq;
        if (n >= ds.n_min) {
            ds.d_lower_est = std::min(ds.d_lower_est, freq);
            ds.d_upper_est = std::max(ds.d_upper_est, freq);
        }
    }
    return ds;
}

BlockVerdict block_H(const StepLogSequence& trace, double gamma) {
    require_finite(trace.values);
    BlockVerdict v;
    v.required = static_cast<std::int64_t>(trace.size());
    v.member_up_to = prefix_length(trace.values, gamma, Cmp::AtMost);
    v.is_member_truncated = v.member_up_to == v.required;
    return v;
}

BlockVerdict block_Lambda(const StepLogSequence& seq_e, const StepLogSequence& seq_f, double gamma1, double gamma2) {
    if (seq_e.ell != seq_f.ell)
        throw Error(Errc::LengthMismatch, "ell " + std::to_string(seq_e.ell) + " vs " + std::to_string(seq_f.ell));
    if (seq_e.size() != seq_f.size()) throw Error(Errc::LengthMismatch, "traces differ in length");
    require_finite(seq_e.values);
    require_finite(seq_f.values);
    BlockVerdict v;
    v.required = static_cast<std::int64_t>(seq_e.size());
    v.member_up_to = std::min(prefix_length(seq_e.values, gamma1, Cmp::AtLeast),
                              prefix_length(seq_f.values, gamma2, Cmp::AtMost));
    v.is_member_truncated = v.member_up_to == v.required;
    return v;
}

bool block_to_domination_check(const StepLogSequence& seq_e, const StepLogSequence& seq_f, double gamma1,
                               double gamma2, std::int64_t n) {
    if (!(gamma1 > gamma2))
        throw Error(Errc::PreconditionViolated, "need gamma1 > gamma2 (" + std::to_string(gamma1) +
                                                    " <= " + std::to_string(gamma2) + ")");
    BlockVerdict v = block_Lambda(seq_e, seq_f, gamma1, gamma2);
    std::int64_t upto = std::min(v.member_up_to, n);
    const double rate = gamma1 - gamma2;
    double sum = 0.0;
    double scale = 0.0;
    for (std::int64_t k = 1; k <= upto; ++k) {
        auto i = static_cast<std::size_t>(k - 1);
        double r = seq_e.values[i] - seq_f.values[i];
        sum += r;
        scale += std::abs(seq_e.values[i]) + std::abs(seq_f.values[i]) + std::abs(gamma1) + std::abs(gamma2);
        // floating-point slack only; the inequality is exact in real arithmetic
        if (sum < static_cast<double>(k) * rate - 64.0 * std::numeric_limits<double>::epsilon() * scale) return false;
    }
    return true;
}

HighDensityResult high_density_block(const StepLogSequence& seq_e, const StepLogSequence& seq_ratio, double gamma1,
                                     double gamma2, double theta, int ell) {
    if (!(gamma1 > std::max(0.0, gamma2)))
        throw Error(Errc::PreconditionViolated, "need gamma1 > max(0, gamma2)");
    if (seq_e.ell != ell || seq_ratio.ell != ell) throw Error(Errc::LengthMismatch, "traces were not built with this ell");
    HighDensityResult res;
    res.hd = hd_times(seq_e, seq_ratio, gamma1, gamma1 - gamma2);
    res.stats = density(res.hd);
    res.passes = res.stats.d_lower_est >= theta;
    return res;
}

nlohmann::json to_json(const TimeSet& ts) {
    return {{"times", ts.times}, {"horizon", ts.horizon}, {"params", ts.params}};
}

nlohmann::json to_json(const DensityStats& ds) {
    return {{"d_lower_est", ds.d_lower_est},
            {"d_upper_est", ds.d_upper_est},
            {"n_min", ds.n_min},
            {"horizon", ds.horizon},
            {"profile", ds.prefix_profile}};
}

nlohmann::json to_json(const BlockVerdict& v) {
    return {{"member_up_to", v.member_up_to}, {"required", v.required}, {"is_member_truncated", v.is_member_truncated}};
}

} // namespace nuhyp
