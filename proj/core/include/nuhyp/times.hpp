#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuhyp/bundle.hpp"

namespace nuhyp {

enum class LogKind { LogMiniE, LogNormF, LogRatio, Custom };

std::string_view to_string(LogKind kind);

/// Per-step (or per-ell-block, divided by ell) logs a_0..a_{N-1}.
struct StepLogSequence {
    std::vector<double> values;
    LogKind kind = LogKind::Custom;
    int ell = 1;

    std::size_t size() const { return values.size(); }
};

/// Sorted strictly increasing times in [1, horizon].
struct TimeSet {
    std::vector<std::int64_t> times;
    std::int64_t horizon = 0;
    nlohmann::json params = nlohmann::json::object();

    bool contains(std::int64_t n) const;
    std::size_t size() const { return times.size(); }
    bool empty() const { return times.empty(); }
};

TimeSet intersect(const TimeSet& a, const TimeSet& b);

struct DensityStats {
    double d_lower_est = 0.0;
    double d_upper_est = 0.0;
    std::vector<double> prefix_profile; // entry n-1 is #(times <= n) / n
    std::int64_t n_min = 0;
    std::int64_t horizon = 0;
};

/// Truncated "for all n" membership.
struct BlockVerdict {
    std::int64_t member_up_to = 0;
    std::int64_t required = 0;
    bool is_member_truncated = false;
};

/// Builds the log sequence along x_0, x_ell, ... for `n_blocks` blocks.
/// LogMiniE uses the mini-norm on `primary`, LogNormF the norm on `partner`,
/// LogRatio their difference.
StepLogSequence step_logs(const OrbitSegment& orbit, const SplittingField& split, LogKind kind, int ell, int n_blocks,
                          BundleKind primary = BundleKind::E, BundleKind partner = BundleKind::F);

/// ell-block trace from a per-step sequence: entry i is the mean of
/// a_{i ell}..a_{(i+1) ell - 1}. Agrees with step_logs(..., ell, ...) when the
/// bundles involved are one-dimensional.
StepLogSequence block_average(const StepLogSequence& per_step, int ell, int n_blocks);

/// n such that (1/k) sum_{j=n-k}^{n-1} a_j >= log_lambda1 for every 1 <= k <= n.
TimeSet hyperbolic_times(const StepLogSequence& seq, double log_lambda1);

/// Largest n with (1/k) sum_{j<k} a_j >= log_lambda2 for all k <= n.
std::int64_t averaged_domination_prefix(const StepLogSequence& seq_ratio, double log_lambda2);

TimeSet hd_times(const StepLogSequence& seq_e, const StepLogSequence& seq_ratio, double log_lambda1,
                 double log_lambda2);

/// n such that (1/k) sum_{j=n-k}^{n-1} a_j < zeta for every 1 <= k <= n.
/// Requires a_i <= L for all i and eta < zeta < L.
TimeSet pliss_select(const std::vector<double>& a, double big_l, double eta, double zeta);

/// n such that (1/k) sum_{j=n-k}^{n-1} a_j <= gamma for every 1 <= k <= n.
TimeSet t_ell_times(const StepLogSequence& trace, double gamma);

/// Prefix-frequency profile; estimates are min / max over n in
/// [max(32, ceil(N/2)), N].
DensityStats density(const TimeSet& ts);

std::int64_t density_window_start(std::int64_t horizon);

/// Largest n with every prefix average <= gamma.
BlockVerdict block_H(const StepLogSequence& trace, double gamma);

/// Prefix averages of seq_e >= gamma1 and of seq_f <= gamma2.
BlockVerdict block_Lambda(const StepLogSequence& seq_e, const StepLogSequence& seq_f, double gamma1, double gamma2);

/// Whether every prefix verified in the Lambda block up to n also satisfies the
/// averaged-domination prefix condition at rate gamma1 - gamma2.
bool block_to_domination_check(const StepLogSequence& seq_e, const StepLogSequence& seq_f, double gamma1,
                               double gamma2, std::int64_t n);

struct HighDensityResult {
    bool passes = false;
    DensityStats stats;
    TimeSet hd;
};

/// HD times with log lambda1 = gamma1, log lambda2 = gamma1 - gamma2 on
/// ell-block traces; passes iff d_lower_est >= theta.
HighDensityResult high_density_block(const StepLogSequence& seq_e, const StepLogSequence& seq_ratio, double gamma1,
                                     double gamma2, double theta, int ell);

nlohmann::json to_json(const TimeSet& ts);
nlohmann::json to_json(const DensityStats& ds);
nlohmann::json to_json(const BlockVerdict& v);

} // namespace nuhyp
