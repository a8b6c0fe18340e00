#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuhyp/phase.hpp"
#include "nuhyp/times.hpp"

namespace nuhyp {

/// i.i.d. two-valued sequence: `small_value` with probability p, else big_value.
struct SequenceSpec {
    std::int64_t length = 0;
    double bound = 0.0;        // L
    double small_value = 0.0;  // eta; small draws are eta - small_gap < eta
    double small_gap = 0.5;
    double small_fraction = 0.5;
    double big_value = 0.0;    // in (eta, L]
    std::uint64_t seed = 1;
};

std::vector<double> gen_sequence(const SequenceSpec& spec);

/// Block-diagonal cocycle over the doubling map.
struct CocycleSpec {
    std::vector<int> block_dims;
    std::vector<RateProcess> rates;
    double coupling = 0.0;
    std::int64_t window = 4096;
    std::int64_t start = 128;
    std::uint64_t seed = 1;
};

SmoothSystem gen_cocycle(const CocycleSpec& spec);

enum class Sense { StrictBelow, NonstrictBelow, NonstrictAbove };

inline constexpr std::int64_t kBruteForceBudget = 4096;

/// Literal evaluation over all (n, k) of (1/k) sum_{j=n-k}^{n-1} a_j ~ threshold.
TimeSet brute_force_times(const std::vector<double>& a, double threshold, Sense sense);

/// Largest n with (1/k) sum_{j<k} a_j ~ threshold for all k <= n.
std::int64_t brute_force_prefix(const std::vector<double>& a, double threshold, Sense sense);

struct PlissCalibration {
    double rho = 1.0;
    int trials = 0;
    int iterations = 0;
    double worst_ratio = 0.0; // min selections / N at the returned rho
};

/// Smallest small-value frequency rho (to `tol`) such that every one of
/// `trials` sequences with frequency > rho yields >= theta * N pliss times.
PlissCalibration calibrate_pliss_rho(double big_l, double eta, double zeta, double theta, std::int64_t n,
                                     int trials, std::uint64_t seed, double tol = 1e-3);

nlohmann::json to_json(const SequenceSpec& spec);
SequenceSpec sequence_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CocycleSpec& spec);
CocycleSpec cocycle_spec_from_json(const nlohmann::json& j);

} // namespace nuhyp
