#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuhyp/grower.hpp"
#include "nuhyp/synthlab.hpp"

namespace nuhyp {

/// Names accepted in the "analysis" field; "" selects nothing.
inline const std::vector<std::string> kAnalyses = {"", "times", "blocks", "grow", "nested", "measure-sweep", "synth"};

struct SystemConfig {
    std::string name;                                  // cat2 | diag3 | skew-nonuniform | cocycle
    nlohmann::json params = nlohmann::json::object();
    bool inverse = false;
};

struct Expectation {
    std::string metric;
    std::string op; // one of < <= > >= == !=
    double value = 0.0;
};

struct SynthConfig {
    SequenceSpec sequence;
    double zeta = 0.0;      // pliss threshold, eta < zeta < L
    double theta = 0.5;
    int trials = 0;         // > 0 runs the rho calibration
};

struct ExperimentConfig {
    std::string analysis;
    SystemConfig system;
    std::optional<std::vector<double>> x0;
    SplittingDims dims{1, 1, 0};
    int settle = 60;
    int horizon = 1000;   // N
    int backward = 60;    // B
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    double log_lambda1 = 0.0;
    double log_lambda2 = 0.0;
    NestedThresholds nested;
    double theta = 0.5;
    std::vector<int> ells{1};
    GrowerParams grower;
    bool calibrate = false;
    int verify_depth = 30;
    std::int64_t samples = 100;
    std::uint64_t seed = 1;
    std::optional<SynthConfig> synth;
    std::vector<Expectation> expectations;
    std::filesystem::path out = "out";
    nlohmann::json raw = nlohmann::json::object(); // echo with overrides applied
};

struct ConfigOverrides {
    std::optional<std::string> analysis;
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
    std::optional<int> horizon;
    std::optional<std::int64_t> samples;
};

/// Validates against the schema and the ordering constraints of the selected
/// analysis. Throws ConfigError whose message starts with a JSON pointer.
ExperimentConfig parse_config(const nlohmann::json& j, const ConfigOverrides& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

struct FrequencyEstimate {
    std::string quantity;
    int ell = 1;
    double estimate = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::int64_t successes = 0;
    std::int64_t samples = 0;
    std::int64_t horizon = 0;
};

/// Wilson score interval at the given z (95% by default).
std::pair<double, double> wilson_interval(std::int64_t successes, std::int64_t n, double z = 1.959963984540054);

/// Per ell: fractions of S sampled orbits in Lambda_ell(gamma1, gamma2), in
/// H_ell(gamma2) and in the theta high-density block, at horizon N blocks.
std::vector<FrequencyEstimate> estimate_block_measure(const ExperimentConfig& config);

/// Smallest ell whose Lambda estimate reaches theta, if any.
std::optional<int> empirical_ell0(const std::vector<FrequencyEstimate>& estimates, double theta);

nlohmann::json to_json(const FrequencyEstimate& e);

struct ExpectationResult {
    Expectation expectation;
    std::optional<double> observed;
    bool passed = false;
};

struct RunReport {
    int exit_code = 0;
    nlohmann::json metrics = nlohmann::json::object();
    std::vector<ExpectationResult> expectations;
    std::vector<std::string> files;
    std::string error;
};

/// Runs the selected analysis and writes the bundle into config.out.
/// Exit code: 0 all expectations pass, 1 some fail, 3 analysis error.
RunReport run_experiment(const ExperimentConfig& config);

enum class ManifoldFormat { Csv, Json };

/// CSV columns grid_index_*, position_*, tangent_frame_*; JSON is the certificate.
void emit_manifold(const LocalManifold& m, ManifoldFormat format, const std::filesystem::path& path);

/// Shortest round-trip decimal, '.' separator, independent of locale.
std::string format_double(double v);

} // namespace nuhyp
