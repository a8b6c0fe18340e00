#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "nuhyp/report.hpp"

namespace {

// exit codes
constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kRuntime = 3;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nuhyp: non-uniform hyperbolicity experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    int horizon = 0;
    std::int64_t samples = 0;

    const std::map<std::string, std::string> commands = {
        {"analyze-times", "times"},  {"blocks", "blocks"}, {"grow", "grow"},  {"nested", "nested"},
        {"measure-sweep", "measure-sweep"}, {"synth", "synth"}, {"run", ""},
    };
    std::map<CLI::App*, std::string> analysis_of;
    std::vector<CLI::Option*> seed_opts, horizon_opts, samples_opts, out_opts;
    for (const auto& [name, analysis] : commands) {
        auto* sub = app.add_subcommand(name, name == "run" ? "run the analysis named in the config"
                                                            : "run the " + analysis + " analysis");
        sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        out_opts.push_back(sub->add_option("--out", out, "output directory"));
        seed_opts.push_back(sub->add_option("--seed", seed, "master seed"));
        horizon_opts.push_back(sub->add_option("--horizon", horizon, "horizon N")->check(CLI::PositiveNumber));
        samples_opts.push_back(sub->add_option("--samples", samples, "Monte Carlo samples S")->check(CLI::PositiveNumber));
        analysis_of[sub] = analysis;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    auto given = [](const std::vector<CLI::Option*>& opts) {
        return std::any_of(opts.begin(), opts.end(), [](const CLI::Option* o) { return o->count() > 0; });
    };
    nuhyp::ConfigOverrides ov;
    CLI::App* sub = app.get_subcommands().front();
    if (sub->get_name() != "run") ov.analysis = analysis_of[sub];
    if (given(out_opts)) ov.out = out;
    if (given(seed_opts)) ov.seed = seed;
    if (given(horizon_opts)) ov.horizon = horizon;
    if (given(samples_opts)) ov.samples = samples;

    try {
        nuhyp::ExperimentConfig config = nuhyp::load_config(config_path, ov);
        nuhyp::RunReport report = nuhyp::run_experiment(config);
        if (!report.error.empty()) std::cerr << report.error << "\n";
        for (const auto& e : report.expectations)
            if (!e.passed) std::cerr << "expectation failed: " << e.expectation.metric << " " << e.expectation.op << " "
                                     << nuhyp::format_double(e.expectation.value) << "\n";
        std::cout << (config.out / (config.analysis.empty() ? "manifest.json" : "summary.txt")).string() << "\n";
        return report.exit_code;
    } catch (const nuhyp::Error& e) {
        std::cerr << e.what() << "\n";
        return e.code() == nuhyp::Errc::ConfigError ? kConfig : kRuntime;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kRuntime;
    }
    return kOk;
}
