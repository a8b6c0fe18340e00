#include "nuhyp/report.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Core>

#include "nuhyp/rng.hpp"
#include "nuhyp/version.hpp"

namespace nuhyp {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

// ---- config -------------------------------------------------------------

[[noreturn]] void config_error(const std::string& pointer, const std::string& msg) {
    throw Error(Errc::ConfigError, pointer + ": " + msg);
}

const nlohmann::json* member(const nlohmann::json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

void require_object(const nlohmann::json& j, const std::string& ptr, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) config_error(ptr, "expected an object");
    for (const auto& [key, _] : j.items()) {
        bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (!known) config_error(ptr + "/" + key, "unknown key");
    }
}

double number_at(const nlohmann::json& obj, const char* key, const std::string& ptr, double fallback) {
    const auto* v = member(obj, key);
    if (!v) return fallback;
    if (!v->is_number()) config_error(ptr + "/" + key, "expected a number");
    double d = v->get<double>();
    if (!std::isfinite(d)) config_error(ptr + "/" + key, "must be finite");
    return d;
}

std::int64_t integer_at(const nlohmann::json& obj, const char* key, const std::string& ptr, std::int64_t fallback,
                        std::int64_t min_value) {
    const auto* v = member(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer()) config_error(ptr + "/" + key, "expected an integer");
    auto i = v->get<std::int64_t>();
    if (i < min_value) config_error(ptr + "/" + key, "must be >= " + std::to_string(min_value));
    return i;
}

int system_dim(const SystemConfig& s, const std::string& ptr) {
    if (s.name == "cat2") return 2;
    if (s.name == "diag3") return 3;
    if (s.name == "skew-nonuniform") return 2;
    if (s.name == "cocycle") {
        const auto* dims = member(s.params, "block_dims");
        if (!dims || !dims->is_array()) config_error(ptr + "/params/block_dims", "required for a cocycle");
        int total = 0;
        for (const auto& d : *dims) {
            if (!d.is_number_integer() || d.get<int>() < 1 || d.get<int>() > 3)
                config_error(ptr + "/params/block_dims", "entries must be integers in [1, 3]");
            total += d.get<int>();
        }
        return total;
    }
    config_error(ptr + "/name", "unknown system '" + s.name + "'");
}

void parse_system(const nlohmann::json& j, ExperimentConfig& c) {
    const std::string ptr = "/system";
    require_object(j, ptr, {"name", "params", "inverse"});
    const auto* name = member(j, "name");
    if (!name || !name->is_string()) config_error(ptr + "/name", "expected a string");
    c.system.name = name->get<std::string>();
    if (const auto* p = member(j, "params")) {
        if (!p->is_object()) config_error(ptr + "/params", "expected an object");
        c.system.params = *p;
    }
    if (const auto* inv = member(j, "inverse")) {
        if (!inv->is_boolean()) config_error(ptr + "/inverse", "expected a boolean");
        c.system.inverse = inv->get<bool>();
    }
    if (c.system.name == "skew-nonuniform") {
        require_object(c.system.params, ptr + "/params", {"seed", "window", "coupling", "start"});
        number_at(c.system.params, "coupling", ptr + "/params", 0.0);
        integer_at(c.system.params, "seed", ptr + "/params", 1, 0);
        integer_at(c.system.params, "window", ptr + "/params", 1, 1);
        integer_at(c.system.params, "start", ptr + "/params", 0, 0);
    } else if (c.system.name == "cocycle") {
        try {
            cocycle_spec_from_json(c.system.params);
        } catch (const Error& e) {
            config_error(ptr + "/params", e.what());
        }
    } else if (!c.system.params.empty()) {
        config_error(ptr + "/params", "'" + c.system.name + "' takes no parameters");
    }
}

void parse_thresholds(const nlohmann::json& j, ExperimentConfig& c) {
    const std::string ptr = "/thresholds";
    require_object(j, ptr, {"gamma1", "gamma2", "log_lambda1", "log_lambda2", "theta", "ell", "inner", "outer"});
    c.gamma1 = number_at(j, "gamma1", ptr, c.gamma1);
    c.gamma2 = number_at(j, "gamma2", ptr, c.gamma2);
    c.log_lambda1 = number_at(j, "log_lambda1", ptr, c.log_lambda1);
    c.log_lambda2 = number_at(j, "log_lambda2", ptr, c.log_lambda2);
    c.theta = number_at(j, "theta", ptr, c.theta);
    if (const auto* ell = member(j, "ell")) {
        if (!ell->is_array() || ell->empty()) config_error(ptr + "/ell", "expected a non-empty array");
        c.ells.clear();
        for (std::size_t i = 0; i < ell->size(); ++i) {
            const auto& v = (*ell)[i];
            std::string p = ptr + "/ell/" + std::to_string(i);
            if (!v.is_number_integer() || v.get<std::int64_t>() < 1) config_error(p, "expected an integer >= 1");
            if (!c.ells.empty() && v.get<int>() <= c.ells.back()) config_error(p, "ell values must increase");
            c.ells.push_back(v.get<int>());
        }
    }
    for (const char* side : {"inner", "outer"}) {
        const auto* s = member(j, side);
        if (!s) continue;
        std::string p = ptr + "/" + side;
        require_object(*s, p, {"log_lambda1", "log_lambda2"});
        bool inner = std::string(side) == "inner";
        double& l1 = inner ? c.nested.log_lambda1_inner : c.nested.log_lambda1_outer;
        double& l2 = inner ? c.nested.log_lambda2_inner : c.nested.log_lambda2_outer;
        l1 = number_at(*s, "log_lambda1", p, l1);
        l2 = number_at(*s, "log_lambda2", p, l2);
    }
}

void parse_grower(const nlohmann::json& j, ExperimentConfig& c) {
    const std::string ptr = "/grower";
    require_object(j, ptr, {"sigma1", "sigma2", "a", "r", "h", "chi", "T_cap", "N_max", "tol_c1", "min_depth",
                            "history_depth", "calibrate", "verify_depth"});
    nlohmann::json params = j;
    params.erase("calibrate");
    params.erase("verify_depth");
    for (const auto& [key, v] : params.items())
        if (!v.is_number()) config_error(ptr + "/" + key, "expected a number");
    for (const char* key : {"N_max", "min_depth", "history_depth"})
        if (const auto* v = member(params, key); v && !v->is_number_integer())
            config_error(ptr + "/" + key, "expected an integer");
    c.grower = grower_params_from_json(params);
    if (const auto* cal = member(j, "calibrate")) {
        if (!cal->is_boolean()) config_error(ptr + "/calibrate", "expected a boolean");
        c.calibrate = cal->get<bool>();
    }
    c.verify_depth = static_cast<int>(integer_at(j, "verify_depth", ptr, c.verify_depth, 1));
}

void parse_synth(const nlohmann::json& j, ExperimentConfig& c) {
    const std::string ptr = "/synth";
    require_object(j, ptr, {"sequence", "zeta", "theta", "trials"});
    SynthConfig s;
    const auto* seq = member(j, "sequence");
    if (!seq) config_error(ptr + "/sequence", "required");
    require_object(*seq, ptr + "/sequence",
                   {"length", "bound", "small_value", "small_gap", "small_fraction", "big_value", "seed"});
    try {
        s.sequence = sequence_spec_from_json(*seq);
    } catch (const Error& e) {
        config_error(ptr + "/sequence", e.what());
    }
    s.zeta = number_at(j, "zeta", ptr, 0.5 * (s.sequence.small_value + s.sequence.bound));
    s.theta = number_at(j, "theta", ptr, s.theta);
    s.trials = static_cast<int>(integer_at(j, "trials", ptr, 0, 0));
    c.synth = s;
}

void parse_expectations(const nlohmann::json& j, ExperimentConfig& c) {
    if (!j.is_array()) config_error("/expectations", "expected an array");
    static const std::set<std::string> ops = {"<", "<=", ">", ">=", "==", "!="};
    for (std::size_t i = 0; i < j.size(); ++i) {
        std::string ptr = "/expectations/" + std::to_string(i);
        require_object(j[i], ptr, {"metric", "op", "value"});
        Expectation e;
        const auto* m = member(j[i], "metric");
        const auto* op = member(j[i], "op");
        const auto* v = member(j[i], "value");
        if (!m || !m->is_string()) config_error(ptr + "/metric", "expected a string");
        if (!op || !op->is_string() || !ops.count(op->get<std::string>()))
            config_error(ptr + "/op", "expected one of < <= > >= == !=");
        if (!v || !(v->is_number() || v->is_boolean())) config_error(ptr + "/value", "expected a number or boolean");
        e.metric = m->get<std::string>();
        e.op = op->get<std::string>();
        e.value = v->is_boolean() ? (v->get<bool>() ? 1.0 : 0.0) : v->get<double>();
        c.expectations.push_back(e);
    }
}

void check_ordering(const ExperimentConfig& c) {
    const std::string& a = c.analysis;
    if (a == "blocks" || a == "measure-sweep") {
        if (!(c.gamma1 > c.gamma2)) config_error("/thresholds/gamma1", "gamma1 must exceed gamma2");
        if (!(c.gamma1 > 0.0)) config_error("/thresholds/gamma1", "gamma1 must be positive");
        if (!(c.theta > 0.0 && c.theta <= 1.0)) config_error("/thresholds/theta", "theta must lie in (0, 1]");
    }
    if (a == "times" || a == "grow") {
        if (!(c.log_lambda1 > 0.0)) config_error("/thresholds/log_lambda1", "log_lambda1 must be positive");
        if (!(c.log_lambda2 > 0.0)) config_error("/thresholds/log_lambda2", "log_lambda2 must be positive");
    }
    if (a == "grow" || a == "nested") {
        try {
            c.grower.validate();
        } catch (const Error& e) {
            config_error("/grower", e.what());
        }
    }
    if (a == "nested") {
        if (c.dims.g < 1) config_error("/splitting/dims", "nested growth needs three bundles");
        const auto& t = c.nested;
        if (!(t.log_lambda1_inner > 0.0 && t.log_lambda2_inner > 0.0))
            config_error("/thresholds/inner", "inner rates must be positive");
        if (!(t.log_lambda1_outer > 0.0 && t.log_lambda2_outer > 0.0))
            config_error("/thresholds/outer", "outer rates must be positive");
    }
    if (a == "synth") {
        if (!c.synth) config_error("/synth", "required for the synth analysis");
        const auto& s = *c.synth;
        if (!(s.sequence.small_value < s.zeta && s.zeta < s.sequence.bound))
            config_error("/synth/zeta", "need small_value < zeta < bound");
        if (!(s.theta > 0.0 && s.theta <= 1.0)) config_error("/synth/theta", "theta must lie in (0, 1]");
        if (!(s.sequence.big_value > s.sequence.small_value && s.sequence.big_value <= s.sequence.bound))
            config_error("/synth/sequence/big_value", "need small_value < big_value <= bound");
        if (s.sequence.length < 1) config_error("/synth/sequence/length", "must be >= 1");
        if (!(s.sequence.small_fraction >= 0.0 && s.sequence.small_fraction <= 1.0))
            config_error("/synth/sequence/small_fraction", "must lie in [0, 1]");
    }
}

} // namespace

ExperimentConfig parse_config(const nlohmann::json& input, const ConfigOverrides& overrides) {
    nlohmann::json j = input;
    require_object(j, "", {"description", "analysis", "system", "x0", "splitting", "orbit", "thresholds", "grower",
                           "samples", "seed", "out", "synth", "expectations"});
    if (overrides.analysis) j["analysis"] = *overrides.analysis;
    if (overrides.out) j["out"] = overrides.out->string();
    if (overrides.seed) j["seed"] = *overrides.seed;
    if (overrides.horizon) j["orbit"]["N"] = *overrides.horizon;
    if (overrides.samples) j["samples"] = *overrides.samples;

    ExperimentConfig c;
    if (const auto* d = member(j, "description"); d && !d->is_string()) config_error("/description", "expected a string");
    if (const auto* a = member(j, "analysis")) {
        if (!a->is_string()) config_error("/analysis", "expected a string");
        c.analysis = a->get<std::string>();
        if (std::find(kAnalyses.begin(), kAnalyses.end(), c.analysis) == kAnalyses.end())
            config_error("/analysis", "unknown analysis '" + c.analysis + "'");
    }
    bool needs_system = !c.analysis.empty() && c.analysis != "synth";
    if (const auto* s = member(j, "system"))
        parse_system(*s, c);
    else if (needs_system)
        config_error("/system", "required for analysis '" + c.analysis + "'");

    if (const auto* s = member(j, "splitting")) {
        require_object(*s, "/splitting", {"dims", "settle"});
        if (const auto* d = member(*s, "dims")) {
            if (!d->is_array() || d->size() < 2 || d->size() > 3) config_error("/splitting/dims", "expected 2 or 3 integers");
            std::vector<int> v;
            for (const auto& x : *d) {
                if (!x.is_number_integer() || x.get<int>() < 1) config_error("/splitting/dims", "entries must be >= 1");
                v.push_back(x.get<int>());
            }
            c.dims = {v[0], v[1], v.size() == 3 ? v[2] : 0};
        }
        c.settle = static_cast<int>(integer_at(*s, "settle", "/splitting", c.settle, 0));
    }
    if (const auto* o = member(j, "orbit")) {
        require_object(*o, "/orbit", {"N", "B"});
        c.horizon = static_cast<int>(integer_at(*o, "N", "/orbit", c.horizon, 1));
        c.backward = static_cast<int>(integer_at(*o, "B", "/orbit", c.backward, 0));
    }
    if (const auto* t = member(j, "thresholds")) parse_thresholds(*t, c);
    if (const auto* g = member(j, "grower")) parse_grower(*g, c);
    c.samples = integer_at(j, "samples", "", c.samples, 1);
    if (const auto* s = member(j, "seed")) {
        if (!s->is_number_unsigned()) config_error("/seed", "expected a non-negative integer");
        c.seed = s->get<std::uint64_t>();
    }
    if (const auto* o = member(j, "out")) {
        if (!o->is_string() || o->get<std::string>().empty()) config_error("/out", "expected a non-empty path");
        c.out = o->get<std::string>();
    }
    if (const auto* s = member(j, "synth")) parse_synth(*s, c);
    if (const auto* e = member(j, "expectations")) parse_expectations(*e, c);

    if (!c.system.name.empty()) {
        int n = system_dim(c.system, "/system");
        if (c.dims.total() != n)
            config_error("/splitting/dims", "dimensions sum to " + std::to_string(c.dims.total()) + ", system has " +
                                                std::to_string(n));
        if (const auto* x = member(j, "x0")) {
            if (!x->is_array() || static_cast<int>(x->size()) != n)
                config_error("/x0", "expected " + std::to_string(n) + " numbers");
            std::vector<double> v;
            for (const auto& e : *x) {
                if (!e.is_number()) config_error("/x0", "expected numbers");
                v.push_back(e.get<double>());
            }
            c.x0 = v;
        }
    }
    check_ordering(c);
    c.raw = j;
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::ConfigError, path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ConfigError, path.string() + ": " + e.what());
    }
    return parse_config(j, overrides);
}

namespace {

// ---- systems and orbits ---------------------------------------------------

struct Built {
    SmoothSystem system;
    Point x0;
};

// `sampled` draws x0 from the base invariant measure with `sample_seed`.
Built build_system(const ExperimentConfig& c, bool sampled, std::uint64_t sample_seed, int forward, int backward) {
    const auto& s = c.system;
    nlohmann::json params = s.params;
    bool skew = s.name == "skew-nonuniform" || s.name == "cocycle";
    if (skew) {
        if (sampled) params["seed"] = sample_seed;
        if (!params.contains("start")) params["start"] = std::max(backward, 1);
        if (!params.contains("window")) params["window"] = params["start"].get<std::int64_t>() + forward + 1;
    }
    SmoothSystem sys = s.name == "cocycle" ? gen_cocycle(cocycle_spec_from_json(params)) : make_builtin(s.name, params);
    Point x0 = sys.default_point();
    if (sampled && s.name == "cat2") {
        CounterRng rng(sample_seed);
        Eigen::Vector2d u(rng.uniform(), rng.uniform());
        x0 = Point(u, sys.space());
    } else if (c.x0 && !sampled) {
        x0 = Point(Eigen::Map<const Eigen::VectorXd>(c.x0->data(), static_cast<Eigen::Index>(c.x0->size())),
                   sys.space(), x0.base);
    }
    if (s.inverse) sys = inverse(sys);
    return {std::move(sys), x0};
}

StepLogSequence difference(const StepLogSequence& e, const StepLogSequence& f) {
    StepLogSequence r;
    r.kind = LogKind::LogRatio;
    r.ell = e.ell;
    r.values.resize(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) r.values[i] = e.values[i] - f.values[i];
    return r;
}

struct SampleOutcome {
    std::vector<char> lambda, h, high_density;
};

SampleOutcome run_sample(const ExperimentConfig& c, std::uint64_t sample_seed) {
    const int n = c.horizon;
    const int steps = n * c.ells.back();
    const int back = std::max(c.backward, c.settle);
    Built b = build_system(c, true, sample_seed, steps + c.settle, back);
    OrbitSegment orbit = make_orbit(b.system, b.x0, steps + c.settle, back);
    SplittingField split = estimate_splitting(b.system, orbit, c.dims, c.settle);
    const bool scalar = c.dims.e == 1 && c.dims.f == 1;
    StepLogSequence e1, f1;
    if (scalar) {
        e1 = step_logs(orbit, split, LogKind::LogMiniE, 1, steps);
        f1 = step_logs(orbit, split, LogKind::LogNormF, 1, steps);
    }
    SampleOutcome out;
    for (int ell : c.ells) {
        StepLogSequence e = scalar ? block_average(e1, ell, n) : step_logs(orbit, split, LogKind::LogMiniE, ell, n);
        StepLogSequence f = scalar ? block_average(f1, ell, n) : step_logs(orbit, split, LogKind::LogNormF, ell, n);
        out.lambda.push_back(block_Lambda(e, f, c.gamma1, c.gamma2).is_member_truncated);
        out.h.push_back(block_H(f, c.gamma2).is_member_truncated);
        out.high_density.push_back(high_density_block(e, difference(e, f), c.gamma1, c.gamma2, c.theta, ell).passes);
    }
    return out;
}

std::uint64_t sample_seed(std::uint64_t seed, std::int64_t s) {
    return CounterRng(seed).split(static_cast<std::uint64_t>(s)).next_u64();
}

} // namespace

std::pair<double, double> wilson_interval(std::int64_t successes, std::int64_t n, double z) {
    if (n < 1 || successes < 0 || successes > n) throw Error(Errc::InvalidArgument, "need 0 <= successes <= n, n >= 1");
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(successes) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double centre = (p + z2 / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    return {std::clamp(std::min(centre - half, p), 0.0, 1.0), std::clamp(std::max(centre + half, p), 0.0, 1.0)};
}

std::vector<FrequencyEstimate> estimate_block_measure(const ExperimentConfig& c) {
    if (!(c.gamma1 > c.gamma2)) throw Error(Errc::ConfigError, "/thresholds/gamma1: gamma1 must exceed gamma2");
    if (c.ells.empty()) throw Error(Errc::ConfigError, "/thresholds/ell: empty");
    const auto samples = static_cast<std::size_t>(c.samples);
    std::vector<SampleOutcome> outcomes(samples);
    std::vector<std::exception_ptr> errors(samples);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t s; (s = next.fetch_add(1)) < samples;) {
            try {
                outcomes[s] = run_sample(c, sample_seed(c.seed, static_cast<std::int64_t>(s)));
            } catch (...) {
                errors[s] = std::current_exception();
            }
        }
    };
    unsigned threads = std::clamp<unsigned>(std::thread::hardware_concurrency(), 1u, 64u);
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<FrequencyEstimate> out;
    auto add = [&](const char* label, auto pick) {
        for (std::size_t i = 0; i < c.ells.size(); ++i) {
            FrequencyEstimate fe;
            fe.quantity = label;
            fe.ell = c.ells[i];
            for (const auto& o : outcomes) fe.successes += pick(o)[i] ? 1 : 0;
            fe.samples = c.samples;
            fe.horizon = c.horizon;
            fe.estimate = static_cast<double>(fe.successes) / static_cast<double>(fe.samples);
            std::tie(fe.lo, fe.hi) = wilson_interval(fe.successes, fe.samples);
            out.push_back(fe);
        }
    };
    add("lambda_block", [](const SampleOutcome& o) -> const std::vector<char>& { return o.lambda; });
    add("h_block", [](const SampleOutcome& o) -> const std::vector<char>& { return o.h; });
    add("high_density_block", [](const SampleOutcome& o) -> const std::vector<char>& { return o.high_density; });
    return out;
}

std::optional<int> empirical_ell0(const std::vector<FrequencyEstimate>& estimates, double theta) {
    for (const auto& e : estimates)
        if (e.quantity == "lambda_block" && e.estimate >= theta) return e.ell;
    return std::nullopt;
}

nlohmann::json to_json(const FrequencyEstimate& e) {
    return {{"quantity", e.quantity}, {"ell", e.ell},         {"estimate", e.estimate}, {"lo", e.lo},
            {"hi", e.hi},             {"successes", e.successes}, {"samples", e.samples}, {"horizon", e.horizon}};
}

namespace {

// ---- artifacts ------------------------------------------------------------

class Csv {
public:
    explicit Csv(std::vector<std::string> header) : cols_(header.size()) { row_strings(header); }

    void row(const std::vector<double>& values) {
        std::vector<std::string> cells;
        cells.reserve(values.size());
        for (double v : values) cells.push_back(format_double(v));
        row_strings(cells);
    }

    void row_strings(const std::vector<std::string>& cells) {
        if (cells.size() != cols_) throw Error(Errc::LengthMismatch, "csv row has the wrong width");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) text_ += ',';
            text_ += cells[i];
        }
        text_ += '\n';
    }

    const std::string& text() const { return text_; }

private:
    std::size_t cols_;
    std::string text_;
};

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
    out << content;
    if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

class Writer {
public:
    explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw Error(Errc::IoError, "cannot create " + dir_.string() + ": " + ec.message());
    }

    void text(const std::string& name, const std::string& content) {
        write_file(dir_ / name, content);
        files_.push_back(name);
    }
    void json(const std::string& name, const nlohmann::json& j) { text(name, j.dump(2) + "\n"); }
    void csv(const std::string& name, const Csv& c) { text(name, c.text()); }

    const std::filesystem::path& dir() const { return dir_; }
    const std::vector<std::string>& files() const { return files_; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> files_;
};

std::string manifold_csv(const LocalManifold& m) {
    const auto& mesh = m.mesh;
    const int k = mesh.k();
    const int d = mesh.dim();
    std::vector<std::string> header;
    for (int i = 0; i < k; ++i) header.push_back("grid_index_" + std::to_string(i));
    for (int i = 0; i < d; ++i) header.push_back("position_" + std::to_string(i));
    for (int c = 0; c < k; ++c)
        for (int i = 0; i < d; ++i) header.push_back("tangent_frame_" + std::to_string(c) + "_" + std::to_string(i));
    Csv csv(header);
    for (const auto& node : mesh.nodes) {
        std::vector<std::string> cells;
        for (int g : node.grid) cells.push_back(std::to_string(g));
        Point p = mesh.position(node);
        for (int i = 0; i < d; ++i) cells.push_back(format_double(p.coords[i]));
        Eigen::MatrixXd t = mesh.tangent(node).frame();
        for (int c = 0; c < k; ++c)
            for (int i = 0; i < d; ++i) cells.push_back(format_double(t(i, c)));
        csv.row_strings(cells);
    }
    return csv.text();
}

// ---- analyses -------------------------------------------------------------

struct Prepared {
    Built built;
    OrbitSegment orbit;
    SplittingField split;
};

Prepared prepare(const ExperimentConfig& c, int forward) {
    const int back = std::max(c.backward, c.settle);
    Built b = build_system(c, false, 0, forward + c.settle, back);
    OrbitSegment orbit = make_orbit(b.system, b.x0, forward + c.settle, back);
    SplittingField split = estimate_splitting(b.system, orbit, c.dims, c.settle);
    return {std::move(b), std::move(orbit), std::move(split)};
}

nlohmann::json lyapunov_json(const LyapunovEstimate& l) {
    nlohmann::json j = {{"chi_E_minus", l.chi_e_minus},
                        {"chi_E_plus", l.chi_e_plus},
                        {"chi_F_minus", l.chi_f_minus},
                        {"chi_F_plus", l.chi_f_plus}};
    if (l.chi_g_minus) j["chi_G_minus"] = *l.chi_g_minus;
    if (l.chi_g_plus) j["chi_G_plus"] = *l.chi_g_plus;
    return j;
}

void analyze_times(const ExperimentConfig& c, Writer& w, nlohmann::json& metrics) {
    const int n = c.horizon;
    Prepared p = prepare(c, n);
    StepLogSequence e = step_logs(p.orbit, p.split, LogKind::LogMiniE, 1, n);
    StepLogSequence r = step_logs(p.orbit, p.split, LogKind::LogRatio, 1, n);
    TimeSet hyp = hyperbolic_times(e, c.log_lambda1);
    TimeSet hd = hd_times(e, r, c.log_lambda1, c.log_lambda2);
    DensityStats dens = density(hd);
    auto prefix = averaged_domination_prefix(r, c.log_lambda2);
    LyapunovEstimate lyap = lyapunov_estimates(p.orbit, p.split, n);

    Csv logs({"n", "log_mini_E", "log_ratio", "hyperbolic", "hd", "hd_prefix_frequency"});
    for (int i = 0; i < n; ++i)
        logs.row({static_cast<double>(i + 1), e.values[i], r.values[i], hyp.contains(i + 1) ? 1.0 : 0.0,
                  hd.contains(i + 1) ? 1.0 : 0.0, dens.prefix_profile[i]});
    w.csv("times.csv", logs);
    w.json("times.json", {{"hyperbolic_times", to_json(hyp)},
                          {"hd_times", to_json(hd)},
                          {"density", to_json(dens)},
                          {"domination_prefix", prefix},
                          {"lyapunov", lyapunov_json(lyap)},
                          {"invariance_residual", p.split.invariance_residual()},
                          {"convergence_gap", p.split.convergence_gap()}});

    metrics["horizon"] = n;
    metrics["hyperbolic_count"] = hyp.size();
    metrics["hd_count"] = hd.size();
    metrics["hd_density_lower"] = dens.d_lower_est;
    metrics["hd_density_upper"] = dens.d_upper_est;
    metrics["domination_prefix"] = prefix;
    metrics["invariance_residual"] = p.split.invariance_residual();
    const nlohmann::json lj = lyapunov_json(lyap);
    for (const auto& [k, v] : lj.items()) metrics[k] = v;
}

void analyze_blocks(const ExperimentConfig& c, Writer& w, nlohmann::json& metrics) {
    const int n = c.horizon;
    Prepared p = prepare(c, n * c.ells.back());
    Csv csv({"ell", "lambda_member_up_to", "lambda_member", "h_member_up_to", "h_member", "t_ell_density_lower",
             "hd_density_lower", "high_density", "domination_ok"});
    nlohmann::json rows = nlohmann::json::array();
    bool all_domination = true;
    for (int ell : c.ells) {
        StepLogSequence e = step_logs(p.orbit, p.split, LogKind::LogMiniE, ell, n);
        StepLogSequence f = step_logs(p.orbit, p.split, LogKind::LogNormF, ell, n);
        BlockVerdict lam = block_Lambda(e, f, c.gamma1, c.gamma2);
        BlockVerdict h = block_H(f, c.gamma2);
        DensityStats t_ell = density(t_ell_times(f, c.gamma2));
        HighDensityResult hdb = high_density_block(e, difference(e, f), c.gamma1, c.gamma2, c.theta, ell);
        bool dom = block_to_domination_check(e, f, c.gamma1, c.gamma2, n);
        all_domination = all_domination && dom;
        csv.row({static_cast<double>(ell), static_cast<double>(lam.member_up_to), lam.is_member_truncated ? 1.0 : 0.0,
                 static_cast<double>(h.member_up_to), h.is_member_truncated ? 1.0 : 0.0, t_ell.d_lower_est,
                 hdb.stats.d_lower_est, hdb.passes ? 1.0 : 0.0, dom ? 1.0 : 0.0});
        rows.push_back({{"ell", ell},
                        {"lambda", to_json(lam)},
                        {"h", to_json(h)},
                        {"t_ell_density", to_json(t_ell)},
                        {"high_density", {{"passes", hdb.passes}, {"density", to_json(hdb.stats)}}},
                        {"domination_ok", dom}});
        std::string suffix = "_ell" + std::to_string(ell);
        metrics["lambda_member" + suffix] = lam.is_member_truncated;
        metrics["h_member" + suffix] = h.is_member_truncated;
        metrics["high_density" + suffix] = hdb.passes;
        metrics["t_ell_density_lower" + suffix] = t_ell.d_lower_est;
    }
    w.csv("blocks.csv", csv);
    w.json("blocks.json", {{"horizon", n},
                           {"gamma1", c.gamma1},
                           {"gamma2", c.gamma2},
                           {"theta", c.theta},
                           {"blocks", rows}});
    metrics["horizon"] = n;
    metrics["domination_check_all"] = all_domination;
}

int count_f_violations(const LocalManifold& m) {
    int v = 0;
    for (const auto& f : m.f_checks) v += (!f.cut_ok) + (!f.contraction.passed) + (!f.alignment.passed);
    return v;
}

void manifold_metrics(const LocalManifold& m, const std::string& prefix, nlohmann::json& metrics) {
    metrics[prefix + "converged"] = m.status == GrowStatus::Converged;
    metrics[prefix + "T"] = m.t;
    metrics[prefix + "steps"] = m.steps;
    metrics[prefix + "nodes"] = m.mesh.size();
    metrics[prefix + "f_violations"] = count_f_violations(m);
    metrics[prefix + "hyperbolic_times_used"] = m.hyperbolic_times_used.size();
    if (!m.convergence_log.empty()) {
        metrics[prefix + "c0_last"] = m.convergence_log.back().c0;
        metrics[prefix + "c1_last"] = m.convergence_log.back().c1;
    }
}

void analyze_grow(const ExperimentConfig& c, Writer& w, nlohmann::json& metrics) {
    const int len = std::max(c.horizon, c.grower.n_max);
    Prepared p = prepare(c, len);
    StepLogSequence e = step_logs(p.orbit, p.split, LogKind::LogMiniE, 1, len);
    StepLogSequence r = step_logs(p.orbit, p.split, LogKind::LogRatio, 1, len);
    TimeSet hd = hd_times(e, r, c.log_lambda1, c.log_lambda2);
    GrowerParams params = c.grower;
    nlohmann::json calibration = nullptr;
    if (c.calibrate) {
        Calibration cal = calibrate_a_r(p.built.system, p.split, p.built.x0, params.sigma1, params.sigma2,
                                        c.log_lambda1, c.log_lambda2, hd);
        params.a = cal.a;
        params.r = cal.r;
        params.h = cal.r / 10.0;
        calibration = {{"a", cal.a}, {"r", cal.r}, {"rounds", cal.rounds}, {"trace", cal.trace}};
    }
    LocalManifold m = grow_unstable(p.built.system, p.split, p.built.x0, params, hd);
    VerifyReport v = verify_local_manifold(p.built.system, m, c.verify_depth);

    w.text("manifold.csv", manifold_csv(m));
    nlohmann::json cert = certificate_json(m);
    cert["verify"] = {{"passed", v.passed}, {"max_ratio", v.max_ratio}, {"depth", v.depth}, {"pairs", v.pairs}};
    cert["params"] = to_json(params);
    cert["calibration"] = calibration;
    w.json("certificate.json", cert);

    manifold_metrics(m, "", metrics);
    metrics["hd_count"] = hd.size();
    metrics["verify_passed"] = v.passed;
    metrics["verify_max_ratio"] = v.max_ratio;
    metrics["verify_depth"] = v.depth;
}

void analyze_nested(const ExperimentConfig& c, Writer& w, nlohmann::json& metrics) {
    const int len = std::max(c.horizon, c.grower.n_max);
    Prepared p = prepare(c, len);
    NestedResult r = grow_nested(p.built.system, p.orbit, p.split, p.built.x0, c.grower, c.nested);
    w.text("outer.csv", manifold_csv(r.outer));
    w.text("inner.csv", manifold_csv(r.inner));
    w.json("nested.json", {{"inclusion_deviation", r.inclusion_deviation},
                           {"shared_hd", to_json(r.shared_hd)},
                           {"outer", certificate_json(r.outer)},
                           {"inner", certificate_json(r.inner)}});
    manifold_metrics(r.outer, "outer_", metrics);
    manifold_metrics(r.inner, "inner_", metrics);
    metrics["inclusion_deviation"] = r.inclusion_deviation;
    metrics["shared_hd_count"] = r.shared_hd.size();
}

void analyze_measure(const ExperimentConfig& c, Writer& w, nlohmann::json& metrics) {
    auto est = estimate_block_measure(c);
    Csv csv({"quantity", "ell", "estimate", "lo", "hi", "samples", "horizon"});
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : est) {
        csv.row_strings({e.quantity, std::to_string(e.ell), format_double(e.estimate), format_double(e.lo),
                         format_double(e.hi), std::to_string(e.samples), std::to_string(e.horizon)});
        arr.push_back(to_json(e));
    }
    auto ell0 = empirical_ell0(est, c.theta);
    w.csv("measure.csv", csv);
    w.json("measure.json", {{"horizon", c.horizon},
                            {"samples", c.samples},
                            {"seed", c.seed},
                            {"estimates", arr},
                            {"empirical_ell0", ell0 ? nlohmann::json(*ell0) : nlohmann::json(nullptr)}});

    auto series = [&](const std::string& q) {
        std::vector<FrequencyEstimate> s;
        for (const auto& e : est)
            if (e.quantity == q) s.push_back(e);
        return s;
    };
    for (const char* q : {"lambda_block", "h_block", "high_density_block"}) {
        auto s = series(q);
        bool monotone = true;
        double lowest = 1.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i > 0 && s[i].hi < s[i - 1].lo) monotone = false;
            lowest = std::min(lowest, s[i].estimate);
        }
        std::string base(q);
        metrics[base + "_estimate_last"] = s.back().estimate;
        metrics[base + "_estimate_min"] = lowest;
        metrics[base + "_nondecreasing_within_ci"] = monotone;
    }
    metrics["empirical_ell0"] = ell0 ? *ell0 : -1;
    metrics["horizon"] = c.horizon;
    metrics["samples"] = c.samples;
}

void analyze_synth(const ExperimentConfig& c, Writer& w, nlohmann::json& metrics) {
    const SynthConfig& s = *c.synth;
    std::vector<double> a = gen_sequence(s.sequence);
    TimeSet sel = pliss_select(a, s.sequence.bound, s.sequence.small_value, s.zeta);
    auto small = std::count_if(a.begin(), a.end(), [&](double v) { return v < s.sequence.small_value; });
    Csv csv({"i", "a", "selected"});
    for (std::size_t i = 0; i < a.size(); ++i)
        csv.row({static_cast<double>(i), a[i], sel.contains(static_cast<std::int64_t>(i + 1)) ? 1.0 : 0.0});
    w.csv("sequence.csv", csv);
    const double n = static_cast<double>(a.size());
    nlohmann::json out = {{"sequence", to_json(s.sequence)},
                          {"zeta", s.zeta},
                          {"pliss_times", to_json(sel)},
                          {"small_fraction_realized", static_cast<double>(small) / n}};
    metrics["pliss_count"] = sel.size();
    metrics["pliss_fraction"] = static_cast<double>(sel.size()) / n;
    metrics["small_fraction_realized"] = static_cast<double>(small) / n;
    if (s.trials > 0) {
        PlissCalibration cal = calibrate_pliss_rho(s.sequence.bound, s.sequence.small_value, s.zeta, s.theta,
                                                   s.sequence.length, s.trials, c.seed);
        out["calibration"] = {{"rho", cal.rho},
                              {"trials", cal.trials},
                              {"iterations", cal.iterations},
                              {"worst_ratio", cal.worst_ratio}};
        metrics["rho"] = cal.rho;
        metrics["rho_worst_ratio"] = cal.worst_ratio;
    }
    w.json("synth.json", out);
}

// ---- expectations and summary -----------------------------------------------

std::optional<double> metric_value(const nlohmann::json& metrics, const std::string& name) {
    auto it = metrics.find(name);
    if (it == metrics.end()) return std::nullopt;
    if (it->is_boolean()) return it->get<bool>() ? 1.0 : 0.0;
    if (it->is_number()) return it->get<double>();
    return std::nullopt;
}

bool compare(double x, const std::string& op, double v) {
    if (op == "<") return x < v;
    if (op == "<=") return x <= v;
    if (op == ">") return x > v;
    if (op == ">=") return x >= v;
    if (op == "==") return x == v;
    return x != v;
}

std::string scalar_text(const nlohmann::json& v) {
    if (v.is_number_float()) return format_double(v.get<double>());
    return v.dump();
}

std::string summary_text(const ExperimentConfig& c, const RunReport& r) {
    std::ostringstream s;
    s << "nuhyp " << kVersion << "\n";
    s << "analysis: " << c.analysis << "\n";
    if (!c.system.name.empty()) s << "system: " << c.system.name << (c.system.inverse ? " (inverse)" : "") << "\n";
    s << "seed: " << c.seed << "\n";
    s << "horizon N = " << c.horizon << " (verdicts are truncated at N; they do not certify all n)\n";
    if (!r.error.empty()) s << "error: " << r.error << "\n";
    s << "metrics:\n";
    for (const auto& [k, v] : r.metrics.items()) s << "  " << k << " = " << scalar_text(v) << "\n";
    s << "expectations:\n";
    if (r.expectations.empty()) s << "  (none declared)\n";
    for (const auto& e : r.expectations) {
        s << "  " << (e.passed ? "PASS " : "FAIL ") << e.expectation.metric << " " << e.expectation.op << " "
          << format_double(e.expectation.value) << "  observed "
          << (e.observed ? format_double(*e.observed) : std::string("missing")) << "\n";
    }
    s << "result: " << (r.exit_code == 0 ? "PASS" : r.exit_code == 1 ? "FAIL" : "ERROR") << "\n";
    return s.str();
}

nlohmann::json manifest_json(const ExperimentConfig& c, const std::vector<std::string>& files) {
    return {{"tool", "nuhyp"},
            {"version", kVersion},
            {"analysis", c.analysis},
            {"seed", c.seed},
            {"horizon", c.horizon},
            {"config", c.raw},
            {"libraries",
             {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
            {"files", files}};
}

} // namespace

void emit_manifold(const LocalManifold& m, ManifoldFormat format, const std::filesystem::path& path) {
    if (m.mesh.nodes.empty()) throw Error(Errc::PreconditionViolated, "manifold has no nodes");
    if (format == ManifoldFormat::Csv)
        write_file(path, manifold_csv(m));
    else
        write_file(path, certificate_json(m).dump(2) + "\n");
}

RunReport run_experiment(const ExperimentConfig& c) {
    RunReport report;
    Writer w(c.out);
    if (c.analysis.empty()) {
        w.json("manifest.json", manifest_json(c, {}));
        report.files = w.files();
        return report;
    }
    try {
        if (c.analysis == "times") analyze_times(c, w, report.metrics);
        else if (c.analysis == "blocks") analyze_blocks(c, w, report.metrics);
        else if (c.analysis == "grow") analyze_grow(c, w, report.metrics);
        else if (c.analysis == "nested") analyze_nested(c, w, report.metrics);
        else if (c.analysis == "measure-sweep") analyze_measure(c, w, report.metrics);
        else if (c.analysis == "synth") analyze_synth(c, w, report.metrics);
    } catch (const Error& e) {
        if (e.code() == Errc::ConfigError) throw;
        report.error = e.what();
        report.exit_code = 3;
    }
    if (report.exit_code == 0) {
        for (const auto& e : c.expectations) {
            ExpectationResult er{e, metric_value(report.metrics, e.metric), false};
            er.passed = er.observed && compare(*er.observed, e.op, e.value);
            if (!er.passed) report.exit_code = 1;
            report.expectations.push_back(er);
        }
    }
    w.json("metrics.json", report.metrics);
    w.text("summary.txt", summary_text(c, report));
    std::vector<std::string> files = w.files();
    w.json("manifest.json", manifest_json(c, files));
    report.files = w.files();
    return report;
}

} // namespace nuhyp
