#include "nuhyp/phase.hpp"

#include <cmath>
#include <numbers>

#include "nuhyp/rng.hpp"

namespace nuhyp {

std::string_view to_string(Errc code) {
    switch (code) {
    case Errc::DimensionMismatch: return "dimension mismatch";
    case Errc::SpaceMismatch: return "space mismatch";
    case Errc::InversionFailure: return "inversion failure";
    case Errc::OutOfWindow: return "out of window";
    case Errc::SingularRestriction: return "singular restriction";
    case Errc::SettleExceedsOrbit: return "settle window exceeds orbit";
    case Errc::SplittingNotConverged: return "splitting not converged";
    case Errc::DegenerateSplitting: return "degenerate splitting";
    case Errc::ZeroVector: return "zero vector";
    case Errc::EmptySequence: return "empty sequence";
    case Errc::LengthMismatch: return "length mismatch";
    case Errc::PreconditionViolated: return "precondition violated";
    case Errc::InvalidArgument: return "invalid argument";
    case Errc::BudgetExceeded: return "budget exceeded";
    case Errc::ConeViolation: return "cone violation";
    case Errc::FoldOver: return "fold-over";
    case Errc::CutFailure: return "cut failure";
    case Errc::NoHyperbolicTimes: return "no hyperbolic times at this rate";
    case Errc::CertificateFailure: return "certificate failure";
    case Errc::CalibrationFailure: return "calibration failure";
    case Errc::OrderingViolated: return "ordering constraint violated";
    case Errc::ConfigError: return "config error";
    case Errc::IoError: return "io error";
    }
    return "unknown";
}

std::string Space::tag() const {
    switch (kind) {
    case SpaceKind::Torus: return "torus-" + std::to_string(dim);
    case SpaceKind::Euclidean: return "euclidean-" + std::to_string(dim);
    case SpaceKind::Fiber: return "fiber-" + std::to_string(dim);
    }
    return "unknown";
}

Space Space::parse(const std::string& tag) {
    auto dash = tag.rfind('-');
    if (dash == std::string::npos) throw Error(Errc::InvalidArgument, "bad space tag '" + tag + "'");
    std::string kind = tag.substr(0, dash);
    int dim = 0;
    try {
        dim = std::stoi(tag.substr(dash + 1));
    } catch (const std::exception&) {
        throw Error(Errc::InvalidArgument, "bad space tag '" + tag + "'");
    }
    if (dim < 1) throw Error(Errc::InvalidArgument, "bad space dimension in '" + tag + "'");
    if (kind == "torus") return {SpaceKind::Torus, dim};
    if (kind == "euclidean") return {SpaceKind::Euclidean, dim};
    if (kind == "fiber") return {SpaceKind::Fiber, dim};
    throw Error(Errc::InvalidArgument, "bad space tag '" + tag + "'");
}

namespace {

double wrap01(double x) {
    double w = x - std::floor(x);
    return w >= 1.0 ? 0.0 : w;
}

double min_image(double d) { return d - std::round(d); }

void check_same_space(const Point& y, const Point& z) {
    if (!(y.space == z.space)) throw Error(Errc::SpaceMismatch, y.space.tag() + " vs " + z.space.tag());
    if (y.dim() != z.dim()) throw Error(Errc::DimensionMismatch, "point dimensions differ");
    if (y.space.kind == SpaceKind::Fiber && y.base != z.base)
        throw Error(Errc::SpaceMismatch, "points lie on different fibers (base " + std::to_string(y.base) + " vs " +
                                             std::to_string(z.base) + ")");
}

} // namespace

Eigen::VectorXd chart_displacement(const Point& from, const Point& to) {
    check_same_space(from, to);
    Eigen::VectorXd d = to.coords - from.coords;
    if (from.space.kind == SpaceKind::Torus)
        for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = min_image(d[i]);
    return d;
}

Point chart_add(const Point& p, const Eigen::VectorXd& v) {
    if (v.size() != p.coords.size()) throw Error(Errc::DimensionMismatch, "displacement dimension");
    Point q = p;
    q.coords += v;
    if (q.space.kind == SpaceKind::Torus)
        for (Eigen::Index i = 0; i < q.coords.size(); ++i) q.coords[i] = wrap01(q.coords[i]);
    return q;
}

double chart_distance(const Space& space, const Point& y, const Point& z) {
    if (!(y.space == space)) throw Error(Errc::SpaceMismatch, y.space.tag() + " vs " + space.tag());
    return chart_displacement(y, z).norm();
}

SmoothSystem::SmoothSystem(std::string name, Space space, nlohmann::json params, Evaluators ev)
    : name_(std::move(name)), space_(space), params_(std::move(params)), ev_(std::move(ev)) {
    if (!ev_.forward || !ev_.backward || !ev_.tangent || !ev_.tangent_backward)
        throw Error(Errc::InvalidArgument, "system '" + name_ + "' is missing an evaluator");
    default_point_ = Point(Eigen::VectorXd::Zero(space_.dim), space_);
}

void SmoothSystem::check_point(const Point& x) const {
    if (x.dim() != space_.dim)
        throw Error(Errc::DimensionMismatch,
                    "point has dimension " + std::to_string(x.dim()) + ", system '" + name_ + "' has " +
                        std::to_string(space_.dim));
    if (!(x.space == space_)) throw Error(Errc::SpaceMismatch, x.space.tag() + " vs " + space_.tag());
}

Point SmoothSystem::forward(const Point& x) const {
    check_point(x);
    return ev_.forward(x);
}

Point SmoothSystem::backward(const Point& x) const {
    check_point(x);
    return ev_.backward(x);
}

Eigen::MatrixXd SmoothSystem::tangent(const Point& x) const {
    check_point(x);
    return ev_.tangent(x);
}

Eigen::MatrixXd SmoothSystem::tangent_backward(const Point& x) const {
    check_point(x);
    return ev_.tangent_backward(x);
}

Eigen::VectorXd SmoothSystem::forward_local(const Point& base, const Eigen::VectorXd& disp) const {
    if (ev_.forward_local) return ev_.forward_local(base, disp);
    return chart_displacement(forward(base), forward(chart_add(base, disp)));
}

Eigen::VectorXd SmoothSystem::backward_local(const Point& base, const Eigen::VectorXd& disp) const {
    if (ev_.backward_local) return ev_.backward_local(base, disp);
    return chart_displacement(backward(base), backward(chart_add(base, disp)));
}

double SmoothSystem::base_theta(std::int64_t index) const {
    if (!ev_.base_theta) throw Error(Errc::InvalidArgument, "system '" + name_ + "' has no base window");
    return ev_.base_theta(index);
}

Point SmoothSystem::default_point() const { return default_point_; }

SmoothSystem make_user_system(std::string name, Space space, SmoothSystem::MapFn forward,
                              SmoothSystem::TangentFn tangent, SmoothSystem::MapFn backward, nlohmann::json params) {
    if (!forward || !tangent) throw Error(Errc::InvalidArgument, "user system needs forward and tangent");
    if (!backward) {
        backward = [forward, tangent](const Point& x) {
            // Newton on f(y) = x, started at y = x.
            Point y = x;
            for (int it = 0; it < kNewtonMaxIter; ++it) {
                Eigen::VectorXd residual = chart_displacement(x, forward(y));
                if (residual.norm() <= kTolInv) return y;
                Eigen::VectorXd delta = tangent(y).partialPivLu().solve(residual);
                if (!delta.allFinite()) break;
                y = chart_add(y, -delta);
            }
            if (chart_displacement(x, forward(y)).norm() <= kTolInv) return y;
            throw Error(Errc::InversionFailure, "Newton inversion did not reach tol_inv in 50 iterations");
        };
    }
    SmoothSystem::Evaluators ev;
    ev.forward = forward;
    ev.backward = backward;
    ev.tangent = tangent;
    ev.tangent_backward = [backward, tangent](const Point& x) -> Eigen::MatrixXd {
        return tangent(backward(x)).inverse();
    };
    return SmoothSystem(std::move(name), space, std::move(params), std::move(ev));
}

SmoothSystem inverse(const SmoothSystem& sys) {
    SmoothSystem::Evaluators ev;
    auto shared = std::make_shared<SmoothSystem>(sys);
    ev.forward = [shared](const Point& x) { return shared->backward(x); };
    ev.backward = [shared](const Point& x) { return shared->forward(x); };
    ev.tangent = [shared](const Point& x) { return shared->tangent_backward(x); };
    ev.tangent_backward = [shared](const Point& x) { return shared->tangent(x); };
    ev.forward_local = [shared](const Point& b, const Eigen::VectorXd& d) { return shared->backward_local(b, d); };
    ev.backward_local = [shared](const Point& b, const Eigen::VectorXd& d) { return shared->forward_local(b, d); };
    if (sys.space().kind == SpaceKind::Fiber)
        ev.base_theta = [shared](std::int64_t i) { return shared->base_theta(i); };
    nlohmann::json params = {{"of", sys.name()}, {"params", sys.params()}};
    SmoothSystem inv(sys.name() + "^-1", sys.space(), std::move(params), std::move(ev));
    inv.set_default_point(sys.default_point());
    return inv;
}

SmoothSystem linear_system(std::string name, Space space, const Eigen::MatrixXd& matrix) {
    if (matrix.rows() != space.dim || matrix.cols() != space.dim)
        throw Error(Errc::DimensionMismatch, "matrix does not match space dimension");
    if (space.kind == SpaceKind::Fiber) throw Error(Errc::InvalidArgument, "linear systems live on tori or R^d");
    Eigen::MatrixXd inv = matrix.inverse();
    if (space.kind == SpaceKind::Torus) {
        // integer entries keep the map well defined mod 1; the inverse must be integral too
        for (Eigen::Index i = 0; i < inv.size(); ++i) inv.data()[i] = std::round(inv.data()[i]);
        if (!(inv * matrix).isIdentity(1e-12))
            throw Error(Errc::InvalidArgument, "torus automorphism must be unimodular");
    }
    SmoothSystem::Evaluators ev;
    ev.forward = [matrix](const Point& x) { return chart_add(Point(Eigen::VectorXd::Zero(x.dim()), x.space), matrix * x.coords); };
    ev.backward = [inv](const Point& x) { return chart_add(Point(Eigen::VectorXd::Zero(x.dim()), x.space), inv * x.coords); };
    ev.tangent = [matrix](const Point&) { return matrix; };
    ev.tangent_backward = [inv](const Point&) { return inv; };
    ev.forward_local = [matrix](const Point&, const Eigen::VectorXd& d) -> Eigen::VectorXd { return matrix * d; };
    ev.backward_local = [inv](const Point&, const Eigen::VectorXd& d) -> Eigen::VectorXd { return inv * d; };
    nlohmann::json params = nlohmann::json::array();
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < matrix.cols(); ++j) row.push_back(matrix(i, j));
        params.push_back(row);
    }
    return SmoothSystem(std::move(name), space, nlohmann::json{{"matrix", params}}, std::move(ev));
}

SmoothSystem cat2() {
    Eigen::Matrix2d a;
    a << 2, 1, 1, 1;
    SmoothSystem sys = linear_system("cat2", {SpaceKind::Torus, 2}, a);
    sys.set_default_point(Point(Eigen::Vector2d(0.1, 0.2), sys.space()));
    return sys;
}

SmoothSystem diag3() {
    Eigen::Matrix3d a = Eigen::Vector3d(4.0, 2.0, 0.125).asDiagonal();
    return linear_system("diag3", {SpaceKind::Euclidean, 3}, a);
}

RateProcess RateProcess::constant(double v) {
    RateProcess r;
    r.kind = Kind::Constant;
    r.value = v;
    return r;
}

RateProcess RateProcess::two_state(double hi, double lo, double p) {
    RateProcess r;
    r.kind = Kind::TwoState;
    r.hi = hi;
    r.lo = lo;
    r.p = p;
    return r;
}

RateProcess RateProcess::profile(double mean, double amp) {
    RateProcess r;
    r.kind = Kind::Profile;
    r.mean = mean;
    r.amp = amp;
    return r;
}

double RateProcess::at(double theta) const {
    switch (kind) {
    case Kind::Constant: return value;
    case Kind::TwoState: return theta < p ? hi : lo;
    case Kind::Profile: return mean + amp * std::cos(2.0 * std::numbers::pi * theta);
    }
    return value;
}

double RateProcess::expected() const {
    switch (kind) {
    case Kind::Constant: return value;
    case Kind::TwoState: return p * hi + (1.0 - p) * lo;
    case Kind::Profile: return mean;
    }
    return value;
}

namespace {

struct SkewData {
    SkewSpec spec;
    std::vector<int> offsets;
    std::vector<double> theta; // theta_j, j in [0, window]
    int dim = 0;

    void check_index(std::int64_t j) const {
        if (j < 0 || j > spec.window)
            throw Error(Errc::OutOfWindow, "base index " + std::to_string(j) + " outside [0, " +
                                               std::to_string(spec.window) + "]");
    }

    // Fiber map at base index j (rates evaluated at theta_j).
    Eigen::VectorXd apply(std::int64_t j, const Eigen::VectorXd& v) const {
        Eigen::VectorXd out(dim);
        double th = theta[static_cast<std::size_t>(j)];
        for (std::size_t b = 0; b < spec.block_dims.size(); ++b) {
            double s = std::exp(spec.rates[b].at(th));
            out.segment(offsets[b], spec.block_dims[b]) = s * v.segment(offsets[b], spec.block_dims[b]);
        }
        if (spec.coupling != 0.0) out[offsets[1]] += spec.coupling * v[0] * v[0];
        return out;
    }

    Eigen::VectorXd unapply(std::int64_t j, const Eigen::VectorXd& w) const {
        Eigen::VectorXd out(dim);
        double th = theta[static_cast<std::size_t>(j)];
        for (std::size_t b = 0; b < spec.block_dims.size(); ++b) {
            double s = std::exp(-spec.rates[b].at(th));
            out.segment(offsets[b], spec.block_dims[b]) = s * w.segment(offsets[b], spec.block_dims[b]);
        }
        if (spec.coupling != 0.0) {
            double u = out[0];
            out[offsets[1]] = std::exp(-spec.rates[1].at(th)) * (w[offsets[1]] - spec.coupling * u * u);
        }
        return out;
    }

    Eigen::MatrixXd jac(std::int64_t j, const Eigen::VectorXd& v) const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
        double th = theta[static_cast<std::size_t>(j)];
        for (std::size_t b = 0; b < spec.block_dims.size(); ++b) {
            double s = std::exp(spec.rates[b].at(th));
            for (int i = 0; i < spec.block_dims[b]; ++i) m(offsets[b] + i, offsets[b] + i) = s;
        }
        if (spec.coupling != 0.0) m(offsets[1], 0) = 2.0 * spec.coupling * v[0];
        return m;
    }
};

} // namespace

nlohmann::json to_json(const RateProcess& r) {
    switch (r.kind) {
    case RateProcess::Kind::Constant: return {{"kind", "constant"}, {"value", r.value}};
    case RateProcess::Kind::TwoState: return {{"kind", "two-state"}, {"hi", r.hi}, {"lo", r.lo}, {"p", r.p}};
    case RateProcess::Kind::Profile: return {{"kind", "profile"}, {"mean", r.mean}, {"amp", r.amp}};
    }
    return {};
}

RateProcess rate_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
        throw Error(Errc::InvalidArgument, "rate process needs a string 'kind'");
    auto num = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_number())
            throw Error(Errc::InvalidArgument, std::string("rate process field '") + key + "' must be a number");
        return j[key].get<double>();
    };
    const std::string kind = j["kind"];
    if (kind == "constant") return RateProcess::constant(num("value"));
    if (kind == "two-state") return RateProcess::two_state(num("hi"), num("lo"), num("p"));
    if (kind == "profile") return RateProcess::profile(num("mean"), num("amp"));
    throw Error(Errc::InvalidArgument, "unknown rate process kind '" + kind + "'");
}

SmoothSystem skew_product(const SkewSpec& spec) {
    if (spec.block_dims.size() < 2 || spec.block_dims.size() > 3)
        throw Error(Errc::InvalidArgument, "skew product needs 2 or 3 fiber blocks");
    if (spec.rates.size() != spec.block_dims.size()) throw Error(Errc::InvalidArgument, "one rate process per block");
    if (spec.window < 1) throw Error(Errc::InvalidArgument, "base window must be positive");
    if (spec.start < 0 || spec.start > spec.window) throw Error(Errc::InvalidArgument, "start outside window");
    auto data = std::make_shared<SkewData>();
    data->spec = spec;
    for (int d : spec.block_dims) {
        if (d < 1 || d > 3) throw Error(Errc::InvalidArgument, "fiber block dims must lie in [1, 3]");
        data->offsets.push_back(data->dim);
        data->dim += d;
    }
    for (const auto& r : spec.rates)
        if (r.kind == RateProcess::Kind::TwoState && !(r.p >= 0.0 && r.p <= 1.0))
            throw Error(Errc::InvalidArgument, "two-state frequency must lie in [0, 1]");

    // Binary digits of the doubling-map orbit; theta_j = 0.b_j b_{j+1} ... (53 digits).
    const std::int64_t n_digits = spec.window + 54;
    std::vector<std::uint8_t> digits(static_cast<std::size_t>(n_digits));
    CounterRng rng(spec.seed);
    for (auto& b : digits) b = static_cast<std::uint8_t>(rng.next_u64() >> 63);
    data->theta.assign(static_cast<std::size_t>(spec.window + 1), 0.0);
    double th = 0.0;
    for (std::int64_t k = 52; k >= 0; --k) th = 0.5 * (digits[static_cast<std::size_t>(spec.window + k)] + th);
    data->theta[static_cast<std::size_t>(spec.window)] = th;
    for (std::int64_t j = spec.window - 1; j >= 0; --j) {
        // drop the digit that fell off the 53-digit horizon, then prepend b_j
        double tail_bit = digits[static_cast<std::size_t>(j + 53)] * 0x1.0p-53;
        double next = data->theta[static_cast<std::size_t>(j + 1)] - tail_bit;
        data->theta[static_cast<std::size_t>(j)] = 0.5 * (digits[static_cast<std::size_t>(j)] + next);
    }

    Space space{SpaceKind::Fiber, data->dim};
    SmoothSystem::Evaluators ev;
    ev.forward = [data](const Point& x) {
        data->check_index(x.base);
        data->check_index(x.base + 1);
        return Point(data->apply(x.base, x.coords), x.space, x.base + 1);
    };
    ev.backward = [data](const Point& x) {
        data->check_index(x.base);
        data->check_index(x.base - 1);
        return Point(data->unapply(x.base - 1, x.coords), x.space, x.base - 1);
    };
    ev.tangent = [data](const Point& x) {
        data->check_index(x.base);
        data->check_index(x.base + 1);
        return data->jac(x.base, x.coords);
    };
    ev.tangent_backward = [data](const Point& x) -> Eigen::MatrixXd {
        data->check_index(x.base - 1);
        Eigen::VectorXd pre = data->unapply(x.base - 1, x.coords);
        return data->jac(x.base - 1, pre).inverse();
    };
    ev.base_theta = [data](std::int64_t j) {
        data->check_index(j);
        return data->theta[static_cast<std::size_t>(j)];
    };

    nlohmann::json rates = nlohmann::json::array();
    for (const auto& r : spec.rates) rates.push_back(to_json(r));
    nlohmann::json params = {{"block_dims", spec.block_dims}, {"rates", rates},     {"coupling", spec.coupling},
                             {"window", spec.window},         {"start", spec.start}, {"seed", spec.seed}};
    SmoothSystem sys("skew", space, std::move(params), std::move(ev));
    sys.set_default_point(Point(Eigen::VectorXd::Zero(data->dim), space, spec.start));
    return sys;
}

SkewSpec skew_nonuniform_spec(std::uint64_t seed, std::int64_t window, double coupling) {
    SkewSpec spec;
    spec.block_dims = {1, 1};
    spec.rates = {RateProcess::two_state(1.5, -0.5, 0.8), RateProcess::two_state(-1.5, 1.0, 0.8)};
    spec.coupling = coupling;
    spec.window = window;
    spec.start = std::min<std::int64_t>(128, window);
    spec.seed = seed;
    return spec;
}

SmoothSystem skew_nonuniform(std::uint64_t seed, std::int64_t window, double coupling) {
    return skew_product(skew_nonuniform_spec(seed, window, coupling));
}

SmoothSystem make_builtin(const std::string& name, const nlohmann::json& params) {
    if (name == "cat2") return cat2();
    if (name == "diag3") return diag3();
    if (name == "skew-nonuniform") {
        auto spec = skew_nonuniform_spec(params.value("seed", std::uint64_t{1}), params.value("window", std::int64_t{4096}),
                                         params.value("coupling", 0.0));
        spec.start = params.value("start", spec.start);
        return skew_product(spec);
    }
    throw Error(Errc::InvalidArgument, "unknown built-in system '" + name + "'");
}

Point step(const SmoothSystem& sys, const Point& x, Direction dir) {
    return dir == Direction::Forward ? sys.forward(x) : sys.backward(x);
}

Eigen::MatrixXd tangent_at(const SmoothSystem& sys, const Point& x) { return sys.tangent(x); }

OrbitSegment::OrbitSegment(std::vector<Point> points, std::vector<Eigen::MatrixXd> jacobians, int n_forward,
                           int n_backward)
    : points_(std::move(points)), jacobians_(std::move(jacobians)), n_forward_(n_forward), n_backward_(n_backward) {
    if (points_.size() != static_cast<std::size_t>(n_forward + n_backward + 1) ||
        jacobians_.size() != static_cast<std::size_t>(n_forward + n_backward))
        throw Error(Errc::LengthMismatch, "orbit storage does not match its lengths");
}

const Point& OrbitSegment::point(std::int64_t j) const {
    if (j < -n_backward_ || j > n_forward_)
        throw Error(Errc::OutOfWindow, "orbit index " + std::to_string(j) + " outside [" +
                                           std::to_string(-n_backward_) + ", " + std::to_string(n_forward_) + "]");
    return points_[static_cast<std::size_t>(j + n_backward_)];
}

const Eigen::MatrixXd& OrbitSegment::jacobian(std::int64_t j) const {
    if (j < -n_backward_ || j >= n_forward_)
        throw Error(Errc::OutOfWindow, "jacobian index " + std::to_string(j) + " outside [" +
                                           std::to_string(-n_backward_) + ", " + std::to_string(n_forward_ - 1) + "]");
    return jacobians_[static_cast<std::size_t>(j + n_backward_)];
}

OrbitSegment make_orbit(const SmoothSystem& sys, const Point& x0, int n_forward, int n_backward) {
    if (n_forward < 0 || n_backward < 0) throw Error(Errc::InvalidArgument, "orbit lengths must be non-negative");
    sys.check_point(x0);
    std::vector<Point> back;
    back.reserve(static_cast<std::size_t>(n_backward));
    Point x = x0;
    for (int j = 0; j < n_backward; ++j) {
        x = sys.backward(x);
        back.push_back(x);
    }
    std::vector<Point> points(back.rbegin(), back.rend());
    points.push_back(x0);
    x = x0;
    for (int j = 0; j < n_forward; ++j) {
        x = sys.forward(x);
        points.push_back(x);
    }
    std::vector<Eigen::MatrixXd> jac;
    jac.reserve(points.size() - 1);
    for (std::size_t i = 0; i + 1 < points.size(); ++i) jac.push_back(sys.tangent(points[i]));
    return OrbitSegment(std::move(points), std::move(jac), n_forward, n_backward);
}

} // namespace nuhyp
