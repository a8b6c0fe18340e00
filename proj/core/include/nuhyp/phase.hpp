#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "nuhyp/error.hpp"

namespace nuhyp {

/// Phase-space chart kinds. `Fiber` is a Euclidean fiber sitting over a
/// stored base orbit window; points carry the base index alongside the
/// fiber coordinates, and only the fiber coordinates are chart coordinates.
enum class SpaceKind { Torus, Euclidean, Fiber };

struct Space {
    SpaceKind kind = SpaceKind::Euclidean;
    int dim = 0;

    /// "torus-2", "euclidean-3", "fiber-2".
    std::string tag() const;
    static Space parse(const std::string& tag);

    friend bool operator==(const Space&, const Space&) = default;
};

struct Point {
    Eigen::VectorXd coords;
    Space space;
    std::int64_t base = 0; // base-window index; always 0 outside Fiber spaces

    Point() = default;
    Point(Eigen::VectorXd c, Space s, std::int64_t b = 0) : coords(std::move(c)), space(s), base(b) {}

    int dim() const { return static_cast<int>(coords.size()); }
};

enum class Direction { Forward, Backward };

/// Minimum-image displacement `to - from` in chart coordinates.
Eigen::VectorXd chart_displacement(const Point& from, const Point& to);

/// Chart addition (exponential chart): `p + v`, wrapped into [0,1) on tori.
Point chart_add(const Point& p, const Eigen::VectorXd& v);

/// Euclidean distance; per-coordinate minimum image on tori.
double chart_distance(const Space& space, const Point& y, const Point& z);

/// An invertible C^1 map with its tangent cocycle. Evaluators are stored
/// type-erased so built-ins and user systems share one representation.
class SmoothSystem {
public:
    using MapFn = std::function<Point(const Point&)>;
    using TangentFn = std::function<Eigen::MatrixXd(const Point&)>;
    /// Map expressed in exponential charts along an orbit:
    /// disp -> f(base + disp) - f(base). Linear systems supply this exactly.
    using LocalFn = std::function<Eigen::VectorXd(const Point&, const Eigen::VectorXd&)>;

    struct Evaluators {
        MapFn forward;
        MapFn backward;
        TangentFn tangent;
        TangentFn tangent_backward;
        LocalFn forward_local;  // optional
        LocalFn backward_local; // optional
        std::function<double(std::int64_t)> base_theta; // Fiber spaces only
    };

    SmoothSystem(std::string name, Space space, nlohmann::json params, Evaluators ev);

    const std::string& name() const { return name_; }
    const Space& space() const { return space_; }
    int dim() const { return space_.dim; }
    const nlohmann::json& params() const { return params_; }

    Point forward(const Point& x) const;
    Point backward(const Point& x) const;
    Eigen::MatrixXd tangent(const Point& x) const;
    Eigen::MatrixXd tangent_backward(const Point& x) const;
    Eigen::VectorXd forward_local(const Point& base, const Eigen::VectorXd& disp) const;
    Eigen::VectorXd backward_local(const Point& base, const Eigen::VectorXd& disp) const;

    /// Base-window point theta_j for Fiber spaces (throws OutOfWindow).
    double base_theta(std::int64_t index) const;

    /// Throws DimensionMismatch / SpaceMismatch when x does not belong here.
    void check_point(const Point& x) const;

    /// Default point used when a configuration does not give one.
    Point default_point() const;
    void set_default_point(Point p) { default_point_ = std::move(p); }

private:
    std::string name_;
    Space space_;
    nlohmann::json params_;
    Evaluators ev_;
    Point default_point_;
};

/// User-defined system. Without an analytic inverse, `backward` is solved by
/// Newton iteration to `tol_inv` (1e-12) within 50 iterations.
SmoothSystem make_user_system(std::string name, Space space, SmoothSystem::MapFn forward,
                              SmoothSystem::TangentFn tangent, SmoothSystem::MapFn backward = {},
                              nlohmann::json params = nlohmann::json::object());

inline constexpr double kTolInv = 1e-12;
inline constexpr int kNewtonMaxIter = 50;

/// f^{-1} as a system in its own right (forward and backward swapped).
SmoothSystem inverse(const SmoothSystem& sys);

/// Linear automorphism x -> A x on torus-d (A integer, det ±1) or euclidean-d.
SmoothSystem linear_system(std::string name, Space space, const Eigen::MatrixXd& matrix);

/// Arnold cat map [[2,1],[1,1]] on torus-2.
SmoothSystem cat2();
/// diag(4, 2, 1/8) on euclidean-3.
SmoothSystem diag3();

/// Per-step log-rate of one fiber block as a function of the base point.
struct RateProcess {
    enum class Kind { Constant, TwoState, Profile };
    Kind kind = Kind::Constant;
    double value = 0.0; // Constant
    double hi = 0.0;    // TwoState: rate `hi` when theta < p, else `lo`
    double lo = 0.0;
    double p = 0.5;
    double mean = 0.0;  // Profile: mean + amp * cos(2 pi theta)
    double amp = 0.0;

    static RateProcess constant(double v);
    static RateProcess two_state(double hi, double lo, double p);
    static RateProcess profile(double mean, double amp);

    double at(double theta) const;
    double expected() const;
};

nlohmann::json to_json(const RateProcess& r);
/// {"kind": "constant"|"two-state"|"profile", ...}; throws InvalidArgument.
RateProcess rate_from_json(const nlohmann::json& j);

/// Skew product over the doubling map with a block-diagonal fiber action.
/// The base orbit is a stored window of binary digits, so both directions
/// are exact on indices [0, window].
struct SkewSpec {
    std::vector<int> block_dims;      // dims of E, F[, G]
    std::vector<RateProcess> rates;   // one per block
    double coupling = 0.0;            // adds coupling * u0^2 to the first F coordinate
    std::int64_t window = 4096;
    std::int64_t start = 128;         // base index of the default point
    std::uint64_t seed = 1;
};

SmoothSystem skew_product(const SkewSpec& spec);

/// Built-in non-uniform skew: E two-state (1.5 w.p. 0.8, -0.5), F two-state
/// (-1.5 w.p. 0.8, +1.0) on the same driver; chi_E = 1.1, chi_F = -1.0.
SkewSpec skew_nonuniform_spec(std::uint64_t seed = 1, std::int64_t window = 4096, double coupling = 0.0);
SmoothSystem skew_nonuniform(std::uint64_t seed = 1, std::int64_t window = 4096, double coupling = 0.0);

/// Builds a built-in from a name and parameter record:
/// "cat2", "diag3", "skew-nonuniform" {seed, window, coupling, start}.
SmoothSystem make_builtin(const std::string& name, const nlohmann::json& params = nlohmann::json::object());

Point step(const SmoothSystem& sys, const Point& x, Direction dir);
Eigen::MatrixXd tangent_at(const SmoothSystem& sys, const Point& x);

/// Finite two-sided orbit x_{-B}, ..., x_N with cached Df(x_j), j in [-B, N-1].
class OrbitSegment {
public:
    OrbitSegment(std::vector<Point> points, std::vector<Eigen::MatrixXd> jacobians, int n_forward, int n_backward);

    int n_forward() const { return n_forward_; }
    int n_backward() const { return n_backward_; }
    const Point& base() const { return point(0); }

    /// j in [-B, N].
    const Point& point(std::int64_t j) const;
    /// Df(x_j), j in [-B, N-1].
    const Eigen::MatrixXd& jacobian(std::int64_t j) const;

    const std::vector<Point>& points() const { return points_; }
    std::size_t jacobian_count() const { return jacobians_.size(); }

private:
    std::vector<Point> points_;
    std::vector<Eigen::MatrixXd> jacobians_;
    int n_forward_;
    int n_backward_;
};

OrbitSegment make_orbit(const SmoothSystem& sys, const Point& x0, int n_forward, int n_backward);

} // namespace nuhyp
