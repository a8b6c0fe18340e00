#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "nuhyp/bundle.hpp"
#include "nuhyp/times.hpp"

namespace nuhyp {

struct GrowerParams {
    double sigma1 = 1.5;
    double sigma2 = 1.5;
    double a = 0.5;       // cone width
    double r = 0.05;      // cut radius
    double h = 0.005;     // mesh spacing
    double chi = 1.5;     // certificate rate
    double t_cap = 10.0;  // largest admissible certificate constant
    int n_max = 200;      // push budget
    double tol_c1 = 1e-8; // Cauchy threshold for C0 and C1 gaps
    int min_depth = 30;     // earliest stop, so the certificate has this much history
    int history_depth = 64; // backward steps kept per node

    /// Throws InvalidArgument naming the first bad field.
    void validate() const;
};

nlohmann::json to_json(const GrowerParams& p);
GrowerParams grower_params_from_json(const nlohmann::json& j);

/// A disk drawn as a graph over `frame` (the tracked bundle at the base point):
/// node displacement from the base = P u + Q eta(u) on a sup-norm grid
/// u in (spacing * [-m, m])^k. Every node also records its displacements
/// relative to the centre orbit at earlier times, oldest first.
class DiskMesh {
public:
    struct Node {
        std::vector<int> grid;           // k integer grid coordinates
        Eigen::VectorXd eta;             // Q-coordinates
        Eigen::MatrixXd slope;           // (d-k) x k, tangent = span(P + Q slope)
        std::vector<Eigen::VectorXd> trail;
    };

    Point base;
    int index = 0;                       // orbit index of the base
    BundleKind kind = BundleKind::E;
    Subspace frame;                      // P
    Eigen::MatrixXd complement;          // Q, orthonormal complement of P
    int m = 0;
    double spacing = 0.0;
    double radius = 0.0;
    double nominal_spacing = 0.0;        // h requested at seeding
    double interp_residual = 0.0;        // of the last regrid
    std::vector<Node> nodes;

    int k() const { return frame.dim(); }
    int dim() const { return frame.ambient_dim(); }
    std::size_t size() const { return nodes.size(); }
    std::size_t trail_depth() const { return nodes.empty() ? 0 : nodes.front().trail.size(); }
    std::size_t centre_node() const;

    Eigen::VectorXd u_of(const Node& n) const;
    Eigen::VectorXd displacement(const Node& n) const;
    Point position(const Node& n) const;
    Subspace tangent(const Node& n) const;

    /// Graph value and slope at u (|u|_inf <= radius) by piecewise-linear
    /// interpolation on the grid triangles.
    std::optional<std::pair<Eigen::VectorXd, Eigen::MatrixXd>> evaluate(const Eigen::VectorXd& u) const;
};

struct SeedOptions {
    int index = 0;
    BundleKind kind = BundleKind::E;
    std::optional<Eigen::MatrixXd> tilt; // initial slope, (d-k) x k
};

/// Grid of (2 radius / h + 1)^k nodes on the ball of `radius` in the bundle at x0.
DiskMesh seed_disk(const SmoothSystem& system, const SplittingField& split, const Point& x0, double radius, double a,
                   double h, const SeedOptions& opts = {});

/// One graph-transform step. The image is re-expressed over the bundle at f(base)
/// and resampled on a grid of the seeding spacing (shrunk if the image is
/// smaller than `r_keep`), truncated at radius r_keep.
DiskMesh push_disk(const SmoothSystem& system, const SplittingField& split, const DiskMesh& disk, double a,
                   double r_keep = std::numeric_limits<double>::infinity(), int history_depth = 64);

/// Restriction to the sup-norm ball of radius r about `center` (the base).
DiskMesh cut_ball(const DiskMesh& disk, const Point& center, double r);

struct ContractionReport {
    bool passed = true;
    double max_ratio = 0.0;     // d_k / (sigma^{-k} d_0)
    std::size_t worst_y = 0;
    std::size_t worst_z = 0;
    int worst_k = 0;
    int depth = 0;
    std::size_t pairs = 0;
};

inline constexpr double kContractionSlack = 1e-2;

/// d(f^-k y, f^-k z) <= sigma1^-k d(y, z) (1 + slack) for 0 <= k <= n and
/// node pairs within chart distance r. Uses node trails, then backward steps.
ContractionReport check_backward_contraction(const SmoothSystem& system, const DiskMesh& disk, int n, double sigma1,
                                             double r);

struct AlignmentReport {
    bool passed = true;
    double max_distance = 0.0;
    double bound = 0.0;
    std::size_t worst_node = 0;
};

/// max over nodes of grassmann_distance(tangent, bundle at base) against
/// sigma2^-k a (floored at 1e-12).
AlignmentReport check_tangent_alignment(const DiskMesh& disk, const SplittingField& split, double sigma2, double a,
                                        int k);

struct GapRecord {
    int n = 0;
    double c0 = 0.0;
    double c1 = 0.0;
};

struct FCheckRecord {
    int n = 0;
    bool cut_ok = false;
    double cut_radius = 0.0;
    ContractionReport contraction;
    AlignmentReport alignment;
};

enum class GrowStatus { Converged, NotConverged, CertificateFailure };

std::string_view to_string(GrowStatus s);

struct LocalManifold {
    DiskMesh mesh;
    double chi = 0.0;
    double t = 0.0;
    double r = 0.0;
    double c_min = 0.0; // min over the orbit of the mini-norm on the bundle
    std::vector<GapRecord> convergence_log;
    TimeSet hyperbolic_times_used;
    std::vector<FCheckRecord> f_checks;
    GrowStatus status = GrowStatus::NotConverged;
    int steps = 0;
    std::string message;
};

/// Pushes a seeded disk along the orbit of x0, cutting at each n in hd.
/// Stops once C0 and C1 gaps stay below tol_c1 for 3 consecutive cuts and
/// n >= min_depth. Throws NoHyperbolicTimes when hd is empty.
LocalManifold grow_unstable(const SmoothSystem& system, const SplittingField& split, const Point& x0,
                            const GrowerParams& params, const TimeSet& hd, const SeedOptions& opts = {});

struct VerifyReport {
    bool passed = true;
    double max_ratio = 0.0; // d(f^-n y, f^-n z) chi^n / (T d(y, z))
    int depth = 0;
    std::size_t pairs = 0;
};

/// Re-checks d(f^-n y, f^-n z) <= T chi^-n d(y, z) for node/centre pairs and
/// 1000 seeded random pairs, 1 <= n <= n_depth.
VerifyReport verify_local_manifold(const SmoothSystem& system, const LocalManifold& m, int n_depth);

struct NestedResult {
    LocalManifold outer; // E+F
    LocalManifold inner; // E
    double inclusion_deviation = 0.0;
    TimeSet shared_hd;
};

struct NestedThresholds {
    double log_lambda1_inner = 0.0;
    double log_lambda2_inner = 0.0;
    double log_lambda1_outer = 0.0;
    double log_lambda2_outer = 0.0;
};

/// Grows W^{E,u} inside W^{E+F,u} on the intersection of the two HD sets.
NestedResult grow_nested(const SmoothSystem& system, const OrbitSegment& orbit, const SplittingField& split3,
                         const Point& x0, const GrowerParams& params, const NestedThresholds& thresholds);

/// Max distance of inner-disk nodes from the outer graph.
double inclusion_deviation(const DiskMesh& inner, const DiskMesh& outer);

struct Calibration {
    double a = 0.5;
    double r = 0.1;
    int rounds = 0;
    std::vector<std::string> trace;
};

/// Starts from (a, r) = (0.5, 0.1) and halves r until the (F1)-(F3) checks
/// pass on the first 5 hyperbolic times; r has floor 1e-4.
Calibration calibrate_a_r(const SmoothSystem& system, const SplittingField& split, const Point& x0, double sigma1,
                          double sigma2, double log_lambda1, double log_lambda2, const TimeSet& hd,
                          const SeedOptions& opts = {});

nlohmann::json certificate_json(const LocalManifold& m);

} // namespace nuhyp
